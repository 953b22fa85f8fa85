"""Exception hierarchy.

User-facing problems (bad configuration, bad files) derive from
``UserInputError``; failures that happen while estimating derive from
``EstimationError``. The CLI maps the two families to exit codes 2 and 3.
"""


class LongDMLError(Exception):
    pass


class UserInputError(LongDMLError):
    pass


class ConfigurationError(UserInputError, ValueError):
    pass


class SchemaError(UserInputError):
    pass


class DataError(UserInputError):
    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class EstimationError(LongDMLError):
    pass


class NumericalError(EstimationError):
    pass


class DegenerateStratumError(EstimationError):
    pass


class BridgeEstimationError(EstimationError):
    def __init__(self, bridge, cause):
        super().__init__(f"bridge {bridge!r} failed: {cause}")
        self.bridge = bridge


class EvaluationError(EstimationError):
    def __init__(self, field, message=None):
        super().__init__(message or f"required field {field!r} is missing")
        self.field = field


class FoldTrainingError(EstimationError):
    def __init__(self, fold, cause):
        super().__init__(f"nuisance training failed on fold {fold}: {cause}")
        self.fold = fold
        self.__cause__ = cause


class EmptyWindowError(EstimationError):
    pass


class StudyError(EstimationError):
    pass

"""Adversarial (nested) nonparametric IV regression over Gaussian RKHS balls.

The estimator solves

    min_h max_f  E_n[(g - h(X)) f(Z)] - lam (|f|_F^2 + U/delta^2 E_n[f(Z)^2]) + mu |h|_H^2

with h = K_H a and f = K_F b. The inner problem is a concave quadratic in b
with maximizer ``b* = (I + gamma K_F)^{-1} r / (2 lam n)``, ``r = g - K_H a``,
``gamma = U / (delta^2 n)``. Substituting leaves a convex quadratic in a whose
normal equations are

    (K_F K_H + c gamma K_F + c I) a = K_F g,   c = 4 lam mu n^2.

The outcome is centred before solving and its mean carried as an unpenalized
offset, so constants are never shrunk.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .core import NpivConfig
from .errors import (BridgeEstimationError, ConfigurationError, DegenerateStratumError,
                     NumericalError)
from .nuisance import KernelMachine, _as_matrix, gaussian_gram, median_lengthscale


@dataclass(frozen=True, eq=False)
class NpivProblem:
    regressors: np.ndarray  # X~, rows of the hypothesis inputs
    instruments: np.ndarray  # Z~, rows of the test-function inputs
    outcome: np.ndarray  # g(M~) per row
    lam: float
    mu: float
    U: float = 1.0
    delta: float = 1.0
    h_lengthscale: Optional[np.ndarray] = None
    f_lengthscale: Optional[np.ndarray] = None

    def __post_init__(self):
        x = _as_matrix(self.regressors)
        z = _as_matrix(self.instruments)
        g = np.asarray(self.outcome, dtype=float).ravel()
        if not (x.shape[0] == z.shape[0] == g.shape[0]):
            raise ValueError("regressors, instruments and outcome need equal row counts")
        if x.shape[0] < 2:
            raise DegenerateStratumError("NPIV needs at least 2 rows")
        for name in ("lam", "mu", "U", "delta"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.lam < self.delta ** 2 / self.U * (1 - 1e-12):
            raise ConfigurationError(
                f"lam={self.lam:g} is below delta^2/U={self.delta ** 2 / self.U:g}")
        object.__setattr__(self, "regressors", x)
        object.__setattr__(self, "instruments", z)
        object.__setattr__(self, "outcome", g)
        object.__setattr__(self, "h_lengthscale",
                           median_lengthscale(x) if self.h_lengthscale is None
                           else np.broadcast_to(np.asarray(self.h_lengthscale, float), (x.shape[1],)).copy())
        object.__setattr__(self, "f_lengthscale",
                           median_lengthscale(z) if self.f_lengthscale is None
                           else np.broadcast_to(np.asarray(self.f_lengthscale, float), (z.shape[1],)).copy())

    @property
    def n(self) -> int:
        return self.outcome.shape[0]

    @classmethod
    def from_config(cls, regressors, instruments, outcome, cfg: NpivConfig, **kw) -> "NpivProblem":
        n = np.asarray(outcome).shape[0]
        lam, mu, U, delta = cfg.resolve(n)
        return cls(regressors, instruments, outcome, lam=lam, mu=mu, U=U, delta=delta, **kw)


@dataclass(frozen=True, eq=False)
class BridgeFit:
    h_hat: KernelMachine
    f_star: KernelMachine
    objective_trace: np.ndarray
    a: np.ndarray
    b: np.ndarray
    problem: NpivProblem
    preliminary: Optional[str] = None
    K_H: np.ndarray = field(repr=False, default=None)
    K_F: np.ndarray = field(repr=False, default=None)

    def __call__(self, query) -> np.ndarray:
        return self.h_hat(query)

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])

    def objective_at(self, a, b) -> float:
        return saddle_objective(self.problem, self.K_H, self.K_F, a, b)

    def stationarity(self) -> tuple[float, float]:
        """Relative first-order residuals of the saddle system in b and a."""
        p = self.problem
        n = p.n
        g = p.outcome - self.h_hat.offset
        r = g - self.K_H @ self.a
        KFb = self.K_F @ self.b
        grad_b = self.K_F @ r / n - 2 * p.lam * (KFb + p.U / (p.delta ** 2 * n) * (self.K_F @ KFb))
        grad_a = -self.K_H @ KFb / n + 2 * p.mu * (self.K_H @ self.a)
        scale_b = np.linalg.norm(self.K_F @ r) / n + 1e-300
        scale_a = np.linalg.norm(self.K_H @ KFb) / n + 1e-300
        return (float(np.linalg.norm(grad_b) / scale_b), float(np.linalg.norm(grad_a) / scale_a))


def saddle_objective(problem: NpivProblem, K_H, K_F, a, b) -> float:
    n = problem.n
    g = problem.outcome - problem.outcome.mean()
    KFb = K_F @ b
    r = g - K_H @ a
    return float(r @ KFb / n
                 - problem.lam * (b @ KFb)
                 - problem.lam * problem.U / problem.delta ** 2 / n * (KFb @ KFb)
                 + problem.mu * (a @ (K_H @ a)))


def solve_npiv(problem: NpivProblem, preliminary: Optional[str] = None) -> BridgeFit:
    """Exact saddle point of the penalized adversarial program."""
    p = problem
    n = p.n
    K_H = gaussian_gram(p.regressors, p.regressors, p.h_lengthscale)
    K_F = gaussian_gram(p.instruments, p.instruments, p.f_lengthscale)
    offset = float(p.outcome.mean())
    g = p.outcome - offset
    gamma = p.U / (p.delta ** 2 * n)
    c = 4.0 * p.lam * p.mu * n ** 2
    if not np.any(g):
        a = np.zeros(n)
        b = np.zeros(n)
    else:
        lhs = K_F @ K_H + c * gamma * K_F
        lhs[np.diag_indices(n)] += c
        try:
            a = linalg.solve(lhs, K_F @ g, check_finite=False)
        except (linalg.LinAlgError, ValueError) as exc:
            raise NumericalError(f"saddle system solve failed: {exc}") from None
        r = g - K_H @ a
        inner = np.eye(n) + gamma * K_F
        b = linalg.solve(inner, r, assume_a="pos", check_finite=False) / (2.0 * p.lam * n)
    fit = BridgeFit(
        h_hat=KernelMachine(p.regressors, a, p.h_lengthscale, 0.0, offset),
        f_star=KernelMachine(p.instruments, b, p.f_lengthscale, 0.0, 0.0),
        objective_trace=np.zeros(1), a=a, b=b, problem=p, preliminary=preliminary,
        K_H=K_H, K_F=K_F,
    )
    obj = saddle_objective(p, K_H, K_F, a, b)
    if not np.isfinite(obj) or not np.all(np.isfinite(a)):
        raise NumericalError("saddle objective is not finite")
    object.__setattr__(fit, "objective_trace", np.array([obj]))
    return fit


def solve_nested_npiv(preliminary: Callable[[np.ndarray], np.ndarray] | np.ndarray,
                      preliminary_inputs, regressors, instruments, cfg: NpivConfig | None = None,
                      *, name: str = "h", preliminary_name: Optional[str] = None,
                      **problem_kw) -> BridgeFit:
    """Second-stage NPIV whose left-hand side is an estimated function.

    ``preliminary`` is either a callable evaluated at ``preliminary_inputs``
    or the already-evaluated vector. Failures are reported as
    ``BridgeEstimationError`` naming ``name``.
    """
    x = _as_matrix(regressors)
    if x.shape[0] == 0:
        raise DegenerateStratumError(f"bridge {name!r}: stage-2 stratum is empty")
    try:
        if callable(preliminary):
            g = np.asarray(preliminary(preliminary_inputs), dtype=float).ravel()
        else:
            g = np.asarray(preliminary, dtype=float).ravel()
    except Exception as exc:  # noqa: BLE001 - any evaluation failure is reported uniformly
        raise BridgeEstimationError(name, f"preliminary evaluation failed: {exc}") from exc
    if not np.all(np.isfinite(g)):
        raise BridgeEstimationError(name, "preliminary evaluations are not finite")
    try:
        if cfg is not None:
            problem = NpivProblem.from_config(x, instruments, g, cfg, **problem_kw)
        else:
            problem = NpivProblem(x, instruments, g, **problem_kw)
        return solve_npiv(problem, preliminary=preliminary_name)
    except DegenerateStratumError:
        raise
    except NumericalError as exc:
        raise BridgeEstimationError(name, exc) from exc


@dataclass(frozen=True)
class ProjectedError:
    P: float
    R: float
    P_se: float
    R_se: float

    @property
    def ill_posedness(self) -> float:
        return float(np.sqrt(self.R / self.P)) if self.P > 0 else float("inf")


def projected_mse(h_hat: Callable, h0_oracle: Callable, conditional_oracle: Callable,
                  eval_draws) -> ProjectedError:
    """Projected and plain mean-square error of ``h_hat`` on oracle draws.

    ``conditional_oracle(fn, draws)`` must return E[fn(A) | B] evaluated at
    each draw's instruments; ``fn`` maps draws to the error per row.
    """
    def err(d):
        return np.asarray(h_hat(d), float) - np.asarray(h0_oracle(d), float)

    e = err(eval_draws)
    proj = np.asarray(conditional_oracle(err, eval_draws), float)
    n = e.shape[0]
    sq, psq = e ** 2, proj ** 2
    return ProjectedError(
        P=float(psq.mean()), R=float(sq.mean()),
        P_se=float(psq.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
        R_se=float(sq.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
    )

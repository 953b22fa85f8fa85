"""Cross-fitted estimation, variance and confidence intervals.

Each fold's nuisances are trained on the fold complement and evaluated on
the fold only. The held-out brackets are stored by original row index, so
the aggregate does not depend on fold labels or on the order folds finish.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import __version__
from ._normal import norm_ppf
from .core import Dataset, FoldPartition, RunConfig, partition_folds
from .errors import ConfigurationError, EstimationError, FoldTrainingError
from .localize import Localizer
from .moments import MomentSpec, NuisanceSet, brackets

Trainer = Callable[[Dataset, int], NuisanceSet]


def resolve_threads(threads: Optional[int] = None) -> int:
    if threads is None:
        env = os.environ.get("LONGDML_THREADS")
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ConfigurationError(f"LONGDML_THREADS must be an integer, got {env!r}") from None
        else:
            threads = 1
    if threads < 1:
        raise ConfigurationError("thread count must be at least 1")
    return threads


def ordered_map(fn, items, threads: int = 1) -> list:
    """``[fn(i) for i in items]``, possibly concurrent, results in input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class FoldReport:
    fold: int
    size: int
    train_size: int
    psi_mean: float
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EstimateReport:
    theta_hat: float
    sigma2_hat: float
    ci: tuple
    level: float
    n: int
    L: int
    per_fold: tuple
    kappa3_hat: float
    zeta4_hat: float
    config_digest: str
    seed: int
    problem: str = ""
    levels: tuple = ()
    local: Optional[dict] = None

    @property
    def se(self) -> float:
        return float(np.sqrt(self.sigma2_hat / self.n))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ci"] = list(self.ci)
        out["levels"] = list(self.levels)
        out["per_fold"] = [asdict(f) for f in self.per_fold]
        out["version"] = __version__
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def confidence_interval(theta_hat: float, sigma2_hat: float, n: int, a: float) -> tuple[float, float]:
    """``theta_hat -/+ c_a sigma_hat / sqrt(n)`` with c_a the 1 - a/2 normal quantile."""
    if not 0.0 < a < 1.0:
        raise ConfigurationError(f"a must lie in (0, 1), got {a}")
    if sigma2_hat < 0 or n < 1:
        raise ConfigurationError("need sigma2_hat >= 0 and n >= 1")
    half = norm_ppf(1.0 - a / 2.0) * np.sqrt(sigma2_hat) / np.sqrt(n)
    return (float(theta_hat - half), float(theta_hat + half))


def crossfit(data: Dataset, spec: MomentSpec, cfg: RunConfig, *,
             trainer: Optional[Trainer] = None, threads: Optional[int] = None,
             partition: Optional[FoldPartition] = None):
    """Held-out brackets for every row.

    Returns ``(values, partition, diagnostics)`` where ``values[i]`` is the
    bracket of row i under the nuisances trained without its fold.
    """
    spec.validate(data)
    n = data.n
    part = partition or partition_folds(n, cfg.folds, cfg.seed)
    if trainer is None:
        def trainer(train, fold):
            return spec.train(train, cfg, fold)

    def run(k):
        test_idx = part.fold(k)
        train_idx = part.complement(k)
        try:
            nuis = trainer(data.subset(train_idx), k)
            vals = brackets(data.subset(test_idx), nuis)
        except EstimationError as exc:
            raise FoldTrainingError(k, exc) from exc
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            raise FoldTrainingError(k, exc) from exc
        return test_idx, vals, len(train_idx), dict(nuis.diagnostics)

    results = ordered_map(run, range(part.L), resolve_threads(threads))
    values = np.empty(n)
    diags = []
    for k, (idx, vals, ntrain, diag) in enumerate(results):
        values[idx] = vals
        diags.append((k, idx, ntrain, diag))
    return values, part, diags


def _report(values: np.ndarray, part: FoldPartition, diags, spec: MomentSpec, cfg: RunConfig,
            local: Optional[dict] = None) -> EstimateReport:
    n = values.shape[0]
    theta = float(np.mean(values))
    centred = values - theta
    sigma2 = float(np.mean(centred * centred))
    ci = confidence_interval(theta, sigma2, n, cfg.a)
    per_fold = tuple(
        FoldReport(fold=k, size=int(idx.size), train_size=int(ntrain),
                   psi_mean=float(np.mean(centred[idx])), diagnostics=diag)
        for k, idx, ntrain, diag in diags
    )
    absd = np.abs(centred)
    return EstimateReport(
        theta_hat=theta, sigma2_hat=sigma2, ci=ci, level=cfg.level, n=n, L=part.L,
        per_fold=per_fold, kappa3_hat=float(np.mean(absd ** 3)), zeta4_hat=float(np.mean(absd ** 4)),
        config_digest=cfg.digest(), seed=cfg.seed, problem=spec.problem, levels=spec.levels,
        local=local,
    )


def estimate(data: Dataset, spec: MomentSpec, cfg: RunConfig, *,
             trainer: Optional[Trainer] = None, threads: Optional[int] = None) -> EstimateReport:
    """Cross-fitted estimate of the global parameter."""
    values, part, diags = crossfit(data, spec, cfg, trainer=trainer, threads=threads)
    return _report(values, part, diags, spec, cfg)


def localize_brackets(values: np.ndarray, data: Dataset, kernel: str, h: float, v: float):
    loc = Localizer.fit(data.col("v"), kernel, h, v)
    info = {"kernel": kernel, "h": float(h), "v": float(v), "omega_hat": loc.omega_hat}
    return values * loc.weights(data.col("v")), info


def estimate_local(data: Dataset, spec: MomentSpec, cfg: RunConfig, *,
                   trainer: Optional[Trainer] = None, threads: Optional[int] = None) -> EstimateReport:
    """Localized estimate: every held-out bracket is multiplied by its kernel weight."""
    if not cfg.local.active:
        raise ConfigurationError("local estimation needs cfg.local.h and cfg.local.v")
    if not spec.local:
        spec = MomentSpec(spec.problem, spec.levels, local=True)
    values, part, diags = crossfit(data, spec, cfg, trainer=trainer, threads=threads)
    weighted, info = localize_brackets(values, data, cfg.local.kernel, cfg.local.h, cfg.local.v)
    return _report(weighted, part, diags, spec, cfg, local=info)


def report_from_brackets(values: np.ndarray, part: FoldPartition, spec: MomentSpec,
                         cfg: RunConfig, local: Optional[dict] = None) -> EstimateReport:
    """Assemble a report from precomputed held-out brackets (used by studies
    that evaluate several bandwidths on one cross-fit)."""
    diags = [(k, part.fold(k), int(part.complement(k).size), {}) for k in range(part.L)]
    return _report(np.asarray(values, float), part, diags, spec, cfg, local=local)

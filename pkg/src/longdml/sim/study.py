"""Monte Carlo replication driver for coverage studies."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..core import RunConfig, derive_seed
from ..dml import crossfit, estimate, estimate_local, ordered_map, resolve_threads
from ..errors import EstimationError, StudyError
from ..moments import MomentSpec
from .dgp import Dgp

MAX_FAILURE_SHARE = 0.02

COLUMNS = ("row", "theta_hat", "sigma_hat", "lower", "upper", "covered", "status",
           "bias", "sd_theta", "mean_width", "sd_sqrt_n_theta", "mean_sigma2", "failures")


@dataclass(frozen=True)
class Replication:
    index: int
    theta_hat: float = math.nan
    sigma_hat: float = math.nan
    lower: float = math.nan
    upper: float = math.nan
    covered: bool = False
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class StudySummary:
    reps: int
    failures: int
    coverage: float
    bias: float
    sd_theta: float
    mean_width: float
    mean_sigma: float
    mean_sigma2: float
    sd_sqrt_n_theta: float
    var_sqrt_n_theta: float
    mean_theta: float


@dataclass(frozen=True)
class StudyTable:
    n: int
    theta0: float
    level: float
    replications: tuple
    summary: StudySummary
    meta: dict = field(default_factory=dict)

    def thetas(self) -> np.ndarray:
        return np.array([r.theta_hat for r in self.replications if r.ok])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.replications:
            status = "ok" if r.ok else f"failed: {r.error}"
            w.writerow([r.index, _f(r.theta_hat), _f(r.sigma_hat), _f(r.lower), _f(r.upper),
                        int(r.covered), status] + [""] * 6)
        s = self.summary
        w.writerow(["summary", _f(s.mean_theta), _f(s.mean_sigma), "", "", _f(s.coverage), "summary",
                    _f(s.bias), _f(s.sd_theta), _f(s.mean_width), _f(s.sd_sqrt_n_theta),
                    _f(s.mean_sigma2), s.failures])
        return buf.getvalue()

    def to_long_csv(self) -> str:
        """Plot-ready table: one row per successful replication."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replication", "theta_hat", "lower", "upper", "covered"])
        for r in self.replications:
            if r.ok:
                w.writerow([r.index, _f(r.theta_hat), _f(r.lower), _f(r.upper), int(r.covered)])
        return buf.getvalue()


def _f(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def replication_seeds(master_seed: int, r: int) -> tuple[int, int]:
    """(data seed, fold seed) for replication r."""
    return derive_seed(master_seed, "rep", r, "data"), derive_seed(master_seed, "rep", r, "folds")


def summarize(reps: list[Replication], n: int, theta0: float) -> StudySummary:
    ok = [r for r in reps if r.ok]
    if not ok:
        nan = math.nan
        return StudySummary(len(reps), len(reps), nan, nan, nan, nan, nan, nan, nan, nan, nan)
    th = np.array([r.theta_hat for r in ok])
    sig = np.array([r.sigma_hat for r in ok])
    width = np.array([r.upper - r.lower for r in ok])
    sd = float(th.std(ddof=1)) if th.size > 1 else 0.0
    return StudySummary(
        reps=len(reps), failures=len(reps) - len(ok),
        coverage=float(np.mean([r.covered for r in ok])),
        bias=float(th.mean() - theta0), sd_theta=sd, mean_width=float(width.mean()),
        mean_sigma=float(sig.mean()), mean_sigma2=float(np.mean(sig ** 2)),
        sd_sqrt_n_theta=sd * math.sqrt(n), var_sqrt_n_theta=sd ** 2 * n,
        mean_theta=float(th.mean()),
    )


def run_study(dgp: Dgp, cfg: RunConfig, reps: int, master_seed: int, n: int, *,
              spec: Optional[MomentSpec] = None, theta0: Optional[float] = None,
              threads: Optional[int] = None, trainer_factory: Optional[Callable] = None,
              strict: bool = True) -> StudyTable:
    """Replicate generate -> estimate ``reps`` times.

    Replication r draws its data and folds from streams keyed on
    (master_seed, r), so the table does not depend on the worker count.
    Failed replications are recorded and excluded; more than 2% failures
    raise ``StudyError`` when ``strict``.
    """
    if reps < 1:
        raise StudyError("reps must be at least 1")
    if spec is None:
        levels = (1, 1) if dgp.problem == "dynamic" else (1,)
        spec = MomentSpec(dgp.problem, levels, local=cfg.local.active)
    if theta0 is None:
        if cfg.local.active:
            theta0 = dgp.theta_local_h(cfg.local.v, cfg.local.h, cfg.local.kernel, *spec.levels)
        else:
            theta0 = dgp.oracle(spec.levels).theta0
    runner = estimate_local if cfg.local.active else estimate

    def one(r):
        data_seed, fold_seed = replication_seeds(master_seed, r)
        try:
            data = dgp.generate(n, data_seed)
            trainer = trainer_factory(data, r) if trainer_factory else None
            rep = runner(data, spec, cfg.replace(seed=fold_seed), trainer=trainer, threads=1)
        except (EstimationError, np.linalg.LinAlgError, FloatingPointError) as exc:
            return Replication(r, error=str(exc).splitlines()[0][:200])
        lo, hi = rep.ci
        return Replication(r, rep.theta_hat, math.sqrt(rep.sigma2_hat), lo, hi,
                           bool(lo <= theta0 <= hi))

    results = ordered_map(one, range(reps), resolve_threads(threads))
    results.sort(key=lambda r: r.index)
    summary = summarize(results, n, theta0)
    table = StudyTable(n, float(theta0), cfg.level, tuple(results), summary,
                       meta={"problem": dgp.problem, "master_seed": master_seed, "reps": reps})
    if strict and summary.failures > MAX_FAILURE_SHARE * reps:
        err = StudyError(f"{summary.failures} of {reps} replications failed")
        err.table = table
        raise err
    return table


def crossfit_replication(dgp: Dgp, cfg: RunConfig, n: int, master_seed: int, r: int,
                         spec: Optional[MomentSpec] = None):
    """Held-out brackets of replication r, for studies that reuse one
    cross-fit across several localization bandwidths."""
    if spec is None:
        levels = (1, 1) if dgp.problem == "dynamic" else (1,)
        spec = MomentSpec(dgp.problem, levels)
    data_seed, fold_seed = replication_seeds(master_seed, r)
    data = dgp.generate(n, data_seed)
    values, part, _ = crossfit(data, spec, cfg.replace(seed=fold_seed), threads=1)
    return data, values, part

"""The longitudinal moment function and the per-problem nuisance recipes.

Every problem is expressed through four functions (nu, delta, alpha, eta)
and the bracket

    nu(W) + alpha(W) (Y - delta(W)) + eta(W) (delta(W) - nu(W)),

whose mean is the target. Nuisance functions take a :class:`Dataset` and
return one value per row.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .core import PROBLEMS, Dataset, RunConfig, Sample, validate_pattern
from .errors import (BridgeEstimationError, ConfigurationError, DegenerateStratumError,
                     EvaluationError, SchemaError)
from .npiv import solve_nested_npiv
from .nuisance import krr_fit

Fn = Callable[[Dataset], np.ndarray]

MEDIATION = "unconfounded_mediation"


def clip(values, cap: float) -> np.ndarray:
    """Symmetric clipping to [-cap, cap]; idempotent and order preserving below the cap."""
    return np.clip(np.asarray(values, dtype=float), -cap, cap)


def clamp_propensity(p, floor: float) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=float), floor, 1.0 - floor)


@dataclass(frozen=True, eq=False)
class NuisanceSet:
    nu: Fn
    delta: Fn
    alpha: Fn
    eta: Fn
    alpha_cap: float = np.inf
    eta_cap: float = np.inf
    trained_on: Any = None
    diagnostics: dict = field(default_factory=dict)
    bridges: Optional[dict] = None  # fitted proximal bridges, when any

    def evaluate(self, data: Dataset):
        """Return (nu, delta, alpha, eta) arrays, with the weights clipped."""
        vals = []
        for name, fn in (("nu", self.nu), ("delta", self.delta), ("alpha", self.alpha), ("eta", self.eta)):
            v = np.asarray(fn(data), dtype=float).reshape(-1)
            if v.shape[0] != data.n:
                raise EvaluationError(name, f"nuisance {name} returned {v.shape[0]} values for {data.n} rows")
            vals.append(v)
        nu, delta, alpha, eta = vals
        alpha = clip(alpha, self.alpha_cap)
        eta = clip(eta, self.eta_cap)
        for name, v in zip(("nu", "delta", "alpha", "eta"), (nu, delta, alpha, eta)):
            if not np.all(np.isfinite(v)):
                raise EvaluationError(name, f"nuisance {name} produced non-finite values")
        return nu, delta, alpha, eta

    def replace(self, **changes) -> "NuisanceSet":
        kw = dict(nu=self.nu, delta=self.delta, alpha=self.alpha, eta=self.eta,
                  alpha_cap=self.alpha_cap, eta_cap=self.eta_cap,
                  trained_on=self.trained_on, diagnostics=self.diagnostics, bridges=self.bridges)
        kw.update(changes)
        return NuisanceSet(**kw)


def brackets(data: Dataset, nuis: NuisanceSet) -> np.ndarray:
    """Per-row ``nu + alpha (y - delta) + eta (delta - nu)``.

    Where the outcome is unobserved the weight alpha must vanish; the outcome
    is then replaced by 0, which leaves the product unchanged.
    """
    nu, delta, alpha, eta = nuis.evaluate(data)
    if data.has("y"):
        y = data.col("y")
        seen = data.obs("y")
    else:
        y = np.zeros(data.n)
        seen = np.zeros(data.n, dtype=bool)
    hidden = ~seen
    if np.any(hidden & (alpha != 0)):
        row = int(np.flatnonzero(hidden & (alpha != 0))[0])
        raise EvaluationError("y", f"row {row}: outcome 'y' is missing where its weight is nonzero")
    y = np.where(seen, y, 0.0)
    return nu + alpha * (y - delta) + eta * (delta - nu)


def psi_values(data: Dataset, theta: float, nuis: NuisanceSet) -> np.ndarray:
    return brackets(data, nuis) - theta


def moment_psi(sample: Sample, theta: float, nuis: NuisanceSet) -> float:
    data = Dataset.from_samples([sample], dynamic=len(sample.d) == 2)
    return float(psi_values(data, theta, nuis)[0])


@dataclass(frozen=True)
class MomentSpec:
    problem: str
    levels: tuple = (1,)
    local: bool = False

    def __post_init__(self):
        if self.problem not in PROBLEMS + (MEDIATION,):
            raise ConfigurationError(f"unknown problem {self.problem!r}; expected one of {PROBLEMS}")
        levels = tuple(int(v) for v in self.levels)
        want = 2 if self.problem == "dynamic" else 1
        if len(levels) != want:
            raise ConfigurationError(f"{self.problem} takes {want} intervention level(s), got {levels}")
        if any(v not in (0, 1) for v in levels):
            raise ConfigurationError(f"intervention levels must be 0 or 1, got {levels}")
        object.__setattr__(self, "levels", levels)

    def validate(self, data: Dataset) -> None:
        if self.problem != MEDIATION:
            validate_pattern(data, self.problem)
        if self.local and not data.has("v"):
            raise SchemaError("localization requires a 'v' column")

    def train(self, train: Dataset, cfg: RunConfig, fold=None) -> NuisanceSet:
        fn = TRAINERS[self.problem]
        nuis = fn(train, self, cfg)
        return nuis.replace(trained_on=fold)


# ---------------------------------------------------------------------------
# helpers


def _need(mask: np.ndarray, what: str, minimum: int = 2) -> np.ndarray:
    idx = np.flatnonzero(mask)
    if idx.size < minimum:
        raise DegenerateStratumError(f"stratum {what} has {idx.size} training rows")
    return idx


def _indicator(data: Dataset, role: str, level: int) -> np.ndarray:
    return (data.obs(role) & (data.col(role) == level)).astype(float)


def _propensity(inputs, target, cfg: RunConfig):
    """KRR of a 0/1 indicator, returned as a clamped predictor."""
    machine = krr_fit(inputs, target, cfg.kernel)
    floor = cfg.propensity_floor

    def predict(q):
        return clamp_propensity(machine(q), floor)

    predict.machine = machine
    return predict


# ---------------------------------------------------------------------------
# long-term effect: experimental sample G=0 sees (D, M, X), observational
# sample G=1 sees (M, X, Y)


def train_nuisances_long_term(train: Dataset, spec: MomentSpec, cfg: RunConfig) -> NuisanceSet:
    d = spec.levels[0]
    g = train.col("g")
    mx = train.stack("m", "x")
    x = train.values["x"]
    is_obs = g == 1
    is_exp = g == 0
    i1 = _need(is_obs, "G=1")
    iexp = _need(is_exp, "G=0")
    idd = _need(is_exp & train.obs("d") & (train.col("d") == d), f"G=0, D={d}")

    gamma = krr_fit(mx[i1], train.col("y")[i1], cfg.kernel)
    nu_fit = krr_fit(x[idd], gamma(mx[idd]), cfg.kernel)

    d_ind = _indicator(train, "d", d)
    pi = _propensity(x[iexp], d_ind[iexp], cfg)  # P(D=d | X, G=0)
    rho = _propensity(mx[iexp], d_ind[iexp], cfg)  # P(D=d | M, X, G=0)
    pi_g = _propensity(x, (g == 0).astype(float), cfg)  # P(G=0 | X)
    rho_g = _propensity(mx, (g == 1).astype(float), cfg)  # P(G=1 | M, X)

    def nu(data):
        return nu_fit(data.values["x"])

    def delta(data):
        return gamma(data.stack("m", "x"))

    def alpha(data):
        mxq = data.stack("m", "x")
        xq = data.values["x"]
        r1 = rho_g(mxq)
        w = rho(mxq) * (1.0 - r1) / (r1 * pi(xq) * pi_g(xq))
        return (data.col("g") == 1) * w

    def eta(data):
        xq = data.values["x"]
        sel = (data.col("g") == 0) * _indicator(data, "d", d)
        return sel / (pi(xq) * pi_g(xq))

    return NuisanceSet(nu, delta, alpha, eta, cfg.alpha_cap, cfg.eta_cap,
                       diagnostics={"ridge_delta": gamma.ridge, "ridge_nu": nu_fit.ridge})


# ---------------------------------------------------------------------------
# dynamic treatment effect: (D1, X1) then (D2, X2), outcome Y. Roles: x is
# the baseline covariate X1, m the intermediate covariate X2.


def train_nuisances_dynamic(train: Dataset, spec: MomentSpec, cfg: RunConfig) -> NuisanceSet:
    d1, d2 = spec.levels
    x1 = train.values["x"]
    x12 = train.stack("x", "m")
    a1 = _indicator(train, "d1", d1)
    a2 = _indicator(train, "d2", d2)
    i12 = _need((a1 * a2) > 0, f"D1={d1}, D2={d2}")
    i1 = _need(a1 > 0, f"D1={d1}")

    gamma = krr_fit(x12[i12], train.col("y")[i12], cfg.kernel)
    nu_fit = krr_fit(x1[i1], gamma(x12[i1]), cfg.kernel)
    pi = _propensity(x1, a1, cfg)  # P(D1=d1 | X1)
    rho = _propensity(x12[i1], a2[i1], cfg)  # P(D2=d2 | D1=d1, X1, X2)

    def nu(data):
        return nu_fit(data.values["x"])

    def delta(data):
        return gamma(data.stack("x", "m"))

    def alpha(data):
        sel = _indicator(data, "d1", d1) * _indicator(data, "d2", d2)
        return sel / (pi(data.values["x"]) * rho(data.stack("x", "m")))

    def eta(data):
        return _indicator(data, "d1", d1) / pi(data.values["x"])

    return NuisanceSet(nu, delta, alpha, eta, cfg.alpha_cap, cfg.eta_cap,
                       diagnostics={"ridge_delta": gamma.ridge, "ridge_nu": nu_fit.ridge})


# ---------------------------------------------------------------------------
# proximal mediation: target E[Y(1, M(0))] with negative controls Z
# (treatment side) and V (outcome side)


def _bridge(name, fn):
    try:
        return fn()
    except (DegenerateStratumError, BridgeEstimationError):
        raise
    except Exception as exc:  # noqa: BLE001 - surface which bridge failed
        raise BridgeEstimationError(name, exc) from exc


def fit_proximal_bridges(train: Dataset, cfg: RunConfig, shift: Optional[Callable] = None) -> dict:
    """Fit the four confounding bridges on ``train``.

    ``shift(name, rows, g)`` may replace the left-hand side ``g`` of bridge
    ``name`` evaluated on the stratum ``rows``; it is a hook for studying how
    errors in a preliminary stage propagate.
    """
    dcol = train.col("d")
    i1 = _need(dcol == 1, "D=1")
    i0 = _need(dcol == 0, "D=0")
    y = train.col("y")
    mxv = train.stack("m", "x", "v")
    mxz = train.stack("m", "x", "z")
    xv = train.stack("x", "v")
    xz = train.stack("x", "z")

    def lhs(name, idx, g):
        g = np.asarray(g, float)
        return g if shift is None else np.asarray(shift(name, train.subset(idx), g), float)

    pi_v = _propensity(xv, (dcol == 0).astype(float), cfg)  # P(D=0 | X, V)
    rho_v = _propensity(mxv, (dcol == 1).astype(float), cfg)  # P(D=1 | M, X, V)

    gamma1 = _bridge("gamma1", lambda: solve_nested_npiv(
        lhs("gamma1", i1, y[i1]), None, mxv[i1], mxz[i1], cfg.npiv,
        name="gamma1", preliminary_name="y"))
    gamma0 = _bridge("gamma0", lambda: solve_nested_npiv(
        lhs("gamma0", i0, gamma1(mxv[i0])), None, xv[i0], xz[i0], cfg.npiv,
        name="gamma0", preliminary_name="gamma1"))
    beta0 = _bridge("beta0", lambda: solve_nested_npiv(
        lhs("beta0", i0, 1.0 / pi_v(xv[i0])), None, xz[i0], xv[i0], cfg.npiv,
        name="beta0", preliminary_name="inverse propensity P(D=0|X,V)"))
    r1 = rho_v(mxv[i1])
    beta1 = _bridge("beta1", lambda: solve_nested_npiv(
        lhs("beta1", i1, beta0(xz[i1]) * (1.0 - r1) / r1), None, mxz[i1], mxv[i1], cfg.npiv,
        name="beta1", preliminary_name="beta0 odds"))
    return {"gamma1": gamma1, "gamma0": gamma0, "beta0": beta0, "beta1": beta1}


def train_nuisances_proximal(train: Dataset, spec: MomentSpec, cfg: RunConfig) -> NuisanceSet:
    bridges = fit_proximal_bridges(train, cfg)
    gamma1, gamma0, beta0, beta1 = (bridges[k] for k in ("gamma1", "gamma0", "beta0", "beta1"))

    def nu(data):
        return gamma0(data.stack("x", "v"))

    def delta(data):
        return gamma1(data.stack("m", "x", "v"))

    def alpha(data):
        return (data.col("d") == 1) * beta1(data.stack("m", "x", "z"))

    def eta(data):
        return (data.col("d") == 0) * beta0(data.stack("x", "z"))

    diag = {f"stationarity_{k}": max(f.stationarity())
            for k, f in (("gamma1", gamma1), ("gamma0", gamma0), ("beta0", beta0), ("beta1", beta1))}
    return NuisanceSet(nu, delta, alpha, eta, cfg.alpha_cap, cfg.eta_cap, diagnostics=diag, bridges=bridges)


# ---------------------------------------------------------------------------
# mediation without unobserved confounding, E[Y(1, M(0))]; used as the
# reference when the proxies carry no information


def train_nuisances_mediation(train: Dataset, spec: MomentSpec, cfg: RunConfig) -> NuisanceSet:
    dcol = train.col("d")
    i1 = _need(dcol == 1, "D=1")
    i0 = _need(dcol == 0, "D=0")
    mx = train.stack("m", "x")
    x = train.values["x"]
    gamma = krr_fit(mx[i1], train.col("y")[i1], cfg.kernel)
    nu_fit = krr_fit(x[i0], gamma(mx[i0]), cfg.kernel)
    pi = _propensity(x, (dcol == 1).astype(float), cfg)
    rho = _propensity(mx, (dcol == 1).astype(float), cfg)

    def nu(data):
        return nu_fit(data.values["x"])

    def delta(data):
        return gamma(data.stack("m", "x"))

    def alpha(data):
        r1 = rho(data.stack("m", "x"))
        return (data.col("d") == 1) * (1.0 - r1) / (r1 * (1.0 - pi(data.values["x"])))

    def eta(data):
        return (data.col("d") == 0) / (1.0 - pi(data.values["x"]))

    return NuisanceSet(nu, delta, alpha, eta, cfg.alpha_cap, cfg.eta_cap)


TRAINERS = {
    "long_term": train_nuisances_long_term,
    "dynamic": train_nuisances_dynamic,
    "proximal_mediation": train_nuisances_proximal,
    MEDIATION: train_nuisances_mediation,
}

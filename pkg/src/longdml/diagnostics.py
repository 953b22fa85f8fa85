"""Simulation-time checks: error rates, orthogonality and first-order conditions."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Dataset, stream
from .moments import NuisanceSet, brackets
from .npiv import ProjectedError
from .nuisance import gaussian_gram, median_lengthscale

NAMES = ("nu", "delta", "alpha", "eta")


# ---------------------------------------------------------------------------
# rate tables


@dataclass(frozen=True)
class RateRow:
    name: str
    n: int
    value: float
    se: float
    available: bool = True


def rows_to_csv(rows, header=("rate", "n", "value", "se")) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        if r.available:
            w.writerow([r.name, r.n, repr(float(r.value)), repr(float(r.se))])
        else:
            w.writerow([r.name, r.n, "unavailable", "unavailable"])
    return buf.getvalue()


def _sqrt_se(value, se):
    return se / (2.0 * np.sqrt(value)) if value > 0 else float("nan")


def _prod(n, a, sa, b, sb):
    """sqrt(n a b) with a first-order standard error."""
    val = float(np.sqrt(max(n * a * b, 0.0)))
    if a <= 0 or b <= 0:
        return val, float("nan")
    return val, float(np.sqrt((val / (2 * a) * sa) ** 2 + (val / (2 * b) * sb) ** 2))


def measure_rates(fitted: NuisanceSet, dgp, draws: int = 100_000, seed: int = 0,
                  levels=None, n: Optional[int] = None, data: Optional[Dataset] = None) -> list[RateRow]:
    """Monte Carlo R and P for the four nuisances plus the product rates.

    ``n`` is the sample size that enters the product rates (defaults to the
    number of draws). P needs the DGP's conditional-expectation maps; rows
    are marked unavailable where the oracle has none.
    """
    oracle = dgp.oracle(levels)
    if data is None:
        data, _ = dgp.draw(draws, stream(seed, "rates", dgp.problem))
    n_eval = data.n
    n = n or n_eval
    est = fitted.evaluate(data)
    tru = oracle.nuisances.evaluate(data)
    R, Rse, P, Pse, has_p = {}, {}, {}, {}, {}
    for k, name in enumerate(NAMES):
        sq = (est[k] - tru[k]) ** 2
        R[name] = float(sq.mean())
        Rse[name] = float(sq.std(ddof=1) / np.sqrt(n_eval))

        def err(d, k=k):
            return fitted.evaluate(d)[k] - oracle.nuisances.evaluate(d)[k]

        proj = oracle.project(name, err, data)
        if proj is None:
            has_p[name] = False
            P[name], Pse[name] = float("nan"), float("nan")
        else:
            has_p[name] = True
            psq = np.asarray(proj) ** 2
            P[name] = float(psq.mean())
            Pse[name] = float(psq.std(ddof=1) / np.sqrt(n_eval))
    rows = []
    for name in NAMES:
        rows.append(RateRow(f"R({name})", n, R[name], Rse[name]))
    for name in NAMES:
        rows.append(RateRow(f"P({name})", n, P[name], Pse[name], has_p[name]))
    for name in NAMES:
        rows.append(RateRow(f"sqrtR({name})", n, float(np.sqrt(R[name])), _sqrt_se(R[name], Rse[name])))
    for a, b in (("nu", "eta"), ("delta", "alpha"), ("delta", "eta")):
        val, se = _prod(n, R[a], Rse[a], R[b], Rse[b])
        rows.append(RateRow(f"sqrt(n R({a}) R({b}))", n, val, se))
    for a, b in (("nu", "eta"), ("delta", "alpha"), ("delta", "eta")):
        ok = has_p[a] and has_p[b]
        if ok:
            v1, s1 = _prod(n, P[a], Pse[a], R[b], Rse[b])
            v2, s2 = _prod(n, R[a], Rse[a], P[b], Pse[b])
            val, se = (v1, s1) if v1 <= v2 else (v2, s2)
        else:
            val, se = float("nan"), float("nan")
        rows.append(RateRow(f"min projected sqrt(n R P) ({a},{b})", n, val, se, ok))
    for name in NAMES:
        ok = has_p[name] and P[name] > 0
        ratio = float(np.sqrt(R[name] / P[name])) if ok else float("nan")
        rows.append(RateRow(f"ill-posedness({name})", n, ratio, float("nan"), ok))
    return rows


# (nuisance holding the bridge, stratum level of D, regressor roles)
BRIDGES = {
    "gamma1": ("delta", 1, ("m", "x", "v")),
    "gamma0": ("nu", 0, ("x", "v")),
    "beta0": ("eta", 0, ("x", "z")),
    "beta1": ("alpha", 1, ("m", "x", "z")),
}


def bridge_rates(bridges: dict, dgp, data: Dataset, names=None) -> dict:
    """Plain and projected mean-square error of each fitted proximal bridge
    (or of those in ``names``) on the stratum where its conditional moment
    restriction holds."""
    oracle = dgp.oracle()
    out = {}
    for name, fit in bridges.items():
        if names is not None and name not in names:
            continue
        nuis_name, level, roles = BRIDGES[name]
        rows = data.subset(np.flatnonzero(data.col("d") == level))
        truth = oracle.extras[name]

        def err(d, fit=fit, truth=truth, roles=roles):
            return fit(d.stack(*roles)) - truth(*(d.values[r][:, 0] for r in roles))

        sq = err(rows) ** 2
        psq = np.asarray(oracle.project(nuis_name, err, rows)) ** 2
        k = rows.n
        out[name] = ProjectedError(P=float(psq.mean()), R=float(sq.mean()),
                                   P_se=float(psq.std(ddof=1) / np.sqrt(k)),
                                   R_se=float(sq.std(ddof=1) / np.sqrt(k)))
    return out


# ---------------------------------------------------------------------------
# random perturbation directions


class RandomRkhsFunction:
    """``f(w) = sum_k c_k k(w, anchor_k)`` scaled to unit empirical norm."""

    def __init__(self, columns, anchors, coeffs, lengthscale, scale=1.0):
        self.columns = columns
        self.anchors = anchors
        self.coeffs = coeffs
        self.lengthscale = lengthscale
        self.scale = scale

    def raw(self, data: Dataset) -> np.ndarray:
        x = data.stack(*self.columns)
        return gaussian_gram(x, self.anchors, self.lengthscale) @ self.coeffs

    def __call__(self, data: Dataset) -> np.ndarray:
        return self.raw(data) / self.scale

    @classmethod
    def draw(cls, columns, data: Dataset, rng, n_anchors: int = 20) -> "RandomRkhsFunction":
        x = data.stack(*columns)
        idx = rng.choice(x.shape[0], size=min(n_anchors, x.shape[0]), replace=False)
        anchors = x[np.sort(idx)]
        coeffs = rng.standard_normal(anchors.shape[0])
        ls = median_lengthscale(x)
        f = cls(columns, anchors, coeffs, ls)
        norm = float(np.sqrt(np.mean(f.raw(data) ** 2)))
        f.scale = norm if norm > 0 else 1.0
        return f


def _ind(data, role, level):
    return (data.obs(role) & (data.col(role) == level)).astype(float)


def direction_space(problem: str, levels=None):
    """For each of (s, t, u, v): the argument columns and the mask.

    The masks follow the supports of (1 - eta0), (eta0 - alpha0),
    (Y - delta0) weighted by alpha and (delta0 - nu0) weighted by eta.
    """
    one = lambda data: np.ones(data.n)  # noqa: E731
    if problem == "long_term":
        d = (levels or (1,))[0]
        return {
            "s": (("x",), one),
            "t": (("m", "x"), one),
            "u": (("m", "x"), lambda data: (data.col("g") == 1).astype(float)),
            "v": (("x",), lambda data: (data.col("g") == 0) * _ind(data, "d", d)),
        }
    if problem == "dynamic":
        a, b = levels or (1, 1)
        return {
            "s": (("x",), one),
            "t": (("x", "m"), one),
            "u": (("x", "m"), lambda data: _ind(data, "d1", a) * _ind(data, "d2", b)),
            "v": (("x",), lambda data: _ind(data, "d1", a)),
        }
    if problem == "proximal_mediation":
        return {
            "s": (("x", "v"), one),
            "t": (("m", "x", "v"), one),
            "u": (("m", "x", "z"), lambda data: (data.col("d") == 1).astype(float)),
            "v": (("x", "z"), lambda data: (data.col("d") == 0).astype(float)),
        }
    raise ValueError(f"no direction space for {problem!r}")


def draw_directions(problem: str, data: Dataset, rng, levels=None) -> dict:
    space = direction_space(problem, levels)
    out = {}
    for key in ("s", "t", "u", "v"):
        cols, mask = space[key]
        f = RandomRkhsFunction.draw(cols, data, rng)
        out[key] = (lambda data, f=f, mask=mask: mask(data) * f(data))
    return out


def perturbed(nuis: NuisanceSet, dirs: dict, tau: float) -> NuisanceSet:
    s, t, u, v = dirs["s"], dirs["t"], dirs["u"], dirs["v"]
    return nuis.replace(
        nu=lambda d: nuis.nu(d) + tau * s(d),
        delta=lambda d: nuis.delta(d) + tau * t(d),
        alpha=lambda d: nuis.alpha(d) + tau * u(d),
        eta=lambda d: nuis.eta(d) + tau * v(d),
    )


# ---------------------------------------------------------------------------
# orthogonality


@dataclass(frozen=True)
class DirectionResult:
    index: int
    derivative: float
    se_mc: float
    fd_error: float
    derivative_half: float

    @property
    def se(self) -> float:
        return float(np.hypot(self.se_mc, self.fd_error))

    @property
    def flagged(self) -> bool:
        return abs(self.derivative) > 4.0 * self.se


@dataclass(frozen=True)
class OrthogonalityReport:
    problem: str
    draws: int
    step: float
    results: tuple

    @property
    def flags(self) -> int:
        return sum(r.flagged for r in self.results)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["direction", "derivative", "se", "se_mc", "fd_error", "derivative_half_step", "flagged"])
        for r in self.results:
            w.writerow([r.index, repr(r.derivative), repr(r.se), repr(r.se_mc), repr(r.fd_error),
                        repr(r.derivative_half), int(r.flagged)])
        return buf.getvalue()


def _central(data, nuis, dirs, tau):
    """Per-draw central difference of psi along the direction."""
    up = brackets(data, perturbed(nuis, dirs, tau))
    down = brackets(data, perturbed(nuis, dirs, -tau))
    return (up - down) / (2.0 * tau)


def check_orthogonality(problem: str, dgp, directions: int = 20, draws: int = 100_000,
                        seed: int = 0, step: float = 1e-3, levels=None) -> OrthogonalityReport:
    """Finite-difference Gateaux derivatives of E[psi] at the oracle nuisances.

    Each derivative carries a Monte Carlo standard error and a
    finite-difference error |D(step) - D(step/2)|; a direction is flagged
    when |D| exceeds four times their combination.
    """
    oracle = dgp.oracle(levels)
    data, _ = dgp.draw(draws, stream(seed, "orthogonality", problem, "draws"))
    results = []
    for j in range(directions):
        rng = stream(seed, "orthogonality", problem, "direction", j)
        dirs = draw_directions(problem, data, rng, levels)
        full = _central(data, oracle.nuisances, dirs, step)
        half = _central(data, oracle.nuisances, dirs, step / 2.0)
        deriv, deriv_half = float(full.mean()), float(half.mean())
        results.append(DirectionResult(
            index=j, derivative=deriv, se_mc=float(full.std(ddof=1) / np.sqrt(draws)),
            fd_error=abs(deriv - deriv_half), derivative_half=deriv_half))
    return OrthogonalityReport(problem, draws, step, tuple(results))


# ---------------------------------------------------------------------------
# first-order conditions


@dataclass(frozen=True)
class MomentCheck:
    name: str
    mean: float
    se: float

    @property
    def ok(self) -> bool:
        return abs(self.mean) <= 4.0 * self.se


def first_order_moments(problem: str, dgp, draws: int = 100_000, seed: int = 0,
                        directions: int = 5, levels=None) -> list[MomentCheck]:
    """E[s(1-eta0)], E[t(eta0-alpha0)], E[u(Y-delta0)], E[v(delta0-nu0)] for
    random directions drawn from the DGP's hypothesis spaces."""
    oracle = dgp.oracle(levels)
    data, _ = dgp.draw(draws, stream(seed, "foc", problem, "draws"))
    nu, delta, alpha, eta = oracle.nuisances.evaluate(data)
    y = np.where(data.obs("y"), data.col("y"), 0.0)
    out = []
    for j in range(directions):
        dirs = draw_directions(problem, data, stream(seed, "foc", problem, "direction", j), levels)
        terms = {
            "s(1-eta)": dirs["s"](data) * (1.0 - eta),
            "t(eta-alpha)": dirs["t"](data) * (eta - alpha),
            "u(y-delta)": dirs["u"](data) * np.where(data.obs("y"), y - delta, 0.0),
            "v(delta-nu)": dirs["v"](data) * (delta - nu),
        }
        for name, vals in terms.items():
            out.append(MomentCheck(f"{name}#{j}", float(vals.mean()),
                                   float(vals.std(ddof=1) / np.sqrt(draws))))
    return out

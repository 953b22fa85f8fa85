"""Linear-Gaussian data-generating processes with closed-form oracles.

Every DGP draws the binary treatments first (or from a logistic link) and
the remaining variables as linear functions of independent Gaussian shocks.
Conditional laws given any subset of variables are therefore Gaussian, and
all nuisance truths, targets and conditional-expectation maps follow from
linear algebra on the shock loadings.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import integrate
from scipy.special import expit

from ..core import Dataset, stream
from ..moments import NuisanceSet

GH_NODES, GH_WEIGHTS = hermegauss(24)
GH_WEIGHTS = GH_WEIGHTS / GH_WEIGHTS.sum()

PROPENSITY_BAND = (0.05, 0.95)
PROPENSITY_TOLERANCE = 0.01  # share of draws allowed outside the band


def _bern(rng, p):
    return (rng.random(np.shape(p)) < p).astype(float)


@dataclass
class DgpOracle:
    """Ground truth for one DGP and intervention.

    ``nuisances`` has infinite clipping caps. ``project(name, fn, data)``
    returns E[fn(W) | B] per row, where B is the conditioning set used in the
    projected error of nuisance ``name`` (identity when B = A).
    """

    theta0: float
    nuisances: NuisanceSet
    projectors: Optional[dict] = None
    extras: dict = field(default_factory=dict)

    def project(self, name: str, fn: Callable[[Dataset], np.ndarray], data: Dataset):
        """None when no conditional-expectation map is known for ``name``.
        Without projectors the instruments coincide with the arguments and
        the projection is the identity."""
        if self.projectors is None:
            return np.asarray(fn(data), dtype=float)
        proj = self.projectors.get(name)
        if proj is None:
            return None
        return proj(fn, data)


class Dgp:
    problem: str = ""

    def draw(self, n: int, rng: np.random.Generator) -> tuple[Dataset, dict]:
        raise NotImplementedError

    def generate(self, n: int, seed: int) -> Dataset:
        return self.draw(n, stream(seed, "generate", self.problem))[0]

    def oracle(self, levels=None) -> DgpOracle:
        raise NotImplementedError

    def potential_mean(self, levels, draws: int, rng: np.random.Generator) -> tuple[float, float]:
        """Brute-force Monte Carlo mean of the counterfactual outcome and its s.e."""
        raise NotImplementedError

    def propensity_draws(self, data: Dataset) -> list[np.ndarray]:
        return []

    def check(self, draws: int = 100_000, seed: int = 0) -> list[str]:
        """Flags for propensities outside the band and degenerate covariances."""
        data, _ = self.draw(draws, stream(seed, "check", self.problem))
        flags = []
        lo, hi = PROPENSITY_BAND
        for i, p in enumerate(self.propensity_draws(data)):
            share = float(np.mean((p < lo) | (p > hi)))
            if share > PROPENSITY_TOLERANCE:
                flags.append(f"propensity {i}: {share:.2%} of draws outside [{lo}, {hi}]")
        cov = self.shock_covariance()
        if cov is not None and np.linalg.eigvalsh(cov).min() < 1e-6:
            flags.append("covariance of the continuous variables is near singular")
        return flags

    def shock_covariance(self) -> Optional[np.ndarray]:
        return None

    def _warn_flags(self):
        flags = self.check(draws=100_000)
        for f in flags:
            warnings.warn(f"{self.problem} DGP: {f}", stacklevel=3)
        return flags


# ---------------------------------------------------------------------------
# long-term effect


@dataclass(frozen=True)
class LongTermDgp(Dgp):
    """X ~ N(0, sx^2); G ~ logistic(g0 + gx X) with G=1 the observational
    sample; D ~ logistic(b0 + bx X); M = a0 + ad D + ax X + sm e;
    Y = c0 + cm M + cx X + sy e'. Y is masked when G=0 and D when G=1."""

    g0: float = 0.0
    gx: float = 0.5
    b0: float = 0.0
    bx: float = 0.5
    a0: float = 0.0
    ad: float = 1.0
    ax: float = 0.5
    sm: float = 1.25
    c0: float = 0.0
    cm: float = 1.0
    cx: float = 0.5
    sy: float = 1.0
    sx: float = 1.0
    problem: str = "long_term"

    def _latent(self, n, rng):
        x = self.sx * rng.standard_normal(n)
        g = _bern(rng, expit(self.g0 + self.gx * x))
        d = _bern(rng, expit(self.b0 + self.bx * x))
        em = rng.standard_normal(n)
        ey = rng.standard_normal(n)
        return x, g, d, em, ey

    def draw(self, n, rng):
        x, g, d, em, ey = self._latent(n, rng)
        m = self.a0 + self.ad * d + self.ax * x + self.sm * em
        y = self.c0 + self.cm * m + self.cx * x + self.sy * ey
        data = Dataset.from_arrays(
            y=np.where(g == 1, y, np.nan), d=np.where(g == 0, d, np.nan), g=g, x=x, m=m)
        return data, {"d_full": d, "y_full": y}

    def potential_mean(self, levels, draws, rng):
        d = levels[0] if levels is not None else 1
        tot, tot2, done = 0.0, 0.0, 0
        while done < draws:
            k = min(1_000_000, draws - done)
            x, _, _, em, ey = self._latent(k, rng)
            m = self.a0 + self.ad * d + self.ax * x + self.sm * em
            y = self.c0 + self.cm * m + self.cx * x + self.sy * ey
            tot += y.sum()
            tot2 += (y * y).sum()
            done += k
        mean = tot / draws
        return mean, float(np.sqrt(max(tot2 / draws - mean ** 2, 0.0) / draws))

    # closed forms ---------------------------------------------------------

    def p_g1(self, x):  # P(G=1 | X) = P(G=1 | M, X)
        return expit(self.g0 + self.gx * x)

    def p_d(self, d, x):  # P(D=d | X, G=0)
        p1 = expit(self.b0 + self.bx * x)
        return p1 if d == 1 else 1.0 - p1

    def p_d_given_m(self, d, m, x):  # P(D=d | M, X, G=0)
        if self.sm == 0:
            raise ValueError("P(D | M, X) needs sm > 0")
        mu0 = self.a0 + self.ax * x
        logit = self.b0 + self.bx * x + self.ad * (m - mu0 - self.ad / 2.0) / self.sm ** 2
        p1 = expit(logit)
        return p1 if d == 1 else 1.0 - p1

    def gamma0(self, m, x):
        return self.c0 + self.cm * m + self.cx * x

    def nu0(self, x, d):
        return self.c0 + self.cm * (self.a0 + self.ad * d + self.ax * x) + self.cx * x

    def theta0(self, d=1):
        return self.c0 + self.cm * (self.a0 + self.ad * d)

    def oracle(self, levels=None):
        d = (levels or (1,))[0]

        def nu(data):
            return self.nu0(data.values["x"][:, 0], d)

        def delta(data):
            return self.gamma0(data.values["m"][:, 0], data.values["x"][:, 0])

        def alpha(data):
            x = data.values["x"][:, 0]
            m = data.values["m"][:, 0]
            e1 = self.p_g1(x)
            w = self.p_d_given_m(d, m, x) * (1.0 - e1) / (e1 * self.p_d(d, x) * (1.0 - e1))
            return (data.col("g") == 1) * w

        def eta(data):
            x = data.values["x"][:, 0]
            sel = (data.col("g") == 0) & data.obs("d") & (data.col("d") == d)
            return sel / (self.p_d(d, x) * (1.0 - self.p_g1(x)))

        return DgpOracle(self.theta0(d), NuisanceSet(nu, delta, alpha, eta))

    def propensity_draws(self, data):
        x = data.values["x"][:, 0]
        out = [self.p_g1(x), self.p_d(1, x)]
        if self.sm > 0:
            out.append(self.p_d_given_m(1, data.values["m"][:, 0], x))
        return out


# ---------------------------------------------------------------------------
# dynamic treatment effect


@dataclass(frozen=True)
class DynamicDgp(Dgp):
    """X1 ~ N(0, sx1^2); D1 ~ logistic(p0 + p1 X1); X2 = c0 + cd D1 + cx X1 + s2 e;
    D2 ~ logistic(q0 + qd D1 + q1 X1 + q2 X2);
    Y = y0 + yd1 D1 + yd2 D2 + yx1 X1 + yx2 X2 + sy e'.

    Unless given, ``yx1`` makes the slope of nu0 in X1 equal to 1 (or 0 with
    ``heterogeneity=False``) and ``y0`` makes nu0 equal 1 at X1=0 under the
    intervention (1, 1). The localization variable is V = X1.
    """

    p0: float = 0.0
    p1: float = 0.5
    c0: float = 0.0
    cd: float = 0.5
    cx: float = 0.5
    s2: float = 1.0
    q0: float = -0.25
    qd: float = 0.5
    q1: float = 0.25
    q2: float = 0.5
    yd1: float = 1.0
    yd2: float = 1.0
    yx2: float = 1.0
    yx1: Optional[float] = None
    y0: Optional[float] = None
    sy: float = 1.0
    sx1: float = 1.0
    heterogeneity: bool = True
    problem: str = "dynamic"

    @property
    def slope(self) -> float:
        return self.yx1_ + self.yx2 * self.cx

    @property
    def yx1_(self) -> float:
        if self.yx1 is not None:
            return self.yx1
        return (1.0 if self.heterogeneity else 0.0) - self.yx2 * self.cx

    @property
    def y0_(self) -> float:
        if self.y0 is not None:
            return self.y0
        return 1.0 - self.yd1 - self.yd2 - self.yx2 * (self.c0 + self.cd)

    def _latent(self, n, rng):
        x1 = self.sx1 * rng.standard_normal(n)
        u1 = rng.random(n)
        e2 = rng.standard_normal(n)
        u2 = rng.random(n)
        ey = rng.standard_normal(n)
        return x1, u1, e2, u2, ey

    def _outcome(self, x1, d1, e2, d2_or_u2, ey, fixed_d2):
        x2 = self.c0 + self.cd * d1 + self.cx * x1 + self.s2 * e2
        if fixed_d2:
            d2 = d2_or_u2
        else:
            d2 = (d2_or_u2 < expit(self.q0 + self.qd * d1 + self.q1 * x1 + self.q2 * x2)).astype(float)
        y = self.y0_ + self.yd1 * d1 + self.yd2 * d2 + self.yx1_ * x1 + self.yx2 * x2 + self.sy * ey
        return x2, d2, y

    def draw(self, n, rng):
        x1, u1, e2, u2, ey = self._latent(n, rng)
        d1 = (u1 < expit(self.p0 + self.p1 * x1)).astype(float)
        x2, d2, y = self._outcome(x1, d1, e2, u2, ey, fixed_d2=False)
        return Dataset.from_arrays(y=y, d1=d1, d2=d2, x=x1, m=x2, v=x1), {}

    def potential_mean(self, levels, draws, rng):
        a, b = levels if levels is not None else (1, 1)
        tot, tot2, done = 0.0, 0.0, 0
        while done < draws:
            k = min(1_000_000, draws - done)
            x1, _, e2, _, ey = self._latent(k, rng)
            _, _, y = self._outcome(x1, np.full(k, float(a)), e2, np.full(k, float(b)), ey, fixed_d2=True)
            tot += y.sum()
            tot2 += (y * y).sum()
            done += k
        mean = tot / draws
        return mean, float(np.sqrt(max(tot2 / draws - mean ** 2, 0.0) / draws))

    def p_d1(self, a, x1):
        p = expit(self.p0 + self.p1 * x1)
        return p if a == 1 else 1.0 - p

    def p_d2(self, b, a, x1, x2):
        p = expit(self.q0 + self.qd * a + self.q1 * x1 + self.q2 * x2)
        return p if b == 1 else 1.0 - p

    def gamma0(self, a, b, x1, x2):
        return self.y0_ + self.yd1 * a + self.yd2 * b + self.yx1_ * x1 + self.yx2 * x2

    def nu0(self, x1, a, b):
        return self.gamma0(a, b, x1, self.c0 + self.cd * a + self.cx * x1)

    def theta0(self, a=1, b=1):
        return float(self.nu0(0.0, a, b))

    def theta_local(self, v, a=1, b=1):
        """theta(v) = E[nu0(X1) | X1 = v]."""
        return float(self.nu0(v, a, b))

    def theta_local_h(self, v, h, kernel="gaussian", a=1, b=1):
        """Kernel-smoothed target E[l_h(X1) nu0(X1)] with l_h normalized."""
        slope = self.nu0(1.0, a, b) - self.nu0(0.0, a, b)
        base = self.nu0(0.0, a, b)
        s2 = self.sx1 ** 2
        if kernel == "gaussian":
            return float(base + slope * v * s2 / (s2 + h * h))
        from ..localize import kernel_values
        dens = lambda t: np.exp(-0.5 * t * t / s2)  # noqa: E731
        num = integrate.quad(lambda t: t * kernel_values((t - v) / h, kernel) * dens(t), v - h, v + h)[0]
        den = integrate.quad(lambda t: kernel_values((t - v) / h, kernel) * dens(t), v - h, v + h)[0]
        return float(base + slope * num / den)

    def oracle(self, levels=None):
        a, b = levels or (1, 1)

        def nu(data):
            return self.nu0(data.values["x"][:, 0], a, b)

        def delta(data):
            return self.gamma0(a, b, data.values["x"][:, 0], data.values["m"][:, 0])

        def alpha(data):
            x1, x2 = data.values["x"][:, 0], data.values["m"][:, 0]
            sel = (data.col("d1") == a) & (data.col("d2") == b)
            return sel / (self.p_d1(a, x1) * self.p_d2(b, a, x1, x2))

        def eta(data):
            return (data.col("d1") == a) / self.p_d1(a, data.values["x"][:, 0])

        return DgpOracle(self.theta0(a, b), NuisanceSet(nu, delta, alpha, eta))

    def propensity_draws(self, data):
        x1, x2 = data.values["x"][:, 0], data.values["m"][:, 0]
        d1 = data.col("d1")
        return [self.p_d1(1, x1), self.p_d2(1, d1, x1, x2)]


# ---------------------------------------------------------------------------
# Gaussian conditioning on shock loadings


class LinearGaussian:
    """Variables as ``const + loading @ shocks`` with iid N(0, 1) shocks."""

    def __init__(self, names, consts, loadings):
        self.names = list(names)
        self.const = np.asarray(consts, dtype=float)
        self.load = np.asarray(loadings, dtype=float)
        self.index = {k: i for i, k in enumerate(self.names)}

    @property
    def cov(self):
        return self.load @ self.load.T

    def conditional(self, target: str, given: list[str]):
        """E[target | given] = c + coef @ given and the residual variance."""
        t = self.index[target]
        g = [self.index[k] for k in given]
        S = self.cov
        Sgg = S[np.ix_(g, g)]
        Stg = S[t, g]
        coef = np.linalg.lstsq(Sgg, Stg, rcond=1e-12)[0] if g else np.zeros(0)
        c = self.const[t] - coef @ self.const[g] if g else self.const[t]
        var = float(S[t, t] - coef @ Stg) if g else float(S[t, t])
        return float(c), coef, max(var, 0.0)

    def mean(self, name):
        return float(self.const[self.index[name]])


def _match_exp(k0: float, k: np.ndarray, mu0: float, mu: np.ndarray, var: float, free: int):
    """Find (a0, a, az) with E[exp(a0 + a.W + az Z) | W] = exp(k0 + k.W) when
    Z | W ~ N(mu0 + mu.W, var). ``free`` is the position in W of the
    coordinate that Z replaces in the bridge's arguments."""
    if abs(mu[free]) < 1e-12:
        if abs(k[free]) > 1e-10:
            raise ValueError("bridge is not identified: proxy carries no signal")
        az = 0.0
    else:
        az = k[free] / mu[free]
    a = k - az * mu
    a0 = k0 - az * mu0 - 0.5 * az * az * var
    if abs(a[free]) > 1e-9 * (1 + abs(k[free])):
        raise AssertionError("exp-affine matching failed")
    return a0, np.delete(a, free), az


@dataclass(frozen=True)
class ProximalDgp(Dgp):
    """Mediation with an unobserved confounder U and proxies V, Z.

    D ~ Bern(p); U | D ~ N(mu_u + ku D, su^2); X | D ~ N(kx D, sx^2);
    M = m0 + md D + mx X + mu U + sm e_M; V = load U + sv e_V;
    Z = load U + sz e_Z; Y = y0 + yd D + ym M + yx X + yu U + sy e_Y.

    With ``confounding`` on, ku defaults to mu md su^2 / sm^2, the value that
    makes Z independent of D given (M, X, V). With it off, ku = mu = 0.
    """

    p: float = 0.5
    mu_u: float = 0.0
    ku: Optional[float] = None
    su: float = 1.0
    kx: float = 0.5
    sx: float = 1.0
    m0: float = 0.0
    md: float = 0.75
    mx: float = 0.5
    mu: float = 0.5
    sm: float = 1.0
    load: float = 1.0
    sv: float = 1.0
    sz: float = 1.0
    y0: float = 0.0
    yd: float = 1.0
    ym: float = 1.0
    yx: float = 0.5
    yu: float = 0.5
    sy: float = 1.0
    confounding: bool = True
    problem: str = "proximal_mediation"

    @property
    def mu_(self) -> float:
        return self.mu if self.confounding else 0.0

    @property
    def ku_(self) -> float:
        if not self.confounding:
            return 0.0
        if self.ku is not None:
            return self.ku
        return self.mu_ * self.md * self.su ** 2 / self.sm ** 2

    # structure ------------------------------------------------------------

    SHOCKS = ("eU", "eX", "eM", "eV", "eZ", "eY")

    def system(self, d: float) -> LinearGaussian:
        """Joint law of (U, X, M, V, Z, Y) given D = d."""
        L = np.zeros((6, 6))
        c = np.zeros(6)
        c[0] = self.mu_u + self.ku_ * d
        L[0, 0] = self.su
        c[1] = self.kx * d
        L[1, 1] = self.sx
        c[2] = self.m0 + self.md * d + self.mx * c[1] + self.mu_ * c[0]
        L[2] = self.mx * L[1] + self.mu_ * L[0]
        L[2, 2] += self.sm
        c[3] = self.load * c[0]
        L[3] = self.load * L[0]
        L[3, 3] += self.sv
        c[4] = self.load * c[0]
        L[4] = self.load * L[0]
        L[4, 4] += self.sz
        c[5] = self.y0 + self.yd * d + self.ym * c[2] + self.yx * c[1] + self.yu * c[0]
        L[5] = self.ym * L[2] + self.yx * L[1] + self.yu * L[0]
        L[5, 5] += self.sy
        return LinearGaussian(("U", "X", "M", "V", "Z", "Y"), c, L)

    def shock_covariance(self):
        return self.system(0.0).cov[:5, :5]

    def _latent(self, n, rng):
        d = _bern(rng, np.full(n, self.p))
        shocks = rng.standard_normal((6, n))
        return d, shocks

    def _assemble(self, d, shocks, d_for_m=None):
        u = self.mu_u + self.ku_ * d + self.su * shocks[0]
        x = self.kx * d + self.sx * shocks[1]
        dm = d if d_for_m is None else d_for_m
        m = self.m0 + self.md * dm + self.mx * x + self.mu_ * u + self.sm * shocks[2]
        v = self.load * u + self.sv * shocks[3]
        z = self.load * u + self.sz * shocks[4]
        return u, x, m, v, z

    def draw(self, n, rng):
        d, shocks = self._latent(n, rng)
        u, x, m, v, z = self._assemble(d, shocks)
        y = self.y0 + self.yd * d + self.ym * m + self.yx * x + self.yu * u + self.sy * shocks[5]
        return Dataset.from_arrays(y=y, d=d, m=m, x=x, z=z, v=v), {"u": u}

    def potential_mean(self, levels, draws, rng):
        """Mean of Y(1, M(0)) by simulating the structural equations."""
        tot, tot2, done = 0.0, 0.0, 0
        while done < draws:
            k = min(1_000_000, draws - done)
            d, shocks = self._latent(k, rng)
            u, x, m0, _, _ = self._assemble(d, shocks, d_for_m=np.zeros(k))
            y = self.y0 + self.yd + self.ym * m0 + self.yx * x + self.yu * u + self.sy * shocks[5]
            tot += y.sum()
            tot2 += (y * y).sum()
            done += k
        mean = tot / draws
        return mean, float(np.sqrt(max(tot2 / draws - mean ** 2, 0.0) / draws))

    # closed forms ---------------------------------------------------------

    def _logodds(self, given: list[str]):
        """Linear log-odds of D=1 given the listed continuous variables."""
        s0, s1 = self.system(0.0), self.system(1.0)
        idx = [s0.index[k] for k in given]
        S = s0.cov[np.ix_(idx, idx)]
        m0, m1 = s0.const[idx], s1.const[idx]
        Sinv = np.linalg.pinv(S, rcond=1e-12)
        w = Sinv @ (m1 - m0)
        c = np.log(self.p / (1 - self.p)) - 0.5 * (m1 @ Sinv @ m1 - m0 @ Sinv @ m0)
        return float(c), w

    def gamma1_coef(self):
        """gamma1(m, x, v) = c + cm m + cx x + cv v."""
        if self.load == 0:
            return (self.y0 + self.yd + self.yu * self.mean_u_given_d(1), self.ym, self.yx, 0.0)
        return (self.y0 + self.yd, self.ym, self.yx, self.yu / self.load)

    def gamma0_coef(self):
        """gamma0(x, v) = c + cx x + cv v."""
        k = self.ym * self.mu_ + self.yu
        if self.load == 0:
            return (self.y0 + self.yd + self.ym * self.m0 + k * self.mean_u_given_d(0),
                    self.ym * self.mx + self.yx, 0.0)
        return (self.y0 + self.yd + self.ym * self.m0, self.ym * self.mx + self.yx, k / self.load)

    def mean_u_given_d(self, d):
        return self.mu_u + self.ku_ * d

    def theta0(self) -> float:
        c, cx, cv = self.gamma0_coef()
        ex = self.kx * self.p
        eu = self.mu_u + self.ku_ * self.p
        return float(c + cx * ex + cv * self.load * eu)

    def beta0_coef(self):
        """beta0(x, z) = 1 + exp(a + bx x + bz z)."""
        l0, lw = self._logodds(["X", "V"])
        c, coef, var = self.system(0.0).conditional("Z", ["X", "V"])
        a, rest, az = _match_exp(l0, lw, c, coef, var, free=1)
        return float(a), float(rest[0]), float(az)

    def beta1_terms(self):
        """beta1(m, x, z) = sum_j exp(a_j + am_j m + ax_j x + az_j z)."""
        l0, lw = self._logodds(["M", "X", "V"])
        c1, coef1, var1 = self.system(1.0).conditional("Z", ["M", "X", "V"])
        a, bx, bz = self.beta0_coef()
        terms = []
        # exp(-L') times the constant 1 of beta0
        terms.append((-l0, -lw))
        # exp(-L') * E[exp(a + bx X + bz Z) | D=1, M, X, V]
        k0 = -l0 + a + bz * c1 + 0.5 * bz * bz * var1
        k = -lw + bz * coef1 + np.array([0.0, bx, 0.0])
        terms.append((k0, k))
        out = []
        for t0, t in terms:
            a0, rest, az = _match_exp(t0, np.asarray(t, float), c1, coef1, var1, free=2)
            out.append((float(a0), float(rest[0]), float(rest[1]), float(az)))
        return out

    def p_d0_given_xv(self, x, v):
        l0, lw = self._logodds(["X", "V"])
        return expit(-(l0 + lw[0] * x + lw[1] * v))

    def p_d1_given_mxv(self, m, x, v):
        l0, lw = self._logodds(["M", "X", "V"])
        return expit(l0 + lw[0] * m + lw[1] * x + lw[2] * v)

    def gamma1(self, m, x, v):
        c, cm, cx, cv = self.gamma1_coef()
        return c + cm * m + cx * x + cv * v

    def gamma0(self, x, v):
        c, cx, cv = self.gamma0_coef()
        return c + cx * x + cv * v

    def beta0(self, x, z):
        a, bx, bz = self.beta0_coef()
        return 1.0 + np.exp(a + bx * x + bz * z)

    def beta1(self, m, x, z):
        return sum(np.exp(a0 + am * m + ax * x + az * z) for a0, am, ax, az in self.beta1_terms())

    def _projector(self, target: str, given: list[str]):
        """E[fn(data) | given, D] by Gauss-Hermite over the 1-d law of ``target``."""
        laws = {d: self.system(float(d)).conditional(target.upper(), [g.upper() for g in given])
                for d in (0, 1)}
        role = target.lower()

        def project(fn, data: Dataset):
            d = data.col("d")
            obs = np.column_stack([data.values[g][:, 0] for g in given])
            mean = np.empty(data.n)
            sd = np.empty(data.n)
            for lev, (c, coef, var) in laws.items():
                sel = d == lev
                mean[sel] = c + obs[sel] @ coef
                sd[sel] = np.sqrt(var)
            out = np.zeros(data.n)
            for node, w in zip(GH_NODES, GH_WEIGHTS):
                out += w * np.asarray(fn(data.replace(**{role: mean + sd * node})), float)
            return out

        return project

    def oracle(self, levels=None):
        def nu(data):
            return self.gamma0(data.values["x"][:, 0], data.col("v"))

        def delta(data):
            return self.gamma1(data.values["m"][:, 0], data.values["x"][:, 0], data.col("v"))

        def alpha(data):
            return (data.col("d") == 1) * self.beta1(
                data.values["m"][:, 0], data.values["x"][:, 0], data.values["z"][:, 0])

        def eta(data):
            return (data.col("d") == 0) * self.beta0(data.values["x"][:, 0], data.values["z"][:, 0])

        projectors = {
            "nu": self._projector("v", ["x", "z"]),
            "delta": self._projector("v", ["m", "x", "z"]),
            "alpha": self._projector("z", ["m", "x", "v"]),
            "eta": self._projector("z", ["x", "v"]),
        }
        return DgpOracle(self.theta0(), NuisanceSet(nu, delta, alpha, eta), projectors,
                         extras={"gamma1": self.gamma1, "gamma0": self.gamma0,
                                 "beta0": self.beta0, "beta1": self.beta1})

    def propensity_draws(self, data):
        x = data.values["x"][:, 0]
        m = data.values["m"][:, 0]
        v = data.col("v")
        return [self.p_d0_given_xv(x, v), self.p_d1_given_mxv(m, x, v)]


# ---------------------------------------------------------------------------
# simultaneous-equations NPIV design


@dataclass(frozen=True)
class LinearIVDgp(Dgp):
    """Z ~ N(0, 1); X = pi Z + sx e; Y = b0 + b1 X + rho sx e + sy e'.

    The structural function is h0(x) = b0 + b1 x and X | Z ~ N(pi Z, sx^2),
    so E[f(X) | Z] is a one-dimensional Gaussian integral.
    """

    pi: float = 1.0
    sx: float = 1.0
    b0: float = 0.5
    b1: float = 1.0
    rho: float = 0.8
    sy: float = 0.5
    problem: str = "npiv_linear"

    def draw(self, n, rng):
        z = rng.standard_normal(n)
        e = rng.standard_normal(n)
        x = self.pi * z + self.sx * e
        y = self.b0 + self.b1 * x + self.rho * self.sx * e + self.sy * rng.standard_normal(n)
        return Dataset.from_arrays(y=y, x=x, z=z), {}

    def h0(self, x):
        return self.b0 + self.b1 * np.asarray(x, float)

    def project(self, fn: Callable[[np.ndarray], np.ndarray], z) -> np.ndarray:
        """E[fn(X) | Z = z] for a function of x."""
        z = np.asarray(z, float)
        out = np.zeros_like(z)
        for node, w in zip(GH_NODES, GH_WEIGHTS):
            out += w * np.asarray(fn(self.pi * z + self.sx * node), float)
        return out


DGPS = {
    "long_term": LongTermDgp,
    "dynamic": DynamicDgp,
    "proximal_mediation": ProximalDgp,
}


def make_dgp(tag: str, **params) -> Dgp:
    from ..errors import ConfigurationError
    if tag not in DGPS:
        raise ConfigurationError(f"unknown DGP {tag!r}; valid tags: {', '.join(DGPS)}")
    return DGPS[tag](**params)

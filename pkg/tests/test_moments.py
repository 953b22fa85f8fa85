import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longdml.core import Dataset, RunConfig, Sample, stream
from longdml.dml import estimate
from longdml.errors import ConfigurationError, DegenerateStratumError, EvaluationError, FoldTrainingError
from longdml.moments import (MEDIATION, MomentSpec, NuisanceSet, brackets, clamp_propensity, clip,
                             fit_proximal_bridges, moment_psi, psi_values)
from longdml.sim.dgp import DynamicDgp, LongTermDgp, ProximalDgp
from longdml.sim.study import run_study


def const(c):
    return lambda data: np.full(data.n, float(c))


def test_psi_collapses_to_nu_minus_theta():
    nuis = NuisanceSet(const(2.5), const(7.0), const(0.0), const(0.0))
    s = Sample(y=1.0, d=(1.0,), x=(0.0,))
    assert moment_psi(s, 2.5, nuis) == 0.0


def test_psi_outcome_term():
    nuis = NuisanceSet(const(0.0), const(0.0), const(1.0), const(0.0))
    assert moment_psi(Sample(y=3.0, d=(0.0,), x=(1.0,)), 0.0, nuis) == 3.0


def test_missing_outcome_behind_mask_is_inert():
    data = Dataset.from_arrays(y=[np.nan, 2.0], d=[1.0, np.nan], g=[0.0, 1.0], x=[0.0, 0.0], m=[0.0, 0.0])
    nuis = NuisanceSet(const(1.0), const(1.5), lambda d: (d.col("g") == 1) * 2.0, const(0.5))
    assert brackets(data, nuis).tolist() == [1.25, 1.0 + 2.0 * 0.5 + 0.25]


def test_missing_outcome_with_weight_raises():
    data = Dataset.from_arrays(y=[np.nan, 2.0], d=[1.0, 0.0], x=[0.0, 0.0])
    nuis = NuisanceSet(const(0.0), const(0.0), const(1.0), const(0.0))
    with pytest.raises(EvaluationError) as err:
        brackets(data, nuis)
    assert err.value.field == "y"


def test_nonfinite_nuisance_raises():
    data = Dataset.from_arrays(y=[1.0], d=[1.0], x=[0.0])
    with pytest.raises(EvaluationError):
        brackets(data, NuisanceSet(const(np.nan), const(0.0), const(0.0), const(0.0)))


def test_weights_clipped_at_evaluation():
    data = Dataset.from_arrays(y=[1.0, 1.0], d=[1.0, 1.0], x=[0.0, 0.0])
    nuis = NuisanceSet(const(0.0), const(0.0), const(1e9), const(-1e9), alpha_cap=100.0, eta_cap=50.0)
    _, _, a, e = nuis.evaluate(data)
    assert a.tolist() == [100.0, 100.0] and e.tolist() == [-50.0, -50.0]


def test_oracle_psi_mean_zero_long_term():
    dgp = LongTermDgp()
    data, _ = dgp.draw(100_000, stream(0, "psi-check"))
    o = dgp.oracle()
    psi = psi_values(data, o.theta0, o.nuisances)
    se = psi.std(ddof=1) / np.sqrt(psi.size)
    assert abs(psi.mean()) <= 3 * se


@settings(max_examples=50, deadline=None)
@given(vals=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30), cap=st.floats(1e-3, 1e3))
def test_clip_idempotent_and_order_preserving(vals, cap):
    v = np.array(vals)
    once = clip(v, cap)
    assert np.array_equal(clip(once, cap), once)
    inside = np.abs(v) <= cap
    assert np.array_equal(once[inside], v[inside])
    order = np.argsort(v, kind="stable")
    assert np.all(np.diff(once[order]) >= 0)


def test_propensity_floor():
    assert clamp_propensity([0.001, 0.5, 0.9999], 0.01).tolist() == [0.01, 0.5, 0.99]


def test_moment_spec_levels():
    with pytest.raises(ConfigurationError):
        MomentSpec("dynamic", (1,))
    with pytest.raises(ConfigurationError):
        MomentSpec("long_term", (2,))
    with pytest.raises(ConfigurationError):
        MomentSpec("nope")
    assert MomentSpec("dynamic", (1, 0)).levels == (1, 0)


# long-term ---------------------------------------------------------------------------

def test_long_term_constant_regression_gives_constant_nu():
    c = 2.0
    dgp = LongTermDgp(ad=0.0, cm=0.0, cx=0.0, c0=c)
    train = dgp.generate(4000, 1)
    nuis = MomentSpec("long_term").train(train, RunConfig())
    test = dgp.generate(500, 2)
    assert np.mean(np.abs(nuis.nu(test) - c)) <= 0.05


def test_long_term_randomized_eta_reduces():
    dgp = LongTermDgp(bx=0.0, gx=0.0)
    train = dgp.generate(3000, 3)
    nuis = MomentSpec("long_term", (1,)).train(train, RunConfig())
    g0 = train.col("g") == 0
    p_d = train.col("d")[g0].mean()
    p_g0 = g0.mean()
    test = dgp.generate(400, 4)
    eta = nuis.eta(test)
    sel = (test.col("g") == 0) & test.obs("d") & (test.col("d") == 1)
    assert np.all(eta[~sel] == 0)
    assert np.allclose(eta[sel], 1.0 / (p_d * p_g0), rtol=0.1)


def test_long_term_empty_stratum():
    dgp = LongTermDgp()
    data = dgp.generate(200, 5)
    d = np.where(data.obs("d"), 0.0, np.nan)
    bad = Dataset({**data.values, "d": d[:, None]}, dict(data.observed))
    with pytest.raises(DegenerateStratumError):
        MomentSpec("long_term", (1,)).train(bad, RunConfig())


# dynamic ------------------------------------------------------------------------------

def test_dynamic_randomized_unbiased():
    dgp = DynamicDgp(p1=0.0, q1=0.0, q2=0.0, qd=0.0)
    table = run_study(dgp, RunConfig(), reps=200, master_seed=21, n=2000)
    s = table.summary
    assert s.failures == 0
    assert abs(s.bias) <= 2 * s.sd_theta / np.sqrt(200)


def test_dynamic_alpha_factorizes():
    dgp = DynamicDgp(q1=0.0, q2=0.0, qd=0.0)
    train = dgp.generate(3000, 6)
    nuis = MomentSpec("dynamic", (1, 1)).train(train, RunConfig())
    test = dgp.generate(500, 7)
    sel = (test.col("d1") == 1) & (test.col("d2") == 1)
    p2 = train.col("d2")[train.col("d1") == 1].mean()
    alpha = nuis.alpha(test)
    assert np.all(alpha[~sel] == 0)
    assert np.allclose(alpha[sel], nuis.eta(test)[sel] / p2, rtol=0.1)


def test_dynamic_empty_stratum():
    dgp = DynamicDgp()
    data = dgp.generate(200, 8)
    bad = data.replace(d2=np.zeros(200))
    with pytest.raises(DegenerateStratumError):
        MomentSpec("dynamic", (1, 1)).train(bad, RunConfig())


# proximal ------------------------------------------------------------------------------

def test_proximal_without_confounding_matches_mediation():
    dgp = ProximalDgp(confounding=False, load=0.0)
    data = dgp.generate(2000, 9)
    cfg = RunConfig(seed=1)
    prox = estimate(data, MomentSpec("proximal_mediation"), cfg)
    med = estimate(data, MomentSpec(MEDIATION), cfg)
    assert abs(prox.theta_hat - med.theta_hat) <= 2 * med.se


def test_proximal_beta0_recovery():
    dgp = ProximalDgp()
    bridges = fit_proximal_bridges(dgp.generate(4000, 10), RunConfig())
    ev, _ = dgp.draw(5000, stream(10, "bridge-eval"))
    rows = ev.subset(np.flatnonzero(ev.col("d") == 0))
    xz = rows.stack("x", "z")
    # beta0(x, z) = 1 + exp(a + bx x + bz z): read the coefficients off log(beta0 - 1)
    fit = bridges["beta0"](xz)
    keep = fit > 1
    assert keep.mean() >= 0.95
    design = np.column_stack([np.ones(keep.sum()), xz[keep]])
    coef = np.linalg.lstsq(design, np.log(fit[keep] - 1), rcond=None)[0]
    assert np.max(np.abs(coef - np.array(dgp.beta0_coef()))) <= 0.1


def test_proximal_constant_treatment_in_fold():
    dgp = ProximalDgp()
    data = dgp.generate(100, 11).replace(d=np.ones(100))
    with pytest.raises(DegenerateStratumError):
        MomentSpec("proximal_mediation").train(data, RunConfig())
    with pytest.raises(FoldTrainingError) as err:
        estimate(data, MomentSpec("proximal_mediation"), RunConfig())
    assert err.value.fold == 0


def test_proximal_bridges_attached():
    dgp = ProximalDgp()
    nuis = MomentSpec("proximal_mediation").train(dgp.generate(300, 12), RunConfig())
    assert set(nuis.bridges) == {"gamma1", "gamma0", "beta0", "beta1"}
    assert all(v <= 1e-6 for k, v in nuis.diagnostics.items() if k.startswith("stationarity"))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longdml.core import NpivConfig, stream
from longdml.errors import ConfigurationError, DegenerateStratumError
from longdml.npiv import NpivProblem, projected_mse, saddle_objective, solve_nested_npiv, solve_npiv
from longdml.nuisance import krr_fit, median_lengthscale
from longdml.sim.dgp import LinearIVDgp


def _iv(n, seed):
    dgp = LinearIVDgp()
    data = dgp.generate(n, seed)
    return dgp, data.values["x"], data.values["z"], data.col("y")


def test_reduces_to_krr_when_instruments_equal_regressors():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((200, 1))
    g = 0.5 + 1.5 * x[:, 0]
    ls = median_lengthscale(x)
    ridge = 1e-3
    delta = 1e-6
    prob = NpivProblem(x, x, g, lam=delta ** 2, mu=ridge / 4, U=1.0, delta=delta,
                       h_lengthscale=ls, f_lengthscale=ls)
    q = np.linspace(-2, 2, 50)[:, None]
    h = solve_npiv(prob)(q)
    k = krr_fit(x, g, ridge=ridge, lengthscale=ls)(q)
    assert np.max(np.abs(h - k)) <= 1e-6


def test_zero_outcome_gives_zero_function():
    rng = np.random.default_rng(1)
    x, z = rng.standard_normal((30, 2)), rng.standard_normal((30, 1))
    fit = solve_npiv(NpivProblem(x, z, np.zeros(30), lam=0.1, mu=0.1, delta=0.1))
    assert np.max(np.abs(fit(rng.standard_normal((20, 2))))) <= 1e-8


def test_projected_error_shrinks_with_n():
    # the n=500 sample is the prefix of the n=2000 sample for the same seed
    dgp = LinearIVDgp()
    wins = 0
    for seed in range(20):
        big = dgp.generate(2000, seed)
        errs = []
        for n in (500, 2000):
            data = big.subset(np.arange(n))
            x, z, y = data.values["x"], data.values["z"], data.col("y")
            fit = solve_npiv(NpivProblem.from_config(x, z, y, NpivConfig()))
            zq = stream(seed, "iv-eval").standard_normal(2000)
            err = dgp.project(lambda t: fit(t[:, None]) - dgp.h0(t), zq)
            errs.append(np.sqrt(np.mean(err ** 2)))
        wins += errs[1] < errs[0]
    assert wins >= 18


def test_nested_with_true_preliminary_equals_plain():
    dgp, x, z, y = _iv(300, 2)
    plain = solve_npiv(NpivProblem.from_config(x, z, y, NpivConfig()))
    nested = solve_nested_npiv(lambda q: q, y, x, z, NpivConfig())
    assert np.array_equal(plain.a, nested.a)
    assert plain.h_hat.offset == nested.h_hat.offset


def test_constant_shift_of_preliminary():
    dgp, x, z, y = _iv(400, 3)
    q = np.linspace(-2, 2, 40)[:, None]
    base = solve_nested_npiv(y, None, x, z, NpivConfig())(q)
    eps = 0.25
    shifted = solve_nested_npiv(y + eps, None, x, z, NpivConfig())(q)
    C = np.max(np.abs(shifted - base)) / eps
    assert C <= 2.0


def test_empty_stage_two():
    with pytest.raises(DegenerateStratumError):
        solve_nested_npiv(np.zeros(0), None, np.zeros((0, 1)), np.zeros((0, 1)), NpivConfig())


def test_lambda_below_bound_rejected():
    x = np.zeros((5, 1)) + np.arange(5)[:, None]
    with pytest.raises(ConfigurationError):
        NpivProblem(x, x, np.arange(5.0), lam=0.01, mu=1.0, U=1.0, delta=0.5)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(5, 60))
def test_saddle_certificate_and_stationarity(seed, n):
    rng = np.random.default_rng(seed)
    x, z = rng.standard_normal((n, 2)), rng.standard_normal((n, 2))
    g = x[:, 0] + z[:, 1] + rng.standard_normal(n)
    fit = solve_npiv(NpivProblem.from_config(x, z, g, NpivConfig()))
    assert max(fit.stationarity()) <= 1e-6
    J = fit.objective
    for i in range(n):
        for s in (1e-3, -1e-3):
            a = fit.a.copy()
            a[i] += s
            assert fit.objective_at(a, fit.b) >= J - 1e-8
            b = fit.b.copy()
            b[i] += s
            assert fit.objective_at(fit.a, b) <= J + 1e-8


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_negating_outcome_negates_fit(seed):
    rng = np.random.default_rng(seed)
    x, z = rng.standard_normal((40, 1)), rng.standard_normal((40, 1))
    g = np.sin(x[:, 0]) + rng.standard_normal(40)
    q = rng.standard_normal((10, 1))
    pos = solve_npiv(NpivProblem.from_config(x, z, g, NpivConfig()))(q)
    neg = solve_npiv(NpivProblem.from_config(x, z, -g, NpivConfig()))(q)
    assert np.max(np.abs(pos + neg)) <= 1e-8


def test_objective_matches_definition():
    rng = np.random.default_rng(5)
    x, z = rng.standard_normal((20, 1)), rng.standard_normal((20, 1))
    g = rng.standard_normal(20)
    fit = solve_npiv(NpivProblem.from_config(x, z, g, NpivConfig()))
    p = fit.problem
    gc = g - g.mean()
    f = fit.K_F @ fit.b
    h = fit.K_H @ fit.a
    direct = (np.mean((gc - h) * f) - p.lam * (fit.b @ f + p.U / p.delta ** 2 * np.mean(f * f))
              + p.mu * fit.a @ h)
    assert saddle_objective(p, fit.K_H, fit.K_F, fit.a, fit.b) == pytest.approx(direct, rel=1e-12, abs=1e-14)


# projected mean-square error ------------------------------------------------------

def _iv_draws(k, seed, dgp):
    data = dgp.generate(k, seed)
    return np.column_stack([data.values["x"][:, 0], data.values["z"][:, 0]])


def _cond(dgp):
    def cond(fn, draws):
        z = draws[:, 1]
        return dgp.project(lambda t: fn(np.column_stack([t, z])), z)
    return cond


def _h0(dgp):
    return lambda d: dgp.h0(d[:, 0])


def test_projected_mse_zero_at_truth():
    dgp = LinearIVDgp()
    out = projected_mse(_h0(dgp), _h0(dgp), _cond(dgp), _iv_draws(5000, 6, dgp))
    assert out.P == 0.0 and out.R == 0.0


def test_projected_mse_orthogonal_error():
    # E[cos(w X) | Z] = cos(w pi Z) exp(-w^2 sx^2 / 2): negligible for large w,
    # while the plain error stays of order one
    dgp = LinearIVDgp()
    w = 6.0
    out = projected_mse(lambda d: dgp.h0(d[:, 0]) + np.cos(w * d[:, 0]), _h0(dgp), _cond(dgp),
                        _iv_draws(20000, 7, dgp))
    assert out.R > 0.1
    assert out.P <= 0.01 * out.R
    assert out.ill_posedness > 10


@settings(max_examples=15, deadline=None)
@given(c=st.floats(-2, 2), s=st.floats(-2, 2), w=st.floats(0.1, 4))
def test_projected_mse_jensen(c, s, w):
    dgp = LinearIVDgp()
    out = projected_mse(lambda d: dgp.h0(d[:, 0]) + c + s * np.sin(w * d[:, 0]), _h0(dgp), _cond(dgp),
                        _iv_draws(3000, 8, dgp))
    assert out.P <= out.R + 4 * out.R_se + 1e-12

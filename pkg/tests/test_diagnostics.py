import numpy as np
import pytest

from longdml.core import RunConfig, stream
from longdml.diagnostics import (NAMES, RandomRkhsFunction, bridge_rates, check_orthogonality,
                                 draw_directions, first_order_moments, measure_rates, perturbed,
                                 rows_to_csv)
from longdml.moments import MomentSpec, brackets, fit_proximal_bridges
from longdml.sim.dgp import DynamicDgp, LongTermDgp, ProximalDgp


def _rates(rows):
    return {r.name: r for r in rows}


def test_oracle_nuisances_have_zero_rates():
    dgp = LongTermDgp()
    rows = _rates(measure_rates(dgp.oracle().nuisances, dgp, draws=100_000, seed=0))
    for name in NAMES:
        assert rows[f"R({name})"].value <= 1e-6
        assert rows[f"P({name})"].value <= 1e-6


def test_constant_shift_of_nu():
    dgp = LongTermDgp()
    o = dgp.oracle().nuisances
    shifted = o.replace(nu=lambda d: o.nu(d) + 0.1)
    rows = _rates(measure_rates(shifted, dgp, draws=100_000, seed=1))
    r = rows["R(nu)"]
    assert abs(r.value - 0.01) <= max(r.se, 1e-12)
    assert rows["P(nu)"].value == pytest.approx(0.01, abs=1e-12)
    assert rows["R(eta)"].value == 0.0


def test_rows_to_csv_header_and_unavailable():
    dgp = DynamicDgp()
    rows = measure_rates(dgp.oracle().nuisances, dgp, draws=2000, seed=2)
    text = rows_to_csv(rows)
    assert text.splitlines()[0] == "rate,n,value,se"
    assert len(text.splitlines()) == len(rows) + 1


def test_trained_long_term_rates_shrink_with_n():
    dgp = LongTermDgp()
    spec = MomentSpec("long_term")
    ev, _ = dgp.draw(20_000, stream(0, "rate-eval"))
    wins = {name: 0 for name in NAMES}
    for seed in range(20):
        # the n=500 sample is the prefix of the n=2000 sample
        big = dgp.generate(2000, seed)
        R = []
        for n in (500, 2000):
            nuis = spec.train(big.subset(np.arange(n)), RunConfig())
            R.append(_rates(measure_rates(nuis, dgp, data=ev)))
        for name in NAMES:
            wins[name] += R[1][f"R({name})"].value < R[0][f"R({name})"].value
    assert all(w >= 16 for w in wins.values()), wins


@pytest.mark.parametrize("dgp", [LongTermDgp(), ProximalDgp()])
def test_projected_error_below_plain_error(dgp):
    spec = MomentSpec(dgp.problem)
    nuis = spec.train(dgp.generate(800, 3), RunConfig())
    rows = _rates(measure_rates(nuis, dgp, draws=20_000, seed=3))
    for name in NAMES:
        R, P = rows[f"R({name})"], rows[f"P({name})"]
        assert P.value <= R.value + 4 * R.se + 1e-12
        if dgp.problem == "proximal_mediation" and P.value > 0:
            assert rows[f"ill-posedness({name})"].value >= 1 - 1e-6


def test_bridge_rates_projected_below_plain():
    dgp = ProximalDgp()
    bridges = fit_proximal_bridges(dgp.generate(1000, 4), RunConfig())
    ev, _ = dgp.draw(20_000, stream(4, "bridge-eval"))
    out = bridge_rates(bridges, dgp, ev)
    assert set(out) == {"gamma1", "gamma0", "beta0", "beta1"}
    for e in out.values():
        assert 0 <= e.P <= e.R + 4 * e.R_se


def test_nu_direction_vanishes_when_eta_is_one():
    dgp = LongTermDgp()
    data, _ = dgp.draw(100_000, stream(5, "eta-one"))
    o = dgp.oracle().nuisances.replace(eta=lambda d: np.ones(d.n))
    rng = stream(5, "direction")
    f = RandomRkhsFunction.draw(("x",), data, rng)
    zero = lambda d: np.zeros(d.n)  # noqa: E731
    dirs = {"s": f, "t": zero, "u": zero, "v": zero}
    tau = 1e-3
    diff = (brackets(data, perturbed(o, dirs, tau)) - brackets(data, perturbed(o, dirs, -tau))) / (2 * tau)
    se = diff.std(ddof=1) / np.sqrt(data.n)
    assert abs(diff.mean()) <= 4 * se + 1e-9


def test_random_direction_unit_norm():
    dgp = DynamicDgp()
    data = dgp.generate(3000, 6)
    f = RandomRkhsFunction.draw(("x", "m"), data, stream(6, "dir"))
    assert np.sqrt(np.mean(f(data) ** 2)) == pytest.approx(1.0, rel=1e-10)
    dirs = draw_directions("dynamic", data, stream(6, "dirs"))
    assert set(dirs) == {"s", "t", "u", "v"}


def test_half_step_agrees():
    rep = check_orthogonality("dynamic", DynamicDgp(), directions=5, draws=20_000, seed=7)
    for r in rep.results:
        assert abs(r.derivative - r.derivative_half) <= 4 * np.sqrt(2) * r.se_mc + 1e-9
    lines = rep.to_csv().splitlines()
    assert lines[0].startswith("direction,derivative,se") and len(lines) == 6


def test_first_order_moments_small():
    checks = first_order_moments("long_term", LongTermDgp(), draws=20_000, seed=8, directions=2)
    assert len(checks) == 8
    assert sum(not c.ok for c in checks) <= 1

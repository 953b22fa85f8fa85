import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from longdml.core import Dataset, LocalConfig
from longdml.errors import EmptyWindowError, SchemaError
from longdml.localize import Localizer, indicator_weights, kernel_values, localizer_weights


def _data(v):
    v = np.asarray(v, float)
    return Dataset.from_arrays(y=np.zeros(v.size), d=np.zeros(v.size), x=np.zeros(v.size), v=v)


def test_huge_bandwidth_flattens():
    v = np.random.default_rng(0).standard_normal(200)
    w = localizer_weights(_data(v), LocalConfig(h=1e8, v=0.3))
    assert np.max(np.abs(w - 1.0)) <= 1e-12


def test_epanechnikov_compact_support():
    v = np.array([0.0, 0.1, 0.5, 2.0])
    w = localizer_weights(_data(v), LocalConfig(kernel="epanechnikov", h=0.4, v=0.0))
    assert w[2] == 0.0 and w[3] == 0.0 and w[0] > w[1] > 0


@settings(max_examples=60, deadline=None)
@given(v=arrays(float, st.integers(1, 50), elements=st.floats(-5, 5)),
       h=st.floats(0.05, 50), at=st.floats(-2, 2))
def test_weights_average_one(v, h, at):
    w = Localizer.fit(v, "gaussian", h, at).weights(v)
    assert abs(w.mean() - 1.0) <= 1e-10


def test_empty_window():
    with pytest.raises(EmptyWindowError):
        localizer_weights(_data([0.0, 0.1]), LocalConfig(kernel="epanechnikov", h=0.5, v=10.0))


def test_requires_v_column():
    data = Dataset.from_arrays(y=[0.0, 1.0], d=[0.0, 1.0], x=[0.0, 1.0])
    with pytest.raises(SchemaError):
        localizer_weights(data, LocalConfig(h=1.0, v=0.0))


def test_kernel_shapes():
    assert kernel_values(np.array([0.0]), "gaussian")[0] == 1.0
    assert kernel_values(np.array([0.0]), "epanechnikov")[0] == 0.75
    assert kernel_values(np.array([1.0, -1.5]), "epanechnikov").tolist() == [0.0, 0.0]


def test_indicator_weights_reproduce_stratum_mean():
    rng = np.random.default_rng(1)
    g = rng.random(300) < 0.3
    psi = rng.standard_normal(300)
    w = indicator_weights(g)
    assert abs(np.mean(w * psi) - psi[g].mean()) <= 1e-10
    with pytest.raises(EmptyWindowError):
        indicator_weights(np.zeros(5, bool))

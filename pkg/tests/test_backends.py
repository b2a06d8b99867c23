import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_input, random_network
from ttfsnet import backend
from ttfsnet.linear import run_backward, run_forward

BACKENDS = backend.available_backends()


def test_fallback_always_available():
    assert "python" in BACKENDS
    assert backend.NAME in BACKENDS


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")
@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), model=st.sampled_from(["linear", "circuit"]),
       delays=st.sampled_from([0.0, 1.0]))
def test_compiled_matches_fallback(seed, model, delays):
    rng = np.random.default_rng(seed)
    net = random_network(rng, (6, 7, 3), model=model, delays_std=delays)
    x = random_input(rng, 6)
    delta = rng.normal(size=3)
    py, cy = BACKENDS["python"], BACKENDS["cython"]
    a = run_forward(net, x, kernels=py)
    b = run_forward(net, x, kernels=cy)
    for l in (1, 2):
        np.testing.assert_allclose(a.times(l), b.times(l), rtol=1e-13, atol=1e-13)
        np.testing.assert_array_equal(a.layers[l - 1].counts, b.layers[l - 1].counts)
    ga = run_backward(a, net, delta, 0.5, kernels=py)
    gb = run_backward(b, net, delta, 0.5, kernels=cy)
    for x1, x2 in zip(ga, gb):
        np.testing.assert_allclose(x1, x2, rtol=1e-11, atol=1e-13)

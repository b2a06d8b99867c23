import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_input, random_network
from ttfsnet.circuit import (
    backprop_circuit,
    export_conductances,
    forward_circuit,
    neuron_cumulants,
    read_conductances,
    write_conductances,
)
from ttfsnet.linear import forward_linear, run_backward, run_forward
from ttfsnet.loss import output_error
from ttfsnet.network import Hyperparameters, Network, NeuronModel
from ttfsnet.neuron import circuit_membrane, fire_time_circuit, fire_time_linear, make_events, segment_terminal
from ttfsnet.oracle import integrate_membrane, weight_fd

seeds = st.integers(0, 2**31 - 1)


def circuit_net(w, v_pulse=2.0, vth=1.0):
    w = np.atleast_2d(np.asarray(w, dtype=float))
    return Network((w.shape[1], w.shape[0]), (w,), (np.full(w.shape[0], vth),), (np.zeros_like(w),),
                   NeuronModel.CIRCUIT, v_pulse, -v_pulse)


class TestSegmentTerminal:
    def test_zero_width(self):
        assert segment_terminal(0.3, 1.0, 0.5, 0.0) == 0.3

    def test_linear_limit(self):
        assert segment_terminal(0.0, 1.0, 0.0, 1.0) == 1.0

    def test_closed_form(self):
        # 2 (1 - e^-1) = 1.2642411176571153
        assert segment_terminal(0.0, 1.0, 0.5, 2.0) == pytest.approx(1.2642411176571153, abs=1e-14)
        t, _ = integrate_membrane("circuit", [(0.0, 1.0)], 10.0, v_pos=2.0, v_neg=-2.0, dt=1e-3, t_end=2.0)
        assert t is None

    @settings(max_examples=200, deadline=None)
    @given(v=st.floats(-1, 1), A=st.floats(-2, 2), B=st.floats(1e-16, 2), dt=st.floats(0, 5))
    def test_matches_exponential_form(self, v, A, B, dt):
        expected = v + (A - B * v) * -math.expm1(-B * dt) / B
        assert segment_terminal(v, A, B, dt) == pytest.approx(expected, abs=1e-9)


class TestFireTimeCircuit:
    def test_single_event_two_ln_two(self):
        t, G, cum = fire_time_circuit(make_events([0.0], [1.0]), 1.0, 2.0, -2.0)
        assert t == pytest.approx(2 * math.log(2), abs=1e-14)
        assert G == 1 and cum.terminal[-1] == 1.0

    def test_oracle_agrees_with_two_ln_two(self):
        t, _ = integrate_membrane("circuit", [(0.0, 1.0)], 1.0, v_pos=2.0, v_neg=-2.0, dt=1e-4)
        assert t == pytest.approx(2 * math.log(2), abs=1e-7)

    def test_large_pulse_converges_to_linear(self):
        t, _, _ = fire_time_circuit(make_events([0.0], [1.0]), 1.0, 1e6, -1e6)
        # -V ln(1 - 1/V) at V = 1e6
        assert t == pytest.approx(1.0000005000003334, abs=1e-12)
        assert abs(t - 1.0) < 1e-5

    def test_equilibrium_no_spike(self):
        events = make_events([0.0, 0.0], [1.0, -0.6])
        assert fire_time_circuit(events, 1.0, 2.0, -2.0) is None
        assert circuit_membrane(events, 200.0, 2.0, -2.0) == pytest.approx(0.5, abs=1e-12)

    def test_cumulant_invariants(self):
        events = make_events([0.0, 0.3, 0.5, 0.9], [0.4, -0.2, 0.7, 0.5])
        t, G, cum = fire_time_circuit(events, 1.0, 3.0, -3.0)
        assert all(b >= 0 for b in cum.B)
        assert all(0 <= v < 1.0 for v in cum.terminal[:-1])
        assert cum.terminal[-1] == 1.0
        for k in range(G - 1):
            v = segment_terminal(cum.terminal[k - 1] if k else 0.0, cum.A[k], cum.B[k], cum.widths[k])
            assert v == pytest.approx(cum.terminal[k], abs=1e-15)
        assert circuit_membrane(events, t, 3.0, -3.0) == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(seed=seeds)
    def test_approaches_linear_monotonically(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 6))
        events = make_events(rng.uniform(0, 3, n), rng.uniform(0.05, 1.0, n))
        t_lin, _ = fire_time_linear(events, 1.0)
        prev = math.inf
        for v in (2.0, 4.0, 16.0, 128.0, 1e4):
            res = fire_time_circuit(events, 1.0, v, -v)
            if res is None:
                continue
            gap = res[0] - t_lin
            assert gap >= -1e-12
            assert gap <= prev + 1e-12
            prev = gap
        assert prev < 1e-3

    @settings(max_examples=60, deadline=None)
    @given(seed=seeds)
    def test_membrane_stays_between_pulse_rails(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 6))
        events = make_events(rng.uniform(0, 3, n), rng.normal(0, 3, n))
        for t in np.linspace(0, 20, 40):
            v = circuit_membrane(events, t, 2.0, -2.0)
            assert -2.0 - 1e-12 < v < 2.0 + 1e-12


class TestForwardCircuit:
    def test_no_input(self):
        net = random_network(np.random.default_rng(0), (4, 3, 2), model="circuit")
        assert not np.isfinite(forward_circuit(net, np.full(4, np.inf)).output_times).any()

    def test_rejects_linear(self):
        net = random_network(np.random.default_rng(0), (4, 2))
        with pytest.raises(ValueError):
            forward_circuit(net, np.zeros(4))

    @settings(max_examples=30, deadline=None)
    @given(seed=seeds)
    def test_large_pulse_matches_linear_network(self, seed):
        rng = np.random.default_rng(seed)
        lin = random_network(rng, (5, 6, 3), mean=0.5, std=0.3)
        circ = Network(lin.layer_sizes, lin.weights, lin.thresholds, lin.delays, NeuronModel.CIRCUIT, 1e6, -1e6)
        x = random_input(rng, 5)
        a, b = forward_linear(lin, x), forward_circuit(circ, x)
        for l in (1, 2):
            ta, tb = a.times(l), b.times(l)
            both = np.isfinite(ta) & np.isfinite(tb)
            np.testing.assert_allclose(tb[both], ta[both], rtol=1e-5, atol=1e-4)

    def test_neuron_cumulants_reconstruct(self):
        net = circuit_net([[0.7, 0.6]])
        trace = forward_circuit(net, np.array([0.0, 0.5]))
        cum = neuron_cumulants(trace, net, 1, 0)
        assert cum.G == trace.layers[0].counts[0]
        assert cum.arrival_times[0] + sum(cum.widths) == pytest.approx(trace.output_times[0], abs=1e-14)


class TestBackpropCircuit:
    def test_single_event_finite_difference(self):
        hyper = Hyperparameters(gamma=0.0)
        net = circuit_net([[1.0], [0.5]])
        x = np.array([0.0])
        trace = run_forward(net, x)
        grads = backprop_circuit(trace, net, np.array([1.0, 0.0]))
        h = 1e-6
        up = forward_circuit(net.with_weights([np.array([[1.0 + h], [0.5]])]), x).output_times[0]
        dn = forward_circuit(net.with_weights([np.array([[1.0 - h], [0.5]])]), x).output_times[0]
        assert grads[0][0, 0] == pytest.approx((up - dn) / (2 * h), rel=1e-5)
        del hyper

    def test_weights_after_G_get_zero(self):
        net = circuit_net([[3.0, 1.0, 1.0]])
        trace = forward_circuit(net, np.array([0.0, 2.0, 3.0]))
        assert trace.layers[0].counts[0] == 1
        g = backprop_circuit(trace, net, np.array([1.0]))[0]
        assert g[0, 0] != 0.0 and g[0, 1] == 0.0 and g[0, 2] == 0.0

    def test_zero_delta_zero_grads(self):
        rng = np.random.default_rng(1)
        net = random_network(rng, (4, 5, 2), model="circuit")
        trace = forward_circuit(net, random_input(rng, 4))
        assert all(np.all(g == 0) for g in backprop_circuit(trace, net, np.zeros(2)))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        hyper = Hyperparameters(gamma=0.5, t_ref=8.0)
        checked = 0
        for _ in range(8):
            net = random_network(rng, (5, 6, 3), model="circuit", v_pulse=float(rng.uniform(1.5, 4)),
                                 delays_std=0.5)
            x = random_input(rng, 5)
            trace = run_forward(net, x)
            grads = run_backward(trace, net, output_error(trace.output_times, 2, hyper), 0.0)
            for l, rec in enumerate(trace.layers):
                for i in np.flatnonzero(rec.counts):
                    for j in rec.causal_set(i):
                        fd, stable = weight_fd(net, x, 2, hyper, l, int(i), int(j))
                        if stable:
                            assert grads[l][i, j] == pytest.approx(fd, rel=1e-4, abs=1e-7)
                            checked += 1
        assert checked > 20

    def test_epsilon_damps_gradient(self):
        net = circuit_net([[1.0, 0.5]])
        trace = forward_circuit(net, np.array([0.0, 0.2]))
        g0 = np.abs(backprop_circuit(trace, net, np.array([1.0]), 0.0)[0])
        g1 = np.abs(backprop_circuit(trace, net, np.array([1.0]), 5.0)[0])
        assert np.all(g1 < g0)


class TestConductances:
    def test_examples(self):
        net = circuit_net([[0.0, 1.0, -1.0]])
        (sp, sm), = export_conductances(net, 2.0, -4.0)
        np.testing.assert_array_equal(sp, [[0.0, 0.5, 0.0]])
        np.testing.assert_array_equal(sm, [[0.0, 0.0, 0.25]])

    @settings(max_examples=50, deadline=None)
    @given(seed=seeds, vp=st.floats(0.1, 1e4), vn=st.floats(-1e4, -0.1))
    def test_reconstruction_and_sign_split(self, seed, vp, vn):
        rng = np.random.default_rng(seed)
        net = random_network(rng, (4, 3, 2))
        for w, (sp, sm) in zip(net.weights, export_conductances(net, vp, vn)):
            assert np.all(sp >= 0) and np.all(sm >= 0)
            assert not np.any((sp > 0) & (sm > 0))
            np.testing.assert_allclose(sp * vp + sm * vn, w, rtol=1e-15, atol=0)

    def test_rejects_bad_pulses(self):
        with pytest.raises(ValueError):
            export_conductances(circuit_net([[1.0]]), 1.0, 1.0)

    def test_file_round_trip(self, tmp_path):
        net = random_network(np.random.default_rng(4), (3, 2, 2), model="circuit", v_pulse=128.0)
        write_conductances(tmp_path / "g.tsv", net)
        vp, vn, rows = read_conductances(tmp_path / "g.tsv")
        assert (vp, vn) == (128.0, -128.0)
        assert len(rows) == 3 * 2 + 2 * 2
        for l, i, j, sp, sm in rows:
            assert sp * vp + sm * vn == pytest.approx(net.weights[l - 1][i, j], rel=1e-15)

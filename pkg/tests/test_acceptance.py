"""Acceptance criteria. Each test records one PASS/FAIL line shown in the terminal summary.

Criteria 5 and 7 need MNIST (TTFSNET_DATA_DIR or ./data/mnist). Criterion 6 trains the
full 784-800-10 network for hours and runs only with TTFSNET_NIGHTLY=1.
"""
import math
import os
import time

import numpy as np
import pytest

import conftest
from conftest import mnist_dir, random_input, random_network
from ttfsnet.dataset import encode, shrink_13
from ttfsnet.linear import run_backward, run_forward
from ttfsnet.loss import cost, output_error
from ttfsnet.network import Hyperparameters, Network, NeuronModel
from ttfsnet.oracle import gradcheck, oracle_forward
from ttfsnet.training import PRESETS, RunConfig, evaluate, load_data, train
from ttfsnet.variation import VariationRealization, VariationSpec

pytestmark = pytest.mark.acceptance


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def random_case(rng, model):
    depth = int(rng.integers(2, 4))
    sizes = [int(rng.integers(2, 9)) for _ in range(depth + 1)]
    net = random_network(rng, sizes, model=model, mean=float(rng.uniform(0.1, 0.6)), std=0.5,
                         v_pulse=float(rng.uniform(1.5, 8.0)), delays_std=float(rng.choice([0.0, 1.0])),
                         vth_std=0.2)
    return net, random_input(rng, sizes[0])


# ---------------------------------------------------------------- 1

def test_c1_oracle_spike_times():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = {"linear": 0.0, "circuit": 0.0}
    flag_mismatch = 0
    for model in worst:
        for _ in range(200):
            net, x = random_case(rng, model)
            trace = run_forward(net, x)
            ref = oracle_forward(net, x)
            for l in range(1, net.n_layers + 1):
                a, b = trace.times(l), ref[l]
                if not np.array_equal(np.isfinite(a), np.isfinite(b)):
                    flag_mismatch += 1
                    continue
                both = np.isfinite(a)
                if both.any():
                    worst[model] = max(worst[model], float(np.max(np.abs(a[both] - b[both]))))
    elapsed = time.perf_counter() - t0
    ok = worst["linear"] < 1e-6 and worst["circuit"] < 1e-5 and flag_mismatch == 0 and elapsed < 60
    report(1, ok, f"max |dt| linear {worst['linear']:.2e} (<1e-6), circuit {worst['circuit']:.2e} (<1e-5), "
                  f"firing mismatches {flag_mismatch}, 400 nets in {elapsed:.1f}s (<60s)")
    assert ok


# ---------------------------------------------------------------- 2

def test_c2_gradients_vs_finite_differences():
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    summary = []
    ok = True
    for model in ("linear", "circuit"):
        stable = failed = 0
        worst = 0.0
        while stable < 120:
            net, x = random_case(rng, model)
            hyper = Hyperparameters(gamma=float(rng.uniform(0, 1)), t_ref=float(rng.uniform(3, 12)),
                                    penalty_exponent=float(rng.choice([2.0, 1.5])))
            label = int(rng.integers(net.layer_sizes[-1]))
            for r in gradcheck(net, x, label, hyper, 10, rng):
                if r.stable:
                    stable += 1
                    failed += not r.passes()
                    worst = max(worst, r.rel_err if abs(r.fd) >= 1e-3 else 0.0)
        summary.append(f"{model} {stable} probes, {failed} failed, max rel {worst:.1e}")
        ok &= failed == 0
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 120
    report(2, ok, "; ".join(summary) + f" in {elapsed:.1f}s (<120s)")
    assert ok


# ---------------------------------------------------------------- 3

def test_c3_invariances():
    rng = np.random.default_rng(303)
    loss_err = delay_err = shift_err = 0.0
    for _ in range(300):
        t = rng.uniform(0, 30, int(rng.integers(2, 11)))
        label = int(rng.integers(t.size))
        a = float(rng.uniform(-50, 50))
        hyper = Hyperparameters(gamma=1.0)
        loss_err = max(loss_err, abs(cost(t + a, label, hyper).loss - cost(t, label, hyper).loss))
    checked = 0
    while checked < 150:
        net = random_network(rng, (5, 6, 3), mean=0.6, std=0.3)
        x = random_input(rng, 5, p_silent=0.0)
        base = tuple(0.8 * rng.standard_normal(w.shape) for w in net.weights)
        alpha = rng.uniform(-3, 3, net.n_layers)
        ta = run_forward(net, x, VariationRealization(net.thresholds, base)).output_times
        tb = run_forward(net, x, VariationRealization(net.thresholds, tuple(d + s for d, s in zip(base, alpha)))
                         ).output_times
        if not np.isfinite(ta).all():
            continue
        label = int(rng.integers(3))
        ca = cost(ta, label, Hyperparameters(gamma=0.7, t_ref=10.0)).cost
        cb = cost(tb, label, Hyperparameters(gamma=0.7, t_ref=10.0 + float(alpha.sum()))).cost
        delay_err = max(delay_err, abs(ca - cb))
        checked += 1
    for _ in range(150):
        net = random_network(rng, (5, 6, 3), delays_std=1.0)
        x = random_input(rng, 5)
        s = float(rng.uniform(-20, 50))
        a, b = run_forward(net, x), run_forward(net, x + s)
        for l in (1, 2):
            fa, fb = np.isfinite(a.times(l)), np.isfinite(b.times(l))
            if not np.array_equal(fa, fb):
                shift_err = math.inf
            elif fa.any():
                shift_err = max(shift_err, float(np.max(np.abs(b.times(l)[fb] - a.times(l)[fa] - s))))
    ok = loss_err <= 1e-12 and delay_err <= 1e-9 and shift_err <= 1e-9
    report(3, ok, f"loss shift {loss_err:.1e} (<=1e-12), delay offset {delay_err:.1e} (<=1e-9), "
                  f"forward time shift {shift_err:.1e} (<=1e-9)")
    assert ok


# ---------------------------------------------------------------- 4

PULSES = (2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 1e4)


def test_c4_circuit_converges_to_linear():
    rng = np.random.default_rng(404)
    nets = [random_network(rng, (8, 8, 4), mean=0.4, std=0.2) for _ in range(10)]
    inputs = [random_input(rng, 8, p_silent=0.1) for _ in nets]
    gaps = []
    for v in PULSES:
        gap = 0.0
        for lin, x in zip(nets, inputs):
            circ = Network(lin.layer_sizes, lin.weights, lin.thresholds, lin.delays, NeuronModel.CIRCUIT, v, -v)
            a, b = run_forward(lin, x), run_forward(circ, x)
            for l in (1, 2):
                ta, tb = a.times(l), b.times(l)
                if not np.array_equal(np.isfinite(ta), np.isfinite(tb)):
                    gap = math.inf
                    continue
                f = np.isfinite(ta)
                if f.any():
                    gap = max(gap, float(np.max(np.abs(ta[f] - tb[f]))))
        gaps.append(gap)
    decreasing = all(b < a for a, b in zip(gaps, gaps[1:]) if math.isfinite(b))
    ok = decreasing and gaps[-1] < 1e-3
    report(4, ok, "max |t_circuit - t_linear| along V_pulse: "
           + ", ".join(f"{v:g}:{g:.1e}" for v, g in zip(PULSES, gaps)) + " (decreasing, <1e-3 at 1e4)")
    assert ok


# ---------------------------------------------------------------- 5 and 7 (MNIST)

DESK = dict(architecture="169-300-10", neuron_model="linear", shrink=True, gamma=8.0, epsilon=10.0,
            t_ref=21.0, penalty_exponent=1.5, eta=3e-4, batch_size=10, init_scale=1.0, epochs=20,
            train_subset=5000, patience=20, repetitions=10)
SIGMA = 0.15
C7_ETA = 1e-4


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    path = mnist_dir()
    if path is None:
        pytest.skip("MNIST not found (set TTFSNET_DATA_DIR)")
    root = tmp_path_factory.mktemp("desk")
    cfg = RunConfig(data_dir=str(path), output_dir=str(root / "base"), **DESK)
    data = load_data(cfg)
    return cfg, data, root


@pytest.fixture(scope="module")
def baseline(desk):
    cfg, data, _ = desk
    t0 = time.perf_counter()
    result = train(cfg, data=data)
    return result, time.perf_counter() - t0


@pytest.mark.slow
def test_c5_desk_scale_learning(baseline):
    result, elapsed = baseline
    ok = result.best_accuracy >= 0.90 and elapsed <= 15 * 60
    report(5, ok, f"169-300-10 linear, 5000 training samples: best test accuracy {result.best_accuracy:.4f} "
                  f"in {result.epochs_run} epochs (>=0.90), {elapsed:.0f}s (<=900s)")
    assert ok


@pytest.mark.slow
def test_c7_variation_robustness(desk):
    # All arms share one learning rate; at the criterion 5 rate the known-realization arm silences its outputs.
    cfg, data, root = desk
    cfg = cfg.replace(eta=C7_ETA, output_dir=str(root / "c7-base"))
    base_net = train(cfg, data=data).best_network
    test_spec = VariationSpec(SIGMA, 0.0, "sampled", rng_seed=77)
    naive = evaluate(base_net, data[1], test_spec, 10)
    robust_run = train(cfg.replace(output_dir=str(root / "robust"), train_sigma_vth=SIGMA,
                                   train_variation="sampled"), data=data)
    robust = evaluate(robust_run.best_network, data[1], test_spec, 10)
    ok_a = robust.mean - robust.std > naive.mean + naive.std

    clean = evaluate(base_net, data[1])
    known_cfg = cfg.replace(output_dir=str(root / "known"), train_sigma_vth=SIGMA, train_variation="known",
                            test_sigma_vth=SIGMA, test_variation="known")
    known_run = train(known_cfg, data=data)
    known = evaluate(known_run.best_network, data[1], known_cfg.test_spec, 10)
    ok_b = clean.mean - known.mean < 0.01
    report("7a", ok_a, f"sigma_test {SIGMA}: trained at {SIGMA} {robust.mean:.4f}+-{robust.std:.4f} vs "
                       f"trained at 0 {naive.mean:.4f}+-{naive.std:.4f} (non-overlapping 1-std bands)")
    report("7b", ok_b, f"known realization at {SIGMA}: {known.mean:.4f} vs no variation {clean.mean:.4f} "
                       f"(loss < 0.01)")
    assert ok_a and ok_b


# ---------------------------------------------------------------- 6 (nightly)

@pytest.mark.nightly
def test_c6_full_reproduction(tmp_path):
    path = mnist_dir()
    if not os.environ.get("TTFSNET_NIGHTLY") or path is None:
        report(6, False, "not run: needs TTFSNET_NIGHTLY=1 and MNIST (hours of training)")
        pytest.skip("nightly criterion")
    epochs = int(os.environ.get("TTFSNET_NIGHTLY_EPOCHS", "100"))
    cfg = RunConfig(data_dir=str(path), output_dir=str(tmp_path / "full"), epochs=epochs,
                    **PRESETS["784-800-10"])
    result = train(cfg)
    ok = result.best_accuracy >= 0.975
    report(6, ok, f"784-800-10 linear, full MNIST: best test accuracy {result.best_accuracy:.4f} "
                  f"after {result.epochs_run} epochs (>=0.975)")
    assert ok


# ---------------------------------------------------------------- 8

def test_c8_encoding_and_shrink_fixtures():
    checks = []
    checks.append(np.array_equal(encode([1.0, 0.5, 0.0], 5.0), [0.0, 2.5, np.inf]))
    checks.append(np.array_equal(shrink_13(np.ones((28, 28))), np.ones((13, 13))))
    checks.append(np.array_equal(shrink_13(np.zeros((28, 28))), np.zeros((13, 13))))
    corner = np.zeros((28, 28))
    corner[0, 0] = 1.0
    out = shrink_13(corner)
    expected = np.zeros((13, 13))
    expected[0, 0] = 1 / 16
    checks.append(np.array_equal(out, expected))
    img = np.random.default_rng(8).integers(0, 256, (28, 28)) / 255.0
    brute = np.array([[img[2 * i:2 * i + 4, 2 * j:2 * j + 4].sum() / 16 for j in range(13)] for i in range(13)])
    checks.append(np.allclose(shrink_13(img), brute, rtol=0, atol=1e-15))
    ok = all(checks)
    report(8, ok, f"{sum(checks)}/{len(checks)} encode/shrink fixtures exact")
    assert ok

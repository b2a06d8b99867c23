"""Per-sample forward and backward time of the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--samples 200] [--arch 169-300-10 784-800-10]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from ttfsnet.backend import available_backends
from ttfsnet.linear import run_backward, run_forward
from ttfsnet.network import default_init_spec, init_network, parse_architecture


def mnist_like_inputs(rng, n, n_in, tau_in=5.0, density=0.2):
    """Spike times for images with about ``density`` nonzero pixels."""
    x = np.where(rng.random((n, n_in)) < density, rng.random((n, n_in)), 0.0)
    return np.where(x > 0, tau_in * (1.0 - x), np.inf)


def time_backend(kernels, network, inputs, delta):
    t0 = time.perf_counter()
    traces = [run_forward(network, x, kernels=kernels) for x in inputs]
    t1 = time.perf_counter()
    grads = [np.zeros_like(w) for w in network.weights]
    for trace in traces:
        run_backward(trace, network, delta, 1.0, grads, 1.0 / len(traces), kernels=kernels)
    t2 = time.perf_counter()
    n = len(inputs)
    return (t1 - t0) / n, (t2 - t1) / n, traces, grads


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--samples", type=int, default=200)
    parser.add_argument("--arch", nargs="+", default=["169-300-10", "784-800-10"])
    parser.add_argument("--models", nargs="+", default=["linear", "circuit"])
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    backends = available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the fallback is timed")
    print(f"{'arch':<14}{'model':<9}{'backend':<9}{'forward us':>12}{'backward us':>13}{'speedup':>9}")
    for arch in args.arch:
        sizes = parse_architecture(arch)
        rng = np.random.default_rng(args.seed)
        inputs = mnist_like_inputs(rng, args.samples, sizes[0])
        delta = rng.normal(size=sizes[-1])
        for model in args.models:
            net = init_network(sizes, model, default_init_spec(sizes, 5.0, 4.0), args.seed, 128.0, -128.0)
            results = {name: time_backend(k, net, inputs, delta) for name, k in backends.items()}
            base = sum(results["python"][:2])
            ref_grads = results["python"][3]
            for name, (fwd, bwd, _, grads) in results.items():
                err = max(float(np.max(np.abs(a - b))) for a, b in zip(grads, ref_grads))
                note = "" if err < 1e-9 else f"  (grad mismatch {err:.1e})"
                print(f"{arch:<14}{model:<9}{name:<9}{fwd * 1e6:>12.1f}{bwd * 1e6:>13.1f}"
                      f"{base / (fwd + bwd):>8.1f}x{note}")


if __name__ == "__main__":
    main()

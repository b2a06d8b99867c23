"""Reference checks that share no code with the event-driven solvers.

``integrate_membrane``/``integrate_layer`` step the neuron ODEs with classical RK4. Steps are
aligned to arrival times so no step straddles an input switching on, and a threshold
crossing is located by bisection on the length of the final step. ``fd_gradient`` and
``weight_fd`` are plain central differences of the cost.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .linear import run_backward, run_forward
from .loss import cost, output_error
from .network import Hyperparameters, Network, NeuronModel

DEFAULT_DT = 1e-4
BISECT_TOL = 1e-10
TAIL_BH = 0.005


def _rhs_scalar(model, events, t, v, v_pos, v_neg):
    total = 0.0
    for t_j, w in events:
        if t >= t_j:
            if model is NeuronModel.CIRCUIT:
                c = 1.0 / v_pos if w >= 0 else 1.0 / v_neg
                total += w * (1.0 - v * c)
            else:
                total += w
    return total


def integrate_membrane(model, events: Sequence[tuple[float, float]], v_th: float,
                       v_pos: float = 128.0, v_neg: float = -128.0, dt: float = DEFAULT_DT,
                       t_end: Optional[float] = None, record: bool = True):
    """Integrate one neuron from its first arrival to ``t_end``.

    ``events`` are (arrival time, weight) pairs. Returns ``(crossing time or None,
    (times, potentials))``; the trajectory stops at the crossing.
    """
    model = NeuronModel(model)
    events = sorted((float(t), float(w)) for t, w in events if math.isfinite(t))
    if not events:
        return None, (np.zeros(0), np.zeros(0))
    if t_end is None:
        t_end = events[-1][0] + 50.0
    marks = sorted({t for t, _ in events if t < t_end}) + [t_end]
    ts, vs = [marks[0]], [0.0]
    v = 0.0

    def f(t, v):
        return _rhs_scalar(model, events, t, v, v_pos, v_neg)

    for a, b in zip(marks[:-1], marks[1:]):
        n = max(1, math.ceil((b - a) / dt - 1e-9))
        h = (b - a) / n
        for s in range(n):
            t0 = a + s * h

            def rk4(vv, step, t0=t0):
                # rhs is evaluated at the step start: inputs never switch on inside a step
                k1 = f(t0, vv)
                k2 = f(t0, vv + 0.5 * step * k1)
                k3 = f(t0, vv + 0.5 * step * k2)
                k4 = f(t0, vv + step * k3)
                return vv + step * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0

            v_new = rk4(v, h)
            if v_new >= v_th:
                lo, hi = 0.0, h
                while hi - lo > BISECT_TOL:
                    mid = 0.5 * (lo + hi)
                    if rk4(v, mid) >= v_th:
                        hi = mid
                    else:
                        lo = mid
                t_cross = t0 + hi
                if record:
                    ts.append(t_cross)
                    vs.append(v_th)
                return t_cross, (np.array(ts), np.array(vs))
            v = v_new
            if record:
                ts.append(t0 + h)
                vs.append(v)
    return None, (np.array(ts), np.array(vs))


def integrate_layer(model, arrivals: np.ndarray, weights: np.ndarray, v_th: np.ndarray,
                    v_pos: float = 128.0, v_neg: float = -128.0, dt: float = 1e-2,
                    max_time: float = 1e7) -> np.ndarray:
    """Crossing times for a whole layer at once (inf where the membrane never reaches threshold).

    ``arrivals`` is the (n_out, n_in) arrival-time matrix (inf for silent inputs). Between
    arrivals the step is ``dt``. After the last arrival the right-hand side is fixed, so a
    neuron whose drive at threshold is not positive can never cross; the rest keep stepping
    with growing steps capped at ``B h <= TAIL_BH`` until they cross or ``max_time`` passes.
    The RK4 decay-rate error per step is about ``(B h)^4 / 120``, and late crossings amplify it.
    """
    model = NeuronModel(model)
    n_out = weights.shape[0]
    out = np.full(n_out, np.inf)
    finite = np.isfinite(arrivals)
    if not finite.any():
        return out
    c = np.where(weights >= 0, 1.0 / v_pos, 1.0 / v_neg)
    marks = np.unique(arrivals[finite])
    v = np.zeros(n_out)
    alive = np.ones(n_out, dtype=bool)

    def rates(t):
        on = arrivals <= t
        drive = np.where(on, weights, 0.0).sum(axis=1)
        leak = np.where(on, weights * c, 0.0).sum(axis=1) if model is NeuronModel.CIRCUIT else np.zeros(n_out)
        return drive, leak

    def advance(t0, v, h, drive, leak):
        """One RK4 step of per-neuron length h; records crossings and retires those neurons."""
        def f(vv):
            return drive - leak * vv
        v_new = _rk4(f, v, h)
        hit = alive & (v_new >= v_th)
        if hit.any():
            lo = np.zeros(hit.sum())
            hi = np.broadcast_to(h, v.shape)[hit].copy()
            v0 = v[hit]
            while (hi - lo).max() > BISECT_TOL:
                mid = 0.5 * (lo + hi)
                above = _rk4_vec(f, v0, mid, hit) >= v_th[hit]
                hi = np.where(above, mid, hi)
                lo = np.where(above, lo, mid)
            out[hit] = np.broadcast_to(t0, v.shape)[hit] + hi
            alive[hit] = False
        return v_new

    for a, b in zip(marks[:-1], marks[1:]):
        drive, leak = rates(a)
        n = max(1, math.ceil((b - a) / dt - 1e-9))
        h = (b - a) / n
        # with constant coefficients one RK4 step is the affine map v -> g v + q; iterate it
        # for all n steps at once and only replay the step holding the first crossing
        x = leak * h
        one_minus_g = x - x * x / 2.0 + x ** 3 / 6.0 - x ** 4 / 24.0
        q = h * drive * (1.0 - x / 2.0 + x * x / 6.0 - x ** 3 / 24.0)
        traj = _affine_iterates(v, one_minus_g, q, n)
        above = (traj[:, 1:] >= v_th[:, None]) & alive[:, None]
        for i in np.flatnonzero(above.any(axis=1)):
            k = int(above[i].argmax())
            start = np.zeros(n_out)
            start[i] = traj[i, k]
            keep = alive.copy()
            alive[:] = False
            alive[i] = True
            advance(a + k * h, start, h, drive, leak)
            alive[:] = keep & (np.arange(n_out) != i)
        v = traj[:, -1]
        if not alive.any():
            return out

    # unbounded final segment
    drive, leak = rates(marks[-1])
    alive &= drive - leak * v_th > 0
    t = np.full(n_out, marks[-1])
    h = np.full(n_out, dt)
    while alive.any() and t[alive].min() < marks[-1] + max_time:
        step = np.where(leak > 0, np.minimum(h, TAIL_BH / np.where(leak > 0, leak, 1.0)), h)
        v = advance(t, v, step, drive, leak)
        t = t + step
        h = h * 2.0
    return out


def _affine_iterates(v0, one_minus_g, q, n):
    """Rows ``v_0..v_n`` of ``v_{k+1} = g v_k + q`` for each neuron, with ``g = 1 - one_minus_g``.

    Uses ``g^k`` and the geometric sum ``(1 - g^k) / (1 - g)`` in log1p/expm1 form so that
    ``g`` close to 1 loses no precision.
    """
    k = np.arange(n + 1)[None, :]
    omg = one_minus_g[:, None]
    log_g = np.log1p(-omg)
    gk = np.exp(k * log_g)
    with np.errstate(divide="ignore", invalid="ignore"):
        geo = np.where(omg == 0.0, k, -np.expm1(k * log_g) / omg)
    return gk * v0[:, None] + geo * q[:, None]


def _rk4(f, v, h):
    k1 = f(v)
    k2 = f(v + 0.5 * h * k1)
    k3 = f(v + 0.5 * h * k2)
    k4 = f(v + h * k3)
    return v + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def _rk4_vec(f_full, v0, steps, mask):
    """RK4 with a per-neuron step length on the masked subset of neurons."""
    def f(vv):
        full = np.zeros(mask.size)
        full[mask] = vv
        return f_full(full)[mask]

    k1 = f(v0)
    k2 = f(v0 + 0.5 * steps * k1)
    k3 = f(v0 + 0.5 * steps * k2)
    k4 = f(v0 + steps * k3)
    return v0 + steps * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def oracle_forward(network: Network, input_times, realization=None, dt: float = 1e-2
                   ) -> list[np.ndarray]:
    """Spike times of every layer (input first) by numerical integration."""
    t = np.asarray(input_times, dtype=np.float64)
    times = [t]
    for l in range(network.n_layers):
        if realization is not None:
            vth = realization.thresholds[l]
            delays = realization.delays[l] if realization.delays is not None else None
        else:
            vth = network.thresholds[l]
            delays = None
        base = network.delays[l] if delays is None else network.delays[l] + delays
        arrivals = t[None, :] + base
        t = integrate_layer(network.neuron_model, arrivals, network.weights[l], vth,
                            network.v_pos, network.v_neg, dt)
        times.append(t)
    return times


def fd_gradient(func: Callable[[float], float], w: float, h: float) -> float:
    if h <= 0:
        raise ValueError("step must be positive")
    return (func(w + h) - func(w - h)) / (2.0 * h)


@dataclass
class ProbeResult:
    layer: int
    i: int
    j: int
    analytic: float
    fd: float
    stable: bool

    @property
    def rel_err(self) -> float:
        scale = max(abs(self.analytic), abs(self.fd))
        return 0.0 if scale == 0 else abs(self.analytic - self.fd) / scale

    def passes(self, rel_tol: float = 1e-4, abs_tol: float = 1e-7, small: float = 1e-3) -> bool:
        if abs(self.fd) < small:
            return abs(self.analytic - self.fd) < abs_tol or self.rel_err < rel_tol
        return self.rel_err < rel_tol


def sample_cost(network: Network, input_times, label: int, hyper: Hyperparameters,
                realization=None):
    trace = run_forward(network, input_times, realization)
    return cost(trace.output_times, label, hyper).cost, trace


def weight_fd(network: Network, input_times, label: int, hyper: Hyperparameters,
              layer: int, i: int, j: int, h: Optional[float] = None, realization=None):
    """Central difference of the cost w.r.t. one weight, plus a causal-structure stability flag.

    The flag is False when either perturbed pass changes any causal set or firing flag,
    in which case the cost is not differentiable across the probe interval.
    """
    w0 = float(network.weights[layer][i, j])
    if h is None:
        h = 1e-5 * (abs(w0) + 1.0)
    base_sig = run_forward(network, input_times, realization).signature()
    sigs = []

    def at(w):
        weights = [x.copy() for x in network.weights]
        weights[layer][i, j] = w
        c, trace = sample_cost(network.with_weights(weights), input_times, label, hyper, realization)
        sigs.append(trace.signature())
        return c

    fd = fd_gradient(at, w0, h)
    return fd, all(s == base_sig for s in sigs)


def gradcheck(network: Network, input_times, label: int, hyper: Hyperparameters,
              n_probes: int = 20, rng=None, realization=None) -> list[ProbeResult]:
    """Compare analytic gradients (epsilon = 0) with central differences on causal connections."""
    rng = np.random.default_rng(rng)
    trace = run_forward(network, input_times, realization)
    delta = output_error(trace.output_times, label, hyper)
    analytic = run_backward(trace, network, delta, epsilon=0.0)
    candidates = []
    for l, rec in enumerate(trace.layers):
        for i in np.flatnonzero(rec.counts):
            candidates.extend((l, int(i), int(j)) for j in rec.causal_set(i))
    if not candidates:
        return []
    picks = rng.choice(len(candidates), size=min(n_probes, len(candidates)), replace=False)
    results = []
    for p in picks:
        l, i, j = candidates[p]
        fd, stable = weight_fd(network, input_times, label, hyper, l, i, j, realization=realization)
        results.append(ProbeResult(l + 1, i, j, float(analytic[l][i, j]), fd, stable))
    return results


def format_gradcheck(results: Sequence[ProbeResult]) -> str:
    lines = ["layer\ti\tj\tanalytic\tfd\trel_err\tstable"]
    for r in results:
        lines.append(f"{r.layer}\t{r.i}\t{r.j}\t{r.analytic:.10e}\t{r.fd:.10e}\t{r.rel_err:.3e}\t{r.stable}")
    return "\n".join(lines) + "\n"


def layer_trajectories(model, arrivals: np.ndarray, weights: np.ndarray, fire_times: np.ndarray,
                       grid: np.ndarray, v_pos: float = 128.0, v_neg: float = -128.0,
                       substeps: int = 8) -> np.ndarray:
    """Membrane potentials of several neurons sampled on ``grid`` (nan after each neuron fires).

    Integration steps are split at every arrival so inputs switch on exactly at step edges.
    """
    model = NeuronModel(model)
    arrivals = np.atleast_2d(arrivals)
    weights = np.atleast_2d(weights)
    n = weights.shape[0]
    c = np.where(weights >= 0, 1.0 / v_pos, 1.0 / v_neg)
    finite = arrivals[np.isfinite(arrivals)]
    marks = np.unique(np.concatenate([grid, finite[(finite > grid[0]) & (finite < grid[-1])]]))
    on_grid = np.isin(marks, grid)
    out = np.full((n, grid.size), np.nan)
    v = np.zeros(n)
    col = 0
    for k, a in enumerate(marks):
        if on_grid[k]:
            out[:, col] = np.where(a <= fire_times, v, np.nan)
            col += 1
        if k + 1 == len(marks):
            break
        on = arrivals <= a
        drive = np.where(on, weights, 0.0).sum(axis=1)
        leak = np.where(on, weights * c, 0.0).sum(axis=1) if model is NeuronModel.CIRCUIT else 0.0
        h = (marks[k + 1] - a) / substeps
        for _ in range(substeps):
            k1 = drive - leak * v
            k2 = drive - leak * (v + 0.5 * h * k1)
            k3 = drive - leak * (v + 0.5 * h * k2)
            k4 = drive - leak * (v + h * k3)
            v = v + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    return out

"""Single-neuron spike-time solvers for the linear and op-amp-free circuit neurons.

Both neurons integrate step inputs that switch on at presynaptic arrival times. Between
two consecutive arrivals the membrane follows a closed-form curve, so the first threshold
crossing is found by walking the arrival-sorted segments and solving inside each one.

Linear neuron:   dv/dt = sum_j w_j
Circuit neuron:  dv/dt = sum_j w_j (1 - v * c_j),   c_j = 1/V+ if w_j >= 0 else 1/V-

Segment intervals are half-open ``[t_k, t_{k+1})``: a crossing exactly at an arrival belongs
to the later segment, and a group of simultaneous arrivals behaves as one boundary because
the zero-width segments between them can never hold a crossing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

B_TOL = 1e-12
_SERIES_X = 1e-4


class ArrivalEvent(NamedTuple):
    index: int
    time: float
    weight: float


def make_events(times: Sequence[float], weights: Sequence[float]) -> list[ArrivalEvent]:
    """Arrival-sorted events from parallel arrays, skipping non-fired (inf/nan) inputs.

    Ties are ordered by presynaptic index.
    """
    events = [ArrivalEvent(j, float(t), float(w))
              for j, (t, w) in enumerate(zip(times, weights)) if math.isfinite(t)]
    events.sort(key=lambda e: (e.time, e.index))
    return events


def fire_time_linear(events: Sequence[ArrivalEvent], v_th: float
                     ) -> Optional[tuple[float, tuple[int, ...]]]:
    """First threshold crossing of the linear neuron, or None if it never fires.

    Returns the spike time and the causal set (indices of the arrivals before firing).
    """
    slope = 0.0
    weighted_time = 0.0
    n = len(events)
    for k, ev in enumerate(events):
        slope += ev.weight
        weighted_time += ev.weight * ev.time
        if slope <= 0.0:
            continue
        t_next = events[k + 1].time if k + 1 < n else math.inf
        t_star = (v_th + weighted_time) / slope
        if ev.time <= t_star < t_next:
            return t_star, tuple(e.index for e in events[: k + 1])
    return None


def membrane_linear(events: Sequence[ArrivalEvent], t: float) -> float:
    """Membrane of the linear neuron at time t, ignoring the reset."""
    return sum(e.weight * (t - e.time) for e in events if e.time <= t)


def pulse_factor(w: float, v_pos: float, v_neg: float) -> float:
    return 1.0 / v_pos if w >= 0.0 else 1.0 / v_neg


def _phi(x: float) -> float:
    # (1 - e^-x) / x
    if x < _SERIES_X:
        return 1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0
    return -math.expm1(-x) / x


def _dphi(x: float) -> float:
    # d/dx (1 - e^-x) / x
    if x < _SERIES_X:
        return -0.5 + x / 3.0 - x * x / 8.0 + x * x * x / 30.0
    return (math.exp(-x) - _phi(x)) / x


def segment_terminal(v_start: float, A: float, B: float, dt: float, b_tol: float = B_TOL) -> float:
    """Membrane after ``dt`` of ``dv/dt = A - B v`` starting at ``v_start``.

    Written as ``v e^{-B dt} + A dt (1 - e^{-B dt}) / (B dt)``, which equals
    ``A/B - (A/B - v) e^{-B dt}`` but stays accurate as B -> 0; below ``b_tol`` the
    linear limit ``v + A dt`` is used.
    """
    if B <= b_tol:
        return v_start + A * dt
    x = B * dt
    return v_start * math.exp(-x) + A * dt * _phi(x)


def _crossing_delay(v: float, A: float, B: float, v_th: float, b_tol: float) -> Optional[float]:
    """Time from segment start until v reaches v_th, or None if the segment never gets there."""
    drive = A - B * v_th
    if drive <= 0.0:
        return None
    if B <= b_tol:
        d = (v_th - v) / A
    else:
        d = math.log1p(B * (v_th - v) / drive) / B
    return max(d, 0.0)


@dataclass
class CircuitCumulants:
    """Per-segment quantities of a circuit neuron up to (and including) its firing segment.

    Index k-1 holds segment k. ``widths[-1]`` runs from the last causal arrival to the spike,
    and ``terminal[-1]`` is therefore the threshold.
    """

    sorted_index: list[int]
    sorted_weights: list[float]
    arrival_times: list[float]
    A: list[float]
    B: list[float]
    widths: list[float]
    terminal: list[float]

    @property
    def G(self) -> int:
        return len(self.A)


def fire_time_circuit(events: Sequence[ArrivalEvent], v_th: float, v_pos: float, v_neg: float,
                      b_tol: float = B_TOL) -> Optional[tuple[float, int, CircuitCumulants]]:
    """First threshold crossing of the circuit neuron: (spike time, G, cumulants) or None."""
    A = B = v = 0.0
    cum = CircuitCumulants([], [], [], [], [], [], [])
    n = len(events)
    for k, ev in enumerate(events):
        A += ev.weight
        B += ev.weight * pulse_factor(ev.weight, v_pos, v_neg)
        t_next = events[k + 1].time if k + 1 < n else math.inf
        width = t_next - ev.time
        cum.sorted_index.append(ev.index)
        cum.sorted_weights.append(ev.weight)
        cum.arrival_times.append(ev.time)
        cum.A.append(A)
        cum.B.append(B)
        d = _crossing_delay(v, A, B, v_th, b_tol)
        if d is not None and d < width:
            cum.widths.append(d)
            cum.terminal.append(v_th)
            return ev.time + d, k + 1, cum
        cum.widths.append(width)
        v = segment_terminal(v, A, B, width, b_tol) if math.isfinite(width) else math.nan
        cum.terminal.append(v)
    return None


def circuit_membrane(events: Sequence[ArrivalEvent], t: float, v_pos: float, v_neg: float,
                     b_tol: float = B_TOL) -> float:
    """Membrane of the circuit neuron at time t, ignoring the threshold."""
    A = B = v = 0.0
    for k, ev in enumerate(events):
        if ev.time > t:
            break
        A += ev.weight
        B += ev.weight * pulse_factor(ev.weight, v_pos, v_neg)
        end = events[k + 1].time if k + 1 < len(events) else math.inf
        v = segment_terminal(v, A, B, min(end, t) - ev.time, b_tol)
    return v


def circuit_neuron_derivatives(arrival_times: Sequence[float], weights: Sequence[float],
                               t_fire: float, v_th: float, v_pos: float, v_neg: float,
                               epsilon: float = 0.0, b_tol: float = B_TOL):
    """Sensitivities of a fired circuit neuron over its G causal inputs (arrival-sorted).

    Returns ``(dv_dw, dv_dt, dt_dv)`` where ``dv_dw[j]`` and ``dv_dt[j]`` are derivatives of
    the final-segment membrane value with respect to the j-th sorted weight and arrival
    time at a fixed spike time, and ``dt_dv = -1 / (epsilon + A_G - B_G v_th)`` converts
    them to spike-time derivatives. Zero-width segments between tied arrivals are handled
    like any other segment.
    """
    G = len(weights)
    A = B = v = 0.0
    exps, alpha, beta, gamma = [], [], [], []
    c = [pulse_factor(w, v_pos, v_neg) for w in weights]
    for k in range(G):
        A += weights[k]
        B += weights[k] * c[k]
        width = (arrival_times[k + 1] if k + 1 < G else t_fire) - arrival_times[k]
        x = B * width if B > b_tol else 0.0
        e = math.exp(-x)
        a_k = width * _phi(x)
        exps.append(e)
        alpha.append(a_k)
        beta.append(A * width * width * _dphi(x) - v * width * e)
        gamma.append((A - B * v) * e)
        v = v * e + A * a_k
    dt_dv = -1.0 / (epsilon + A - B * v_th)

    # P[k] = prod_{q>k} exps[q]: sensitivity of the final value to the end of segment k.
    P = [1.0] * G
    for k in range(G - 2, -1, -1):
        P[k] = P[k + 1] * exps[k + 1]
    dv_dw = [0.0] * G
    sa = sb = 0.0
    for j in range(G - 1, -1, -1):
        sa += P[j] * alpha[j]
        sb += P[j] * beta[j]
        dv_dw[j] = sa + c[j] * sb
    dv_dt = [0.0] * G
    for m in range(G):
        d = -P[m] * gamma[m]
        if m > 0:
            d += P[m - 1] * gamma[m - 1]
        dv_dt[m] = d
    return dv_dw, dv_dt, dt_dv

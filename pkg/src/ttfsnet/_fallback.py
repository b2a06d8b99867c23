"""Layer kernels in numpy / pure Python, used when the compiled extension is unavailable.

Every kernel takes ``order``: an int64 array of fired presynaptic indices sorted by arrival
time, with one row shared by all neurons (no delays) or one row per neuron. ``delays`` is
either None or the (n_out, n_in) delay matrix.
"""
from __future__ import annotations

import numpy as np

from .neuron import B_TOL, _crossing_delay, circuit_neuron_derivatives, pulse_factor, segment_terminal


def _sorted_inputs(t_in, W, delays, order):
    n_out = W.shape[0]
    if order.shape[0] == 1:
        idx = order[0]
        ts = np.broadcast_to(t_in[idx], (n_out, idx.size))
        if delays is not None:
            ts = ts + delays[:, idx]
        ws = W[:, idx]
    else:
        ts = t_in[order]
        if delays is not None:
            ts = ts + np.take_along_axis(delays, order, axis=1)
        ws = np.take_along_axis(W, order, axis=1)
    return np.ascontiguousarray(ts), ws


def linear_forward(t_in, W, vth, delays, order):
    n_out = W.shape[0]
    t_out = np.full(n_out, np.inf)
    counts = np.zeros(n_out, dtype=np.int64)
    if order.shape[1] == 0:
        return t_out, counts
    ts, ws = _sorted_inputs(t_in, W, delays, order)
    slope = np.cumsum(ws, axis=1)
    wtime = np.cumsum(ws * ts, axis=1)
    t_next = np.empty_like(ts)
    t_next[:, :-1] = ts[:, 1:]
    t_next[:, -1] = np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        cand = (vth[:, None] + wtime) / slope
    ok = (slope > 0) & (cand >= ts) & (cand < t_next)
    first = ok.argmax(axis=1)
    fired = ok[np.arange(n_out), first]
    t_out[fired] = cand[fired, first[fired]]
    counts[fired] = first[fired] + 1
    return t_out, counts


def _scatter(out_rows, order, values):
    """Add values laid out in sorted order back onto presynaptic columns."""
    if order.shape[0] == 1:
        out_rows[:, order[0]] += values
    else:
        out_rows[np.arange(out_rows.shape[0])[:, None], order] += values


def linear_backward(t_in, W, delays, order, t_out, counts, delta_out, epsilon, grad_W, scale):
    n_in = W.shape[1]
    delta_in = np.zeros(n_in)
    fired = counts > 0
    if order.shape[1] == 0 or not fired.any():
        return delta_in
    ts, ws = _sorted_inputs(t_in, W, delays, order)
    causal = np.arange(order.shape[1])[None, :] < counts[:, None]
    denom = epsilon + np.where(causal, ws, 0.0).sum(axis=1)
    g = np.zeros(W.shape[0])
    g[fired] = delta_out[fired] / denom[fired]
    t_fire = np.where(fired, t_out, 0.0)
    dw = np.where(causal, -g[:, None] * (t_fire[:, None] - ts), 0.0)
    _scatter(grad_W, order, scale * dw)
    contrib = np.where(causal, g[:, None] * ws, 0.0)
    if order.shape[0] == 1:
        delta_in[order[0]] += contrib.sum(axis=0)
    else:
        delta_in += np.bincount(order.ravel(), weights=contrib.ravel(), minlength=n_in)
    return delta_in


def _neuron_inputs(i, t_in, W, delays, order):
    idx = order[0 if order.shape[0] == 1 else i]
    ts = t_in[idx] + (delays[i, idx] if delays is not None else 0.0)
    return idx, np.asarray(ts, dtype=np.float64), W[i, idx]


def circuit_forward(t_in, W, vth, delays, order, v_pos, v_neg, b_tol=B_TOL):
    n_out = W.shape[0]
    t_out = np.full(n_out, np.inf)
    counts = np.zeros(n_out, dtype=np.int64)
    F = order.shape[1]
    for i in range(n_out):
        _, ts, ws = _neuron_inputs(i, t_in, W, delays, order)
        A = B = v = 0.0
        for k in range(F):
            w = float(ws[k])
            A += w
            B += w * pulse_factor(w, v_pos, v_neg)
            width = (ts[k + 1] if k + 1 < F else np.inf) - ts[k]
            d = _crossing_delay(v, A, B, float(vth[i]), b_tol)
            if d is not None and d < width:
                t_out[i] = ts[k] + d
                counts[i] = k + 1
                break
            if k + 1 < F:
                v = segment_terminal(v, A, B, width, b_tol)
    return t_out, counts


def circuit_backward(t_in, W, delays, order, t_out, counts, delta_out, vth, v_pos, v_neg,
                     epsilon, grad_W, scale, b_tol=B_TOL):
    delta_in = np.zeros(W.shape[1])
    for i in np.flatnonzero(counts > 0):
        G = int(counts[i])
        idx, ts, ws = _neuron_inputs(i, t_in, W, delays, order)
        dv_dw, dv_dt, dt_dv = circuit_neuron_derivatives(
            ts[:G].tolist(), ws[:G].tolist(), float(t_out[i]), float(vth[i]),
            v_pos, v_neg, epsilon, b_tol)
        g = delta_out[i] * dt_dv
        grad_W[i, idx[:G]] += scale * g * np.asarray(dv_dw)
        delta_in[idx[:G]] += g * np.asarray(dv_dt)
    return delta_in

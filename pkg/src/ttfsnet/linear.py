"""Event-driven forward pass and exact spike-time backpropagation for the linear neuron."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .backend import kernels as _default_kernels
from .network import ForwardTrace, LayerTrace, Network, NeuronModel
from .neuron import ArrivalEvent, fire_time_linear, make_events, membrane_linear  # noqa: F401


def arrival_order(t_prev: np.ndarray, delays: Optional[np.ndarray]) -> np.ndarray:
    """Fired presynaptic indices sorted by arrival, ties by index.

    One shared row without delays, otherwise one row per postsynaptic neuron.
    """
    idx = np.flatnonzero(np.isfinite(t_prev))
    if delays is None:
        return idx[np.argsort(t_prev[idx], kind="stable")][None, :].astype(np.int64)
    arrival = t_prev[idx][None, :] + delays[:, idx]
    return np.ascontiguousarray(idx[np.argsort(arrival, axis=1, kind="stable")], dtype=np.int64)


def _layer_params(network: Network, realization, l: int):
    if realization is None:
        return network.thresholds[l], network.active_delays[l]
    delays = realization.delays[l] if realization.delays is not None else None
    if delays is None:
        delays = network.active_delays[l]
    elif network.active_delays[l] is not None:
        delays = delays + network.active_delays[l]
    return realization.thresholds[l], delays


def run_forward(network: Network, input_times, realization=None, kernels=None) -> ForwardTrace:
    """Propagate input spike times through every layer with the network's neuron model."""
    kernels = kernels or _default_kernels
    t = np.ascontiguousarray(input_times, dtype=np.float64)
    if t.shape != (network.layer_sizes[0],):
        raise ValueError(f"input has shape {t.shape}, expected ({network.layer_sizes[0]},)")
    t = np.where(np.isnan(t), np.inf, t)
    trace = ForwardTrace(t, [], network.neuron_model)
    circuit = network.neuron_model is NeuronModel.CIRCUIT
    for l in range(network.n_layers):
        vth, delays = _layer_params(network, realization, l)
        order = arrival_order(t, delays)
        if circuit:
            t_out, counts = kernels.circuit_forward(t, network.weights[l], vth, delays, order,
                                                    network.v_pos, network.v_neg)
        else:
            t_out, counts = kernels.linear_forward(t, network.weights[l], vth, delays, order)
        trace.layers.append(LayerTrace(t_out, counts, order, vth, delays))
        t = t_out
    return trace


def forward_linear(network: Network, input_times, realization=None, kernels=None) -> ForwardTrace:
    if network.neuron_model is not NeuronModel.LINEAR:
        raise ValueError("forward_linear needs a linear-model network")
    return run_forward(network, input_times, realization, kernels)


def classify(trace_or_times, t_max_sentinel: float = np.inf) -> int:
    """Index of the earliest output spike; silent neurons count as ``t_max_sentinel``.

    Ties (including all-silent outputs) go to the lowest index.
    """
    times = trace_or_times.output_times if isinstance(trace_or_times, ForwardTrace) else trace_or_times
    times = np.where(np.isfinite(times), times, t_max_sentinel)
    return int(np.argmin(times))


def run_backward(trace: ForwardTrace, network: Network, delta_out, epsilon: float = 0.0,
                 grads: Optional[list] = None, scale: float = 1.0, kernels=None) -> list:
    """Accumulate ``scale * dC/dw`` into ``grads`` (allocated if None) and return it.

    ``delta_out`` is dC/dt for the output layer. Silent neurons stop the chain.
    """
    kernels = kernels or _default_kernels
    if grads is None:
        grads = [np.zeros_like(w) for w in network.weights]
    delta = np.ascontiguousarray(delta_out, dtype=np.float64)
    circuit = network.neuron_model is NeuronModel.CIRCUIT
    for l in range(network.n_layers - 1, -1, -1):
        rec = trace.layers[l]
        t_prev = trace.times(l)
        if circuit:
            delta = kernels.circuit_backward(t_prev, network.weights[l], rec.delays, rec.order,
                                             rec.times, rec.counts, delta, rec.thresholds,
                                             network.v_pos, network.v_neg, epsilon, grads[l], scale)
        else:
            delta = kernels.linear_backward(t_prev, network.weights[l], rec.delays, rec.order,
                                            rec.times, rec.counts, delta, epsilon, grads[l], scale)
    return grads


def backprop_linear(trace: ForwardTrace, network: Network, delta_out, epsilon: float = 0.0,
                    **kwargs) -> list:
    if network.neuron_model is not NeuronModel.LINEAR:
        raise ValueError("backprop_linear needs a linear-model network")
    return run_backward(trace, network, delta_out, epsilon, **kwargs)

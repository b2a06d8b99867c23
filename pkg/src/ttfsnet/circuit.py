"""Op-amp-free circuit neuron: forward pass, backpropagation and conductance export.

The membrane obeys ``dv/dt = sum_j w_j (1 - v c_j) theta(t - t_j)`` with
``c_j = 1/V+`` for non-negative weights and ``1/V-`` otherwise (unit capacitance). Between
arrivals this is ``dv/dt = A - B v`` with running sums ``A = sum w`` and ``B = sum w c``,
which relaxes exponentially toward ``A/B``. When that asymptote sits below threshold the
neuron stays silent.
"""
from __future__ import annotations

import numpy as np

from .linear import run_backward, run_forward
from .network import ForwardTrace, Network, NeuronModel
from .neuron import (  # noqa: F401
    B_TOL,
    CircuitCumulants,
    circuit_membrane,
    circuit_neuron_derivatives,
    fire_time_circuit,
    make_events,
    pulse_factor,
    segment_terminal,
)


def forward_circuit(network: Network, input_times, realization=None, kernels=None) -> ForwardTrace:
    if network.neuron_model is not NeuronModel.CIRCUIT:
        raise ValueError("forward_circuit needs a circuit-model network")
    return run_forward(network, input_times, realization, kernels)


def backprop_circuit(trace: ForwardTrace, network: Network, delta_out, epsilon: float = 0.0,
                     **kwargs) -> list:
    """Weight gradients for the circuit model.

    ``epsilon`` is added to the threshold-crossing slope ``A_G - B_G v_th`` in the same
    way it is added to the summed causal weights of the linear model.
    """
    if network.neuron_model is not NeuronModel.CIRCUIT:
        raise ValueError("backprop_circuit needs a circuit-model network")
    return run_backward(trace, network, delta_out, epsilon, **kwargs)


def neuron_cumulants(trace: ForwardTrace, network: Network, layer: int, i: int) -> CircuitCumulants | None:
    """Rebuild the segment record of neuron ``i`` in ``layer`` (>= 1) from a forward trace."""
    rec = trace.layers[layer - 1]
    arrivals = trace.arrivals(layer)[i]
    events = make_events(arrivals, network.weights[layer - 1][i])
    fired = fire_time_circuit(events, float(rec.thresholds[i]), network.v_pos, network.v_neg)
    return None if fired is None else fired[2]


def export_conductances(network: Network, v_pos: float | None = None, v_neg: float | None = None):
    """Split every weight into a (sigma+, sigma-) conductance pair.

    Returns one ``(sigma_plus, sigma_minus)`` array pair per layer with
    ``sigma_plus * V+ + sigma_minus * V- == w``.
    """
    v_pos = network.v_pos if v_pos is None else v_pos
    v_neg = network.v_neg if v_neg is None else v_neg
    if not (v_pos > 0 > v_neg):
        raise ValueError("need v_pos > 0 > v_neg")
    pairs = []
    for w in network.weights:
        pos = w >= 0
        pairs.append((np.where(pos, w / v_pos, 0.0), np.where(pos, 0.0, w / v_neg)))
    return pairs


def write_conductances(path, network: Network, v_pos: float | None = None,
                       v_neg: float | None = None) -> None:
    v_pos = network.v_pos if v_pos is None else v_pos
    v_neg = network.v_neg if v_neg is None else v_neg
    pairs = export_conductances(network, v_pos, v_neg)
    with open(path, "w") as fh:
        fh.write("# conductance export, normalised units, C = 1\n")
        fh.write(f"# V_pulse+ = {float(v_pos)!r}\n# V_pulse- = {float(v_neg)!r}\n")
        fh.write("# w = sigma_plus * V_pulse+ + sigma_minus * V_pulse-\n")
        fh.write("layer\ti\tj\tsigma_plus\tsigma_minus\n")
        for l, (sp, sm) in enumerate(pairs, start=1):
            for i in range(sp.shape[0]):
                for j in range(sp.shape[1]):
                    fh.write(f"{l}\t{i}\t{j}\t{float(sp[i, j])!r}\t{float(sm[i, j])!r}\n")


def read_conductances(path):
    """Parse a conductance table back into ``(v_pos, v_neg, rows)``."""
    v_pos = v_neg = None
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("# V_pulse+"):
                v_pos = float(line.split("=")[1])
            elif line.startswith("# V_pulse-"):
                v_neg = float(line.split("=")[1])
            elif line.startswith("#") or line.startswith("layer"):
                continue
            else:
                l, i, j, sp, sm = line.split("\t")
                rows.append((int(l), int(i), int(j), float(sp), float(sm)))
    return v_pos, v_neg, rows

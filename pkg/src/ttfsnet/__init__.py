"""Event-driven time-to-first-spike networks with exact spike-time gradients."""
from .backend import NAME as BACKEND
from .circuit import backprop_circuit, export_conductances, forward_circuit
from .container import ContainerError
from .dataset import IdxError, encode, jitter, load_idx, shrink_13
from .linear import backprop_linear, classify, forward_linear, run_backward, run_forward
from .loss import cost, output_error, sgd_step
from .network import (
    ForwardTrace,
    Hyperparameters,
    Network,
    NeuronModel,
    init_network,
    load_network,
    save_network,
    sentinelize,
)
from .neuron import fire_time_circuit, fire_time_linear, make_events
from .variation import VariationMode, VariationRealization, VariationSpec, apply_mode, sample_realization

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ContainerError", "ForwardTrace", "Hyperparameters", "IdxError", "Network",
    "NeuronModel", "VariationMode", "VariationRealization", "VariationSpec", "apply_mode",
    "backprop_circuit", "backprop_linear", "classify", "cost", "encode", "export_conductances",
    "fire_time_circuit", "fire_time_linear", "forward_circuit", "forward_linear", "init_network",
    "jitter", "load_idx", "load_network", "make_events", "output_error", "run_backward",
    "run_forward", "sample_realization", "save_network", "sentinelize", "sgd_step", "shrink_13",
]

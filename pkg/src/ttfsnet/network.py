"""Network, hyperparameter and trace types shared by both neuron models."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .container import ContainerError, read_container, write_container

# Spike times are float64 arrays; a neuron that never fired holds +inf.
NO_SPIKE = np.inf


class NeuronModel(str, enum.Enum):
    LINEAR = "linear"
    CIRCUIT = "circuit"


@dataclass(frozen=True)
class Network:
    """Dense feedforward SNN. ``weights[l]`` maps layer l to layer l+1, shape (N[l+1], N[l])."""

    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    thresholds: tuple[np.ndarray, ...]
    delays: tuple[np.ndarray, ...]
    neuron_model: NeuronModel = NeuronModel.LINEAR
    v_pos: float = 128.0
    v_neg: float = -128.0

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "neuron_model", NeuronModel(self.neuron_model))
        _check_sizes(sizes)
        m = len(sizes) - 1
        if not (len(self.weights) == len(self.thresholds) == len(self.delays) == m):
            raise ValueError(f"expected {m} weight/threshold/delay arrays")
        for l in range(m):
            shape = (sizes[l + 1], sizes[l])
            if self.weights[l].shape != shape:
                raise ValueError(f"weights[{l}] has shape {self.weights[l].shape}, expected {shape}")
            if self.delays[l].shape != shape:
                raise ValueError(f"delays[{l}] has shape {self.delays[l].shape}, expected {shape}")
            if self.thresholds[l].shape != (sizes[l + 1],):
                raise ValueError(f"thresholds[{l}] has shape {self.thresholds[l].shape}")
            if np.any(self.thresholds[l] < 0):
                raise ValueError("thresholds must be nonnegative")
        if not (self.v_pos > 0 > self.v_neg):
            raise ValueError("need v_pos > 0 > v_neg")
        # all-zero delay matrices take the cheaper shared-sort path
        object.__setattr__(self, "active_delays",
                           tuple(d if np.any(d != 0) else None for d in self.delays))

    @property
    def n_layers(self) -> int:
        """Number of weight layers M."""
        return len(self.layer_sizes) - 1

    def with_weights(self, weights: Sequence[np.ndarray]) -> "Network":
        return replace(self, weights=tuple(weights))

    def has_delays(self) -> bool:
        return any(np.any(d != 0) for d in self.delays)


def _check_sizes(sizes: Sequence[int]) -> None:
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output layer")
    if any(n < 1 for n in sizes):
        raise ValueError(f"layer sizes must be positive, got {list(sizes)}")


def parse_architecture(text: str) -> tuple[int, ...]:
    """Parse ``"784-800-10"`` into layer sizes."""
    try:
        sizes = tuple(int(p) for p in text.split("-"))
    except ValueError:
        raise ValueError(f"bad architecture string {text!r}") from None
    _check_sizes(sizes)
    return sizes


@dataclass
class Hyperparameters:
    eta: float = 1500.0
    gamma: float = 100.0
    epsilon: float = 4.0
    t_ref: float = 21.0
    tau_in: float = 5.0
    sigma_t: float = 0.0
    penalty_exponent: float = 2.0
    t_max_sentinel: Optional[float] = None
    batch_size: int = 1
    epochs: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        if self.penalty_exponent not in (2.0, 1.5):
            raise ValueError("penalty_exponent must be 2 or 1.5")
        if self.eta < 0 or self.gamma < 0 or self.epsilon < 0:
            raise ValueError("eta, gamma and epsilon must be nonnegative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    @property
    def sentinel(self) -> float:
        return 10.0 * self.t_ref if self.t_max_sentinel is None else self.t_max_sentinel


def default_init_spec(layer_sizes: Sequence[int], tau_in: float = 5.0, scale: float = 4.0,
                      v_th: float = 1.0) -> list[tuple[float, float]]:
    """Per-layer (mean, std) so the mean initial slope reaches threshold inside the input window."""
    spec = []
    for n_in in layer_sizes[:-1]:
        mu = scale * v_th / (n_in * tau_in)
        spec.append((mu, mu))
    return spec


def init_network(layer_sizes: Sequence[int], neuron_model=NeuronModel.LINEAR,
                 init_spec: Optional[Sequence[tuple[float, float]]] = None, rng_seed: int = 0,
                 v_pos: float = 128.0, v_neg: float = -128.0, tau_in: float = 5.0) -> Network:
    sizes = tuple(int(n) for n in layer_sizes)
    _check_sizes(sizes)
    if init_spec is None:
        init_spec = default_init_spec(sizes, tau_in=tau_in)
    if len(init_spec) != len(sizes) - 1:
        raise ValueError("init_spec needs one (mean, std) pair per weight layer")
    rng = np.random.default_rng(rng_seed)
    weights, thresholds, delays = [], [], []
    for l, (mean, std) in enumerate(init_spec):
        shape = (sizes[l + 1], sizes[l])
        weights.append(mean + std * rng.standard_normal(shape))
        thresholds.append(np.ones(sizes[l + 1]))
        delays.append(np.zeros(shape))
    return Network(sizes, tuple(weights), tuple(thresholds), tuple(delays),
                   NeuronModel(neuron_model), float(v_pos), float(v_neg))


def save_network(network: Network, path, extra_meta: Optional[dict] = None) -> None:
    arrays = {}
    for l in range(network.n_layers):
        arrays[f"weights.{l + 1}"] = network.weights[l]
        arrays[f"thresholds.{l + 1}"] = network.thresholds[l]
        arrays[f"delays.{l + 1}"] = network.delays[l]
    meta = {
        "layers": "-".join(str(n) for n in network.layer_sizes),
        "model": network.neuron_model.value,
        "v_pos": float(network.v_pos).hex(),
        "v_neg": float(network.v_neg).hex(),
    }
    meta.update(extra_meta or {})
    write_container(path, "model", arrays, meta)


def load_network(path, return_meta: bool = False):
    meta, arrays = read_container(path, "model")
    try:
        sizes = parse_architecture(meta["layers"])
        model = NeuronModel(meta["model"])
        v_pos = float.fromhex(meta["v_pos"])
        v_neg = float.fromhex(meta["v_neg"])
    except (KeyError, ValueError) as exc:
        raise ContainerError("meta", f"missing or invalid field: {exc}") from None
    weights, thresholds, delays = [], [], []
    for l in range(len(sizes) - 1):
        shape = (sizes[l + 1], sizes[l])
        for name, expected, bucket in ((f"weights.{l + 1}", shape, weights),
                                       (f"thresholds.{l + 1}", shape[:1], thresholds),
                                       (f"delays.{l + 1}", shape, delays)):
            if name not in arrays:
                raise ContainerError(name, "missing section")
            if arrays[name].shape != expected:
                raise ContainerError(name, f"shape {arrays[name].shape} does not match declared {expected}")
            bucket.append(arrays[name])
    try:
        net = Network(sizes, tuple(weights), tuple(thresholds), tuple(delays), model, v_pos, v_neg)
    except ValueError as exc:
        raise ContainerError("validation", str(exc)) from None
    return (net, meta) if return_meta else net


def sentinelize(times, t_max_sentinel: float) -> np.ndarray:
    """Replace missing spikes (``None``, nan or inf) with the sentinel time."""
    out = np.array([np.nan if t is None else t for t in times], dtype=np.float64) \
        if not isinstance(times, np.ndarray) else np.array(times, dtype=np.float64)
    out[~np.isfinite(out)] = t_max_sentinel
    return out


@dataclass
class LayerTrace:
    """Forward record for one layer of neurons.

    ``order`` lists fired presynaptic indices by arrival time; it has one row shared by
    every neuron when there are no delays, otherwise one row per neuron. ``counts[i]`` is
    the number of leading entries of that row that arrived before neuron i fired (its
    causal set); zero for silent neurons.
    """

    times: np.ndarray
    counts: np.ndarray
    order: np.ndarray
    thresholds: np.ndarray
    delays: Optional[np.ndarray] = None

    @property
    def fired(self) -> np.ndarray:
        return np.isfinite(self.times)

    def row(self, i: int) -> np.ndarray:
        return self.order[0 if self.order.shape[0] == 1 else i]

    def causal_set(self, i: int) -> np.ndarray:
        return self.row(i)[: self.counts[i]]


@dataclass
class ForwardTrace:
    """Spike times for the input layer and every computed layer, plus the per-layer records."""

    input_times: np.ndarray
    layers: list[LayerTrace] = field(default_factory=list)
    neuron_model: NeuronModel = NeuronModel.LINEAR

    def times(self, layer: int) -> np.ndarray:
        """Spike times of layer ``layer`` (0 = input)."""
        return self.input_times if layer == 0 else self.layers[layer - 1].times

    @property
    def output_times(self) -> np.ndarray:
        return self.layers[-1].times

    def arrivals(self, layer: int) -> np.ndarray:
        """Arrival-time matrix at layer ``layer`` (>= 1), shape (N[l], N[l-1])."""
        rec = self.layers[layer - 1]
        t_prev = self.times(layer - 1)
        if rec.delays is None:
            return np.broadcast_to(t_prev, (len(rec.times), len(t_prev))).copy()
        return t_prev[None, :] + rec.delays

    def signature(self) -> tuple:
        """Hashable summary of every causal set and firing flag (for perturbation stability checks)."""
        sig = []
        for rec in self.layers:
            for i in range(len(rec.times)):
                sig.append(tuple(sorted(rec.causal_set(i).tolist())) if rec.counts[i] else None)
        return tuple(sig)

"""Device-variation models: clipped-Gaussian thresholds and Gaussian per-connection delays."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .container import ContainerError, read_container, write_container
from .network import Network


class VariationMode(str, enum.Enum):
    NONE = "none"
    SAMPLED = "sampled"  # distribution known: fresh draws while training, seeded draws at test
    KNOWN = "known"      # exact values known: one frozen draw used for training and test


class Phase(str, enum.Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class VariationSpec:
    sigma_vth: float = 0.0
    sigma_tau: float = 0.0
    mode: VariationMode = VariationMode.NONE
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", VariationMode(self.mode))
        if self.sigma_vth < 0 or self.sigma_tau < 0:
            raise ValueError("variation sigmas must be nonnegative")

    @property
    def active(self) -> bool:
        return self.mode is not VariationMode.NONE and (self.sigma_vth > 0 or self.sigma_tau > 0)


@dataclass(frozen=True)
class VariationRealization:
    """Per-neuron thresholds for every layer and, when delays vary, per-connection delays.

    ``delays`` is None when every delay is zero.
    """

    thresholds: tuple[np.ndarray, ...]
    delays: Optional[tuple[np.ndarray, ...]] = None


def zero_realization(network: Network) -> VariationRealization:
    return VariationRealization(tuple(t.copy() for t in network.thresholds), None)


def sample_realization(spec: VariationSpec, network: Network, rng) -> VariationRealization:
    """Thresholds ``max(N(V_th, sigma_vth), 0)`` around the nominal values and delays ``N(0, sigma_tau)``.

    The delay mean is zero: a constant per-layer offset only shifts every later spike and
    the reference time together.
    """
    rng = np.random.default_rng(rng)
    thresholds = []
    for nominal in network.thresholds:
        draw = nominal + spec.sigma_vth * rng.standard_normal(nominal.shape) if spec.sigma_vth > 0 else nominal.copy()
        thresholds.append(np.maximum(draw, 0.0))
    delays = None
    if spec.sigma_tau > 0:
        delays = tuple(spec.sigma_tau * rng.standard_normal(w.shape) for w in network.weights)
    return VariationRealization(tuple(thresholds), delays)


_PHASE_KEY = {Phase.TRAIN: 0, Phase.TEST: 1}
_FROZEN_KEY = 2


def apply_mode(spec: VariationSpec, network: Network, phase, sample_index: int = 0
               ) -> VariationRealization:
    """Realization for a training batch or a test repetition under ``spec.mode``.

    Draws are keyed on (seed, phase, index), so any batch can be regenerated without
    replaying earlier ones.
    """
    phase = Phase(phase)
    if not spec.active:
        return zero_realization(network)
    if spec.mode is VariationMode.KNOWN:
        return sample_realization(spec, network, np.random.default_rng([spec.rng_seed, _FROZEN_KEY]))
    return sample_realization(spec, network,
                              np.random.default_rng([spec.rng_seed, _PHASE_KEY[phase], sample_index]))


def save_realization(realization: VariationRealization, path) -> None:
    arrays = {f"thresholds.{l + 1}": t for l, t in enumerate(realization.thresholds)}
    if realization.delays is not None:
        arrays.update({f"delays.{l + 1}": d for l, d in enumerate(realization.delays)})
    write_container(path, "realization", arrays, {"layers": str(len(realization.thresholds))})


def load_realization(path) -> VariationRealization:
    meta, arrays = read_container(path, "realization")
    try:
        m = int(meta["layers"])
    except (KeyError, ValueError):
        raise ContainerError("meta", "missing layer count") from None
    try:
        thresholds = tuple(arrays[f"thresholds.{l + 1}"] for l in range(m))
    except KeyError as exc:
        raise ContainerError(str(exc.args[0]), "missing section") from None
    delays = None
    if "delays.1" in arrays:
        delays = tuple(arrays[f"delays.{l + 1}"] for l in range(m))
    return VariationRealization(thresholds, delays)

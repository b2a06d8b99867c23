"""Softmax-over-negative-time loss, temporal penalty and the SGD update."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Hyperparameters, Network


@dataclass
class LossBreakdown:
    loss: float
    penalty: float
    cost: float
    softmax: np.ndarray
    kappa: np.ndarray


def one_hot(label: int, n: int) -> np.ndarray:
    kappa = np.zeros(n)
    kappa[label] = 1.0
    return kappa


def softmax_neg_time(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    z = np.exp(-(t - t.min()))
    return z / z.sum()


def _prepare(t_out, kappa, hyper):
    t = np.array(t_out, dtype=np.float64)
    t[~np.isfinite(t)] = hyper.sentinel
    kappa = one_hot(kappa, t.size) if np.isscalar(kappa) else np.asarray(kappa, dtype=np.float64)
    return t, kappa


def cost(t_out, kappa, hyper: Hyperparameters) -> LossBreakdown:
    """Cost = cross-entropy of softmax(-t) + gamma/2 * sum |t - t_ref|^p.

    ``kappa`` is a one-hot vector or a label index; silent outputs use the sentinel time.
    """
    t, kappa = _prepare(t_out, kappa, hyper)
    shifted = t - t.min()
    log_s = -shifted - np.log(np.exp(-shifted).sum())
    loss = float(-(kappa * log_s).sum())
    with np.errstate(over="ignore"):
        penalty = float((np.abs(t - hyper.t_ref) ** hyper.penalty_exponent).sum())
    return LossBreakdown(loss, penalty, loss + 0.5 * hyper.gamma * penalty, np.exp(log_s), kappa)


def output_error(t_out, kappa, hyper: Hyperparameters) -> np.ndarray:
    """dC/dt for every output neuron.

    The cross-entropy part is kappa - S: an earlier spike raises its own softmax share, so
    the cost falls as the labelled neuron's time decreases and the derivative is positive.
    """
    t, kappa = _prepare(t_out, kappa, hyper)
    x = t - hyper.t_ref
    p = hyper.penalty_exponent
    if p == 2.0:
        pen = hyper.gamma * x
    else:
        pen = 0.5 * hyper.gamma * p * np.sign(x) * np.abs(x) ** (p - 1.0)
    return kappa - softmax_neg_time(t) + pen


def sgd_step(network: Network, grads, eta: float) -> Network:
    """Return a network with ``w - eta * g``; thresholds and delays are untouched."""
    if len(grads) != network.n_layers:
        raise ValueError("gradient list does not match the network depth")
    new = []
    for w, g in zip(network.weights, grads):
        if w.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match weights {w.shape}")
        new.append(w - eta * g)
    return network.with_weights(new)

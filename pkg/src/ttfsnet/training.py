"""Training loop, evaluation under device variation, sweeps and raster dumps."""
from __future__ import annotations

import csv
import dataclasses
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import cached_shrink, default_data_dir, encode, jitter, load_mnist
from .linear import classify, run_backward, run_forward
from .loss import cost, output_error, sgd_step
from .network import (
    Hyperparameters,
    Network,
    NeuronModel,
    default_init_spec,
    init_network,
    load_network,
    parse_architecture,
    save_network,
)
from .variation import VariationMode, VariationSpec, apply_mode

METRIC_FIELDS = ("epoch", "train_loss", "train_acc", "test_acc", "test_acc_std",
                 "nonfiring_hidden_frac", "mean_output_time", "wall_time")


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class RunConfig:
    """Everything that defines a run. Field names double as CLI flags and config-file keys."""

    architecture: str = "169-300-10"
    neuron_model: str = "linear"
    eta: float = 3e-4
    gamma: float = 8.0
    epsilon: float = 10.0
    t_ref: float = 21.0
    tau_in: float = 5.0
    sigma_t: float = 0.0
    penalty_exponent: float = 1.5
    t_max_sentinel: Optional[float] = None
    batch_size: int = 10
    epochs: int = 100
    seed: int = 0
    init_scale: float = 1.0
    v_pulse_pos: float = 128.0
    v_pulse_neg: float = -128.0
    train_sigma_vth: float = 0.0
    train_sigma_tau: float = 0.0
    train_variation: str = "none"
    test_sigma_vth: float = 0.0
    test_sigma_tau: float = 0.0
    test_variation: str = "none"
    variation_seed: Optional[int] = None
    variation_cadence: str = "batch"
    repetitions: int = 10
    data_dir: Optional[str] = None
    shrink: bool = True
    train_subset: Optional[int] = None
    test_subset: Optional[int] = None
    output_dir: str = "runs/default"
    eval_every: int = 1
    patience: int = 20
    jitter_clamp: bool = True

    def __post_init__(self):
        try:
            sizes = parse_architecture(self.architecture)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if len(sizes) < 2:
            raise ConfigError("architecture needs at least an input and an output layer")
        try:
            NeuronModel(self.neuron_model)
            VariationMode(self.train_variation)
            VariationMode(self.test_variation)
            self.hyper
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.variation_cadence not in ("batch", "sample"):
            raise ConfigError("variation_cadence must be 'batch' or 'sample'")
        if self.eval_every < 1 or self.repetitions < 1 or self.patience < 1:
            raise ConfigError("eval_every, repetitions and patience must be positive")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return parse_architecture(self.architecture)

    @property
    def hyper(self) -> Hyperparameters:
        return Hyperparameters(self.eta, self.gamma, self.epsilon, self.t_ref, self.tau_in,
                               self.sigma_t, self.penalty_exponent, self.t_max_sentinel,
                               self.batch_size, self.epochs, self.seed)

    def _variation_seed(self) -> int:
        return self.seed if self.variation_seed is None else self.variation_seed

    @property
    def train_spec(self) -> VariationSpec:
        return VariationSpec(self.train_sigma_vth, self.train_sigma_tau, self.train_variation,
                             self._variation_seed())

    @property
    def test_spec(self) -> VariationSpec:
        return VariationSpec(self.test_sigma_vth, self.test_sigma_tau, self.test_variation,
                             self._variation_seed())

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # plain-text key-value form
    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name} = {'' if value is None else value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        kwargs = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            name = key.replace("-", "_")
            if name not in types:
                raise ConfigError(f"unknown config key '{key}'")
            kwargs[name] = coerce(types[name], raw)
        return cls(**kwargs)


def coerce(type_name, raw):
    """Convert a config-file or CLI string to the field's declared type."""
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    type_name = str(type_name)
    optional = type_name.startswith("Optional")
    if optional and text in ("", "none", "None"):
        return None
    try:
        if "bool" in type_name:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if "float" in type_name:
            return float(text)
        if "int" in type_name:
            return int(text)
    except ValueError:
        raise ConfigError(f"cannot read '{raw}' as {type_name}") from None
    return text


def read_config_file(path) -> dict:
    values = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected 'key = value'")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


PRESETS = {
    # t_ref, gamma, epsilon and the penalty exponent are the reference values;
    # eta, batch size and init scale are tuned for millisecond units.
    "784-800-10": dict(architecture="784-800-10", neuron_model="linear", shrink=False, t_ref=21.0,
                       gamma=100.0, epsilon=4.0, penalty_exponent=2.0, eta=1e-5,
                       batch_size=10, init_scale=1.0),
    "784-400-400-10": dict(architecture="784-400-400-10", neuron_model="linear", shrink=False,
                           t_ref=60.0, gamma=100.0, epsilon=1.0, penalty_exponent=2.0,
                           eta=1e-5, batch_size=10, init_scale=1.0),
    "169-300-10": dict(architecture="169-300-10", neuron_model="circuit", shrink=True, t_ref=21.0,
                       gamma=8.0, epsilon=10.0, penalty_exponent=1.5, eta=3e-4,
                       batch_size=10, init_scale=1.0),
}


# ---------------------------------------------------------------- data

@dataclass
class EncodedSet:
    times: np.ndarray   # (n, d) spike times, inf = no spike
    labels: np.ndarray  # (n,)

    def __len__(self):
        return len(self.labels)


def encode_set(images, tau_in: float) -> EncodedSet:
    return EncodedSet(encode(images.flat(), tau_in), images.labels)


def load_data(config: RunConfig) -> tuple[EncodedSet, EncodedSet]:
    data_dir = config.data_dir or default_data_dir()
    if data_dir is None:
        raise ConfigError("no data directory: pass --data-dir or set TTFSNET_DATA_DIR")
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise ConfigError(f"data directory {data_dir} does not exist")
    sets = []
    for split, n in (("train", config.train_subset), ("test", config.test_subset)):
        images = load_mnist(data_dir, split)
        full = len(images)
        images = images.subset(n)
        if config.shrink:
            cache = Path(config.output_dir) / f".shrink-{split}-{len(images)}of{full}.bin"
            cache.parent.mkdir(parents=True, exist_ok=True)
            images = cached_shrink(images, cache)
        sets.append(encode_set(images, config.tau_in))
    n_in = sets[0].times.shape[1]
    if n_in != config.layer_sizes[0]:
        raise ConfigError(f"architecture expects {config.layer_sizes[0]} inputs, data has {n_in}"
                          + (" (shrink is on)" if config.shrink else ""))
    return sets[0], sets[1]


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalResult:
    mean: float
    std: float
    accuracies: list = field(default_factory=list)


def accuracy(network: Network, data: EncodedSet, realization=None, sentinel: float = np.inf) -> float:
    if len(data) == 0:
        return 0.0
    correct = 0
    for x, y in zip(data.times, data.labels):
        correct += classify(run_forward(network, x, realization), sentinel) == y
    return correct / len(data)


def evaluate(network: Network, data: EncodedSet, spec: Optional[VariationSpec] = None,
             repetitions: int = 10, sentinel: float = np.inf) -> EvalResult:
    """Test accuracy averaged over ``repetitions`` seeded realizations of ``spec``.

    Without active variation, or with a frozen known realization, there is only one
    realization to test, so the spread is zero.
    """
    spec = spec or VariationSpec()
    if not spec.active:
        acc = accuracy(network, data, None, sentinel)
        return EvalResult(acc, 0.0, [acc])
    if spec.mode is VariationMode.KNOWN:
        acc = accuracy(network, data, apply_mode(spec, network, "test"), sentinel)
        return EvalResult(acc, 0.0, [acc])
    accs = [accuracy(network, data, apply_mode(spec, network, "test", r), sentinel)
            for r in range(repetitions)]
    return EvalResult(float(np.mean(accs)), float(np.std(accs)), accs)


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    network: Network
    best_network: Network
    best_accuracy: float
    epochs_run: int
    stopped_early: bool
    metrics_path: Path
    rows: list


def _checkpoint_meta(epoch, best_acc, best_epoch, stagnant, stopped):
    return {"epoch": epoch, "best_acc": float(best_acc).hex(), "best_epoch": best_epoch,
            "stagnant": stagnant, "stopped": int(stopped)}


def train_epoch(network: Network, data: EncodedSet, config: RunConfig, epoch: int,
                batch_offset: int = 0):
    """One shuffled pass of mini-batch SGD. Returns the updated network and epoch statistics."""
    hyper = config.hyper
    spec = config.train_spec
    rng = np.random.default_rng([config.seed, epoch])
    perm = rng.permutation(len(data))
    bs = config.batch_size
    n_hidden = sum(network.layer_sizes[1:-1])
    total_cost = 0.0
    correct = 0
    silent_hidden = 0
    out_sum = 0.0
    out_count = 0
    n_batches = math.ceil(len(perm) / bs)
    for b in range(n_batches):
        batch = perm[b * bs:(b + 1) * bs]
        batch_index = batch_offset + b
        grads = [np.zeros_like(w) for w in network.weights]
        batch_cost = 0.0
        realization = None
        if spec.active and config.variation_cadence == "batch":
            realization = apply_mode(spec, network, "train", batch_index)
        for k, s in enumerate(batch):
            if spec.active and config.variation_cadence == "sample":
                realization = apply_mode(spec, network, "train", batch_index * bs + k)
            x = jitter(data.times[s], hyper.sigma_t, rng, config.jitter_clamp)
            trace = run_forward(network, x, realization)
            t_out = trace.output_times
            label = int(data.labels[s])
            batch_cost += cost(t_out, label, hyper).cost
            correct += classify(t_out, hyper.sentinel) == label
            for l in range(1, network.n_layers):
                silent_hidden += int(np.sum(~np.isfinite(trace.times(l))))
            fired = np.isfinite(t_out)
            out_sum += float(t_out[fired].sum())
            out_count += int(fired.sum())
            run_backward(trace, network, output_error(t_out, label, hyper), hyper.epsilon,
                         grads, 1.0 / len(batch))
        max_grad = max(float(np.max(np.abs(g))) for g in grads)
        if not math.isfinite(batch_cost) or not math.isfinite(max_grad):
            raise TrainingDiverged(f"epoch {epoch} batch {b} (global batch {batch_index}): "
                                   f"non-finite cost {batch_cost!r}, max |gradient| = {max_grad!r}")
        total_cost += batch_cost
        network = sgd_step(network, grads, hyper.eta)
    n = len(perm)
    stats = {
        "train_loss": total_cost / n,
        "train_acc": correct / n,
        "nonfiring_hidden_frac": silent_hidden / (n * n_hidden) if n_hidden else 0.0,
        "mean_output_time": out_sum / out_count if out_count else float("nan"),
    }
    return network, stats, n_batches


def _format_row(row: dict) -> list:
    out = []
    for key in METRIC_FIELDS:
        v = row[key]
        out.append(repr(float(v)) if isinstance(v, float) else str(v))
    return out


def read_metrics(path) -> list[dict]:
    with open(path) as fh:
        return [dict(r) for r in csv.DictReader(fh)]


def train(config: RunConfig, resume: bool = False, data=None, initial: Optional[Network] = None,
          log=None) -> TrainResult:
    """Run (or resume) mini-batch SGD and write metrics plus final and best checkpoints.

    ``data`` may pass preloaded (train, test) sets. On resume the final checkpoint in
    ``output_dir`` supplies the weights and the early-stopping state; per-epoch random
    streams are keyed on (seed, epoch), so a resumed run replays exactly what a straight
    run would have done.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_set, test_set = data if data is not None else load_data(config)
    hyper = config.hyper
    metrics_path = out / "metrics.csv"
    final_path, best_path = out / "final.model", out / "best.model"
    start_epoch, best_acc, best_epoch, stagnant, stopped = 0, -1.0, 0, 0, False
    rows = []
    if resume and final_path.exists():
        network, meta = load_network(final_path, return_meta=True)
        start_epoch = int(meta["epoch"])
        best_acc = float.fromhex(meta["best_acc"])
        best_epoch = int(meta["best_epoch"])
        stagnant = int(meta["stagnant"])
        stopped = bool(int(meta["stopped"]))
        rows = read_metrics(metrics_path) if metrics_path.exists() else []
        rows = [r for r in rows if int(r["epoch"]) <= start_epoch]
        with open(metrics_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(METRIC_FIELDS)
            w.writerows([[r[k] for k in METRIC_FIELDS] for r in rows])
    else:
        sizes = config.layer_sizes
        network = initial if initial is not None else init_network(
            sizes, config.neuron_model, default_init_spec(sizes, config.tau_in, config.init_scale),
            config.seed, config.v_pulse_pos, config.v_pulse_neg, config.tau_in)
        with open(metrics_path, "w", newline="") as fh:
            csv.writer(fh).writerow(METRIC_FIELDS)
        (out / "config.txt").write_text(config.to_text())
    best_network = load_network(best_path) if resume and best_path.exists() else network
    n_batches = math.ceil(len(train_set) / config.batch_size)
    t0 = time.perf_counter()
    epoch = start_epoch
    while epoch < config.epochs and not stopped:
        network, stats, _ = train_epoch(network, train_set, config, epoch, epoch * n_batches)
        epoch += 1
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            result = evaluate(network, test_set, config.test_spec, config.repetitions, hyper.sentinel)
            row = {"epoch": epoch, **stats, "test_acc": result.mean, "test_acc_std": result.std,
                   "wall_time": time.perf_counter() - t0}
            rows.append({k: v for k, v in zip(METRIC_FIELDS, _format_row(row))})
            with open(metrics_path, "a", newline="") as fh:
                csv.writer(fh).writerow(_format_row(row))
            if log:
                log(f"epoch {epoch}: loss {stats['train_loss']:.4f} train {stats['train_acc']:.4f} "
                    f"test {result.mean:.4f}")
            if result.mean > best_acc:
                best_acc, best_epoch, stagnant = result.mean, epoch, 0
                best_network = network
                save_network(network, best_path, {"epoch": epoch, "test_acc": float(result.mean).hex()})
            else:
                stagnant += 1
                stopped = stagnant >= config.patience
        save_network(network, final_path, _checkpoint_meta(epoch, best_acc, best_epoch, stagnant, stopped))
    return TrainResult(network, best_network, best_acc, epoch, stopped, metrics_path, rows)


# ---------------------------------------------------------------- sweeps

SWEEP_AXES = ("vpulse", "sigma_vth", "sigma_tau")


@dataclass
class SweepRow:
    value: float
    mean: float
    std: float
    trials: list


def sweep(config: RunConfig, axis: str, values: Sequence[float], phase: str = "train",
          trials: int = 1, network: Optional[Network] = None, data=None, log=None) -> list[SweepRow]:
    """Accuracy along one axis; writes ``sweep.csv`` and a key-value ``summary.txt``.

    ``phase='train'`` trains one network per value and trial (seed offset by the trial
    index) and reports the spread over trials. ``phase='test'`` keeps one trained network
    and varies only the test-time variation, reporting the spread over realizations.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis '{axis}', expected one of {SWEEP_AXES}")
    if phase not in ("train", "test"):
        raise ConfigError("phase must be 'train' or 'test'")
    if phase == "test" and axis == "vpulse":
        raise ConfigError("V_pulse is a training-time choice; sweep it with phase 'train'")
    data = data if data is not None else load_data(config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    if phase == "test" and network is None:
        network = train(config.replace(output_dir=str(out / "base")), data=data, log=log).best_network
    for value in values:
        value = float(value)
        if phase == "test":
            mode = config.test_variation if config.test_variation != "none" else "sampled"
            key = "test_sigma_vth" if axis == "sigma_vth" else "test_sigma_tau"
            cfg = config.replace(**{key: value, "test_variation": mode})
            res = evaluate(network, data[1], cfg.test_spec, cfg.repetitions, cfg.hyper.sentinel)
            rows.append(SweepRow(value, res.mean, res.std, res.accuracies))
        else:
            accs = []
            for k in range(trials):
                if axis == "vpulse":
                    changes = {"neuron_model": "circuit", "v_pulse_pos": value, "v_pulse_neg": -value}
                else:
                    mode = config.train_variation if config.train_variation != "none" else "sampled"
                    changes = {f"train_{axis}": value, "train_variation": mode}
                cfg = config.replace(seed=config.seed + k,
                                     output_dir=str(out / f"{axis}-{value:g}-trial{k}"), **changes)
                result = train(cfg, data=data, log=log)
                res = evaluate(result.network, data[1], cfg.test_spec, cfg.repetitions, cfg.hyper.sentinel)
                accs.append(res.mean)
            rows.append(SweepRow(value, float(np.mean(accs)), float(np.std(accs)), accs))
        if log:
            log(f"{axis} = {value:g}: {rows[-1].mean:.4f} +- {rows[-1].std:.4f}")
    write_sweep(out, axis, phase, rows)
    return rows


def write_sweep(out: Path, axis: str, phase: str, rows: Sequence[SweepRow]) -> None:
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["axis", "phase", "value", "acc_mean", "acc_std", "n"])
        for r in rows:
            w.writerow([axis, phase, repr(float(r.value)), repr(float(r.mean)), repr(float(r.std)), len(r.trials)])
    with open(out / "summary.txt", "w") as fh:
        fh.write(f"axis = {axis}\nphase = {phase}\n")
        for r in rows:
            fh.write(f"acc_mean[{r.value:g}] = {float(r.mean)!r}\n")
            fh.write(f"acc_std[{r.value:g}] = {float(r.std)!r}\n")
        best = max(rows, key=lambda r: r.mean)
        fh.write(f"best_value = {float(best.value)!r}\nbest_acc_mean = {float(best.mean)!r}\n")


# ---------------------------------------------------------------- rasters

def dump_raster(network: Network, input_times, path, label: Optional[int] = None,
                realization=None, trajectories: bool = True, max_traces: int = 16,
                dt: float = 0.05) -> None:
    """Write every spike (layer, neuron, time) and, optionally, sampled membrane trajectories.

    Trajectories come from direct ODE integration, for up to ``max_traces`` neurons per
    layer (firing neurons first).
    """
    from .oracle import layer_trajectories

    trace = run_forward(network, input_times, realization)
    with open(path, "w") as fh:
        fh.write(f"# raster model={network.neuron_model.value} layers={'-'.join(map(str, network.layer_sizes))}\n")
        if label is not None:
            fh.write(f"# label={label} predicted={classify(trace)}\n")
        for l in range(network.n_layers + 1):
            t = trace.times(l)
            for i in np.flatnonzero(np.isfinite(t)):
                fh.write(f"spike\t{l}\t{i}\t{float(t[i])!r}\n")
        if not trajectories:
            return
        t_end = max([float(np.max(t[np.isfinite(t)])) for t in
                     (trace.times(l) for l in range(network.n_layers + 1)) if np.isfinite(t).any()],
                    default=0.0) + 5.0
        grid = np.arange(0.0, t_end + dt / 2, dt)
        for l in range(1, network.n_layers + 1):
            rec = trace.layers[l - 1]
            ranked = np.argsort(np.where(np.isfinite(rec.times), rec.times, np.inf), kind="stable")
            chosen = ranked[:max_traces]
            arrivals = trace.arrivals(l)[chosen]
            v = layer_trajectories(network.neuron_model, arrivals, network.weights[l - 1][chosen],
                                   rec.times[chosen], grid, network.v_pos, network.v_neg)
            for row, i in enumerate(chosen):
                keep = np.isfinite(v[row])
                for tt, vv in zip(grid[keep], v[row][keep]):
                    fh.write(f"membrane\t{l}\t{i}\t{float(tt)!r}\t{float(vv)!r}\n")


def read_raster(path):
    """Parse a raster file into ``(spikes, membranes)``.

    ``spikes`` maps layer to a list of (neuron, time); ``membranes`` maps (layer, neuron)
    to (times, potentials) arrays.
    """
    spikes: dict = {}
    membranes: dict = {}
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if parts[0] == "spike":
                spikes.setdefault(int(parts[1]), []).append((int(parts[2]), float(parts[3])))
            elif parts[0] == "membrane":
                membranes.setdefault((int(parts[1]), int(parts[2])), []).append(
                    (float(parts[3]), float(parts[4])))
    membranes = {k: (np.array([a for a, _ in v]), np.array([b for _, b in v]))
                 for k, v in membranes.items()}
    return spikes, membranes

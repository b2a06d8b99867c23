"""Command-line interface: ``ttfsnet {train,eval,gradcheck,sweep,dump-raster,export-conductance}``."""
from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import backend
from .circuit import write_conductances
from .container import ContainerError
from .dataset import IdxError
from .network import init_network, load_network, default_init_spec
from .oracle import format_gradcheck, gradcheck
from .training import (
    PRESETS,
    SWEEP_AXES,
    ConfigError,
    RunConfig,
    TrainingDiverged,
    dump_raster,
    evaluate,
    load_data,
    read_config_file,
    sweep,
    train,
)
from .variation import load_realization

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_MODEL = 4
EXIT_DIVERGED = 5
EXIT_CHECK = 6


class CheckFailed(RuntimeError):
    pass


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("run configuration (also accepted as config-file keys)")
    group.add_argument("--config", help="plain-text 'key = value' file")
    group.add_argument("--preset", choices=sorted(PRESETS), help="reference hyperparameters for a named architecture")
    for f in dataclasses.fields(RunConfig):
        group.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar="V",
                           help=f"default: {f.default}")


def build_config(args) -> RunConfig:
    """Defaults, then preset, then config file, then explicit flags."""
    values = {}
    if getattr(args, "preset", None):
        values.update(PRESETS[args.preset])
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig.from_mapping(values)


def _log(msg: str) -> None:
    print(msg, flush=True)


def cmd_train(args) -> int:
    config = build_config(args)
    result = train(config, resume=args.resume, log=_log)
    print(f"best test accuracy {result.best_accuracy:.4f} after {result.epochs_run} epochs"
          + (" (early stop)" if result.stopped_early else ""))
    print(f"metrics: {result.metrics_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = build_config(args)
    network = load_network(args.model)
    _, test = load_data(config)
    if args.realization:
        from .training import accuracy
        acc = accuracy(network, test, load_realization(args.realization), config.hyper.sentinel)
        print(f"accuracy {acc:.4f} (stored realization)")
        return EXIT_OK
    res = evaluate(network, test, config.test_spec, config.repetitions, config.hyper.sentinel)
    print(f"accuracy {res.mean:.4f} +- {res.std:.4f} over {len(res.accuracies)} realization(s)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = build_config(args)
    rng = np.random.default_rng(config.seed)
    if args.model:
        network = load_network(args.model)
    else:
        sizes = config.layer_sizes
        network = init_network(sizes, config.neuron_model, default_init_spec(sizes, config.tau_in, config.init_scale),
                               config.seed, config.v_pulse_pos, config.v_pulse_neg, config.tau_in)
    n_in = network.layer_sizes[0]
    if args.sample is not None:
        _, test = load_data(config)
        x, label = test.times[args.sample], int(test.labels[args.sample])
    else:
        x = rng.uniform(0.0, config.tau_in, n_in)
        label = int(rng.integers(network.layer_sizes[-1]))
    results = gradcheck(network, x, label, config.hyper, args.probes, rng)
    sys.stdout.write(format_gradcheck(results))
    stable = [r for r in results if r.stable]
    failed = [r for r in stable if not r.passes()]
    print(f"{len(stable)} stable probes, {len(failed)} failed")
    if failed:
        raise CheckFailed(f"{len(failed)} probe(s) exceed tolerance")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = build_config(args)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse sweep values '{args.values}'") from None
    network = load_network(args.model) if args.model else None
    rows = sweep(config, args.axis, values, args.phase, args.trials, network, log=_log)
    print("value\tmean\tstd")
    for r in rows:
        print(f"{r.value:g}\t{r.mean:.4f}\t{r.std:.4f}")
    return EXIT_OK


def cmd_dump_raster(args) -> int:
    config = build_config(args)
    network = load_network(args.model)
    _, test = load_data(config)
    if not 0 <= args.sample < len(test):
        raise ConfigError(f"sample index {args.sample} outside 0..{len(test) - 1}")
    dump_raster(network, test.times[args.sample], args.out, int(test.labels[args.sample]),
                trajectories=not args.no_trajectories, max_traces=args.max_traces)
    print(f"raster written to {args.out}")
    return EXIT_OK


def cmd_export_conductance(args) -> int:
    network = load_network(args.model)
    write_conductances(args.out, network, args.v_pulse_pos, args.v_pulse_neg)
    print(f"conductances written to {args.out}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttfsnet", description=__doc__)
    parser.add_argument("--backend-info", action="store_true", help="print the active kernel backend and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("train", help="train a network")
    _add_config_flags(p)
    p.add_argument("--resume", action="store_true", help="continue from output_dir/final.model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="test accuracy of a saved network")
    _add_config_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--realization", help="evaluate under a stored variation realization")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    _add_config_flags(p)
    p.add_argument("--model", help="saved network (default: fresh init from the configuration)")
    p.add_argument("--probes", type=int, default=20)
    p.add_argument("--sample", type=int, help="test-set index to use (default: random input)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="accuracy along V_pulse or a variation axis")
    _add_config_flags(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated list")
    p.add_argument("--phase", choices=("train", "test"), default="train")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--model", help="trained network for test-phase sweeps")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dump-raster", help="spike raster and membrane traces for one test sample")
    _add_config_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--max-traces", type=int, default=16)
    p.add_argument("--no-trajectories", action="store_true")
    p.set_defaults(func=cmd_dump_raster)

    p = sub.add_parser("export-conductance", help="write the (sigma+, sigma-) table of a network")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--v-pulse-pos", type=float)
    p.add_argument("--v-pulse-neg", type=float)
    p.set_defaults(func=cmd_export_conductance)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    if args.backend_info:
        print(backend.NAME)
        return EXIT_OK
    if not getattr(args, "func", None):
        parser.print_help()
        return EXIT_CONFIG
    try:
        return args.func(args)
    except Exception as exc:
        for kinds, category, code in _ERROR_CATEGORIES:
            if isinstance(exc, kinds):
                print(f"ttfsnet: error [{category}]: {exc}", file=sys.stderr)
                return code
        raise


_ERROR_CATEGORIES = (
    (ConfigError, "config", EXIT_CONFIG),
    ((IdxError, FileNotFoundError), "data", EXIT_DATA),
    (ContainerError, "model-file", EXIT_MODEL),
    (TrainingDiverged, "diverged", EXIT_DIVERGED),
    (CheckFailed, "check", EXIT_CHECK),
    (ValueError, "config", EXIT_CONFIG),
)


if __name__ == "__main__":
    sys.exit(main())

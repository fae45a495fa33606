"""Command-line experiment runner.

Every command that produces results writes into ``--out``:

* ``metrics.jsonl``: ``{run_id, round, participant, metric, value}`` records
* ``timings.jsonl``: wall-clock seconds per phase (the only non-reproducible file)
* ``targets.cptt``: merged targets, rows in ascending sample id (run, continuous)
* ``manifest.json``: command, full flat config and a sha256 per artifact
"""

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .config import DEFAULT_SHARED_FRACTIONS, STRATEGIES, ExperimentConfig
from .core import MERGED_SET_ID, TargetSet
from .exceptions import CoOptError, ConfigError, FormatError, ProtocolError
from .experiments import (DEFAULT_CORRELATION_BASE, DEFAULT_LEVELS, ablate_alignment, ablate_shared_size,
                          continuous, correlate_uniformity, run_experiment)
from .formats import inspect_file, write_targets

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_PROTOCOL = 4
EXIT_FORMAT = 5
EXIT_FAILURE = 6


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(args):
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key] = _parse_value(value)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    config = config.with_overrides(**overrides) if overrides else config
    config.validate()
    return config


class _Output:
    def __init__(self, out_dir, command, config):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.config = config
        self.files = []

    def jsonl(self, name, rows):
        path = self.dir / name
        with path.open("w") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        self.files.append(name)

    def targets(self, optimized):
        write_targets(self.dir / "targets.cptt", TargetSet(MERGED_SET_ID, optimized.Y, aligned=True))
        self.files.append("targets.cptt")

    def finish(self):
        artifacts = {name: hashlib.sha256((self.dir / name).read_bytes()).hexdigest() for name in self.files}
        manifest = {"command": self.command, "version": __version__, "config": self.config.to_flat(),
                    "artifacts": artifacts}
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _emit(obj):
    print(json.dumps(obj, sort_keys=True))


def _round_outputs(out, history):
    run_id = out.config.run_id
    out.jsonl("metrics.jsonl", [row for m in history for row in m.rows(run_id, timings=False)])
    out.jsonl("timings.jsonl", [row for m in history for row in m.rows(run_id) if row["metric"].startswith("seconds.")])


def cmd_run(args, config):
    optimized, metrics = run_experiment(config)
    out = _Output(args.out, "run", config)
    out.targets(optimized)
    _round_outputs(out, [metrics])
    out.finish()
    _emit({"best_prior_id": metrics.best_prior_id, "dataset_digest": metrics.dataset_digest,
           "probe_accuracy": metrics.probe_accuracy})
    return EXIT_OK


def cmd_continuous(args, config):
    history = continuous(config)
    out = _Output(args.out, "continuous", config)
    out.targets(history[-1].optimized)
    _round_outputs(out, history)
    out.finish()
    for m in history:
        _emit({"round": m.round, "best_prior_id": m.best_prior_id, "probe_accuracy": m.probe_accuracy,
               "retained_uniform": {str(k): v for k, v in sorted(m.retained_uniform.items())}})
    return EXIT_OK


def _sweep_rows(config, key, rows):
    return [{"run_id": config.run_id, "round": 1, "participant": None, "metric": "probe_accuracy",
             key: r[key], "value": r["probe_accuracy"]} for r in rows]


def cmd_ablate_shared_size(args, config):
    fractions = args.fractions if args.fractions else list(DEFAULT_SHARED_FRACTIONS)
    rows = ablate_shared_size(config, fractions)
    out = _Output(args.out, "ablate-shared-size", config)
    out.jsonl("metrics.jsonl", _sweep_rows(config, "fraction", rows))
    out.finish()
    for r in rows:
        _emit(r)
    return EXIT_OK


def cmd_ablate_alignment(args, config):
    rows = ablate_alignment(config, tuple(args.strategies))
    out = _Output(args.out, "ablate-alignment", config)
    out.jsonl("metrics.jsonl", _sweep_rows(config, "strategy", rows))
    out.finish()
    for r in rows:
        _emit(r)
    return EXIT_OK


def cmd_correlate_uniformity(args, config):
    try:
        base = json.loads(args.prior) if args.prior else dict(DEFAULT_CORRELATION_BASE)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--prior is not valid JSON: {exc}") from exc
    try:
        rows, rho, degenerate = correlate_uniformity(config, args.levels or DEFAULT_LEVELS, base)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, CoOptError):
            raise
        raise ConfigError(f"invalid --prior: {exc}") from exc
    out = _Output(args.out, "correlate-uniformity", config)
    records = []
    for i, r in enumerate(rows):
        for metric in ("quality", "uniform_value", "probe_accuracy"):
            records.append({"run_id": config.run_id, "round": 1, "participant": i, "metric": metric,
                            "value": r[metric]})
    records.append({"run_id": config.run_id, "round": 1, "participant": None, "metric": "spearman_rho",
                    "value": rho, "degenerate": degenerate})
    out.jsonl("metrics.jsonl", records)
    out.finish()
    for r in rows:
        _emit(r)
    _emit({"spearman_rho": rho, "degenerate": degenerate})
    if degenerate:
        print("warning: ranking is degenerate (constant column); rho is undefined", file=sys.stderr)
    return EXIT_OK


def cmd_inspect(args):
    for path in args.paths:
        try:
            header = inspect_file(path)
        except OSError as exc:
            raise FormatError(f"cannot read {path}: {exc}") from exc
        _emit({"path": str(path), **header})
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="coopt", description="Collaborative target optimization experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", help="JSON config (flat dotted keys or nested sections)")
        p.add_argument("--out", metavar="DIR", default="out", help="output directory (default: ./out)")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--threads", type=int, help="participant worker threads")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key; VALUE is parsed as JSON when possible")
        return p

    experiment("run", "one optimization round")
    experiment("continuous", "multi-round optimization with evolving priors")
    p = experiment("ablate-shared-size", "probe accuracy across shared-set fractions")
    p.add_argument("--fractions", type=float, nargs="+", metavar="F")
    p = experiment("ablate-alignment", "probe accuracy per alignment reference strategy")
    p.add_argument("--strategies", nargs="+", choices=STRATEGIES, default=list(STRATEGIES))
    p = experiment("correlate-uniformity", "uniform value vs probe accuracy over graded priors")
    p.add_argument("--levels", type=float, nargs="+", metavar="Q")
    p.add_argument("--prior", metavar="JSON", help="base prior spec for the graded roster")
    p = sub.add_parser("inspect", help="print CPTD/CPTT headers")
    p.add_argument("paths", nargs="+")
    return parser


_COMMANDS = {
    "run": cmd_run,
    "continuous": cmd_continuous,
    "ablate-shared-size": cmd_ablate_shared_size,
    "ablate-alignment": cmd_ablate_alignment,
    "correlate-uniformity": cmd_correlate_uniformity,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "inspect":
            return cmd_inspect(args)
        config = load_config(args)
        return _COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except CoOptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

"""Experiment drivers shared by the CLI and the acceptance suite."""

import math
from dataclasses import replace

from .core import Dataset
from .downstream import linear_probe, make_synthetic_benchmark, spearman, train_on_optimized
from .exceptions import ConfigError, DegenerateRankingError
from .formats import read_shard
from .priors import PriorModelSpec, grade_roster
from .protocol import run_continuous, run_round

DEFAULT_LEVELS = tuple(round(0.1 * i, 1) for i in range(1, 11))
DEFAULT_CORRELATION_BASE = {"kind": "weak-mlp", "out_dim": 32}


def load_dataset(config):
    """Return ``(dataset, evalset)``; the eval set is None for unlabeled CPTD input."""
    d = config.dataset
    if d.kind == "cptd":
        try:
            shard = read_shard(d.path)
        except OSError as exc:
            raise ConfigError(f"cannot read dataset {d.path}: {exc}") from exc
        return Dataset(shard.X, shard.sample_ids), None
    return make_synthetic_benchmark(d.classes, d.n_samples, d.dim, seed=config.derived_seed("dataset"),
                                    margin=d.margin, n_eval=d.n_eval)


def make_evaluator(config, evalset):
    """Probe accuracy of a downstream model trained on an optimized dataset."""
    if evalset is None:
        return None
    ds = config.downstream
    model_cfg = {"hidden": tuple(ds.hidden), "lr": ds.lr, "batch_size": ds.batch_size, "momentum": ds.momentum,
                 "loss": ds.loss}

    def evaluate(optimized):
        model = train_on_optimized(optimized, model_cfg, epochs=ds.epochs, seed=config.derived_seed("training"))
        return linear_probe(model, evalset, config.derived_seed("probe")).accuracy

    return evaluate


def run_experiment(config, dataset=None, evalset=None, scheduler=None):
    if dataset is None:
        dataset, evalset = load_dataset(config)
    return run_round(config, dataset, scheduler=scheduler, evaluate=make_evaluator(config, evalset))


def ablate_alignment(config, strategies=("best", "median", "worst", "none")):
    dataset, evalset = load_dataset(config)
    rows = []
    for strategy in strategies:
        cfg = config.with_overrides(**{"alignment.strategy": strategy})
        _, metrics = run_round(cfg, dataset, evaluate=make_evaluator(cfg, evalset))
        rows.append({"strategy": strategy, "reference_id": metrics.reference_id,
                     "probe_accuracy": metrics.probe_accuracy, "dataset_digest": metrics.dataset_digest})
    return rows


def ablate_shared_size(config, fractions):
    fractions = [float(f) for f in fractions]
    if not fractions:
        raise ConfigError("need at least one shared fraction")
    if any(not 0.0 < f < 1.0 for f in fractions) or fractions != sorted(fractions):
        raise ConfigError(f"fractions must be sorted and inside (0, 1): {fractions}")
    dataset, evalset = load_dataset(config)
    rows = []
    for fraction in fractions:
        cfg = config.with_overrides(shared_fraction=fraction)
        _, metrics = run_round(cfg, dataset, evaluate=make_evaluator(cfg, evalset))
        rows.append({"fraction": fraction, "probe_accuracy": metrics.probe_accuracy,
                     "best_prior_id": metrics.best_prior_id, "dataset_digest": metrics.dataset_digest})
    return rows


def correlate_uniformity(config, levels=DEFAULT_LEVELS, base=None):
    """Uniform value and probe accuracy for each prior of a graded-quality roster.

    Each prior optimizes the whole dataset alone (K = 1). Returns the scatter
    rows and Spearman's rho between the two columns; rho is None (with
    ``degenerate`` set) when either column is constant.
    """
    levels = list(levels)
    if len(levels) < 5:
        raise ConfigError("correlation needs at least 5 quality levels")
    base = dict(DEFAULT_CORRELATION_BASE if base is None else base)
    base.setdefault("seed", config.derived_seed("priors"))
    roster = grade_roster(PriorModelSpec.from_dict(base), levels)
    dataset, evalset = load_dataset(config)
    if evalset is None:
        raise ConfigError("correlation needs a labeled benchmark dataset")
    single = config.with_overrides(K=1, roster=[roster[0].to_dict()], projection_seeds=None)
    evaluate = make_evaluator(single, evalset)
    rows = []
    for spec in roster:
        _, metrics = run_round(single, dataset, specs=[replace(spec, in_dim=dataset.m)], evaluate=evaluate)
        rows.append({"quality": spec.quality, "seed": spec.seed, "uniform_value": metrics.uniform_values[0],
                     "probe_accuracy": metrics.probe_accuracy})
    try:
        rho = spearman([r["uniform_value"] for r in rows], [r["probe_accuracy"] for r in rows])
        degenerate = False
    except DegenerateRankingError:
        rho, degenerate = None, True
    return rows, rho, degenerate


def continuous(config, dataset=None, evalset=None):
    if dataset is None:
        dataset, evalset = load_dataset(config)
    return run_continuous(config, dataset, evaluate=make_evaluator(config, evalset))


def upgrade_count(config):
    return math.ceil(config.continuous.p * config.K)

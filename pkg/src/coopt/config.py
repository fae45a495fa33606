"""Experiment configuration.

A run is described by one JSON file of flat dotted keys, e.g.::

    {"run_id": "demo", "seed": 3, "K": 4, "alignment.strategy": "best",
     "roster": [{"kind": "mlp", "out_dim": 32}, {"kind": "linear", "out_dim": 24}]}

Nested objects are accepted too and flattened on load. Every random stream is
derived from the master ``seed`` through the fixed offsets in ``SEED_OFFSETS``.
"""

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .exceptions import ConfigError
from .priors import PriorModelSpec

SEED_OFFSETS = {
    "dataset": 0,
    "partition": 1,
    "shared": 2,
    "training": 3,
    "probe": 4,
    "upgrades": 5,
    "priors": 1000,
    "projections": 2000,
}

DEFAULT_SHARED_FRACTIONS = (0.01, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8)
STRATEGIES = ("best", "median", "worst", "none")


@dataclass
class DatasetConfig:
    kind: str = "synthetic"
    path: str = None
    classes: int = 10
    n_samples: int = 2000
    dim: int = 32
    margin: float = 2.5
    n_eval: int = 4000


@dataclass
class UniformityConfig:
    tau: float = 2.0
    sign: int = -1
    normalize: bool = True
    space: str = "raw"
    max_pairs: int = None


@dataclass
class AlignmentConfig:
    strategy: str = "best"
    ridge_lambda: float = 1e-6
    relative: bool = True
    affine: bool = False


@dataclass
class ContinuousConfig:
    rounds: int = 10
    p: float = 0.2
    ladder: str = "quality"
    step: float = 0.15


@dataclass
class DownstreamConfig:
    hidden: list = field(default_factory=lambda: [64])
    epochs: int = 30
    lr: float = 0.5
    batch_size: int = 64
    momentum: float = 0.0
    loss: str = "mse"


def _default_roster():
    return [
        {"kind": "mlp", "out_dim": 32, "quality": 1.0, "scale": 1.0},
        {"kind": "weak-mlp", "out_dim": 48, "quality": 0.6, "scale": 4.0},
        {"kind": "linear", "out_dim": 24, "quality": 0.8, "scale": 0.5},
        {"kind": "weak-mlp", "out_dim": 40, "quality": 0.3, "scale": 8.0},
    ]


def cycled_roster(K):
    """The default heterogeneous roster repeated to ``K`` entries."""
    base = _default_roster()
    return [dict(base[k % len(base)]) for k in range(K)]


@dataclass
class ExperimentConfig:
    run_id: str = "coopt"
    seed: int = 0
    K: int = 4
    roster: list = field(default_factory=_default_roster)
    projection_seeds: list = None
    shared_fraction: float = 0.1
    n: int = None
    threads: int = 1
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    uniformity: UniformityConfig = field(default_factory=UniformityConfig)
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    continuous: ContinuousConfig = field(default_factory=ContinuousConfig)
    downstream: DownstreamConfig = field(default_factory=DownstreamConfig)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if isinstance(self.K, bool) or not isinstance(self.K, int) or self.K < 1:
            raise ConfigError(f"K must be a positive integer, got {self.K!r}")
        if not isinstance(self.shared_fraction, (int, float)) or not 0.0 < self.shared_fraction < 1.0:
            raise ConfigError(f"shared_fraction must lie in (0, 1), got {self.shared_fraction!r}")
        if not self.roster:
            raise ConfigError("roster must not be empty")
        if len(self.roster) not in (1, self.K):
            raise ConfigError(f"roster has {len(self.roster)} entries; expected 1 or K={self.K}")
        try:
            self.prior_specs()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid roster entry: {exc}") from exc
        if self.projection_seeds is not None and len(self.projection_seeds) != self.K:
            raise ConfigError("projection_seeds needs one seed per participant")
        if self.n is not None and (not isinstance(self.n, int) or self.n < 1):
            raise ConfigError(f"n must be a positive integer, got {self.n!r}")
        if self.alignment.strategy not in STRATEGIES:
            raise ConfigError(f"alignment.strategy must be one of {STRATEGIES}")
        if self.alignment.ridge_lambda < 0:
            raise ConfigError("alignment.ridge_lambda must be >= 0")
        if not self.uniformity.tau > 0:
            raise ConfigError("uniformity.tau must be positive")
        if self.uniformity.sign not in (-1, 1):
            raise ConfigError("uniformity.sign must be -1 or 1")
        if self.uniformity.space not in ("raw", "projected"):
            raise ConfigError("uniformity.space must be 'raw' or 'projected'")
        if self.uniformity.space == "projected" and self.n is None:
            raise ConfigError("uniformity.space='projected' needs an explicit n")
        if self.dataset.kind not in ("synthetic", "cptd"):
            raise ConfigError("dataset.kind must be 'synthetic' or 'cptd'")
        if self.dataset.kind == "cptd" and not self.dataset.path:
            raise ConfigError("dataset.path is required for dataset.kind='cptd'")
        if self.continuous.rounds < 1:
            raise ConfigError("continuous.rounds must be >= 1")
        if not 0.0 <= self.continuous.p <= 1.0:
            raise ConfigError("continuous.p must lie in [0, 1]")
        if self.continuous.ladder not in ("quality", "kind"):
            raise ConfigError("continuous.ladder must be 'quality' or 'kind'")
        if self.downstream.loss not in ("mse", "cosine"):
            raise ConfigError("downstream.loss must be 'mse' or 'cosine'")
        if self.downstream.epochs < 0:
            raise ConfigError("downstream.epochs must be >= 0")

    # -- derived seeds ----------------------------------------------------
    def derived_seed(self, role, index=0):
        return self.seed + SEED_OFFSETS[role] + index

    def prior_specs(self):
        """One PriorModelSpec per participant; a single roster entry is replicated."""
        entries = self.roster if len(self.roster) == self.K else [self.roster[0]] * self.K
        replicated = len(self.roster) == 1 and self.K > 1
        specs = []
        for k, entry in enumerate(entries):
            if isinstance(entry, PriorModelSpec):
                entry = entry.to_dict()
            entry = dict(entry)
            entry.setdefault("seed", self.derived_seed("priors", 0 if replicated else k))
            if "l" in entry:
                entry["out_dim"] = entry.pop("l")
            specs.append(PriorModelSpec.from_dict(entry))
        return specs

    def participant_projection_seeds(self):
        if self.projection_seeds is not None:
            return [int(s) for s in self.projection_seeds]
        if len(self.roster) == 1 and self.K > 1:
            # replicated roster: identical participants share one projection
            return [self.derived_seed("projections")] * self.K
        return [self.derived_seed("projections", k) for k in range(self.K)]

    # -- serialization ----------------------------------------------------
    def to_flat(self):
        flat = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if is_dataclass(value):
                for key, sub in asdict(value).items():
                    flat[f"{f.name}.{key}"] = sub
            else:
                flat[f.name] = value
        return flat

    def to_json(self):
        return json.dumps(self.to_flat(), indent=2, sort_keys=True)

    @classmethod
    def from_flat(cls, flat):
        flat = _flatten(flat)
        top, nested = {}, {}
        sections = {f.name: f for f in fields(cls) if f.name in _SECTIONS}
        for key, value in flat.items():
            head, _, rest = key.partition(".")
            if rest:
                if head not in sections:
                    raise ConfigError(f"unknown config section {head!r}")
                nested.setdefault(head, {})[rest] = value
            elif head in {f.name for f in fields(cls)} and head not in sections:
                top[head] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        for name, values in nested.items():
            section_cls = _SECTIONS[name]
            allowed = {f.name for f in fields(section_cls)}
            unknown = set(values) - allowed
            if unknown:
                raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
            top[name] = section_cls(**values)
        try:
            return cls(**top)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_flat(data)

    def with_overrides(self, **flat):
        merged = self.to_flat()
        merged.update(flat)
        return ExperimentConfig.from_flat(merged)


_SECTIONS = {
    "dataset": DatasetConfig,
    "uniformity": UniformityConfig,
    "alignment": AlignmentConfig,
    "continuous": ContinuousConfig,
    "downstream": DownstreamConfig,
}


def _flatten(data, prefix=""):
    out = {}
    for key, value in data.items():
        full = f"{prefix}{key}"
        if isinstance(value, dict) and key in _SECTIONS and not prefix:
            out.update(_flatten(value, f"{full}."))
        else:
            out[full] = value
    return out


__all__ = ["ExperimentConfig", "SEED_OFFSETS", "DEFAULT_SHARED_FRACTIONS", "STRATEGIES", "cycled_roster"]

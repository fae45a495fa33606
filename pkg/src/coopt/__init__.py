"""Collaborative optimization of soft targets for unlabeled data."""

from .alignment import (SharedSet, SharedTargets, TargetAligner, TransformationMatrix, alignment_for_best,
                        apply_transformation, fit_transformation)
from .config import ExperimentConfig
from .core import Dataset, OptimizedDataset, Sample, Shard, TargetSet, merge, partition
from .downstream import (EvalSet, ProbeResult, TargetRegressor, linear_probe, make_synthetic_benchmark, spearman,
                         train_on_optimized)
from .estimator import CollaborativeTargetOptimizer
from .exceptions import CoOptError
from .priors import PriorModel, PriorModelSpec, build_prior, extract, grade_roster
from .projection import GaussianTargetProjection, ProjectionMatrix, project, sample_projection
from .protocol import RoundMetrics, Scheduler, run_continuous, run_round
from .uniformity import UniformValueReport, select_best_prior, uniform_value, uniform_value_subsampled

__version__ = "0.1.0"

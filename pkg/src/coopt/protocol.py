"""Coordinator and participant state machines for one optimization round.

The platform (coordinator) and the K participants exchange immutable
messages through :class:`Scheduler`, a serial event loop. Everything the
coordinator reduces over (uniform value reports, uploads) is keyed by
participant id, so the merged result does not depend on delivery order;
``Scheduler(shuffle_seed=...)`` exists to exercise exactly that.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import wire
from .alignment import (SharedSet, SharedTargets, TransformationMatrix, alignment_for_best, apply_transformation,
                        fit_transformation, relative_ridge)
from .core import SHARED_SET_ID, Shard, TargetSet, merge, partition, sample_shared_set
from .exceptions import CoOptError, NotReadyError, ProtocolError, UploadRejected
from .priors import build_prior, extract
from .projection import project, sample_projection
from .uniformity import UniformValueReport, rank_reports, uniform_value, uniform_value_subsampled

COORDINATOR = -1
PHASES = ("distributing", "collecting_reports", "awaiting_uploads", "merged")


# -- messages -------------------------------------------------------------------

@dataclass(frozen=True)
class Message:
    run_id: str
    round: int
    sender: int


@dataclass(frozen=True)
class DistributeShard(Message):
    shard: Shard


@dataclass(frozen=True)
class ShareSet(Message):
    shared_set: SharedSet


@dataclass(frozen=True)
class ReportUniform(Message):
    report: UniformValueReport


@dataclass(frozen=True)
class AnnounceBest(Message):
    participant_id: int  # alignment reference; equals best_id under the "best" strategy
    n: int
    best_id: int
    align: bool = True


@dataclass(frozen=True)
class PublishSharedTargets(Message):
    targets: SharedTargets


@dataclass(frozen=True)
class UploadOptimized(Message):
    shard_id: int
    target_set: TargetSet
    uniform_value: float


@dataclass(frozen=True)
class MergeComplete(Message):
    dataset_digest: str


# -- participant ------------------------------------------------------------------

@dataclass
class ParticipantState:
    participant_id: int
    prior: object
    W: object = None
    T: TransformationMatrix = None
    shard: Shard = None


def participant_optimize(state):
    """Targets ``T W psi(x)`` for every sample of the participant's shard."""
    if state.shard is None:
        raise NotReadyError(f"participant {state.participant_id} has no shard yet")
    if state.W is None:
        raise NotReadyError(f"participant {state.participant_id} has no projection yet")
    if state.T is None:
        raise NotReadyError(f"participant {state.participant_id} has no transformation yet")
    projected = project(state.W, extract(state.prior, state.shard))
    raw = TargetSet(state.shard.shard_id, projected, aligned=False)
    return apply_transformation(state.T, raw)


class Participant:
    """Participant state machine: report a uniform value, then optimize, align and upload.

    Messages may arrive in any order; the participant buffers inputs and acts
    as soon as each step's inputs are complete.
    """

    def __init__(self, participant_id, spec, projection_seed, config, label_source=None):
        self.participant_id = participant_id
        self.spec = spec
        self.projection_seed = projection_seed
        self.config = config
        self.label_source = label_source
        self.state = ParticipantState(participant_id, None)
        self.shared = None
        self.announce = None
        self.shared_targets = None
        self._shared_features = None
        self.reported = self.published = self.uploaded = False
        self.uniform_value = None

    def _prior(self):
        if self.state.prior is None:
            spec = self.spec if self.spec.in_dim is not None else replace(self.spec, in_dim=self._in_dim)
            self.state.prior = build_prior(spec, self.label_source)
        return self.state.prior

    @property
    def _in_dim(self):
        if self.state.shard is not None:
            return self.state.shard.X.shape[1]
        return self.shared.X.shape[1]

    def shared_features(self):
        if self._shared_features is None:
            self._shared_features = extract(self._prior(), self.shared.dataset)
        return self._shared_features

    def handle(self, msg):
        if isinstance(msg, DistributeShard):
            self.state.shard = msg.shard
        elif isinstance(msg, ShareSet):
            self.shared = msg.shared_set
        elif isinstance(msg, AnnounceBest):
            self.announce = msg
        elif isinstance(msg, PublishSharedTargets):
            self.shared_targets = msg.targets
        else:
            raise ProtocolError(f"participant {self.participant_id} cannot handle {type(msg).__name__}",
                                phase="participant")
        return self._progress(msg.run_id, msg.round)

    def _out(self, run_id, rnd, cls, **kw):
        return (COORDINATOR, cls(run_id=run_id, round=rnd, sender=self.participant_id, **kw))

    def _progress(self, run_id, rnd):
        out = []
        cfg = self.config
        if self.shared is not None and not self.reported:
            F = self.shared_features()
            if cfg.uniformity.space == "projected":
                F = project(sample_projection(F.shape[1], cfg.n, self.projection_seed), F)
            if cfg.uniformity.max_pairs:
                value = uniform_value_subsampled(F, cfg.uniformity.tau, cfg.uniformity.max_pairs,
                                                 seed=cfg.derived_seed("shared"),
                                                 normalize=cfg.uniformity.normalize, sign=cfg.uniformity.sign)
            else:
                value = uniform_value(F, cfg.uniformity.tau, cfg.uniformity.normalize, cfg.uniformity.sign)
            self.uniform_value = value
            report = UniformValueReport(self.participant_id, value, self.shared.hash, float(cfg.uniformity.tau))
            out.append(self._out(run_id, rnd, ReportUniform, report=report))
            self.reported = True

        a = self.announce
        if a is None or self.shared is None:
            return out
        if self.state.W is None:
            self.state.W = sample_projection(self._prior().out_dim, a.n, self.projection_seed)
        is_reference = a.align and a.participant_id == self.participant_id
        if is_reference and not self.published:
            Ystar = project(self.state.W, self.shared_features())
            out.append(self._out(run_id, rnd, PublishSharedTargets, targets=SharedTargets(a.n, Ystar)))
            self.published = True

        if self.state.T is None:
            if not a.align or is_reference:
                self.state.T = alignment_for_best(a.n, self.participant_id)
            elif self.shared_targets is not None:
                self.state.T = self._fit_alignment(a.n)
        if self.state.T is not None and self.state.shard is not None and not self.uploaded:
            ts = participant_optimize(self.state)
            out.append(self._out(run_id, rnd, UploadOptimized, shard_id=ts.shard_id, target_set=ts,
                                 uniform_value=self.uniform_value))
            self.uploaded = True
        return out

    def _fit_alignment(self, n):
        F = project(self.state.W, self.shared_features())
        Y = self.shared_targets.values
        if F.shape != Y.shape:
            raise ProtocolError(f"shared targets have shape {Y.shape}, participant features {F.shape}",
                                phase="aligning")
        if np.array_equal(F.astype(np.float32), Y):
            # already in the reference space: identity is the exact, zero-residual map
            return alignment_for_best(n, self.participant_id)
        cfg = self.config.alignment
        lam = relative_ridge(F, cfg.ridge_lambda) if cfg.relative else cfg.ridge_lambda
        T = fit_transformation(F, Y, lam, participant_id=self.participant_id, affine=cfg.affine)
        return T


# -- coordinator -----------------------------------------------------------------

@dataclass
class RoundMetrics:
    round: int
    uniform_values: dict
    best_prior_id: int
    reference_id: int = None
    n: int = None
    dataset_digest: str = None
    probe_accuracy: float = None
    phase_seconds: dict = field(default_factory=dict)
    retained_uniform: dict = None
    specs: dict = None
    optimized: object = field(default=None, repr=False, compare=False)

    def rows(self, run_id, timings=True):
        """Flatten into JSON-lines records ``{run_id, round, participant, metric, value}``.

        Wall-clock phase timings are the only non-reproducible values; pass
        ``timings=False`` to leave them out.
        """
        out = []
        for pid in sorted(self.uniform_values):
            out.append(_row(run_id, self.round, pid, "uniform_value", self.uniform_values[pid]))
        if self.retained_uniform is not None:
            for pid in sorted(self.retained_uniform):
                out.append(_row(run_id, self.round, pid, "retained_uniform_value", self.retained_uniform[pid]))
        out.append(_row(run_id, self.round, None, "best_prior_id", self.best_prior_id))
        out.append(_row(run_id, self.round, None, "reference_id", self.reference_id))
        out.append(_row(run_id, self.round, None, "n", self.n))
        out.append(_row(run_id, self.round, None, "dataset_digest", self.dataset_digest))
        if self.probe_accuracy is not None:
            out.append(_row(run_id, self.round, None, "probe_accuracy", self.probe_accuracy))
        for phase in sorted(self.phase_seconds) if timings else ():
            out.append(_row(run_id, self.round, None, f"seconds.{phase}", self.phase_seconds[phase]))
        return out


def _row(run_id, rnd, participant, metric, value):
    return {"run_id": run_id, "round": rnd, "participant": participant, "metric": metric, "value": value}


@dataclass
class CoordinatorState:
    phase: str
    roster: list
    pending: set
    best_prior_id: int = None
    reference_id: int = None
    retained: dict = field(default_factory=dict)


class Coordinator:
    """The open data platform: distributes, ranks, relays shared targets and merges."""

    def __init__(self, config, dataset, specs, run_id, rnd=1):
        self.config = config
        self.dataset = dataset
        self.specs = specs
        self.run_id = run_id
        self.round = rnd
        self.K = len(specs)
        self.state = CoordinatorState("distributing", list(specs), set(range(self.K)))
        self.reports = {}
        self.uploads = {}
        self.shards = None
        self.shared = None
        self.result = None
        self.announce = None
        self.phase_seconds = {}
        self._t = time.perf_counter()

    def _enter(self, phase):
        now = time.perf_counter()
        self.phase_seconds[self.state.phase] = self.phase_seconds.get(self.state.phase, 0.0) + now - self._t
        self._t = now
        if PHASES.index(phase) < PHASES.index(self.state.phase):
            raise ProtocolError(f"phase cannot move back from {self.state.phase} to {phase}", phase=self.state.phase)
        self.state.phase = phase

    def _msg(self, cls, **kw):
        return cls(run_id=self.run_id, round=self.round, sender=COORDINATOR, **kw)

    def start(self):
        """Partition the data and hand out shards plus the shared set."""
        cfg = self.config
        self.shards = partition(self.dataset, self.K, cfg.derived_seed("partition"))
        shared = sample_shared_set(self.dataset, cfg.shared_fraction, cfg.derived_seed("shared"))
        self.shared = SharedSet(shared)
        out = []
        for k, shard in enumerate(self.shards):
            out.append((k, self._msg(DistributeShard, shard=shard)))
            out.append((k, self._msg(ShareSet, shared_set=self.shared)))
        self._enter("collecting_reports")
        return out

    def handle(self, msg):
        if msg.run_id != self.run_id or msg.round != self.round:
            raise ProtocolError(f"message for run {msg.run_id!r} round {msg.round} in run {self.run_id!r} "
                                f"round {self.round}", phase=self.state.phase)
        if isinstance(msg, ReportUniform):
            return self._on_report(msg)
        if isinstance(msg, PublishSharedTargets):
            return self._on_shared_targets(msg)
        if isinstance(msg, UploadOptimized):
            return self._on_upload(msg)
        raise ProtocolError(f"coordinator cannot handle {type(msg).__name__}", phase=self.state.phase)

    def _on_report(self, msg):
        if self.state.phase != "collecting_reports":
            raise ProtocolError("uniform value report outside the reporting phase", phase=self.state.phase)
        pid = msg.sender
        if pid in self.reports:
            raise ProtocolError(f"duplicate report from participant {pid}", phase=self.state.phase)
        if msg.report.participant_id != pid or msg.report.shared_set_hash != self.shared.hash:
            raise ProtocolError(f"inconsistent report from participant {pid}", phase=self.state.phase)
        self.reports[pid] = msg.report
        if len(self.reports) < self.K:
            return []
        ranked = rank_reports(self.reports.values())
        best = ranked[0].participant_id
        strategy = self.config.alignment.strategy
        reference = {
            "best": best,
            "median": ranked[len(ranked) // 2].participant_id,
            "worst": ranked[-1].participant_id,
            "none": best,
        }[strategy]
        n = self.config.n or self.specs[best].out_dim
        self.state.best_prior_id = best
        self.state.reference_id = reference
        self.announce = self._msg(AnnounceBest, participant_id=reference, n=n, best_id=best,
                                  align=strategy != "none")
        self._enter("awaiting_uploads")
        return [(k, self.announce) for k in range(self.K)]

    def _on_shared_targets(self, msg):
        if self.state.phase != "awaiting_uploads" or msg.sender != self.state.reference_id:
            raise ProtocolError(f"unexpected shared targets from participant {msg.sender}", phase=self.state.phase)
        if msg.targets.values.shape != (len(self.shared), self.announce.n):
            raise ProtocolError("shared targets have the wrong shape", phase=self.state.phase)
        return [(k, msg) for k in range(self.K) if k != msg.sender]

    def _on_upload(self, msg):
        if self.state.phase != "awaiting_uploads":
            raise ProtocolError("upload before the best prior was announced", phase=self.state.phase)
        pid = msg.sender
        if msg.shard_id != self.shards[pid].shard_id or msg.target_set.shard_id != msg.shard_id:
            raise UploadRejected(f"participant {pid} uploaded shard {msg.shard_id}, "
                                 f"expected {self.shards[pid].shard_id}")
        if pid in self.uploads:
            raise UploadRejected(f"duplicate upload from participant {pid}")
        if not msg.target_set.aligned or msg.target_set.n != self.announce.n:
            raise UploadRejected(f"participant {pid} uploaded unaligned or mis-sized targets")
        self.uploads[pid] = msg.target_set
        self.state.pending.discard(pid)
        if self.state.pending:
            return []
        self.result = merge([self.uploads[k] for k in sorted(self.uploads)], self.dataset, self.shards)
        self._enter("merged")
        return [(k, self._msg(MergeComplete, dataset_digest=self.result.digest())) for k in range(self.K)]

    def metrics(self):
        return RoundMetrics(
            round=self.round,
            uniform_values={k: r.value for k, r in sorted(self.reports.items())},
            best_prior_id=self.state.best_prior_id,
            reference_id=self.state.reference_id,
            n=self.announce.n if self.announce else None,
            dataset_digest=self.result.digest() if self.result else None,
            phase_seconds=dict(self.phase_seconds),
            specs={k: s.to_dict() for k, s in enumerate(self.specs)},
        )


# -- scheduler --------------------------------------------------------------------

_PHASE_OF = {
    DistributeShard: "distributing",
    ShareSet: "reporting",
    AnnounceBest: "optimizing",
    PublishSharedTargets: "aligning",
}


class Scheduler:
    """Serial event loop delivering envelopes ``(destination, message)``.

    ``shuffle_seed`` delivers pending envelopes in a seeded random order;
    ``threads > 1`` runs the participant handlers of each delivery wave
    concurrently; ``transport=True`` pushes every message through the binary
    frame codec before delivery.
    """

    def __init__(self, shuffle_seed=None, threads=1, transport=False, max_waves=64):
        self.rng = None if shuffle_seed is None else np.random.default_rng(shuffle_seed)
        self.threads = threads
        self.transport = transport
        self.max_waves = max_waves
        self.frames = 0

    def _carry(self, msg):
        if not self.transport:
            return msg
        frame = wire.encode_frame(msg)
        self.frames += 1
        decoded, used = wire.decode_frame(frame)
        return decoded

    def run(self, coordinator, participants):
        queue = coordinator.start()
        pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None
        try:
            for _ in range(self.max_waves):
                if coordinator.result is not None:
                    return coordinator.result
                if not queue:
                    break
                wave, queue = queue, []
                if self.rng is not None:
                    wave = [wave[i] for i in self.rng.permutation(len(wave))]
                to_coordinator = [m for dest, m in wave if dest == COORDINATOR]
                by_participant = {}
                for dest, m in wave:
                    if dest != COORDINATOR:
                        by_participant.setdefault(dest, []).append(m)
                order = list(by_participant)
                if self.rng is not None:
                    order = [order[i] for i in self.rng.permutation(len(order))]
                for m in to_coordinator:
                    queue.extend(self._coordinator_step(coordinator, m))

                def work(pid):
                    produced = []
                    for m in by_participant[pid]:
                        produced.extend(self._participant_step(participants[pid], m))
                    return produced

                results = pool.map(work, order) if pool else map(work, order)
                for produced in results:
                    queue.extend(produced)
            if coordinator.result is not None:
                return coordinator.result
            raise ProtocolError(f"round stalled; still waiting on participants {sorted(coordinator.state.pending)}",
                                phase=coordinator.state.phase)
        finally:
            if pool:
                pool.shutdown()

    def _coordinator_step(self, coordinator, msg):
        try:
            return coordinator.handle(self._carry(msg))
        except ProtocolError:
            raise
        except CoOptError as exc:
            raise ProtocolError(str(exc), phase=coordinator.state.phase) from exc

    def _participant_step(self, participant, msg):
        if isinstance(msg, MergeComplete):
            return []
        try:
            return participant.handle(self._carry(msg))
        except ProtocolError:
            raise
        except CoOptError as exc:
            phase = _PHASE_OF.get(type(msg), "participant")
            raise ProtocolError(f"participant {participant.participant_id}: {exc}", phase=phase) from exc


# -- rounds -----------------------------------------------------------------------

def run_round(config, dataset, *, specs=None, rnd=1, scheduler=None, evaluate=None, label_source=None):
    """Run one full round (distribute, report, align, upload, merge) and return ``(OptimizedDataset, RoundMetrics)``.

    ``specs`` overrides the roster from ``config``; ``evaluate`` maps the merged
    dataset to a probe accuracy recorded in the metrics; ``label_source`` is
    the labeled dataset an oracle prior may consult (defaults to ``dataset``).
    """
    specs = list(specs) if specs is not None else config.prior_specs()
    if len(specs) != config.K:
        raise ProtocolError(f"roster has {len(specs)} priors for K={config.K}", phase="distributing")
    specs = [s if s.in_dim is not None else replace(s, in_dim=dataset.m) for s in specs]
    seeds = config.participant_projection_seeds()
    label_source = dataset if label_source is None else label_source
    participants = [Participant(k, spec, seeds[k], config, label_source) for k, spec in enumerate(specs)]
    coordinator = Coordinator(config, dataset, specs, config.run_id, rnd)
    scheduler = scheduler or Scheduler(threads=config.threads)
    result = scheduler.run(coordinator, participants)
    metrics = coordinator.metrics()
    if evaluate is not None:
        metrics.probe_accuracy = float(evaluate(result))
    return result, metrics


def upgrade_spec(spec, ladder="quality", step=0.15):
    """Next rung of the upgrade ladder for a participant's prior."""
    if ladder == "kind" and spec.kind == "linear":
        return replace(spec, kind="mlp")
    return replace(spec, quality=min(1.0, round(spec.quality + step, 10)))


def run_continuous(config, dataset, R=None, p=None, seed=None, *, evaluate=None, label_source=None,
                   scheduler_factory=None):
    """Multi-round optimization with evolving priors and a retain-better rule.

    Each round after the first, ``ceil(p * K)`` seeded participants propose an
    upgraded prior. The platform keeps, per participant, whichever prior (and
    therefore target set) has the lower shared-set uniform value; retained
    priors are re-aligned into the current round's reference space, so the
    merged dataset stays consistent. Retained uniform values never increase.

    Returns the list of per-round :class:`RoundMetrics`; the final merged
    dataset is attached to the last entry as ``optimized``.
    """
    R = config.continuous.rounds if R is None else R
    p = config.continuous.p if p is None else p
    seed = config.derived_seed("upgrades") if seed is None else seed
    if R < 1:
        raise ValueError("R must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    make_scheduler = scheduler_factory or (lambda: Scheduler(threads=config.threads))
    label_source = dataset if label_source is None else label_source

    specs = [s if s.in_dim is not None else replace(s, in_dim=dataset.m) for s in config.prior_specs()]
    history = []
    retained = None
    result = None
    for rnd in range(1, R + 1):
        if rnd > 1:
            rng = np.random.default_rng([seed, rnd])
            chosen = sorted(rng.choice(config.K, size=math.ceil(p * config.K), replace=False).tolist()) if p else []
            shared = SharedSet(sample_shared_set(dataset, config.shared_fraction, config.derived_seed("shared")))
            for k in chosen:
                candidate = upgrade_spec(specs[k], config.continuous.ladder, config.continuous.step)
                value = _shared_uniform(candidate, shared, config, label_source)
                if value < retained[k]:
                    specs[k] = candidate
        result, metrics = run_round(config, dataset, specs=specs, rnd=rnd, scheduler=make_scheduler(),
                                    evaluate=evaluate, label_source=label_source)
        if retained is None:
            retained = dict(metrics.uniform_values)
        else:
            retained = {k: min(retained[k], v) for k, v in metrics.uniform_values.items()}
        metrics.retained_uniform = dict(retained)
        history.append(metrics)
    history[-1].optimized = result
    return history


def _shared_uniform(spec, shared, config, label_source):
    F = extract(build_prior(spec, label_source), shared.dataset)
    u = config.uniformity
    if u.space == "projected":
        raise ProtocolError("continuous mode compares priors in raw feature space only", phase="reporting")
    if u.max_pairs:
        return uniform_value_subsampled(F, u.tau, u.max_pairs, seed=config.derived_seed("shared"),
                                        normalize=u.normalize, sign=u.sign)
    return uniform_value(F, u.tau, u.normalize, u.sign)


__all__ = [
    "AnnounceBest", "Coordinator", "CoordinatorState", "DistributeShard", "MergeComplete", "Message",
    "Participant", "ParticipantState", "PublishSharedTargets", "ReportUniform", "RoundMetrics", "Scheduler",
    "ShareSet", "UploadOptimized", "participant_optimize", "run_continuous", "run_round", "upgrade_spec",
    "SHARED_SET_ID",
]

import numpy as np
import pytest

from coopt import protocol as P
from coopt.config import ExperimentConfig
from coopt.core import TargetSet
from coopt.downstream import make_synthetic_benchmark
from coopt.exceptions import NotReadyError, ProtocolError, UploadRejected
from coopt.priors import PriorModelSpec, build_prior, extract
from coopt.projection import project, sample_projection
from coopt.uniformity import UniformValueReport


@pytest.fixture(scope="module")
def bench():
    return make_synthetic_benchmark(C=4, N=240, m=8, seed=0, n_eval=80)


def config(**kw):
    return ExperimentConfig().with_overrides(**{"dataset.dim": 8, "shared_fraction": 0.2, **kw})


def test_single_participant_is_projection_of_prior(bench):
    dataset, _ = bench
    cfg = config(K=1, roster=[{"kind": "mlp", "out_dim": 12}])
    optimized, metrics = P.run_round(cfg, dataset)
    spec = cfg.prior_specs()[0]
    prior = build_prior(PriorModelSpec(**{**spec.to_dict(), "in_dim": 8}))
    W = sample_projection(12, 12, cfg.participant_projection_seeds()[0])
    expected = project(W, extract(prior, dataset)).astype(np.float32)
    assert optimized.Y.tobytes() == expected.tobytes()
    assert metrics.best_prior_id == 0 and metrics.n == 12


def test_n_override_and_reference_dimension(bench):
    dataset, _ = bench
    _, metrics = P.run_round(config(), dataset)
    best = config().prior_specs()[metrics.best_prior_id]
    assert metrics.n == best.out_dim
    optimized, metrics = P.run_round(config(n=7), dataset)
    assert optimized.n == 7 and metrics.n == 7


def test_heterogeneous_round_is_schedule_independent(bench):
    dataset, _ = bench
    _, base = P.run_round(config(), dataset)
    for s in range(4):
        sched = P.Scheduler(shuffle_seed=s, threads=2 if s % 2 else 1, transport=s >= 2)
        _, m = P.run_round(config(), dataset, scheduler=sched)
        assert m.dataset_digest == base.dataset_digest and m.best_prior_id == base.best_prior_id
        if s >= 2:
            assert sched.frames > 0


def test_best_is_argmin_of_reported_values(bench):
    dataset, _ = bench
    _, m = P.run_round(config(), dataset)
    values = m.uniform_values
    assert m.best_prior_id == min(values, key=lambda k: (values[k], k))
    assert m.reference_id == m.best_prior_id


@pytest.mark.parametrize("strategy", ["median", "worst", "none"])
def test_strategies_choose_reference(bench, strategy):
    dataset, _ = bench
    _, m = P.run_round(config(**{"alignment.strategy": strategy}), dataset)
    ranked = sorted(m.uniform_values, key=lambda k: (m.uniform_values[k], k))
    expected = {"median": ranked[2], "worst": ranked[-1], "none": ranked[0]}[strategy]
    assert m.reference_id == expected


def test_alignment_pulls_targets_towards_reference(bench):
    # after alignment each participant's shared-set targets sit closer to the reference's
    dataset, _ = bench
    cfg = config()
    optimized, m = P.run_round(cfg, dataset)
    unaligned, _ = P.run_round(cfg.with_overrides(**{"alignment.strategy": "none"}), dataset)
    ref = m.reference_id
    spec = cfg.prior_specs()[ref]
    W = sample_projection(spec.out_dim, m.n, cfg.participant_projection_seeds()[ref])
    reference = project(W, extract(build_prior(PriorModelSpec(**{**spec.to_dict(), "in_dim": 8})), dataset))
    assert np.mean((optimized.Y - reference) ** 2) < np.mean((unaligned.Y - reference) ** 2)


def manual_round(dataset, cfg):
    specs = [PriorModelSpec(**{**s.to_dict(), "in_dim": dataset.m}) for s in cfg.prior_specs()]
    seeds = cfg.participant_projection_seeds()
    coord = P.Coordinator(cfg, dataset, specs, cfg.run_id)
    parts = [P.Participant(k, s, seeds[k], cfg, dataset) for k, s in enumerate(specs)]
    return coord, parts


def deliver(parts, envelopes):
    out = []
    for dest, msg in envelopes:
        out.extend(parts[dest].handle(msg))
    return out


def test_upload_before_announcement_is_rejected(bench):
    dataset, _ = bench
    coord, parts = manual_round(dataset, config())
    coord.start()
    ts = TargetSet(0, np.zeros((len(coord.shards[0]), 4)), aligned=True)
    upload = P.UploadOptimized(run_id=coord.run_id, round=1, sender=0, shard_id=0, target_set=ts, uniform_value=0.0)
    with pytest.raises(ProtocolError) as err:
        coord.handle(upload)
    assert err.value.phase == "collecting_reports"


def advance_to_uploads(coord, parts):
    reports = deliver(parts, coord.start())
    out = []
    for _, msg in reports:
        if isinstance(msg, P.ReportUniform):
            out.extend(coord.handle(msg))
        else:
            raise AssertionError("only reports expected before the announcement")
    return out


def test_wrong_shard_and_duplicate_upload_rejected(bench):
    dataset, _ = bench
    coord, parts = manual_round(dataset, config())
    announcements = advance_to_uploads(coord, parts)
    assert coord.state.phase == "awaiting_uploads"
    n = coord.announce.n
    wrong = TargetSet(1, np.zeros((len(coord.shards[1]), n)), aligned=True)
    with pytest.raises(UploadRejected):
        coord.handle(P.UploadOptimized(run_id=coord.run_id, round=1, sender=0, shard_id=1, target_set=wrong,
                                       uniform_value=0.0))
    pending = deliver(parts, announcements)
    uploads = []
    while pending:
        dest_msgs, pending = pending, []
        for _, msg in dest_msgs:
            if isinstance(msg, P.UploadOptimized):
                uploads.append(msg)
            else:
                pending.extend(deliver(parts, coord.handle(msg)))
    first = uploads[0]
    coord.handle(first)
    with pytest.raises(UploadRejected):
        coord.handle(first)
    unaligned = P.UploadOptimized(run_id=coord.run_id, round=1, sender=uploads[1].sender, shard_id=uploads[1].shard_id,
                                  target_set=TargetSet(uploads[1].shard_id, uploads[1].target_set.targets, False),
                                  uniform_value=0.0)
    with pytest.raises(UploadRejected):
        coord.handle(unaligned)
    for msg in uploads[1:]:
        coord.handle(msg)
    assert coord.state.phase == "merged" and coord.result is not None


def test_duplicate_or_foreign_reports_rejected(bench):
    dataset, _ = bench
    coord, parts = manual_round(dataset, config())
    reports = deliver(parts, coord.start())
    coord.handle(reports[0][1])
    with pytest.raises(ProtocolError):
        coord.handle(reports[0][1])
    forged = P.ReportUniform(run_id=coord.run_id, round=1, sender=1,
                             report=UniformValueReport(1, -1.0, "not-the-shared-set", 2.0))
    with pytest.raises(ProtocolError):
        coord.handle(forged)
    other_run = P.ReportUniform(run_id="other", round=1, sender=2, report=reports[2][1].report)
    with pytest.raises(ProtocolError):
        coord.handle(other_run)


def test_stalled_round_raises_with_phase(bench):
    dataset, _ = bench
    coord, parts = manual_round(dataset, config())
    with pytest.raises(ProtocolError) as err:
        P.Scheduler(max_waves=2).run(coord, parts)
    assert err.value.phase in P.PHASES


def test_participant_not_ready():
    state = P.ParticipantState(0, build_prior(PriorModelSpec("mlp", 0, 4, in_dim=3)))
    with pytest.raises(NotReadyError):
        P.participant_optimize(state)


def test_roster_size_mismatch(bench):
    dataset, _ = bench
    with pytest.raises(ProtocolError):
        P.run_round(config(), dataset, specs=config().prior_specs()[:2])


def test_metrics_rows(bench):
    dataset, _ = bench
    _, m = P.run_round(config(), dataset)
    rows = m.rows("r")
    assert {r["metric"] for r in rows} >= {"uniform_value", "best_prior_id", "dataset_digest", "n"}
    assert all(set(r) == {"run_id", "round", "participant", "metric", "value"} for r in rows)
    assert not any(r["metric"].startswith("seconds.") for r in m.rows("r", timings=False))


def test_upgrade_ladder():
    spec = PriorModelSpec("linear", 0, 4, quality=0.9)
    assert P.upgrade_spec(spec, "quality", 0.15).quality == 1.0
    assert P.upgrade_spec(spec, "kind").kind == "mlp"
    assert P.upgrade_spec(PriorModelSpec("mlp", 0, 4, quality=0.5), "kind", 0.2).quality == 0.7


def test_continuous_without_upgrades_is_static(bench):
    dataset, _ = bench
    history = P.run_continuous(config(), dataset, R=3, p=0.0)
    assert len({m.dataset_digest for m in history}) == 1
    assert history[-1].optimized.digest() == history[0].dataset_digest


def test_continuous_full_upgrades_lower_retained_values(bench):
    dataset, _ = bench
    cfg = config(roster=[{"kind": "mlp", "out_dim": 8, "quality": q} for q in (0.2, 0.3, 0.4, 0.5)])
    history = P.run_continuous(cfg, dataset, R=4, p=1.0)
    for prev, cur in zip(history, history[1:]):
        for k in range(4):
            assert cur.retained_uniform[k] <= prev.retained_uniform[k]
    assert any(history[-1].retained_uniform[k] < history[0].retained_uniform[k] for k in range(4))


def test_continuous_argument_checks(bench):
    dataset, _ = bench
    with pytest.raises(ValueError):
        P.run_continuous(config(), dataset, R=0)
    with pytest.raises(ValueError):
        P.run_continuous(config(), dataset, R=1, p=1.5)

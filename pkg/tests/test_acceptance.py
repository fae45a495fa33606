"""Acceptance suite: one test per criterion, each with its runtime budget.

Run with ``pytest tests/test_acceptance.py``; the terminal summary prints a
PASS/FAIL line per criterion. ``python tests/test_acceptance.py`` does the
same without pytest's collection machinery.
"""

import itertools
import time

import numpy as np
import pytest

from coopt.alignment import fit_transformation, optimality_gap
from coopt.config import DEFAULT_SHARED_FRACTIONS, ExperimentConfig, cycled_roster
from coopt.core import Dataset, Shard, TargetSet
from coopt.downstream import (chance_interval, init_params, linear_probe, loss_and_grad, make_synthetic_benchmark,
                              train_on_optimized)
from coopt.exceptions import FormatError
from coopt.experiments import ablate_alignment, ablate_shared_size, continuous, correlate_uniformity
from coopt.formats import read_shard, read_targets, write_shard, write_targets
from coopt.projection import project, sample_projection
from coopt.protocol import Scheduler, run_round
from coopt.uniformity import uniform_value, uniform_value_subsampled

SEEDS = (0, 1, 2)


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.1f}s, budget {self.seconds}s"


@pytest.mark.criterion(1, "merge equivalence, K in {1,2,4,8} homogeneous priors")
def test_c01_merge_equivalence():
    with Budget(10):
        dataset, _ = make_synthetic_benchmark(N=2000, n_eval=20, seed=0)
        merged = {}
        for K in (1, 2, 4, 8):
            cfg = ExperimentConfig().with_overrides(K=K, roster=[{"kind": "mlp", "out_dim": 32}])
            optimized, _ = run_round(cfg, dataset)
            merged[K] = optimized.Y
        for K in (2, 4, 8):
            assert merged[K].dtype == merged[1].dtype
            assert merged[K].tobytes() == merged[1].tobytes(), f"K={K} differs from K=1"


@pytest.mark.criterion(2, "schedule independence over 5 randomized orderings")
def test_c02_schedule_independence():
    with Budget(20):
        cfg = ExperimentConfig()
        dataset, _ = make_synthetic_benchmark(N=2000, n_eval=20, seed=0)
        _, baseline = run_round(cfg, dataset)
        digests = set()
        for s in range(5):
            scheduler = Scheduler(shuffle_seed=100 + s, threads=1 + s % 2, transport=s % 2 == 1)
            _, metrics = run_round(cfg, dataset, scheduler=scheduler)
            digests.add((metrics.dataset_digest, metrics.best_prior_id))
        assert digests == {(baseline.dataset_digest, baseline.best_prior_id)}


@pytest.mark.criterion(3, "uniform value correctness")
def test_c03_uniform_value():
    with Budget(5):
        same = np.tile(np.array([[0.3, -1.2, 2.0]]), (7, 1))
        assert uniform_value(same) == 0.0
        pair = np.array([[1.0, 2.0, -0.5], [-1.0, -2.0, 0.5]])
        assert abs(uniform_value(pair, tau=2.0) - (-8.0)) <= 1e-9
        for seed in range(10):
            F = np.random.default_rng(seed).standard_normal((512, 32))
            exact = uniform_value(F)
            approx = uniform_value_subsampled(F, max_pairs=100_000, seed=seed)
            assert abs(approx - exact) <= 0.05, (seed, exact, approx)


@pytest.mark.criterion(4, "uniformity-quality correlation, rho <= -0.8 on 3 seeds")
def test_c04_uniformity_correlation():
    with Budget(180):
        for seed in SEEDS:
            rows, rho, degenerate = correlate_uniformity(ExperimentConfig().with_overrides(seed=seed))
            assert len(rows) == 10
            assert not degenerate
            print(f"seed {seed}: rho = {rho:.3f}")
            assert rho <= -0.8, f"seed {seed}: rho = {rho:.3f}"


@pytest.mark.criterion(5, "alignment necessity, best - none >= 5pp, ordering in 2 of 3 seeds")
def test_c05_alignment_necessity():
    with Budget(180):
        ordered = 0
        for seed in SEEDS:
            acc = {r["strategy"]: r["probe_accuracy"]
                   for r in ablate_alignment(ExperimentConfig().with_overrides(seed=seed))}
            print(f"seed {seed}: {acc}")
            assert acc["best"] - acc["none"] >= 0.05, f"seed {seed}: {acc}"
            ordered += acc["best"] >= acc["median"] >= acc["worst"]
        assert ordered >= 2


@pytest.mark.criterion(6, "least-squares recovery and optimality certificate")
def test_c06_least_squares():
    with Budget(5):
        rng = np.random.default_rng(0)
        F = rng.standard_normal((200, 24))
        T_true = rng.standard_normal((24, 24))
        T = fit_transformation(F, F @ T_true.T, ridge_lambda=0.0)
        assert np.linalg.norm(T.values - T_true) / np.linalg.norm(T_true) <= 1e-6
        for seed in range(20):
            rng = np.random.default_rng(seed)
            s, n = int(rng.integers(5, 80)), int(rng.integers(2, 40))
            F, Y = rng.standard_normal((s, n)), rng.standard_normal((s, n))
            T = fit_transformation(F, Y, ridge_lambda=float(rng.uniform(1e-4, 1.0)))
            assert optimality_gap(T, F, Y) <= 1e-6 * (1 + np.linalg.norm(Y))


@pytest.mark.criterion(7, "JL distortion, 512 -> 64, >= 99% of pairs within 1 +- 0.5")
def test_c07_jl_distortion():
    with Budget(5):
        pairs = np.array(list(itertools.combinations(range(200), 2)))
        inside = total = 0
        for seed in range(20):
            X = np.random.default_rng([seed, 7]).standard_normal((200, 512))
            Y = project(sample_projection(512, 64, seed), X)
            orig = ((X[pairs[:, 0]] - X[pairs[:, 1]]) ** 2).sum(axis=1)
            new = ((Y[pairs[:, 0]] - Y[pairs[:, 1]]) ** 2).sum(axis=1)
            inside += int(np.sum(np.abs(new / orig - 1.0) <= 0.5))
            total += len(pairs)
        assert inside / total >= 0.99, inside / total


@pytest.mark.criterion(8, "shared-size diminishing returns")
def test_c08_shared_size():
    with Budget(300):
        low, high = [], []
        for seed in SEEDS:
            acc = {r["fraction"]: r["probe_accuracy"]
                   for r in ablate_shared_size(ExperimentConfig().with_overrides(seed=seed), DEFAULT_SHARED_FRACTIONS)}
            print(f"seed {seed}: {acc}")
            low.append(acc[0.05] - acc[0.01])
            high.append(acc[0.8] - acc[0.1])
        assert np.mean(high) < np.mean(low), (np.mean(high), np.mean(low))


@pytest.mark.criterion(9, "continuous optimization, K=10 p=0.2 R=10")
def test_c09_continuous():
    with Budget(300):
        improved = 0
        for seed in SEEDS:
            cfg = ExperimentConfig().with_overrides(seed=seed, K=10, roster=cycled_roster(10))
            history = continuous(cfg)
            assert len(history) == 10
            for prev, cur in zip(history, history[1:]):
                for k in range(10):
                    assert cur.retained_uniform[k] <= prev.retained_uniform[k]
            acc = [m.probe_accuracy for m in history]
            print(f"seed {seed}: round 1 {acc[0]:.4f}, final {acc[-1]:.4f}")
            improved += acc[-1] >= acc[0]
        assert improved >= 2


@pytest.mark.criterion(10, "downstream numerics: finite differences, epochs=0 at chance")
def test_c10_downstream_numerics():
    with Budget(10):
        rng = np.random.default_rng(0)
        X, Y = rng.standard_normal((6, 4)), rng.standard_normal((6, 3))
        params = [(rng.standard_normal(W.shape), rng.standard_normal(b.shape)) for W, b in init_params(4, (5,), 3, 0)]
        _, grads = loss_and_grad(params, X, Y, "mse")
        h = 1e-6
        for k, (W, b) in enumerate(params):
            for which, arr in ((0, W), (1, b)):
                for idx in np.ndindex(arr.shape):
                    old = arr[idx]
                    arr[idx] = old + h
                    up, _ = loss_and_grad(params, X, Y, "mse")
                    arr[idx] = old - h
                    down, _ = loss_and_grad(params, X, Y, "mse")
                    arr[idx] = old
                    numeric = (up - down) / (2 * h)
                    analytic = grads[k][which][idx]
                    assert abs(numeric - analytic) <= 1e-4 * max(1.0, abs(numeric), abs(analytic))

        dataset, evalset = make_synthetic_benchmark(C=10, N=1000, seed=0, n_eval=2000)
        cfg = ExperimentConfig()
        optimized, _ = run_round(cfg, dataset)
        model = train_on_optimized(optimized, {"hidden": (64,)}, epochs=0, seed=0)
        acc = linear_probe(model, evalset, probe_seed=0).accuracy
        lo, hi = chance_interval(10, len(evalset) // 2)
        assert lo <= acc <= hi, (acc, lo, hi)


@pytest.mark.criterion(11, "format round-trip and corrupted magic rejection")
def test_c11_formats(tmp_path):
    with Budget(1):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((50, 9)).astype(np.float32)
        X[0, 0] = np.float32(-0.0)
        ids = np.sort(rng.choice(10**12, size=50, replace=False)).astype(np.uint64)
        write_shard(tmp_path / "s.cptd", Shard(3, ids, X))
        back = read_shard(tmp_path / "s.cptd")
        assert back.X.tobytes() == X.tobytes() and back.sample_ids.tobytes() == ids.tobytes()
        Y = rng.standard_normal((50, 5)).astype(np.float32)
        write_targets(tmp_path / "t.cptt", TargetSet(3, Y, aligned=True))
        assert read_targets(tmp_path / "t.cptt").targets.tobytes() == Y.tobytes()
        for name in ("s.cptd", "t.cptt"):
            path = tmp_path / name
            data = bytearray(path.read_bytes())
            data[0] ^= 0xFF
            path.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            read_shard(tmp_path / "s.cptd")
        with pytest.raises(FormatError):
            read_targets(tmp_path / "t.cptt")


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    failed = 0
    for name, fn in sorted((n, f) for n, f in globals().items() if n.startswith("test_c")):
        number, title = fn.pytestmark[0].args
        try:
            if "tmp_path" in fn.__code__.co_varnames[: fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
            print(f"[PASS] criterion {number:>2}: {title}")
        except Exception as exc:  # noqa: BLE001
            failed += 1
            print(f"[FAIL] criterion {number:>2}: {title}: {exc!r}")
    sys.exit(1 if failed else 0)

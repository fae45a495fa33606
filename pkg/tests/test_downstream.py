import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

from coopt.core import OptimizedDataset
from coopt.downstream import (EvalSet, TargetRegressor, chance_interval, forward, init_params, linear_probe,
                              loss_and_grad, make_synthetic_benchmark, probe_representations, spearman,
                              train_on_optimized)
from coopt.exceptions import DegenerateRankingError, DimensionError, InvalidEvalError


def numeric_grad(params, X, Y, loss, h=1e-6):
    out = []
    for W, b in params:
        pair = []
        for arr in (W, b):
            g = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up = loss_and_grad(params, X, Y, loss)[0]
                arr[idx] = old - h
                down = loss_and_grad(params, X, Y, loss)[0]
                arr[idx] = old
                g[idx] = (up - down) / (2 * h)
            pair.append(g)
        out.append(pair)
    return out


@pytest.mark.parametrize("loss", ["mse", "cosine"])
@pytest.mark.parametrize("hidden", [(4,), (3, 5)])
def test_gradients_match_finite_differences(loss, hidden):
    rng = np.random.default_rng(1)
    X, Y = rng.standard_normal((5, 3)), rng.standard_normal((5, 2))
    params = [(rng.standard_normal(W.shape), rng.standard_normal(b.shape)) for W, b in init_params(3, hidden, 2, 0)]
    _, grads = loss_and_grad(params, X, Y, loss)
    for (gW, gb), (nW, nb) in zip(grads, numeric_grad(params, X, Y, loss)):
        np.testing.assert_allclose(gW, nW, rtol=1e-4, atol=1e-7)
        np.testing.assert_allclose(gb, nb, rtol=1e-4, atol=1e-7)


def test_mse_value_by_hand():
    params = [(np.zeros((1, 1)), np.array([1.0]))]
    value, _ = loss_and_grad(params, np.zeros((2, 1)), np.array([[0.0], [3.0]]))
    assert value == pytest.approx((1.0 + 4.0) / 2)
    with pytest.raises(ValueError):
        loss_and_grad(params, np.zeros((2, 1)), np.zeros((2, 1)), "hinge")


def test_untrained_representation_is_constant():
    params = init_params(4, (6,), 2, 0)
    acts = forward(params, np.random.default_rng(0).standard_normal((10, 4)))
    assert np.all(acts[1] == 0.0)


def test_regressor_learns_a_linear_map_and_is_deterministic():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((300, 4))
    Y = X @ rng.standard_normal((4, 2)) * 0.3
    a = TargetRegressor(hidden=(16,), epochs=60, lr=0.2, seed=1).fit(X, Y)
    b = TargetRegressor(hidden=(16,), epochs=60, lr=0.2, seed=1).fit(X, Y)
    assert a.loss_curve_[-1] < 0.1 * a.loss_curve_[0]
    assert a.predict(X).tobytes() == b.predict(X).tobytes()
    assert a.transform(X).shape == (300, 16)
    assert a.score(X, Y) == pytest.approx(-a.loss_curve_[-1])
    with pytest.raises(DimensionError):
        TargetRegressor().fit(X, Y[:10])
    with pytest.raises(ValueError):
        TargetRegressor(epochs=-1).fit(X, Y)


def test_momentum_changes_trajectory():
    rng = np.random.default_rng(0)
    X, Y = rng.standard_normal((64, 3)), rng.standard_normal((64, 2))
    plain = TargetRegressor(hidden=(8,), epochs=3, momentum=0.0).fit(X, Y).loss_curve_
    heavy = TargetRegressor(hidden=(8,), epochs=3, momentum=0.9).fit(X, Y).loss_curve_
    assert plain[0] == heavy[0] and plain[-1] != heavy[-1]


def test_train_on_optimized_checks_dimension():
    D = OptimizedDataset(np.arange(4, dtype=np.uint64), np.zeros((4, 2)), np.zeros((4, 3), dtype=np.float32))
    assert train_on_optimized(D, {"hidden": (5,)}, epochs=1).n_outputs_ == 3
    with pytest.raises(DimensionError):
        train_on_optimized(D, {"n": 4})


def test_benchmark_shapes_and_stratification():
    train, ev = make_synthetic_benchmark(C=4, N=100, m=6, seed=2, n_eval=40)
    assert train.X.shape == (100, 6) and ev.X.shape == (40, 6)
    assert np.bincount(train.labels).tolist() == [25] * 4
    assert ev.ids[0] == 100
    again, _ = make_synthetic_benchmark(C=4, N=100, m=6, seed=2, n_eval=40)
    assert again.digest() == train.digest()
    with pytest.raises(ValueError):
        make_synthetic_benchmark(C=10, N=50)


def test_probe_separable_and_random():
    rng = np.random.default_rng(0)
    labels = np.arange(400) % 4
    separable = np.eye(4)[labels] * 5 + 0.1 * rng.standard_normal((400, 4))
    assert probe_representations(separable, labels).accuracy == 1.0
    noise = rng.standard_normal((400, 4))
    lo, hi = chance_interval(4, 200)
    result = probe_representations(noise, labels, probe_seed=1)
    assert lo <= result.accuracy <= hi
    assert set(result.per_class) == {0, 1, 2, 3}
    assert result.loss_curve == sorted(result.loss_curve, reverse=True)


def test_probe_two_classes_large_margin():
    train, _ = make_synthetic_benchmark(C=2, N=400, m=8, seed=0, margin=8.0, n_eval=4)
    assert probe_representations(train.X, train.labels, probe_seed=0).accuracy >= 0.99


def test_probe_is_seeded():
    rng = np.random.default_rng(0)
    R, labels = rng.standard_normal((200, 3)), np.arange(200) % 2
    assert probe_representations(R, labels, 5).accuracy == probe_representations(R, labels, 5).accuracy


def test_eval_set_validation():
    with pytest.raises(InvalidEvalError):
        EvalSet(np.zeros((3, 2)), [1, 1, 1])
    with pytest.raises(InvalidEvalError):
        EvalSet(np.zeros((3, 2)), [0, 1])
    with pytest.raises(InvalidEvalError):
        probe_representations(np.zeros((4, 2)), [0, 0, 0, 0])


def test_linear_probe_on_untrained_model_is_chance():
    train, ev = make_synthetic_benchmark(C=5, N=200, m=4, seed=0, n_eval=1000)
    D = OptimizedDataset(train.ids, train.X, np.zeros((200, 3), dtype=np.float32))
    model = train_on_optimized(D, {"hidden": (8,)}, epochs=0)
    lo, hi = chance_interval(5, 500)
    assert lo <= linear_probe(model, ev).accuracy <= hi


def test_chance_interval_by_hand():
    lo, hi = chance_interval(2, 100)
    assert lo == pytest.approx(0.5 - 2.5758 * 0.05) and hi == pytest.approx(0.5 + 2.5758 * 0.05)


def test_spearman_examples():
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
    # no ties: 1 - 6 * sum(d^2) / (n (n^2 - 1)) with d = (0, -2, 1, 1)
    assert spearman([1, 2, 3, 4], [1, 4, 2, 3]) == pytest.approx(1 - 6 * 6 / 60)
    assert spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)
    with pytest.raises(DegenerateRankingError):
        spearman([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        spearman([1, 2], [1, 2, 3])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=3, max_size=15))
def test_spearman_matches_scipy_with_ties(pairs):
    xs, ys = zip(*pairs)
    if len(set(xs)) < 2 or len(set(ys)) < 2:
        with pytest.raises(DegenerateRankingError):
            spearman(xs, ys)
        return
    assert spearman(xs, ys) == pytest.approx(spearmanr(xs, ys).statistic, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=3, max_size=12))
def test_spearman_invariant_under_monotone_maps(pairs):
    xs, ys = (np.array(v, dtype=np.int64) for v in zip(*pairs))
    if len(set(xs)) < 2 or len(set(ys)) < 2:
        return
    assert spearman(3 * xs - 7, ys ** 3 + 2 * ys) == spearman(xs, ys)


def test_optimized_targets_beat_random_targets():
    from coopt.config import ExperimentConfig
    from coopt.experiments import load_dataset, make_evaluator, run_experiment

    for seed in range(3):
        # a hidden layer narrower than the input, so what it keeps depends on the targets
        cfg = ExperimentConfig().with_overrides(seed=seed, **{"dataset.n_eval": 1000, "downstream.hidden": [8]})
        optimized, metrics = run_experiment(cfg)
        _, evalset = load_dataset(cfg)
        noise = np.random.default_rng(seed).standard_normal(optimized.Y.shape)
        random_acc = make_evaluator(cfg, evalset)(OptimizedDataset(optimized.ids, optimized.X, noise))
        assert metrics.probe_accuracy > random_acc, (seed, metrics.probe_accuracy, random_acc)

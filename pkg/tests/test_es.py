import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cutstop.es import (
    AdamMoments,
    EsConfig,
    SolveEvaluator,
    TrainingError,
    adam_step,
    compute_rewards,
    estimate_gradient,
    evaluate_candidate,
    sample_perturbations,
    train,
)
from cutstop.generators import generate, generate_many
from cutstop.hygro import HygroConfig, HygroParams
from cutstop.tree import SolveConfig
from oracles import adam_trace, standardized_softmax

finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_mirrored_pairs_and_determinism():
    e = sample_perturbations(4, 0.3, 7, seed=1)
    assert np.array_equal(e[1], -e[0]) and np.array_equal(e[3], -e[2])
    assert np.array_equal(e, sample_perturbations(4, 0.3, 7, seed=1))
    assert not np.array_equal(e, sample_perturbations(4, 0.3, 7, seed=2))
    with pytest.raises(ValueError):
        sample_perturbations(3, 0.3, 7, seed=1)


def test_perturbation_sample_mean():
    sigma, n = 0.5, 10**5
    e = sample_perturbations(n, sigma, 3, seed=9, mirrored=False)
    assert np.all(np.abs(e.mean(axis=0)) < 4 * sigma / math.sqrt(n))
    assert np.allclose(e.std(axis=0), sigma, rtol=0.02)


def test_reward_examples():
    assert np.allclose(compute_rewards([1, 1, 1]), [1 / 3] * 3, atol=1e-15)
    r = compute_rewards([1, 2])
    assert r[0] > r[1]
    r = compute_rewards([0, 10, 20])
    assert r[0] > r[1] > r[2]
    assert np.allclose(r, standardized_softmax([0, 10, 20]), rtol=1e-12, atol=0)
    with pytest.raises(ValueError):
        compute_rewards([1, math.inf])


@given(st.lists(finite, min_size=1, max_size=40))
def test_reward_simplex_and_order(p):
    r = compute_rewards(p)
    assert abs(r.sum() - 1) < 1e-12 and np.all(r > 0)
    assert np.allclose(r, standardized_softmax(p), rtol=1e-9, atol=1e-300)
    for i in range(len(p)):
        for j in range(len(p)):
            if p[i] < p[j]:
                assert r[i] >= r[j]


def test_reward_strict_order_for_separated_scores():
    p = [3.0, 1.0, 2.0, 0.5]
    r = compute_rewards(p)
    assert list(np.argsort(-r)) == list(np.argsort(p))


def test_gradient_examples():
    u = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(estimate_gradient([u, -u], [1, 0], 1.0), u / 2)
    e = sample_perturbations(8, 0.1, 5, seed=3)
    assert np.array_equal(estimate_gradient(e, np.full(8, 1 / 8), 0.1), np.zeros(5))
    with pytest.raises(ValueError):
        estimate_gradient(e, np.ones(7), 0.1)


def test_gradient_matches_summation_oracle(rng):
    eps = rng.standard_normal((4, 3))
    r = rng.random(4)
    want = [sum(r[i] * eps[i][j] for i in range(4)) / (4 * 0.2) for j in range(3)]
    assert np.allclose(estimate_gradient(eps, r, 0.2), want, rtol=1e-14, atol=1e-15)


@given(st.integers(1, 16), st.integers(1, 20), st.integers(0, 10**6))
def test_mirrored_tie_gradient_is_exactly_zero(half, dim, seed):
    k = 2 * half
    e = sample_perturbations(k, 0.07, dim, seed)
    r = compute_rewards(np.full(k, 4.2))
    assert np.all(estimate_gradient(e, r, 0.07) == 0.0)


def test_adam_fixed_point_and_first_step():
    cfg = EsConfig(alpha=0.01)
    theta = np.array([1.0, -2.0, 0.5])
    new, mom = adam_step(theta, np.zeros(3), AdamMoments.zeros(3), cfg)
    assert np.array_equal(new, theta) and mom.step == 1
    g = np.array([0.3, -4.0, 1e-3])
    new, _ = adam_step(theta, g, AdamMoments.zeros(3), cfg)
    assert np.allclose(new - theta, cfg.alpha * g / (np.abs(g) + cfg.eps_adam), rtol=1e-9)
    with pytest.raises(ValueError):
        adam_step(theta, np.zeros(2), AdamMoments.zeros(3), cfg)


def test_adam_matches_recurrence_oracle(rng):
    cfg = EsConfig(alpha=0.03, beta1=0.8, beta2=0.99, eps_adam=1e-6)
    theta = rng.standard_normal(4)
    grads = rng.standard_normal((6, 4))
    mom = AdamMoments.zeros(4)
    cur = theta.copy()
    for g in grads:
        cur, mom = adam_step(cur, g, mom, cfg)
    want, m, v = adam_trace(theta, grads.tolist(), 0.03, 0.8, 0.99, 1e-6)
    assert np.allclose(cur, want, rtol=1e-12, atol=1e-14)
    assert np.allclose(mom.m, m, rtol=1e-12) and np.allclose(mom.v, v, rtol=1e-12)
    assert mom.step == 6


def test_config_validation():
    with pytest.raises(ValueError):
        EsConfig(k=3)
    with pytest.raises(ValueError):
        EsConfig(sigma=0)
    with pytest.raises(ValueError):
        EsConfig(metric="vibes")
    EsConfig(k=3, mirrored=False)


def _quadratic(target):
    return lambda theta, batch: float(np.sum((theta - target) ** 2))


def test_train_zero_iterations_returns_init():
    init = np.arange(5.0)
    res = train(EsConfig(iterations=0), [None], init, _quadratic(np.zeros(5)))
    assert np.array_equal(res.theta, init) and res.history == []


def test_train_surrogate_converges():
    rng = np.random.default_rng(0)
    target = rng.standard_normal(10)
    cfg = EsConfig(k=32, sigma=0.1, alpha=0.05, iterations=500, seed=0)
    res = train(cfg, [None], np.zeros(10), _quadratic(target))
    assert len(res.history) == 500
    assert np.linalg.norm(res.theta - target) < 0.1
    assert res.best_score <= res.initial_score


def test_train_is_deterministic_and_logs():
    target = np.ones(6)
    cfg = EsConfig(k=4, sigma=0.1, alpha=0.05, iterations=15, seed=3, select_every=5)
    logged = []
    a = train(cfg, [None], np.zeros(6), _quadratic(target), log=logged.append)
    b = train(cfg, [None], np.zeros(6), _quadratic(target))
    assert a.history_json() == b.history_json()
    assert np.array_equal(a.theta, b.theta) and np.array_equal(a.final_theta, b.final_theta)
    assert logged == a.history
    assert ["centre_p" in h for h in a.history] == [(i + 1) % 5 == 0 for i in range(15)]


class _Quadratic:
    """Picklable surrogate so it can run in worker processes."""

    def __init__(self, target):
        self.target = np.asarray(target, dtype=float)

    def __call__(self, theta, batch):
        return float(np.sum((theta - self.target) ** 2))


def test_parallel_run_matches_serial():
    """Scores are gathered by candidate index, so completion order is irrelevant."""
    ev = _Quadratic(np.linspace(-1, 1, 5))
    cfg = EsConfig(k=6, sigma=0.2, alpha=0.05, iterations=6, seed=5)
    serial = train(cfg, [None], np.zeros(5), ev)
    parallel = train(EsConfig(k=6, sigma=0.2, alpha=0.05, iterations=6, seed=5, workers=2), [None], np.zeros(5), ev)
    assert np.array_equal(serial.final_theta, parallel.final_theta)
    assert serial.history_json() == parallel.history_json()


def test_batches_shared_within_iteration():
    seen = []

    def ev(theta, batch):
        seen.append(tuple(batch))
        return 0.0

    cfg = EsConfig(k=4, iterations=3, batch=2, seed=1, select_every=10)
    train(cfg, list(range(10)), np.zeros(3), ev)
    cand = [s for s in seen if len(s) == 2]
    assert len(cand) == 12
    for i in range(3):
        assert len(set(cand[4 * i: 4 * i + 4])) == 1


def test_nonfinite_scores_abort():
    with pytest.raises(TrainingError):
        train(EsConfig(k=2, iterations=1), [None], np.zeros(2), lambda th, b: math.nan if th[0] > 0 else 1.0)


def _bias_params(bias):
    cfg = HygroConfig()
    theta = np.zeros(cfg.size)
    theta[-1] = bias  # output bias of the last MLP layer
    return HygroParams(cfg, theta)


def test_evaluate_candidate_deterministic_and_sensitive():
    inst = generate_many("multi_knapsack", 4, 3, preset="oracle")[0]
    sc = SolveConfig(clock="logical", lp_limit=2000)
    lean, heavy = _bias_params(-50.0), _bias_params(50.0)
    assert evaluate_candidate(lean, [inst], sc) == evaluate_candidate(lean, [inst], sc)
    assert evaluate_candidate(lean, [inst], sc) != evaluate_candidate(heavy, [inst], sc)


def test_failed_candidate_scores_penalty():
    inst = generate("multi_knapsack", 1)  # needs branching, so the limit bites
    sc = SolveConfig(clock="logical", lp_limit=2)
    assert evaluate_candidate(_bias_params(0.0), [inst], sc) == 2.0
    assert evaluate_candidate(_bias_params(0.0), [inst], sc, penalty=123.0) == 123.0
    with pytest.raises(ValueError):
        evaluate_candidate(_bias_params(0.0), [], sc)
    with pytest.raises(ValueError):
        evaluate_candidate(_bias_params(0.0), [inst], SolveConfig(clock="logical"))


def test_solve_evaluator_matches_direct_call():
    insts = generate_many("multi_knapsack", 2, 8, preset="oracle")
    ev = SolveEvaluator(HygroConfig(), SolveConfig(clock="logical", lp_limit=500))
    theta = HygroParams.random(HygroConfig(), seed=1).theta
    assert ev(theta, insts) == evaluate_candidate(HygroParams(HygroConfig(), theta), insts, ev.solve_config)

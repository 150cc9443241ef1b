"""Evolution-strategies training of HYGRO parameters.

Each iteration perturbs the current parameter vector ``k`` times, scores
every perturbed network by solving a batch of training instances, turns the
scores into softmax rewards (lower score, higher reward), and takes an Adam
ascent step along the reward-weighted sum of perturbations.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .hygro import HygroConfig, HygroParams, HygroPolicy
from .tree import SolveConfig, solve

METRICS = ("logical_rounds", "time", "pdi")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class EsConfig:
    k: int = 32
    sigma: float = 0.05
    alpha: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    iterations: int = 200
    mirrored: bool = True
    metric: str = "logical_rounds"
    batch: int = 16
    seed: int = 0
    penalty: float | None = None
    workers: int = 1
    select_every: int = 1  # evaluate the centre on the full training set this often

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.mirrored and self.k % 2:
            raise ValueError("mirrored sampling needs an even k")
        if not self.sigma > 0 or not self.alpha > 0:
            raise ValueError("sigma and alpha must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.iterations < 0 or self.batch < 1 or self.workers < 1 or self.select_every < 1:
            raise ValueError("iterations >= 0, batch >= 1, workers >= 1, select_every >= 1 required")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")


# --------------------------------------------------------------------------
# building blocks


def sample_perturbations(k: int, sigma: float, dim: int, seed, mirrored: bool = True) -> np.ndarray:
    """``k x dim`` Gaussian perturbations scaled by ``sigma``.

    Mirrored sampling returns rows ``e1, -e1, e2, -e2, ...``.
    """
    rng = np.random.default_rng(seed)
    if mirrored:
        if k % 2:
            raise ValueError("mirrored sampling needs an even k")
        half = rng.standard_normal((k // 2, dim)) * sigma
        out = np.empty((k, dim))
        out[0::2] = half
        out[1::2] = -half
        return out
    return rng.standard_normal((k, dim)) * sigma


def compute_rewards(p) -> np.ndarray:
    """Softmax of the negated standardized scores; sums to one."""
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError("performances must be finite")
    z = (p - p.mean()) / (p.std() + 1e-8)
    logits = -z
    w = np.exp(logits - logits.max())
    return w / w.sum()


def estimate_gradient(eps, r, sigma: float) -> np.ndarray:
    """``(1 / (k sigma)) * sum_i r_i eps_i``, summed in candidate order."""
    eps = np.asarray(eps, dtype=float)
    r = np.asarray(r, dtype=float)
    if eps.ndim != 2 or eps.shape[0] != r.shape[0]:
        raise ValueError(f"{eps.shape[0] if eps.ndim == 2 else '?'} perturbations but {r.shape[0]} rewards")
    k = len(r)
    acc = np.zeros(eps.shape[1])
    for i in range(k):
        acc += r[i] * eps[i]
    return acc / (k * sigma)


@dataclass
class AdamMoments:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "AdamMoments":
        return cls(np.zeros(dim), np.zeros(dim), 0)


def adam_step(theta, grad, moments: AdamMoments, config: EsConfig) -> tuple[np.ndarray, AdamMoments]:
    """Bias-corrected Adam ascent step."""
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if theta.shape != grad.shape or moments.m.shape != theta.shape:
        raise ValueError("shape mismatch between parameters, gradient and moments")
    step = moments.step + 1
    m = config.beta1 * moments.m + (1 - config.beta1) * grad
    v = config.beta2 * moments.v + (1 - config.beta2) * grad * grad
    m_hat = m / (1 - config.beta1 ** step)
    v_hat = v / (1 - config.beta2 ** step)
    new = theta + config.alpha * m_hat / (np.sqrt(v_hat) + config.eps_adam)
    return new, AdamMoments(m, v, step)


# --------------------------------------------------------------------------
# candidate evaluation


def default_penalty(metric: str, solve_config: SolveConfig) -> float:
    if metric == "logical_rounds":
        if solve_config.lp_limit is None:
            raise ValueError("logical_rounds training needs solve_config.lp_limit or an explicit penalty")
        return float(solve_config.lp_limit)
    return float(solve_config.time_limit)


def instance_metric(stats, metric: str) -> float:
    if metric == "logical_rounds":
        return float(stats.lp_solves)
    if metric == "time":
        return float(stats.wall_time)
    return float(stats.pdi)


def evaluate_candidate(
    params: HygroParams,
    instances: Sequence,
    solve_config: SolveConfig,
    metric: str = "logical_rounds",
    penalty: float | None = None,
) -> float:
    """Mean metric of a HYGRO network over ``instances`` (lower is better).

    An instance that errors or does not finish with a proven status scores
    ``penalty``.
    """
    if not instances:
        raise ValueError("empty instance batch")
    if penalty is None:
        penalty = default_penalty(metric, solve_config)
    scores = []
    for inst in instances:
        try:
            stats = solve(inst, HygroPolicy(params), solve_config)
        except Exception:  # a broken candidate must not kill training
            scores.append(penalty)
            continue
        if stats.status not in ("optimal", "infeasible"):
            scores.append(penalty)
        else:
            scores.append(instance_metric(stats, metric))
    return float(np.mean(scores))


def _eval_job(args):
    evaluator, theta, batch = args
    return evaluator(theta, batch)


@dataclass
class SolveEvaluator:
    """Picklable ``(theta, instances) -> score`` for HYGRO candidates."""

    hygro: HygroConfig
    solve_config: SolveConfig
    metric: str = "logical_rounds"
    penalty: float | None = None

    def __call__(self, theta, instances) -> float:
        return evaluate_candidate(HygroParams(self.hygro, theta), instances, self.solve_config, self.metric, self.penalty)


# --------------------------------------------------------------------------
# training loop


@dataclass
class TrainState:
    theta: np.ndarray
    moments: AdamMoments
    iteration: int = 0
    history: list = field(default_factory=list)
    best_theta: np.ndarray | None = None
    best_score: float = math.inf


@dataclass
class TrainResult:
    theta: np.ndarray  # best centre on the full training set
    best_score: float
    initial_score: float
    history: list
    final_theta: np.ndarray

    def history_json(self) -> str:
        return json.dumps(self.history, sort_keys=True)


def _iteration_seeds(master: int, iterations: int):
    return np.random.SeedSequence(master).spawn(iterations)


def train(
    config: EsConfig,
    instances: Sequence,
    init_theta,
    evaluator: Callable[[np.ndarray, Sequence], float],
    log: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Run ES and return the centre with the best full-training-set score.

    ``evaluator(theta, batch)`` returns a score, lower being better.  Every
    candidate of an iteration sees the same instance batch.  Results are
    collected by candidate index, so ``workers > 1`` gives the same output
    as a serial run.
    """
    theta = np.array(init_theta, dtype=float)
    items = list(instances)
    if not items:
        raise ValueError("no training instances")
    state = TrainState(theta, AdamMoments.zeros(theta.size))
    initial = float(evaluator(theta, items))
    state.best_theta, state.best_score = theta.copy(), initial
    pool = ProcessPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for it, seq in enumerate(_iteration_seeds(config.seed, config.iterations)):
            pert_seed, batch_seed = seq.spawn(2)
            batch_rng = np.random.default_rng(batch_seed)
            size = min(config.batch, len(items))
            idx = np.sort(batch_rng.choice(len(items), size=size, replace=False))
            batch = [items[i] for i in idx]
            eps = sample_perturbations(config.k, config.sigma, theta.size, pert_seed, config.mirrored)
            jobs = [(evaluator, state.theta + e, batch) for e in eps]
            if pool is not None:
                p = np.array(list(pool.map(_eval_job, jobs)), dtype=float)
            else:
                p = np.array([_eval_job(j) for j in jobs], dtype=float)
            if not np.all(np.isfinite(p)):
                raise TrainingError(f"iteration {it}: non-finite candidate scores {p.tolist()}")
            r = compute_rewards(p)
            grad = estimate_gradient(eps, r, config.sigma)
            state.theta, state.moments = adam_step(state.theta, grad, state.moments, config)
            state.iteration = it + 1
            entry = {
                "iteration": it + 1,
                "mean_p": float(p.mean()),
                "best_p": float(p.min()),
                "reward_entropy": float(-(r * np.log(r)).sum()),
                "grad_norm": float(np.linalg.norm(grad)),
            }
            if (it + 1) % config.select_every == 0 or it + 1 == config.iterations:
                score = float(evaluator(state.theta, items))
                entry["centre_p"] = score
                if score < state.best_score:
                    state.best_score, state.best_theta = score, state.theta.copy()
            state.history.append(entry)
            if log is not None:
                log(entry)
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(state.best_theta, state.best_score, initial, state.history, state.theta.copy())


def config_to_dict(config: EsConfig) -> dict:
    return asdict(config)

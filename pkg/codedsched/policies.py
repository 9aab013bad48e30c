"""Baseline schedulers: Greedy, OneNode, Static Optimal Code and Random."""
import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .actions import Action, action_space
from .config import SystemConfig

_INV_E = math.exp(-1.0)


class Policy(Protocol):
    name: str

    def decide(self, state, mask: np.ndarray, rng: np.random.Generator) -> Action:
        ...


# ---------------------------
# Lambert W, lower branch
# ---------------------------

def lambert_w_minus1(x: float, tol: float = 1e-12) -> float:
    """Solve w * exp(w) = x for w <= -1, with -1/e <= x < 0.

    Bracketed bisection on (-inf, -1], where w*e^w decreases from 0 to -1/e,
    followed by Halley steps that are only accepted inside the bracket.
    """
    if not (x < 0.0 and x >= -_INV_E - 1e-15):
        raise ValueError(f"W_-1 is real only on [-1/e, 0), got {x}")
    if x <= -_INV_E:
        return -1.0

    lo, hi = -2.0, -1.0
    while lo * math.exp(lo) <= x:
        lo *= 2.0
        if lo < -1e4:
            break
    # g(lo) > x (closer to 0), g(hi) = -1/e < x
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid * math.exp(mid) > x:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * abs(mid):
            break
    w = 0.5 * (lo + hi)

    for _ in range(8):
        ew = math.exp(w)
        resid = w * ew - x
        if abs(resid) <= tol * 1e-3:
            break
        w1 = w + 1.0
        if w1 == 0.0:
            break
        step = resid / (ew * w1 - (w + 2.0) * resid / (2.0 * w1))
        cand = w - step
        if not lo <= cand <= hi:
            break
        w = cand
    return w


def static_optimal_k(available_count: int, lambda_hat: float) -> int:
    """k† = round((1 + 1/W_-1(-e^(-λ̂-1))) · |E_av|), ties up, clamped to [1, |E_av|]."""
    if available_count < 1:
        raise ValueError(f"available_count must be >= 1, got {available_count}")
    if not lambda_hat > 0:
        raise ValueError(f"lambda_hat must be > 0, got {lambda_hat}")
    x = -math.exp(-lambda_hat - 1.0)
    if x == 0.0:
        # exp underflow: W_-1 -> -inf, ratio -> 1
        return available_count
    ratio = 1.0 + 1.0 / lambert_w_minus1(x)
    k = math.floor(ratio * available_count + 0.5)
    return min(max(k, 1), available_count)


@dataclass(frozen=True)
class StaticCodeParams:
    lambda_hat: float

    def __post_init__(self):
        if not self.lambda_hat > 0:
            raise ValueError(f"lambda_hat must be > 0, got {self.lambda_hat}")


def estimate_lambda_hat(state, config: SystemConfig, mode: str = "available") -> StaticCodeParams:
    if mode == "all":
        nodes = range(config.num_nodes)
    elif mode == "available":
        nodes = state.available_nodes or range(config.num_nodes)
    else:
        raise ValueError(f"unknown lambda_hat mode '{mode}'")
    return StaticCodeParams(lambda_hat=float(np.mean([config.straggle_rates[j] for j in nodes])))


# ---------------------------
# Deciders
# ---------------------------

def _space(state):
    return action_space(len(state.node_available))


def _checked(action: Action, mask: np.ndarray) -> Action:
    if not mask[action.global_index]:
        raise RuntimeError(f"policy chose infeasible action {action.label()}")
    return action


def greedy_policy(state, mask, rng=None) -> Action:
    free = state.available_nodes
    space = _space(state)
    if state.head_task_size <= 0 or not free:
        return space.idle
    return _checked(space.lookup(len(free), len(free), free), mask)


def onenode_policy(state, mask, rng) -> Action:
    free = state.available_nodes
    space = _space(state)
    if state.head_task_size <= 0 or not free:
        return space.idle
    j = free[int(rng.integers(len(free)))]
    return _checked(space.lookup(1, 1, (j,)), mask)


def static_code_policy(state, mask, rng, params: StaticCodeParams) -> Action:
    free = state.available_nodes
    space = _space(state)
    if state.head_task_size <= 0 or not free:
        return space.idle
    k = static_optimal_k(len(free), params.lambda_hat)
    return _checked(space.lookup(len(free), k, free), mask)


def random_policy(state, mask, rng) -> Action:
    feasible = np.flatnonzero(mask)
    return _space(state)[int(feasible[rng.integers(len(feasible))])]


class GreedyPolicy:
    name = "greedy"

    def decide(self, state, mask, rng):
        return greedy_policy(state, mask, rng)


class OneNodePolicy:
    name = "onenode"

    def decide(self, state, mask, rng):
        return onenode_policy(state, mask, rng)


class StaticCodePolicy:
    name = "static"

    def __init__(self, config: SystemConfig, lambda_hat_mode: str = "available"):
        self.config = config
        self.lambda_hat_mode = lambda_hat_mode

    def decide(self, state, mask, rng):
        params = estimate_lambda_hat(state, self.config, self.lambda_hat_mode)
        return static_code_policy(state, mask, rng, params)


class RandomPolicy:
    name = "random"

    def decide(self, state, mask, rng):
        return random_policy(state, mask, rng)

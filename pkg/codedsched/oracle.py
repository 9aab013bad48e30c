"""Monte-Carlo serving-time oracle for a single task.

Minimizes the expected serving time of one task over every (n, k, subset)
built from the currently free nodes. The search is exponential in the number
of free nodes; it is a reference for small N, not a scheduler for the
long-run queueing objective.
"""
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from .actions import Action, action_space, subtask_size
from .config import SystemConfig
from .env import sample_retransmissions, sample_straggle, subtask_serving_seconds

Z_95 = 1.959963984540054


@dataclass(frozen=True)
class ExpectedServeEstimate:
    action: Action
    mean_seconds: float
    half_width_95: float
    replications: int


def _draw_nodes(config: SystemConfig, nodes: Sequence[int], R: int, rng: np.random.Generator) -> Dict[int, tuple]:
    """Per-node (H, straggle) draws shared by every action using that node."""
    return {
        j: (sample_retransmissions(config.disconnect_probs[j], rng, size=R),
            sample_straggle(config.straggle_rates[j], rng, size=R))
        for j in nodes
    }


def _estimate(config: SystemConfig, f: int, action: Action, draws: Dict[int, tuple]) -> ExpectedServeEstimate:
    size = subtask_size(f, action.k)
    times = np.stack([
        subtask_serving_seconds(draws[j][0], config.slot_seconds, draws[j][1], config.per_point_seconds[j], size)
        for j in action.subset
    ])
    kth = np.partition(times, action.k - 1, axis=0)[action.k - 1]
    R = kth.shape[0]
    return ExpectedServeEstimate(
        action=action,
        mean_seconds=float(kth.mean()),
        half_width_95=float(Z_95 * kth.std(ddof=1) / math.sqrt(R)),
        replications=R,
    )


def _check_reps(R: int):
    if R < 100:
        raise ValueError(f"need at least 100 replications, got {R}")


def estimate_serving_time(config: SystemConfig, f: int, action: Action, R: int,
                          rng: np.random.Generator) -> ExpectedServeEstimate:
    if action.is_idle:
        raise ValueError("the idle action has no serving time")
    if len(action.subset) != action.n or not 1 <= action.k <= action.n:
        raise ValueError(f"malformed action {action.label()}")
    if f < 1:
        raise ValueError(f"task size must be >= 1, got {f}")
    _check_reps(R)
    return _estimate(config, f, action, _draw_nodes(config, action.subset, R, rng))


def rank_actions(config: SystemConfig, f: int, available: Sequence[int], R: int,
                 rng: np.random.Generator) -> List[ExpectedServeEstimate]:
    """Every coded action over `available`, ascending by mean (ties by index)."""
    available = tuple(sorted(set(available)))
    if not available:
        raise ValueError("no available nodes")
    if available[0] < 0 or available[-1] >= config.num_nodes:
        raise ValueError(f"node index out of range 0..{config.num_nodes - 1}: {available}")
    _check_reps(R)
    draws = _draw_nodes(config, available, R, rng)
    space = action_space(config.num_nodes)
    free = set(available)
    estimates = [
        _estimate(config, f, a, draws)
        for a in space.actions
        if not a.is_idle and free.issuperset(a.subset)
    ]
    return sorted(estimates, key=lambda e: (e.mean_seconds, e.action.global_index))


def brute_force_argmin(config: SystemConfig, f: int, available: Sequence[int], R: int,
                       rng: np.random.Generator) -> Action:
    return rank_actions(config, f, available, R, rng)[0].action


def myopic_oracle_policy(state, mask, rng, config: SystemConfig, R: int) -> Action:
    space = action_space(config.num_nodes)
    if state.head_task_size <= 0 or not state.available_nodes:
        return space.idle
    action = brute_force_argmin(config, state.head_task_size, state.available_nodes, R, rng)
    if not mask[action.global_index]:
        raise RuntimeError(f"oracle chose infeasible action {action.label()}")
    return action


class MyopicOraclePolicy:
    name = "myopic-oracle"

    def __init__(self, config: SystemConfig, reps: int):
        self.config = config
        self.reps = reps

    def decide(self, state, mask, rng):
        return myopic_oracle_policy(state, mask, rng, self.config, self.reps)

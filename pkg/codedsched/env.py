"""Slotted-time edge environment: task queue, unreliable links, straggling nodes.

One slot runs, in order: departures of decoded tasks (and release of nodes
whose sub-task finished), a Bernoulli arrival, the scheduling action on the
earliest undispatched task, and the reward -m where m counts every resident
task, dispatched or not.

All randomness flows through one numpy Generator (PCG64) owned by the
environment, so (config, seed, action sequence) fixes the trajectory.
"""
import heapq
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .actions import Action, ActionSpace, action_space, subtask_size
from .config import SystemConfig


def make_rng(seed: int | np.random.SeedSequence | None) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def split_seed(seed: int, n: int, purpose: int = 0) -> List[np.random.SeedSequence]:
    """Independent child streams (environment, policy, evaluation, ...).

    Different `purpose` values give disjoint families from the same seed.
    """
    return np.random.SeedSequence(seed, spawn_key=(purpose,)).spawn(n)


# ---------------------------
# Samplers and time model
# ---------------------------

def sample_retransmissions(p: float, rng: np.random.Generator, size=None):
    """Slots needed to get one transmission through: Geometric(1 - p) on {1, 2, ...}."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"disconnect probability must be in [0, 1), got {p}")
    return rng.geometric(1.0 - p, size=size)


def sample_straggle(rate: float, rng: np.random.Generator, size=None):
    """Random memory-access delay in seconds, Exponential(rate)."""
    if not rate > 0:
        raise ValueError(f"straggle rate must be > 0, got {rate}")
    return rng.exponential(1.0 / rate, size=size)


def subtask_serving_seconds(H, xi: float, straggle, eta: float, size: int):
    """Round trip over the link (one H covers both directions) plus compute time."""
    if np.any(np.asarray(H) < 1) or size < 1:
        raise ValueError(f"need H >= 1 and subtask size >= 1, got H={H}, size={size}")
    return 2 * H * xi + straggle + eta * size


def kth_min(values, k: int):
    """k-th smallest element, duplicates counted with multiplicity."""
    values = list(values)
    if not 1 <= k <= len(values):
        raise ValueError(f"k={k} out of range for {len(values)} values")
    return heapq.nsmallest(k, values)[-1]


def ceil_slots(seconds: float, slot_seconds: float) -> int:
    # 1e-9 absorbs float noise such as 2.0000000000000004
    return max(1, math.ceil(seconds / slot_seconds - 1e-9))


# ---------------------------
# Domain types
# ---------------------------

@dataclass(frozen=True)
class SystemState:
    queue_count: int
    head_task_size: int
    node_available: Tuple[bool, ...]

    @property
    def bitmask(self) -> int:
        return sum(1 << j for j, free in enumerate(self.node_available) if free)

    @property
    def available_nodes(self) -> Tuple[int, ...]:
        return tuple(j for j, free in enumerate(self.node_available) if free)

    def key(self) -> Tuple[int, int, int]:
        return (self.queue_count, self.head_task_size, self.bitmask)


@dataclass
class LearningTask:
    id: int
    size: int
    arrival_slot: int
    dispatch_slot: Optional[int] = None
    completion_slot: Optional[int] = None


@dataclass(frozen=True)
class InFlightTask:
    task_id: int
    k: int
    assignments: Tuple[Tuple[int, int], ...]  # (node, sub-task completion slot)
    task_completion_slot: int

    def __post_init__(self):
        if not 1 <= self.k <= len(self.assignments):
            raise ValueError(f"k={self.k} must be in [1, {len(self.assignments)}]")
        expected = kth_min([slot for _, slot in self.assignments], self.k)
        if self.task_completion_slot != expected:
            raise ValueError(f"task completion slot {self.task_completion_slot} != k-th sub-task slot {expected}")


@dataclass(frozen=True)
class StepOutcome:
    reward: int
    next_state: SystemState
    dropped_this_slot: int
    completed_task_ids: Tuple[int, ...] = field(default_factory=tuple)


def encode_state(state: SystemState, config: SystemConfig) -> np.ndarray:
    """(m/M, f/f_max, e_1..e_N), all in [0, 1]."""
    out = np.empty(config.num_nodes + 2, dtype=np.float64)
    out[0] = state.queue_count / config.queue_capacity
    out[1] = state.head_task_size / config.f_max
    out[2:] = np.asarray(state.node_available, dtype=np.float64)
    return out


def dispatch(task: LearningTask, action: Action, current_slot: int, rng: np.random.Generator,
             config: SystemConfig, node_available=None) -> InFlightTask:
    """Encode `task` with (n, k) and sample one serving time per assigned node."""
    if action.is_idle:
        raise ValueError("cannot dispatch with the idle action")
    if task.dispatch_slot is not None:
        raise ValueError(f"task {task.id} was already dispatched at slot {task.dispatch_slot}")
    if len(action.subset) != action.n:
        raise ValueError(f"subset size {len(action.subset)} != n={action.n}")
    if not 1 <= action.k <= action.n:
        raise ValueError(f"k={action.k} must be in [1, n={action.n}]")
    if node_available is not None:
        busy = [j for j in action.subset if not node_available[j]]
        if busy:
            raise ValueError(f"nodes {busy} are busy")

    size = subtask_size(task.size, action.k)
    assignments = []
    for j in action.subset:
        H = sample_retransmissions(config.disconnect_probs[j], rng)
        straggle = sample_straggle(config.straggle_rates[j], rng)
        seconds = subtask_serving_seconds(H, config.slot_seconds, straggle, config.per_point_seconds[j], size)
        assignments.append((j, current_slot + ceil_slots(seconds, config.slot_seconds)))

    task.dispatch_slot = current_slot
    return InFlightTask(
        task_id=task.id,
        k=action.k,
        assignments=tuple(assignments),
        task_completion_slot=kth_min([slot for _, slot in assignments], action.k),
    )


# ---------------------------
# Environment
# ---------------------------

class EdgeEnv:
    """MEC server queue in front of N edge nodes. Single-threaded; owns its RNG."""

    def __init__(self, config: SystemConfig, seed=None, rng: np.random.Generator | None = None):
        self.config = config
        self.space: ActionSpace = action_space(config.num_nodes)
        self.rng = rng if rng is not None else make_rng(seed)
        self.slot = 0
        self.tasks: Dict[int, LearningTask] = {}  # resident tasks in arrival order
        self.inflight: Dict[int, InFlightTask] = {}
        self.node_holder: List[Optional[int]] = [None] * config.num_nodes
        self.node_release: List[int] = [0] * config.num_nodes
        self.completed: List[LearningTask] = []
        self.arrivals = 0
        self.drops = 0
        self._next_id = 0

    # -- observation --

    @property
    def action_count(self) -> int:
        return len(self.space)

    @property
    def state(self) -> SystemState:
        head = self._head_task()
        return SystemState(
            queue_count=len(self.tasks),
            head_task_size=head.size if head else 0,
            node_available=tuple(h is None for h in self.node_holder),
        )

    def observe(self) -> np.ndarray:
        return encode_state(self.state, self.config)

    def state_key(self) -> Tuple[int, int, int]:
        return self.state.key()

    def mask(self) -> np.ndarray:
        return self.space.feasibility_mask(self.state)

    @property
    def resident(self) -> int:
        return len(self.tasks)

    def _head_task(self) -> Optional[LearningTask]:
        for task in self.tasks.values():
            if task.dispatch_slot is None:
                return task
        return None

    # -- dynamics --

    def step(self, index: int) -> StepOutcome:
        return self.advance_slot(self.space[index])

    def advance_slot(self, action: Action) -> StepOutcome:
        if not self.mask()[action.global_index]:
            raise ValueError(f"action {action.label()} is infeasible in state {self.state}")
        t = self.slot

        # (1) departures
        done_ids = [tid for tid, fl in self.inflight.items() if fl.task_completion_slot == t]
        for tid in done_ids:
            del self.inflight[tid]
            task = self.tasks.pop(tid)
            task.completion_slot = t
            self.completed.append(task)
            for j, holder in enumerate(self.node_holder):
                if holder == tid:
                    self.node_holder[j] = None  # decoded, remaining sub-tasks cancelled
        for j, holder in enumerate(self.node_holder):
            if holder is not None and self.node_release[j] <= t:
                self.node_holder[j] = None

        # (2) arrival
        dropped = 0
        if self.rng.random() < self.config.arrival_prob:
            self.arrivals += 1
            size = int(self.config.task_sizes[self.rng.integers(len(self.config.task_sizes))])
            if len(self.tasks) >= self.config.queue_capacity:
                self.drops += 1
                dropped = 1
            else:
                task = LearningTask(id=self._next_id, size=size, arrival_slot=t)
                self._next_id += 1
                self.tasks[task.id] = task

        # (3) action
        if not action.is_idle:
            head = self._head_task()
            available = [h is None for h in self.node_holder]
            flight = dispatch(head, action, t, self.rng, self.config, available)
            self.inflight[head.id] = flight
            for j, slot in flight.assignments:
                self.node_holder[j] = head.id
                self.node_release[j] = slot

        # (4) reward, (5) clock
        self.slot += 1
        return StepOutcome(
            reward=-len(self.tasks),
            next_state=self.state,
            dropped_this_slot=dropped,
            completed_task_ids=tuple(done_ids),
        )

    def check_invariants(self) -> None:
        """Re-assert queue, node-ownership and conservation invariants."""
        cfg = self.config
        if not 0 <= len(self.tasks) <= cfg.queue_capacity:
            raise RuntimeError(f"queue occupancy {len(self.tasks)} outside [0, {cfg.queue_capacity}]")
        if self.arrivals != len(self.completed) + self.drops + len(self.tasks):
            raise RuntimeError("task conservation violated")
        # next slot to process is self.slot; unfinished means slot > self.slot - 1
        owners = {j: [] for j in range(cfg.num_nodes)}
        for fl in self.inflight.values():
            if fl.task_completion_slot < self.slot:
                raise RuntimeError(f"task {fl.task_id} should have departed")
            kth = kth_min([s for _, s in fl.assignments], fl.k)
            if kth != fl.task_completion_slot:
                raise RuntimeError(f"task {fl.task_id} completion slot is not the k-th order statistic")
            for j, s in fl.assignments:
                if s >= self.slot:
                    owners[j].append(fl.task_id)
        for j in range(cfg.num_nodes):
            busy = self.node_holder[j] is not None
            if busy != (len(owners[j]) == 1) or len(owners[j]) > 1:
                raise RuntimeError(f"node {j} ownership mismatch: holder={self.node_holder[j]}, owners={owners[j]}")

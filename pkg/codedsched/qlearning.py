"""Tabular Q-learning over (m, head task size, availability bitmask) states."""
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .actions import Action, action_space
from .config import LOG_QUIET, QLearnConfig, SystemConfig
from .env import make_rng


def _log(msg: str):
    if not LOG_QUIET:
        print(f"[QLearn] {msg}", flush=True)


StateKey = Tuple[int, int, int]


def q_update(q: float, r: float, max_next_q: float, tau: float, gamma: float) -> float:
    return q + tau * (r + gamma * max_next_q - q)


def masked_argmax(values: np.ndarray, mask: np.ndarray) -> int:
    """Feasible argmax; ties go to the lowest index."""
    if not mask.any():
        raise ValueError("no feasible action")
    return int(np.argmax(np.where(mask, values, -np.inf)))


def epsilon_greedy(qrow: np.ndarray, mask: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    if not mask.any():
        raise ValueError("no feasible action")
    if rng.random() < epsilon:
        feasible = np.flatnonzero(mask)
        return int(feasible[rng.integers(len(feasible))])
    return masked_argmax(qrow, mask)


class QTable:
    """Sparse table: unseen (state, action) pairs read as 0.

    `written` marks entries that were ever set, so a learned 0 can be told
    apart from an action never tried.
    """

    def __init__(self, action_count: int):
        self.action_count = action_count
        self.rows: Dict[StateKey, np.ndarray] = {}
        self.written: Dict[StateKey, np.ndarray] = {}

    def __len__(self):
        return len(self.rows)

    def row(self, key: StateKey) -> np.ndarray:
        r = self.rows.get(key)
        if r is None:
            return np.zeros(self.action_count)
        return r

    def tried(self, key: StateKey) -> np.ndarray:
        w = self.written.get(key)
        if w is None:
            return np.zeros(self.action_count, dtype=bool)
        return w

    def _mutable_row(self, key: StateKey) -> np.ndarray:
        r = self.rows.get(key)
        if r is None:
            r = self.rows[key] = np.zeros(self.action_count)
            self.written[key] = np.zeros(self.action_count, dtype=bool)
        return r

    def get(self, key: StateKey, action: int) -> float:
        return float(self.row(key)[action])

    def set(self, key: StateKey, action: int, value: float) -> None:
        if not math.isfinite(value):
            raise RuntimeError(f"non-finite Q-value at {key}, action {action}")
        if not 0 <= action < self.action_count:
            raise ValueError(f"action index {action} outside 0..{self.action_count - 1}")
        self._mutable_row(key)[action] = value
        self.written[key][action] = True

    def greedy(self, key: StateKey, mask: np.ndarray) -> int:
        return masked_argmax(self.row(key), mask)

    # -- checkpoint: one "m,f,bitmask,action_index,q_value" line per written entry --

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(f"# qtable actions={self.action_count}\n")
            for key in sorted(self.rows):
                m, f, bits = key
                for a in np.flatnonzero(self.written[key]):
                    fh.write(f"{m},{f},{bits},{a},{float(self.rows[key][a])!r}\n")

    @classmethod
    def load(cls, path: str) -> "QTable":
        with open(path) as fh:
            header = fh.readline().strip()
            if not header.startswith("# qtable actions="):
                raise ValueError(f"{path} is not a Q-table checkpoint")
            table = cls(int(header.split("=", 1)[1]))
            for lineno, line in enumerate(fh, start=2):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 5:
                    raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
                try:
                    m, f, bits, a = (int(p) for p in parts[:4])
                    q = float(parts[4])
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: cannot parse {line!r}") from None
                if not 0 <= a < table.action_count:
                    raise ValueError(f"{path}:{lineno}: action index {a} outside 0..{table.action_count - 1}")
                if not math.isfinite(q):
                    raise ValueError(f"{path}:{lineno}: non-finite Q-value")
                table.set((m, f, bits), a, q)
        return table


def state_key_space_size(config: SystemConfig) -> int:
    return (config.queue_capacity + 1) * (len(config.task_sizes) + 1) * 2 ** config.num_nodes


def valid_state_key(key: StateKey, config: SystemConfig) -> bool:
    m, f, bits = key
    return (0 <= m <= config.queue_capacity
            and (f == 0 or f in config.task_sizes)
            and 0 <= bits < 2 ** config.num_nodes)


@dataclass
class QLearningResult:
    table: QTable
    curve: List[dict] = field(default_factory=list)


def train_qlearning(env, config: QLearnConfig, seed: int = 0,
                    evaluate: Optional[Callable[[QTable], float]] = None,
                    eval_every: int = 0) -> QLearningResult:
    """Epsilon-greedy Q-learning, one table update per environment step.

    `env` needs action_count, state_key(), mask() and step(index) -> outcome
    with a `reward`.
    """
    rng = make_rng(seed)
    table = QTable(env.action_count)
    epsilon = config.epsilon_start
    curve: List[dict] = []

    key, mask = env.state_key(), env.mask()
    last_td = 0.0
    for t in range(config.iterations):
        a = epsilon_greedy(table.row(key), mask, epsilon, rng)
        outcome = env.step(a)
        next_key, next_mask = env.state_key(), env.mask()

        max_next = float(np.max(np.where(next_mask, table.row(next_key), -np.inf)))
        q = table.get(key, a)
        new_q = q_update(q, outcome.reward, max_next, config.tau(t), config.gamma)
        table.set(key, a, new_q)
        last_td = new_q - q

        key, mask = next_key, next_mask
        epsilon = max(config.epsilon_floor, epsilon * config.epsilon_decay)

        if eval_every and evaluate and (t + 1) % eval_every == 0:
            reward = evaluate(table)
            curve.append({"iteration": t + 1, "epsilon": epsilon, "loss": last_td ** 2, "eval_reward": reward})
            _log(f"iter {t + 1}: eps={epsilon:.4f} states={len(table)} eval_reward={reward:.4f}")

    return QLearningResult(table=table, curve=curve)


class QTablePolicy:
    """Frozen greedy policy pi(s) = argmax_a Q(s, a) over feasible, tried actions.

    A state the table never saw falls back to the lowest-index feasible code
    action while a task waits, so evaluation cannot stall on Idle with a full
    queue and free nodes.
    """
    name = "qlearn"

    def __init__(self, table: QTable):
        self.table = table

    def decide(self, state, mask, rng=None) -> Action:
        space = action_space(len(state.node_available))
        key = state.key()
        tried = mask & self.table.tried(key)
        if tried.any():
            return space[masked_argmax(self.table.row(key), tried)]
        dispatch = mask.copy()
        dispatch[space.idle.global_index] = False
        if state.head_task_size > 0 and dispatch.any():
            return space[int(np.flatnonzero(dispatch)[0])]
        return space[masked_argmax(np.zeros(len(mask)), mask)]

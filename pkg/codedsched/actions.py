"""Joint (n, k, node subset) action set with a fixed global index."""
import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import List, Tuple

import numpy as np
import pandas as pd

IDLE = "idle"
CODE = "code"


@dataclass(frozen=True)
class Action:
    kind: str
    n: int
    k: int
    subset: Tuple[int, ...]
    global_index: int

    @property
    def is_idle(self) -> bool:
        return self.kind == IDLE

    def label(self) -> str:
        if self.is_idle:
            return "idle"
        nodes = " ".join(str(j) for j in self.subset)
        return f"({self.n},{self.k},{{{nodes}}})"


def action_count(num_nodes: int) -> int:
    return 1 + num_nodes * 2 ** (num_nodes - 1)


def enumerate_actions(num_nodes: int) -> List[Action]:
    """Idle first, then by n, then lexicographic subset, then k."""
    if num_nodes < 1:
        raise ValueError(f"num_nodes must be >= 1, got {num_nodes}")
    return list(action_space(num_nodes).actions)


def subtask_size(f: int, k: int) -> int:
    if f < 1 or k < 1:
        raise ValueError(f"subtask_size needs f >= 1 and k >= 1, got f={f}, k={k}")
    return math.ceil(f / k)


class ActionSpace:
    """Immutable enumeration plus per-action node bitmasks for fast masking."""

    def __init__(self, num_nodes: int):
        if num_nodes < 1:
            raise ValueError(f"num_nodes must be >= 1, got {num_nodes}")
        self.num_nodes = num_nodes
        acts = [Action(IDLE, 0, 0, (), 0)]
        for n in range(1, num_nodes + 1):
            for subset in combinations(range(num_nodes), n):
                for k in range(1, n + 1):
                    acts.append(Action(CODE, n, k, subset, len(acts)))
        self.actions: Tuple[Action, ...] = tuple(acts)
        self._bits = np.array([sum(1 << j for j in a.subset) for a in acts], dtype=np.int64)
        self._bits.setflags(write=False)
        self._lookup = {(a.n, a.k, a.subset): a for a in acts}

    def __len__(self):
        return len(self.actions)

    def __getitem__(self, index: int) -> Action:
        return self.actions[index]

    @property
    def idle(self) -> Action:
        return self.actions[0]

    def lookup(self, n: int, k: int, subset) -> Action:
        key = (n, k, tuple(sorted(subset)))
        if key not in self._lookup:
            raise ValueError(f"no action (n={n}, k={k}, subset={key[2]}) for {self.num_nodes} nodes")
        return self._lookup[key]

    def feasibility_mask(self, state) -> np.ndarray:
        """Idle always; a coded action iff a task is waiting and every chosen node is free."""
        if len(state.node_available) != self.num_nodes:
            raise ValueError(f"state has {len(state.node_available)} nodes, action space has {self.num_nodes}")
        if state.head_task_size <= 0:
            mask = np.zeros(len(self.actions), dtype=bool)
        else:
            busy = sum(1 << j for j, free in enumerate(state.node_available) if not free)
            mask = (self._bits & busy) == 0
        mask[0] = True
        return mask

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "index": [a.global_index for a in self.actions],
                "n": [a.n for a in self.actions],
                "k": [a.k for a in self.actions],
                "subset": [" ".join(str(j) for j in a.subset) for a in self.actions],
            }
        )


@lru_cache(maxsize=16)
def action_space(num_nodes: int) -> ActionSpace:
    return ActionSpace(num_nodes)


def feasibility_mask(state) -> np.ndarray:
    return action_space(len(state.node_available)).feasibility_mask(state)


def export_action_table(num_nodes: int, path: str) -> None:
    action_space(num_nodes).to_frame().to_csv(path, index=False)

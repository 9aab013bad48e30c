"""Dueling and plain deep Q-networks in numpy with hand-written backprop.

Dueling layout: input -> shared relu layer -> value head V (1 unit) and
advantage head G (|A| units), combined as Q = V + (G - mean(G)).
Plain layout: input -> relu -> relu -> |A| outputs.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .actions import Action, action_space
from .config import LOG_QUIET, SystemConfig, TrainConfig
from .env import encode_state, make_rng
from .qlearning import masked_argmax

CHECKPOINT_VERSION = 1


def _log(msg: str):
    if not LOG_QUIET:
        print(f"[DQN] {msg}", flush=True)


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def relu(x):
    return np.maximum(0.0, x)


class _Net:
    kind = ""
    param_names: Tuple[str, ...] = ()

    def __init__(self, input_dim: int, action_count: int, hidden: int, params: Dict[str, np.ndarray]):
        self.input_dim = input_dim
        self.action_count = action_count
        self.hidden = hidden
        self.params = params

    def __getattr__(self, name):
        params = self.__dict__.get("params")
        if params is not None and name in params:
            return params[name]
        raise AttributeError(name)

    def copy(self):
        return type(self)(self.input_dim, self.action_count, self.hidden,
                          {k: v.copy() for k, v in self.params.items()})

    def load_from(self, other: "_Net") -> None:
        for k in self.param_names:
            self.params[k][...] = other.params[k]

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} features, got {X.shape[-1]}")
        return X

    def q_values(self, X) -> np.ndarray:
        raise NotImplementedError

    def gradients(self, X, actions, targets) -> Tuple[float, Dict[str, np.ndarray]]:
        raise NotImplementedError

    def set_output_level(self, level: float) -> None:
        """Reset the output bias so Q-values start near `level`."""
        raise NotImplementedError


class DuelingNet(_Net):
    kind = "dueling"
    param_names = ("W1", "b1", "Wv", "bv", "Wa", "ba")

    @classmethod
    def init(cls, input_dim: int, action_count: int, hidden: int, rng: np.random.Generator) -> "DuelingNet":
        return cls(input_dim, action_count, hidden, {
            "W1": _glorot(rng, hidden, input_dim), "b1": np.zeros(hidden),
            "Wv": _glorot(rng, 1, hidden), "bv": np.zeros(1),
            "Wa": _glorot(rng, action_count, hidden), "ba": np.zeros(action_count),
        })

    def streams(self, X):
        X = self._check(X)
        z1 = X @ self.W1.T + self.b1
        h = relu(z1)
        V = h @ self.Wv.T + self.bv
        G = h @ self.Wa.T + self.ba
        return z1, h, V, G

    def q_values(self, X) -> np.ndarray:
        return forward(self, X)[2]

    def gradients(self, X, actions, targets):
        return backward(self, (np.asarray(X), np.asarray(actions)), np.asarray(targets))

    def set_output_level(self, level: float) -> None:
        self.params["bv"][...] = level
        self.params["ba"][...] = 0.0


def combine_mean(V, G):
    return V + (G - G.mean(axis=-1, keepdims=True))


def combine_max(V, G):
    return V + (G - G.max(axis=-1, keepdims=True))


def forward(net: DuelingNet, features):
    """(V, G, Q) with the mean-subtracted combine; 1-D input gives scalar V."""
    _, _, V, G = net.streams(features)
    Q = combine_mean(V, G)
    if np.ndim(features) == 1:
        return float(V[0]), G, Q
    return V[:, 0], G, Q


def forward_max_variant(net: DuelingNet, features) -> np.ndarray:
    _, _, V, G = net.streams(features)
    return combine_max(V, G)


def backward(net: DuelingNet, batch, targets):
    """Gradients of (1/B) sum_j (y_j - Q(s_j, a_j))^2 for every parameter.

    Returns (loss, grads) with grads keyed like net.params.
    """
    X, actions = batch
    X = np.atleast_2d(net._check(X))
    actions = np.asarray(actions, dtype=np.int64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    B = X.shape[0]
    if B == 0 or len(actions) != B or len(targets) != B:
        raise ValueError("batch, actions and targets must be non-empty and aligned")

    z1, h, V, G = net.streams(X)
    Q = combine_mean(V, G)
    rows = np.arange(B)
    resid = targets - Q[rows, actions]
    loss = float(np.mean(resid ** 2))

    dQ = np.zeros_like(Q)
    dQ[rows, actions] = -2.0 * resid / B
    dV = dQ.sum(axis=1, keepdims=True)
    dG = dQ - dQ.sum(axis=1, keepdims=True) / net.action_count

    grads = {
        "Wa": dG.T @ h, "ba": dG.sum(axis=0),
        "Wv": dV.T @ h, "bv": dV.sum(axis=0),
    }
    dz1 = (dG @ net.Wa + dV @ net.Wv) * (z1 > 0)
    grads["W1"] = dz1.T @ X
    grads["b1"] = dz1.sum(axis=0)
    return loss, grads


class PlainNet(_Net):
    kind = "dqn"
    param_names = ("W1", "b1", "W2", "b2", "W3", "b3")

    @classmethod
    def init(cls, input_dim: int, action_count: int, hidden: int, rng: np.random.Generator) -> "PlainNet":
        return cls(input_dim, action_count, hidden, {
            "W1": _glorot(rng, hidden, input_dim), "b1": np.zeros(hidden),
            "W2": _glorot(rng, hidden, hidden), "b2": np.zeros(hidden),
            "W3": _glorot(rng, action_count, hidden), "b3": np.zeros(action_count),
        })

    def _layers(self, X):
        X = self._check(X)
        z1 = X @ self.W1.T + self.b1
        h1 = relu(z1)
        z2 = h1 @ self.W2.T + self.b2
        h2 = relu(z2)
        return z1, h1, z2, h2, h2 @ self.W3.T + self.b3

    def q_values(self, X) -> np.ndarray:
        return self._layers(X)[-1]

    def gradients(self, X, actions, targets):
        X = np.atleast_2d(self._check(X))
        actions = np.asarray(actions, dtype=np.int64).reshape(-1)
        targets = np.asarray(targets, dtype=np.float64).reshape(-1)
        B = X.shape[0]
        z1, h1, z2, h2, Q = self._layers(X)
        rows = np.arange(B)
        resid = targets - Q[rows, actions]
        dQ = np.zeros_like(Q)
        dQ[rows, actions] = -2.0 * resid / B

        grads = {"W3": dQ.T @ h2, "b3": dQ.sum(axis=0)}
        dz2 = (dQ @ self.W3) * (z2 > 0)
        grads["W2"] = dz2.T @ h1
        grads["b2"] = dz2.sum(axis=0)
        dz1 = (dz2 @ self.W2) * (z1 > 0)
        grads["W1"] = dz1.T @ X
        grads["b1"] = dz1.sum(axis=0)
        return float(np.mean(resid ** 2)), grads

    def set_output_level(self, level: float) -> None:
        self.params["b3"][...] = level


def td_target(r, gamma: float, target_q_next, next_mask):
    """y = r + gamma * max over feasible next actions; works on single rows or batches."""
    masked = np.where(next_mask, target_q_next, -np.inf)
    return r + gamma * masked.max(axis=-1)


# ---------------------------
# Optimizers
# ---------------------------

class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            params[k] -= self.lr * g


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return SGD(config.learning_rate)
    return Adam(config.learning_rate)


# ---------------------------
# Replay memory
# ---------------------------

class ReplayBuffer:
    """FIFO ring of (s, a, r, s', mask(s')) with uniform sampling."""

    def __init__(self, capacity: int, feature_dim: int, action_count: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.states = np.zeros((capacity, feature_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, feature_dim))
        self.next_masks = np.zeros((capacity, action_count), dtype=bool)
        self._pos = 0
        self._size = 0

    def __len__(self):
        return self._size

    def add(self, s, a: int, r: float, s_next, next_mask) -> None:
        i = self._pos
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = s_next
        self.next_masks[i] = next_mask
        self._pos = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        if self._size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self._size, size=batch_size)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.next_masks[idx])


# ---------------------------
# Training (experience replay + quasi-static target)
# ---------------------------

@dataclass
class DQNResult:
    net: _Net
    target: _Net
    curve: List[dict] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)


def _train(env, net: _Net, config: TrainConfig, rng: np.random.Generator,
           evaluate: Optional[Callable[[_Net], float]], eval_every: int) -> DQNResult:
    target = net.copy()
    optimizer = make_optimizer(config)
    buffer = ReplayBuffer(config.buffer_capacity, net.input_dim, net.action_count)
    epsilon = config.epsilon_start
    curve: List[dict] = []
    losses: List[float] = []
    last_loss = float("nan")

    s, mask = env.observe(), env.mask()
    for it in range(config.iterations):
        if rng.random() < epsilon:
            feasible = np.flatnonzero(mask)
            a = int(feasible[rng.integers(len(feasible))])
        else:
            a = masked_argmax(net.q_values(s), mask)

        outcome = env.step(a)
        s_next, next_mask = env.observe(), env.mask()
        buffer.add(s, a, config.reward_scale * outcome.reward, s_next, next_mask)
        s, mask = s_next, next_mask

        if it + 1 == config.bias_warmup:
            level = float(np.mean(buffer.rewards[:len(buffer)])) / (1.0 - config.gamma)
            net.set_output_level(level)
            target.load_from(net)
            _log(f"{net.kind} iter {it + 1}: output level set to {level:.3f}")

        if len(buffer) >= config.batch_size:
            bs, ba, br, bs_next, bmask = buffer.sample(config.batch_size, rng)
            y = td_target(br, config.gamma, target.q_values(bs_next), bmask)
            last_loss, grads = net.gradients(bs, ba, y)
            optimizer.step(net.params, grads)
            losses.append(last_loss)

        if (it + 1) % config.target_period == 0:
            target.load_from(net)

        epsilon = max(config.epsilon_floor, epsilon * config.epsilon_decay)

        if eval_every and evaluate and (it + 1) % eval_every == 0:
            reward = evaluate(net)
            curve.append({"iteration": it + 1, "epsilon": epsilon, "loss": last_loss, "eval_reward": reward})
            _log(f"{net.kind} iter {it + 1}: eps={epsilon:.4f} loss={last_loss:.4f} eval_reward={reward:.4f}")

    return DQNResult(net=net, target=target, curve=curve, losses=losses)


def train_dueling(env, config: TrainConfig, seed: int = 0, evaluate=None, eval_every: int = 0) -> DQNResult:
    rng = make_rng(seed)
    net = DuelingNet.init(len(env.observe()), env.action_count, config.hidden, rng)
    return _train(env, net, config, rng, evaluate, eval_every)


def train_plain_dqn(env, config: TrainConfig, seed: int = 0, evaluate=None, eval_every: int = 0) -> DQNResult:
    rng = make_rng(seed)
    net = PlainNet.init(len(env.observe()), env.action_count, config.hidden, rng)
    return _train(env, net, config, rng, evaluate, eval_every)


class NetPolicy:
    """Greedy policy over a frozen network; infeasible actions never win."""

    def __init__(self, net: _Net, config: SystemConfig):
        self.net = net
        self.config = config
        self.name = "dueling" if net.kind == "dueling" else "dqn"

    def decide(self, state, mask, rng=None) -> Action:
        q = self.net.q_values(encode_state(state, self.config))
        return action_space(self.config.num_nodes)[masked_argmax(q, mask)]


# ---------------------------
# Checkpoint: header lines, then one "param NAME ROWS COLS" block per array
# ---------------------------

def save_net(net: _Net, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"# codedsched-net version={CHECKPOINT_VERSION}\n")
        fh.write(f"kind={net.kind}\n")
        fh.write(f"input_dim={net.input_dim}\n")
        fh.write(f"hidden={net.hidden}\n")
        fh.write(f"action_count={net.action_count}\n")
        for name in net.param_names:
            p = net.params[name]
            arr = p.reshape(1, -1) if p.ndim == 1 else p
            fh.write(f"param {name} {p.ndim} {arr.shape[0]} {arr.shape[1]}\n")
            for row in arr:
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_net(path: str) -> _Net:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].startswith("# codedsched-net"):
        raise ValueError(f"{path} is not a network checkpoint")
    version = int(lines[0].split("version=", 1)[1])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = dict(ln.split("=", 1) for ln in lines[1:5])
    kind = header["kind"]
    cls = {"dueling": DuelingNet, "dqn": PlainNet}.get(kind)
    if cls is None:
        raise ValueError(f"unknown network kind '{kind}'")

    params: Dict[str, np.ndarray] = {}
    i = 5
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        _, name, ndim, rows, cols = lines[i].split()
        rows, cols = int(rows), int(cols)
        data = [[float(tok) for tok in lines[i + 1 + r].split()] for r in range(rows)]
        arr = np.array(data, dtype=np.float64).reshape(rows, cols)
        params[name] = arr.reshape(-1) if int(ndim) == 1 else arr
        i += 1 + rows

    missing = [n for n in cls.param_names if n not in params]
    if missing:
        raise ValueError(f"checkpoint {path} is missing parameters {missing}")
    net = cls(int(header["input_dim"]), int(header["action_count"]), int(header["hidden"]), params)
    if not all(np.all(np.isfinite(p)) for p in params.values()):
        raise ValueError(f"checkpoint {path} holds non-finite weights")
    return net

import os
from dataclasses import dataclass, field, fields, replace, asdict
from typing import Any, Mapping

from dotenv import load_dotenv, dotenv_values

load_dotenv()

# Defaults for runs (env-overridable)
DEFAULT_SEED       = int(os.getenv("DEFAULT_SEED", "7"))
EVAL_SLOTS         = int(os.getenv("EVAL_SLOTS", "100000"))
WARMUP_SLOTS       = int(os.getenv("WARMUP_SLOTS", "10000"))
ORACLE_POLICY_REPS = int(os.getenv("ORACLE_POLICY_REPS", "10000"))
OUTPUT_DIR         = os.getenv("OUTPUT_DIR", "runs")

# Sweeps run sequentially unless more workers are requested
SWEEP_WORKERS = int(os.getenv("SWEEP_WORKERS", "1"))

# Learning curves
TRAIN_EVAL_EVERY = int(os.getenv("TRAIN_EVAL_EVERY", "1000"))
TRAIN_EVAL_SLOTS = int(os.getenv("TRAIN_EVAL_SLOTS", "2000"))

# Web API
CORS_ORIGIN             = os.getenv("CORS_ORIGIN")
EVAL_ROUTE_TIMEOUT_SECS = int(os.getenv("EVAL_ROUTE_TIMEOUT_SECS", "60"))
POLICY_CACHE_MAX        = int(os.getenv("POLICY_CACHE_MAX", "8"))

LOG_QUIET = os.getenv("LOG_QUIET", "0") == "1"


@dataclass(frozen=True)
class SystemConfig:
    """Environment parameters. Per-node vectors are indexed by node 0..N-1."""
    num_nodes: int = 5
    queue_capacity: int = 10
    arrival_prob: float = 0.7
    slot_seconds: float = 1.0
    task_sizes: tuple = (100, 200, 300)
    disconnect_probs: tuple = (0.1, 0.5, 0.2, 0.3, 0.9)
    straggle_rates: tuple = (0.1, 1.0, 0.5, 0.2, 2.0)
    per_point_seconds: tuple = (0.005, 0.005, 0.005, 0.005, 0.005)
    f_max: int = 300

    def __post_init__(self):
        if self.num_nodes < 1:
            raise ValueError(f"num_nodes must be positive, got {self.num_nodes}")
        if self.queue_capacity < 1:
            raise ValueError(f"queue_capacity must be positive, got {self.queue_capacity}")
        if not 0.0 <= self.arrival_prob <= 1.0:
            raise ValueError(f"arrival_prob must be in [0, 1], got {self.arrival_prob}")
        if not self.slot_seconds > 0:
            raise ValueError(f"slot_seconds must be > 0, got {self.slot_seconds}")
        if not self.task_sizes or any(int(s) < 1 for s in self.task_sizes):
            raise ValueError(f"task_sizes must be a non-empty list of positive integers, got {self.task_sizes}")
        for name in ("disconnect_probs", "straggle_rates", "per_point_seconds"):
            vec = getattr(self, name)
            if len(vec) != self.num_nodes:
                raise ValueError(f"{name} has length {len(vec)}, expected num_nodes={self.num_nodes}")
        if any(not 0.0 <= p < 1.0 for p in self.disconnect_probs):
            raise ValueError(f"disconnect_probs must lie in [0, 1), got {self.disconnect_probs}")
        if any(not lam > 0 for lam in self.straggle_rates):
            raise ValueError(f"straggle_rates must be > 0, got {self.straggle_rates}")
        if any(eta < 0 for eta in self.per_point_seconds):
            raise ValueError(f"per_point_seconds must be >= 0, got {self.per_point_seconds}")
        if self.f_max < max(self.task_sizes):
            raise ValueError(f"f_max={self.f_max} is below the largest task size {max(self.task_sizes)}")


@dataclass(frozen=True)
class QLearnConfig:
    learning_rate: float = 0.1
    gamma: float = 0.9
    epsilon_start: float = 1.0
    epsilon_decay: float = 0.9999
    epsilon_floor: float = 0.01
    iterations: int = 1_000_000
    # "constant" or "robbins_monro": tau_t = rm_c / (1 + t / rm_d)
    lr_schedule: str = "constant"
    rm_c: float = 0.1
    rm_d: float = 100_000.0

    def __post_init__(self):
        if not 0.0 <= self.learning_rate < 1.0:
            raise ValueError(f"learning_rate must be in [0, 1), got {self.learning_rate}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if not 0.0 <= self.epsilon_floor <= self.epsilon_start <= 1.0:
            raise ValueError("epsilon schedule needs 0 <= epsilon_floor <= epsilon_start <= 1")
        if not 0.0 < self.epsilon_decay <= 1.0:
            raise ValueError(f"epsilon_decay must be in (0, 1], got {self.epsilon_decay}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.lr_schedule not in ("constant", "robbins_monro"):
            raise ValueError(f"unknown lr_schedule '{self.lr_schedule}'")
        if self.lr_schedule == "robbins_monro" and not (0.0 <= self.rm_c < 1.0 and self.rm_d > 0):
            raise ValueError("robbins_monro schedule needs 0 <= rm_c < 1 and rm_d > 0")

    def tau(self, t: int) -> float:
        if self.lr_schedule == "constant":
            return self.learning_rate
        return self.rm_c / (1.0 + t / self.rm_d)


@dataclass(frozen=True)
class TrainConfig:
    """Deep (dueling / plain) Q-network training parameters."""
    learning_rate: float = 1e-4
    gamma: float = 0.99
    batch_size: int = 16
    target_period: int = 1000
    buffer_capacity: int = 10_000
    epsilon_start: float = 1.0
    epsilon_floor: float = 0.01
    epsilon_decay: float = 0.9999
    iterations: int = 40_000
    hidden: int = 16
    optimizer: str = "adam"
    # rewards are multiplied by this before they reach the replay buffer (1/M at defaults)
    reward_scale: float = 0.1
    # after this many transitions the output bias is set to mean(reward) / (1 - gamma); 0 disables
    bias_warmup: int = 1000

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "target_period", "buffer_capacity", "hidden", "reward_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if not 0.0 <= self.epsilon_floor <= self.epsilon_start <= 1.0:
            raise ValueError("epsilon schedule needs 0 <= epsilon_floor <= epsilon_start <= 1")
        if not 0.0 < self.epsilon_decay <= 1.0:
            raise ValueError(f"epsilon_decay must be in (0, 1], got {self.epsilon_decay}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.bias_warmup < 0:
            raise ValueError(f"bias_warmup must be >= 0, got {self.bias_warmup}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer '{self.optimizer}' (expected adam or sgd)")


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    qlearn: QLearnConfig = field(default_factory=QLearnConfig)
    # mean straggle rate over "available" nodes or over "all" nodes
    lambda_hat_mode: str = "available"
    oracle_reps: int = ORACLE_POLICY_REPS

    def __post_init__(self):
        if self.lambda_hat_mode not in ("available", "all"):
            raise ValueError(f"lambda_hat_mode must be 'available' or 'all', got '{self.lambda_hat_mode}'")
        if self.oracle_reps < 100:
            raise ValueError(f"oracle_reps must be >= 100, got {self.oracle_reps}")


# ---------------------------
# key=value parsing
# ---------------------------

_VECTOR_FIELDS = ("disconnect_probs", "straggle_rates", "per_point_seconds")
_TOP_LEVEL = ("lambda_hat_mode", "oracle_reps")


def _coerce(value: Any, like: Any, key: str):
    """Coerce a raw value (string or JSON-typed) to the type of the default `like`."""
    try:
        if isinstance(like, tuple):
            if isinstance(value, str):
                items = [v.strip() for v in value.split(",") if v.strip()]
            elif isinstance(value, (list, tuple)):
                items = list(value)
            else:
                items = [value]
            elem = type(like[0]) if like else float
            return tuple(elem(float(v)) if elem is int else elem(v) for v in items)
        if isinstance(like, bool):
            return str(value).strip().lower() in ("1", "true", "yes")
        if isinstance(like, int):
            as_float = float(value)
            if not as_float.is_integer():
                raise ValueError
            return int(as_float)
        if isinstance(like, float):
            return float(value)
        return str(value).strip()
    except (TypeError, ValueError):
        raise ValueError(f"config key '{key}': cannot parse {value!r}") from None


def run_config_from_mapping(mapping: Mapping[str, Any], base: RunConfig | None = None) -> RunConfig:
    """Build a RunConfig from flat keys. Unknown keys are rejected all at once."""
    base = base or RunConfig()
    sys_names = {f.name for f in fields(SystemConfig)}
    train_names = {f.name for f in fields(TrainConfig)}
    q_names = {f"q_{f.name}" for f in fields(QLearnConfig)}

    unknown = sorted(k for k in mapping if k not in sys_names | train_names | q_names | set(_TOP_LEVEL))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")

    sys_kw, train_kw, q_kw, top_kw = {}, {}, {}, {}
    for key, raw in mapping.items():
        if raw is None:
            raise ValueError(f"config key '{key}' has no value")
        if key in sys_names:
            sys_kw[key] = _coerce(raw, getattr(base.system, key), key)
        elif key in train_names:
            train_kw[key] = _coerce(raw, getattr(base.train, key), key)
        elif key in q_names:
            name = key[2:]
            q_kw[name] = _coerce(raw, getattr(base.qlearn, name), key)
        else:
            top_kw[key] = _coerce(raw, getattr(base, key), key)

    n = sys_kw.get("num_nodes", base.system.num_nodes)
    for name in _VECTOR_FIELDS:
        if name in sys_kw and len(sys_kw[name]) == 1:
            sys_kw[name] = sys_kw[name] * n
    if "task_sizes" in sys_kw and "f_max" not in sys_kw:
        sys_kw["f_max"] = max(sys_kw["task_sizes"])

    return replace(
        base,
        system=replace(base.system, **sys_kw),
        train=replace(base.train, **train_kw),
        qlearn=replace(base.qlearn, **q_kw),
        **top_kw,
    )


def load_run_config(path: str | None) -> RunConfig:
    if not path:
        return RunConfig()
    if not os.path.exists(path):
        raise ValueError(f"config file not found: {path}")
    # interpolate=False: values are literal, no ${VAR} expansion
    return run_config_from_mapping(dotenv_values(path, interpolate=False))


def dump_run_config(cfg: RunConfig) -> str:
    def _fmt(v):
        if isinstance(v, tuple):
            return ",".join(repr(x) for x in v)
        return repr(v) if isinstance(v, float) else str(v)

    lines = [f"{k}={_fmt(v)}" for k, v in asdict(cfg.system).items()]
    lines += [f"{k}={_fmt(v)}" for k, v in asdict(cfg.train).items()]
    lines += [f"q_{k}={_fmt(v)}" for k, v in asdict(cfg.qlearn).items()]
    lines += [f"{k}={_fmt(getattr(cfg, k))}" for k in _TOP_LEVEL]
    return "\n".join(lines) + "\n"


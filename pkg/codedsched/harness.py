"""Evaluation, training drivers, parameter sweeps and learning-curve studies."""
import os
import threading
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Sequence

import numpy as np
import pandas as pd
from dotenv import dotenv_values

from . import config as settings
from .actions import action_count
from .config import RunConfig, SystemConfig, load_run_config
from .dueling import NetPolicy, load_net, save_net, train_dueling, train_plain_dqn
from .env import EdgeEnv, make_rng, split_seed
from .oracle import MyopicOraclePolicy
from .policies import GreedyPolicy, OneNodePolicy, RandomPolicy, StaticCodePolicy
from .qlearning import QTable, QTablePolicy, train_qlearning


def _log(msg: str):
    if not settings.LOG_QUIET:
        print(f"[Harness] {msg}", flush=True)


# split_seed purposes
EVAL_STREAMS, TRAIN_STREAMS = 0, 1

POLICY_NAMES = ("greedy", "onenode", "static", "random", "qlearn", "dueling", "dqn", "myopic-oracle")
LEARNED = ("qlearn", "dueling", "dqn")
SWEEP_PARAMS = ("arrival_prob", "per_point_seconds", "disconnect_prob_scale",
                "straggle_rate_scale", "task_size_scale")
SWEEP_COLUMNS = ["policy", "param", "value", "seed", "avg_queue", "drop_rate", "drops_per_arrival",
                 "avg_delay_slots", "avg_delay_seconds", "throughput"]
CURVE_COLUMNS = ["iteration", "epsilon", "loss", "eval_reward"]


@dataclass
class RunMetrics:
    avg_queue_occupancy: float
    drop_rate: float
    avg_delay_slots: float
    avg_delay_seconds: float
    throughput: float
    slots_run: int
    warmup_slots: int
    seed: int
    arrivals: int = 0
    completions: int = 0
    drops: int = 0
    resident_at_end: int = 0
    drops_per_arrival: float = 0.0

    @property
    def avg_reward(self) -> float:
        return -self.avg_queue_occupancy


# ---------------------------
# Policies by name
# ---------------------------

def build_policy(name: str, run_config: RunConfig, checkpoint: Optional[str] = None, model=None):
    """Look up a decider. Learned policies take a trained model or a checkpoint path."""
    system = run_config.system
    if name == "greedy":
        return GreedyPolicy()
    if name == "onenode":
        return OneNodePolicy()
    if name == "static":
        return StaticCodePolicy(system, run_config.lambda_hat_mode)
    if name == "random":
        return RandomPolicy()
    if name == "myopic-oracle":
        return MyopicOraclePolicy(system, run_config.oracle_reps)
    if name in LEARNED:
        if model is None:
            if not checkpoint:
                raise ValueError(f"policy '{name}' needs a checkpoint")
            if not os.path.exists(checkpoint):
                raise ValueError(f"checkpoint not found: {checkpoint}")
            model = QTable.load(checkpoint) if name == "qlearn" else load_net(checkpoint)
        if name == "qlearn":
            return QTablePolicy(model)
        if model.kind != name:
            raise ValueError(f"checkpoint holds a '{model.kind}' network, not '{name}'")
        if model.action_count != action_count(system.num_nodes):
            raise ValueError(f"checkpoint has {model.action_count} actions, config needs {action_count(system.num_nodes)}")
        return NetPolicy(model, system)
    raise ValueError(f"unknown policy '{name}' (expected one of {', '.join(POLICY_NAMES)})")


# ---------------------------
# Evaluation
# ---------------------------

def evaluate_policy(env_config: SystemConfig, policy, eval_slots: int, warmup: int, seed: int,
                    stop: Optional[threading.Event] = None) -> RunMetrics:
    """Run `eval_slots` slots and report metrics over the slots after `warmup`.

    Setting `stop` from another thread abandons the run with RuntimeError.
    """
    if not eval_slots > warmup >= 0:
        raise ValueError(f"need eval_slots > warmup >= 0, got eval_slots={eval_slots}, warmup={warmup}")
    env_seq, policy_seq = split_seed(seed, 2, EVAL_STREAMS)
    env = EdgeEnv(env_config, seed=env_seq)
    rng = make_rng(policy_seq)

    occupancy = 0
    arrivals0 = drops0 = done0 = 0
    for t in range(eval_slots):
        if stop is not None and stop.is_set():
            raise RuntimeError(f"evaluation stopped at slot {t}")
        if t == warmup:
            arrivals0, drops0, done0 = env.arrivals, env.drops, len(env.completed)
        action = policy.decide(env.state, env.mask(), rng)
        out = env.advance_slot(action)
        if t >= warmup:
            occupancy += -out.reward
    delays = [task.completion_slot - task.arrival_slot for task in env.completed[done0:]]

    window = eval_slots - warmup
    arrivals = env.arrivals - arrivals0
    drops = env.drops - drops0
    avg_delay = float(np.mean(delays)) if delays else 0.0
    return RunMetrics(
        avg_queue_occupancy=occupancy / window,
        drop_rate=drops / window,
        avg_delay_slots=avg_delay,
        avg_delay_seconds=avg_delay * env_config.slot_seconds,
        throughput=len(delays) / window,
        slots_run=window,
        warmup_slots=warmup,
        seed=seed,
        arrivals=env.arrivals,
        completions=len(env.completed),
        drops=env.drops,
        resident_at_end=env.resident,
        drops_per_arrival=drops / arrivals if arrivals else 0.0,
    )


def make_curve_evaluator(run_config: RunConfig, name: str, eval_slots: int, seed: int) -> Callable:
    """Mean reward of the current greedy policy on an independent, fixed seed."""
    def _evaluate(model) -> float:
        policy = build_policy(name, run_config, model=model)
        return evaluate_policy(run_config.system, policy, eval_slots, 0, seed).avg_reward
    return _evaluate


# ---------------------------
# Training drivers
# ---------------------------

@dataclass
class TrainOutput:
    algo: str
    model: object
    curve: pd.DataFrame
    checkpoint: Optional[str] = None


def train_algo(run_config: RunConfig, algo: str, seed: int, iterations: Optional[int] = None,
               out_dir: Optional[str] = None, eval_every: Optional[int] = None,
               eval_slots: Optional[int] = None) -> TrainOutput:
    if algo not in LEARNED:
        raise ValueError(f"unknown algorithm '{algo}' (expected qlearn, dueling or dqn)")
    eval_every = settings.TRAIN_EVAL_EVERY if eval_every is None else eval_every
    eval_slots = settings.TRAIN_EVAL_SLOTS if eval_slots is None else eval_slots
    env_seq, agent_seq, eval_seq = split_seed(seed, 3, TRAIN_STREAMS)
    env = EdgeEnv(run_config.system, seed=env_seq)
    agent_seed = int(agent_seq.generate_state(1)[0])
    evaluator = make_curve_evaluator(run_config, algo, eval_slots, int(eval_seq.generate_state(1)[0]))

    t0 = time.time()
    if algo == "qlearn":
        cfg = run_config.qlearn if iterations is None else replace(run_config.qlearn, iterations=iterations)
        _log(f"train qlearn for {cfg.iterations} iterations (seed {seed})")
        result = train_qlearning(env, cfg, seed=agent_seed, evaluate=evaluator, eval_every=eval_every)
        model = result.table
    else:
        cfg = run_config.train if iterations is None else replace(run_config.train, iterations=iterations)
        _log(f"train {algo} for {cfg.iterations} iterations (seed {seed})")
        trainer = train_dueling if algo == "dueling" else train_plain_dqn
        result = trainer(env, cfg, seed=agent_seed, evaluate=evaluator, eval_every=eval_every)
        model = result.net
    _log(f"{algo} trained in {time.time() - t0:.1f}s")

    curve = pd.DataFrame(result.curve, columns=CURVE_COLUMNS)
    checkpoint = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        checkpoint = os.path.join(out_dir, f"{algo}.ckpt")
        if algo == "qlearn":
            model.save(checkpoint)
        else:
            save_net(model, checkpoint)
        curve_path = os.path.join(out_dir, "curve.csv")
        curve.to_csv(curve_path, mode="a", header=not os.path.exists(curve_path), index=False)
        _log(f"wrote {checkpoint}")
    return TrainOutput(algo=algo, model=model, curve=curve, checkpoint=checkpoint)


# ---------------------------
# Sweeps
# ---------------------------

@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple
    policies: tuple = ("greedy", "onenode", "static")
    seeds: tuple = (1,)
    eval_slots: int = settings.EVAL_SLOTS
    warmup_slots: int = settings.WARMUP_SLOTS
    base: RunConfig = field(default_factory=RunConfig)
    # learned policies: retrain at each grid point, or load these checkpoints
    retrain: bool = True
    train_iterations: Optional[int] = None
    checkpoints: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise ValueError(f"unknown sweep parameter '{self.param}' (expected one of {', '.join(SWEEP_PARAMS)})")
        if not self.values:
            raise ValueError("sweep grid is empty")
        if len(set(self.values)) != len(self.values):
            raise ValueError(f"sweep grid has repeated values: {self.values}")
        unknown = [p for p in self.policies if p not in POLICY_NAMES]
        if unknown:
            raise ValueError(f"unknown policies: {', '.join(unknown)}")
        if not self.seeds:
            raise ValueError("sweep needs at least one seed")
        if not self.retrain:
            missing = [p for p in self.policies if p in LEARNED and p not in self.checkpoints]
            if missing:
                raise ValueError(f"no checkpoint given for {', '.join(missing)}")


def _floats(raw: str) -> tuple:
    return tuple(float(v) for v in raw.split(",") if v.strip())


def load_sweep_spec(path: str) -> SweepSpec:
    """Flat key=value file: param, values, policies, seeds, eval_slots, warmup_slots,
    config, retrain, train_iterations, checkpoint_<algo>."""
    if not os.path.exists(path):
        raise ValueError(f"sweep spec not found: {path}")
    raw = {k: v for k, v in dotenv_values(path, interpolate=False).items()}
    known = {"param", "values", "policies", "seeds", "eval_slots", "warmup_slots", "config",
             "retrain", "train_iterations"} | {f"checkpoint_{a}" for a in LEARNED}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"unknown sweep keys: {', '.join(unknown)}")
    if "param" not in raw or "values" not in raw:
        raise ValueError("sweep spec needs 'param' and 'values'")

    base_path = raw.get("config")
    if base_path and not os.path.isabs(base_path):
        base_path = os.path.join(os.path.dirname(os.path.abspath(path)), base_path)
    kwargs = dict(
        param=raw["param"].strip(),
        values=_floats(raw["values"]),
        base=load_run_config(base_path),
        checkpoints={a: raw[f"checkpoint_{a}"] for a in LEARNED if raw.get(f"checkpoint_{a}")},
    )
    if raw.get("policies"):
        kwargs["policies"] = tuple(p.strip() for p in raw["policies"].split(",") if p.strip())
    if raw.get("seeds"):
        kwargs["seeds"] = tuple(int(s) for s in raw["seeds"].split(",") if s.strip())
    for key in ("eval_slots", "warmup_slots", "train_iterations"):
        if raw.get(key):
            kwargs[key] = int(raw[key])
    if raw.get("retrain"):
        kwargs["retrain"] = raw["retrain"].strip().lower() in ("1", "true", "yes")
    return SweepSpec(**kwargs)


def apply_sweep_value(run_config: RunConfig, param: str, value: float) -> RunConfig:
    s = run_config.system
    if param == "arrival_prob":
        system = replace(s, arrival_prob=float(value))
    elif param == "per_point_seconds":
        system = replace(s, per_point_seconds=tuple(float(value) for _ in range(s.num_nodes)))
    elif param == "disconnect_prob_scale":
        system = replace(s, disconnect_probs=tuple(min(0.99, p * value) for p in s.disconnect_probs))
    elif param == "straggle_rate_scale":
        system = replace(s, straggle_rates=tuple(lam * value for lam in s.straggle_rates))
    elif param == "task_size_scale":
        sizes = tuple(max(1, int(round(f * value))) for f in s.task_sizes)
        system = replace(s, task_sizes=sizes, f_max=max(sizes))
    else:
        raise ValueError(f"unknown sweep parameter '{param}'")
    return replace(run_config, system=system)


def _sweep_job(spec: SweepSpec, policy_name: str, value: float, seed: int) -> dict:
    run_config = apply_sweep_value(spec.base, spec.param, value)
    if policy_name in LEARNED:
        if spec.retrain:
            model = train_algo(run_config, policy_name, seed, iterations=spec.train_iterations, eval_every=0).model
            policy = build_policy(policy_name, run_config, model=model)
        else:
            policy = build_policy(policy_name, run_config, checkpoint=spec.checkpoints[policy_name])
    else:
        policy = build_policy(policy_name, run_config)
    m = evaluate_policy(run_config.system, policy, spec.eval_slots, spec.warmup_slots, seed)
    return {
        "policy": policy_name, "param": spec.param, "value": value, "seed": seed,
        "avg_queue": m.avg_queue_occupancy, "drop_rate": m.drop_rate,
        "drops_per_arrival": m.drops_per_arrival, "avg_delay_slots": m.avg_delay_slots,
        "avg_delay_seconds": m.avg_delay_seconds, "throughput": m.throughput,
    }


def run_sweep(spec: SweepSpec, out_dir: Optional[str] = None, workers: Optional[int] = None) -> pd.DataFrame:
    """One row per (policy, grid value, seed). Points are independent jobs."""
    jobs = [(p, v, s) for p in spec.policies for v in spec.values for s in spec.seeds]
    workers = settings.SWEEP_WORKERS if workers is None else workers
    _log(f"sweep {spec.param}: {len(jobs)} jobs on {workers} worker(s)")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_job, *zip(*[(spec, p, v, s) for p, v, s in jobs])))
    else:
        rows = [_sweep_job(spec, p, v, s) for p, v, s in jobs]
    df = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, f"sweep_{spec.param}.csv")
        df.to_csv(path, index=False)
        _log(f"wrote {path}")
    return df


# ---------------------------
# Learning curves
# ---------------------------

def run_convergence(run_config: RunConfig, algos: Sequence[str], seeds: Sequence[int], iterations: int,
                    eval_every: int, eval_slots: int, out_dir: Optional[str] = None) -> pd.DataFrame:
    frames = []
    for algo in algos:
        for seed in seeds:
            out = train_algo(run_config, algo, seed, iterations=iterations,
                             eval_every=eval_every, eval_slots=eval_slots)
            frame = out.curve.copy()
            frame.insert(0, "seed", seed)
            frame.insert(0, "algo", algo)
            frames.append(frame)
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["algo", "seed"] + CURVE_COLUMNS)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        df.to_csv(os.path.join(out_dir, "convergence.csv"), index=False)
    return df


def iterations_to_fraction(curve: pd.DataFrame, fraction: float = 0.95) -> Optional[int]:
    """First iteration whose eval_reward is within (1 - fraction)·|final| of the final value."""
    if curve.empty:
        return None
    final = float(curve["eval_reward"].iloc[-1])
    threshold = final - (1.0 - fraction) * abs(final)
    hit = curve[curve["eval_reward"] >= threshold]
    return int(hit["iteration"].iloc[0])


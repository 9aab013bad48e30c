from flask import Blueprint, request, jsonify
import asyncio
import os
import threading
from collections import OrderedDict
from dataclasses import asdict

from .actions import action_space
from .config import (
    DEFAULT_SEED,
    EVAL_ROUTE_TIMEOUT_SECS,
    EVAL_SLOTS,
    POLICY_CACHE_MAX,
    WARMUP_SLOTS,
    RunConfig,
    run_config_from_mapping,
)
from .env import make_rng
from .harness import build_policy, evaluate_policy
from .oracle import rank_actions

api_bp = Blueprint("api", __name__)

# ---------------------------
# Helpers
# ---------------------------

# (policy, checkpoint, mtime, system config) -> loaded policy; oldest evicted first
_POLICY_CACHE: "OrderedDict[tuple, object]" = OrderedDict()


def _run_config(body: dict) -> RunConfig:
    raw = body.get("config") or {}
    if not isinstance(raw, dict):
        raise ValueError("'config' must be an object of config keys")
    return run_config_from_mapping(raw)


def _int_field(body: dict, key: str, default: int) -> int:
    value = body.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"'{key}' must be an integer")
    return value


def _cached_policy(name: str, run_config: RunConfig, checkpoint: str | None):
    if not checkpoint:
        return build_policy(name, run_config)
    if not os.path.exists(checkpoint):
        raise ValueError(f"checkpoint not found: {checkpoint}")
    key = (name, os.path.abspath(checkpoint), os.path.getmtime(checkpoint), run_config.system)
    if key in _POLICY_CACHE:
        return _POLICY_CACHE[key]
    policy = build_policy(name, run_config, checkpoint=checkpoint)
    _POLICY_CACHE[key] = policy
    while len(_POLICY_CACHE) > max(POLICY_CACHE_MAX, 0):
        _POLICY_CACHE.popitem(last=False)
    return policy


# ---------------------------
# Routes
# ---------------------------

@api_bp.get("/actions")
def actions():
    try:
        num_nodes = int(request.args.get("num_nodes", "5"))
        if not 1 <= num_nodes <= 12:
            raise ValueError(f"num_nodes must be in 1..12, got {num_nodes}")
        rows = action_space(num_nodes).to_frame().to_dict(orient="records")
        return jsonify({"num_nodes": num_nodes, "actions": rows}), 200
    except ValueError as e:
        return jsonify({"error": str(e)}), 400


@api_bp.post("/evaluate")
def evaluate():
    body = request.get_json(silent=True) or {}
    try:
        name = body.get("policy")
        if not name:
            return jsonify({"error": "policy is required"}), 400
        run_config = _run_config(body)
        seed = _int_field(body, "seed", DEFAULT_SEED)
        slots = _int_field(body, "slots", EVAL_SLOTS)
        warmup = _int_field(body, "warmup", WARMUP_SLOTS)
        policy = _cached_policy(name, run_config, body.get("checkpoint"))
    except ValueError as e:
        return jsonify({"error": str(e)}), 400

    stop = threading.Event()

    async def _work():
        try:
            return await asyncio.wait_for(
                asyncio.to_thread(evaluate_policy, run_config.system, policy, slots, warmup, seed, stop),
                timeout=EVAL_ROUTE_TIMEOUT_SECS,
            )
        except asyncio.TimeoutError:
            # let the worker thread exit before asyncio.run joins it
            stop.set()
            raise

    try:
        metrics = asyncio.run(_work())
        return jsonify({"policy": name, **asdict(metrics)}), 200
    except asyncio.TimeoutError:
        return jsonify({"error": "timeout"}), 504
    except ValueError as e:
        return jsonify({"error": str(e)}), 400
    except Exception as e:
        return jsonify({"error": str(e)}), 500


@api_bp.post("/oracle")
def oracle():
    body = request.get_json(silent=True) or {}
    try:
        if "task_size" not in body:
            return jsonify({"error": "task_size is required"}), 400
        system = _run_config(body).system
        task_size = _int_field(body, "task_size", 0)
        reps = _int_field(body, "reps", 10_000)
        seed = _int_field(body, "seed", DEFAULT_SEED)
        available = body.get("available") or list(range(system.num_nodes))
        ranked = rank_actions(system, task_size, available, reps, make_rng(seed))
    except ValueError as e:
        return jsonify({"error": str(e)}), 400
    except Exception as e:
        return jsonify({"error": str(e)}), 500

    return jsonify([{
        "index": e.action.global_index,
        "n": e.action.n,
        "k": e.action.k,
        "subset": list(e.action.subset),
        "mean_seconds": e.mean_seconds,
        "half_width_95": e.half_width_95,
        "replications": e.replications,
    } for e in ranked]), 200

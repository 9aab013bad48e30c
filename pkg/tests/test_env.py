import numpy as np
import pytest

from codedsched.actions import action_space
from codedsched.config import SystemConfig
from codedsched.env import (EdgeEnv, InFlightTask, LearningTask, ceil_slots, dispatch, encode_state, kth_min,
                            make_rng, sample_retransmissions, sample_straggle, split_seed,
                            subtask_serving_seconds)
from codedsched.policies import RandomPolicy

from conftest import make_state


# ---------------------------
# Order statistic
# ---------------------------

def test_kth_min_examples():
    assert kth_min([1, 5, 10, 4, 6], 3) == 5
    assert kth_min([42], 1) == 42
    assert kth_min([7, 2, 9], 3) == 9
    assert kth_min([3, 3, 1], 2) == 3


def test_kth_min_matches_sort(rng):
    for _ in range(10_000):
        values = rng.integers(0, 50, size=rng.integers(1, 12)).tolist()
        k = int(rng.integers(1, len(values) + 1))
        assert kth_min(values, k) == sorted(values)[k - 1]


@pytest.mark.parametrize("k", [0, 4])
def test_kth_min_rejects_out_of_range(k):
    with pytest.raises(ValueError):
        kth_min([1, 2, 3], k)


# ---------------------------
# Samplers and time model
# ---------------------------

def test_retransmissions_without_loss_is_one(rng):
    assert np.all(sample_retransmissions(0.0, rng, size=1000) == 1)


def test_retransmission_probability_of_two(rng):
    draws = sample_retransmissions(0.5, rng, size=200_000)
    assert np.mean(draws == 2) == pytest.approx(0.25, abs=0.005)


@pytest.mark.parametrize("p", [0.1, 0.5, 0.2, 0.3, 0.9])
def test_retransmission_mean(p, rng):
    draws = sample_retransmissions(p, rng, size=1_000_000)
    assert draws.min() >= 1
    assert draws.mean() == pytest.approx(1.0 / (1.0 - p), rel=0.02)


@pytest.mark.parametrize("rate", [0.1, 1.0, 0.5, 0.2, 2.0])
def test_straggle_mean(rate, rng):
    draws = sample_straggle(rate, rng, size=1_000_000)
    assert draws.min() >= 0
    assert draws.mean() == pytest.approx(1.0 / rate, rel=0.02)


def test_straggle_variance_and_degenerate_rate(rng):
    assert sample_straggle(1.0, rng, size=1_000_000).var() == pytest.approx(1.0, abs=0.02)
    assert sample_straggle(1e9, rng, size=100).max() < 1e-6


@pytest.mark.parametrize("p", [-0.1, 1.0])
def test_retransmissions_reject_bad_probability(p, rng):
    with pytest.raises(ValueError):
        sample_retransmissions(p, rng)


def test_straggle_rejects_non_positive_rate(rng):
    with pytest.raises(ValueError):
        sample_straggle(0.0, rng)


@pytest.mark.parametrize("args, expected", [
    ((2, 1.0, 0.3, 0.005, 150), 5.05),
    ((1, 1.0, 0.0, 0.0, 1), 2.0),
    ((1, 0.5, 1.0, 0.01, 100), 3.0),
])
def test_serving_seconds(args, expected):
    assert subtask_serving_seconds(*args) == pytest.approx(expected)


def test_serving_seconds_rejects_zero_attempts():
    with pytest.raises(ValueError):
        subtask_serving_seconds(0, 1.0, 0.0, 0.0, 10)


def test_ceil_slots_absorbs_float_noise():
    assert ceil_slots(2.0000000000000004, 1.0) == 2
    assert ceil_slots(2.5, 1.0) == 3
    assert ceil_slots(0.01, 1.0) == 1


# ---------------------------
# Dispatch
# ---------------------------

def _one_node(**overrides):
    kwargs = dict(num_nodes=1, disconnect_probs=(0.0,), straggle_rates=(1e9,), per_point_seconds=(0.005,),
                  task_sizes=(100,), f_max=100)
    kwargs.update(overrides)
    return SystemConfig(**kwargs)


def test_dispatch_single_node_example(rng):
    cfg = _one_node()
    task = LearningTask(id=0, size=100, arrival_slot=4)
    flight = dispatch(task, action_space(1).lookup(1, 1, (0,)), 7, rng, cfg)
    assert flight.assignments == ((0, 10),)
    assert flight.task_completion_slot == 10
    assert task.dispatch_slot == 7


def test_dispatch_completion_is_kth_fastest(small_system, rng):
    action = action_space(3).lookup(3, 2, (0, 1, 2))
    for i in range(200):
        flight = dispatch(LearningTask(id=i, size=300, arrival_slot=0), action, 0, rng, small_system)
        slots = sorted(s for _, s in flight.assignments)
        assert flight.task_completion_slot == slots[1]
        assert all(s >= 1 for s in slots)


def test_dispatch_rejects_bad_requests(small_system, rng):
    space = action_space(3)
    with pytest.raises(ValueError, match="idle"):
        dispatch(LearningTask(0, 100, 0), space.idle, 0, rng, small_system)
    task = LearningTask(1, 100, 0, dispatch_slot=2)
    with pytest.raises(ValueError, match="already dispatched"):
        dispatch(task, space.lookup(1, 1, (0,)), 3, rng, small_system)
    with pytest.raises(ValueError, match="busy"):
        dispatch(LearningTask(2, 100, 0), space.lookup(2, 1, (0, 1)), 0, rng, small_system,
                 node_available=(True, False, True))


def test_inflight_task_checks_order_statistic():
    with pytest.raises(ValueError):
        InFlightTask(task_id=0, k=2, assignments=((0, 3), (1, 5)), task_completion_slot=3)
    with pytest.raises(ValueError):
        InFlightTask(task_id=0, k=3, assignments=((0, 3), (1, 5)), task_completion_slot=5)


# ---------------------------
# Encoding
# ---------------------------

def test_encode_state_examples(system):
    vec = encode_state(make_state(2, 200, (1, 0, 1, 1, 0)), system)
    assert vec == pytest.approx([0.2, 200 / 300, 1, 0, 1, 1, 0])
    assert encode_state(make_state(0, 0, (1,) * 5), system) == pytest.approx([0, 0, 1, 1, 1, 1, 1])
    assert encode_state(make_state(10, 300, (0,) * 5), system) == pytest.approx([1, 1, 0, 0, 0, 0, 0])


# ---------------------------
# Slot dynamics
# ---------------------------

def test_empty_system_idle_costs_nothing():
    env = EdgeEnv(SystemConfig(arrival_prob=0.0), seed=0)
    out = env.advance_slot(env.space.idle)
    assert out.reward == 0
    assert env.slot == 1
    assert out.next_state.queue_count == 0


def test_full_queue_drops_arrivals():
    cfg = SystemConfig(queue_capacity=3, arrival_prob=1.0)
    env = EdgeEnv(cfg, seed=0)
    rewards = [env.advance_slot(env.space.idle).reward for _ in range(3)]
    assert rewards == [-1, -2, -3]
    out = env.advance_slot(env.space.idle)
    assert out.dropped_this_slot == 1
    assert out.reward == -3
    assert env.drops == 1
    env.check_invariants()


def test_infeasible_action_raises():
    # empty queue: only idle is allowed
    env = EdgeEnv(SystemConfig(arrival_prob=0.0), seed=0)
    with pytest.raises(ValueError, match="infeasible"):
        env.step(1)


def test_dispatched_task_frees_nodes_and_departs():
    cfg = _one_node(arrival_prob=1.0, queue_capacity=5)
    env = EdgeEnv(cfg, seed=3)
    env.advance_slot(env.space.idle)            # slot 0: task 0 arrives
    out = env.step(1)                           # slot 1: task 1 arrives, task 0 dispatched, done at slot 4
    assert out.next_state.node_available == (False,)
    assert env.inflight[0].task_completion_slot == 4
    for _ in range(2):                          # slots 2, 3
        env.advance_slot(env.space.idle)
        env.check_invariants()
    out = env.advance_slot(env.space.idle)      # slot 4: departure
    assert out.completed_task_ids == (0,)
    assert out.next_state.node_available == (True,)
    assert env.completed[0].completion_slot - env.completed[0].arrival_slot == 4


def test_decoded_task_releases_its_slower_nodes():
    cfg = SystemConfig(num_nodes=2, queue_capacity=3, arrival_prob=1.0, task_sizes=(100,), f_max=100,
                       disconnect_probs=(0.0, 0.0), straggle_rates=(1e9, 1e-6),
                       per_point_seconds=(0.005, 0.0))
    env = EdgeEnv(cfg, seed=5)
    env.advance_slot(env.space.idle)
    env.advance_slot(env.space.lookup(2, 1, (0, 1)))   # node 0 done at slot 4, node 1 practically never
    env.advance_slot(env.space.idle)
    env.advance_slot(env.space.idle)
    out = env.advance_slot(env.space.idle)              # slot 4: first sub-task suffices
    assert out.completed_task_ids == (0,)
    assert out.next_state.node_available == (True, True)
    env.check_invariants()


def test_same_seed_same_trajectory(system):
    def run(seed):
        env = EdgeEnv(system, seed=seed)
        policy, rng = RandomPolicy(), make_rng(99)
        return [env.advance_slot(policy.decide(env.state, env.mask(), rng)).reward for _ in range(500)]

    assert run(8) == run(8)
    assert run(8) != run(9)


def test_invariants_hold_under_random_play(system):
    env = EdgeEnv(system, seed=21)
    policy, rng = RandomPolicy(), make_rng(22)
    for _ in range(5000):
        env.advance_slot(policy.decide(env.state, env.mask(), rng))
        env.check_invariants()
    assert env.arrivals == len(env.completed) + env.drops + env.resident


def test_split_seed_gives_independent_streams():
    a, b = split_seed(5, 2)
    assert make_rng(a).random() != make_rng(b).random()
    assert make_rng(split_seed(5, 2)[0]).random() == make_rng(a).random()


def test_split_seed_purposes_do_not_share_streams():
    evaluation = split_seed(5, 2, purpose=0)
    training = split_seed(5, 3, purpose=1)
    assert make_rng(evaluation[0]).random() != make_rng(training[0]).random()
    assert make_rng(split_seed(5, 3, purpose=0)[0]).random() == make_rng(evaluation[0]).random()

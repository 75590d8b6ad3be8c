import numpy as np
import pytest

from mirage.encoder import SUBMIT, unflatten
from mirage.harness import Decision, EpisodePlan, EvalConfig, PairSpec, ReactivePolicy, run_episode
from mirage.reward import RewardConfig, shape_reward
from mirage.rl.collect import ClusterEnv, DQNPolicy, PGPolicy, collect_offline_samples
from mirage.rl.network import ArchConfig, action_probs, init_network
from mirage.rl.replay import Experience, ReplayPool, replay_push, replay_sample
from mirage.trace import DAY, HOUR, Trace, diurnal_trace

PAIR48 = PairSpec(1, 48 * 3600)


def test_candidates_evenly_split_predecessor_window():
    idle = Trace((), node_count=4)
    exps = collect_offline_samples(idle, 0, 6 * DAY, PAIR48, starts=2, seed=0, k=4)
    assert len(exps) == 14
    for g in range(2):
        times = np.array([e.time for e in exps[g * 7:(g + 1) * 7]])
        assert np.allclose((times - times[0]) / HOUR, [48 * i / 6 for i in range(7)])
    assert all(e.terminal and e.action == SUBMIT and e.state[-1] == SUBMIT for e in exps)
    assert unflatten(exps[0].state, 4)[0].shape == (4, 40)


def test_last_candidate_matches_reactive_outcome():
    tr = diurnal_trace(8, node_count=8, busy_hours=20, waves=20)
    pair = PairSpec(1, 12 * 3600)
    cfg = RewardConfig()
    exps = collect_offline_samples(tr, 0, 8 * DAY, pair, starts=4, seed=4, chain=2, k=4, cadence=1800,
                                   warmup=DAY, reward=cfg)
    # starts whose predecessor ends past the range contribute nothing
    assert len(exps) >= 7 and len(exps) % 7 == 0
    for g in range(len(exps) // 7):
        group = exps[g * 7:(g + 1) * 7]
        plan = EpisodePlan(tr, group[0].time, pair, warmup=DAY, cadence=1800, k=4)
        reactive = run_episode(plan, ReactivePolicy())
        assert group[-1].reward == shape_reward(reactive.outcome, cfg)


@pytest.mark.parametrize("chain", [1, 2, 3, 4])
def test_chain_yields_at_most_k_minus_one_groups(chain):
    idle = Trace((), node_count=4)
    exps = collect_offline_samples(idle, 0, 12 * DAY, PairSpec(1, 12 * 3600), starts=2, seed=1, chain=chain, k=2)
    assert len(exps) <= 2 * 7 * (chain - 1)
    assert len(exps) % 7 == 0


def test_collect_rejects_short_range():
    idle = Trace((), node_count=4)
    with pytest.raises(ValueError):
        collect_offline_samples(idle, 0, DAY, PAIR48)


def test_cluster_env_episode_ends_with_reward():
    tr = diurnal_trace(6, node_count=8, busy_hours=20, waves=20)
    env = ClusterEnv(tr, 0, 6 * DAY, EvalConfig(pair=PairSpec(1, 6 * 3600), warmup=DAY, cadence=3600, k=3))
    rng = np.random.default_rng(0)
    m = env.reset(rng)
    assert m.shape == (3, 40)
    steps = 0
    done = False
    while not done:
        m, done = env.step(steps == 3)
        steps += 1
    assert m is None and steps == 4 and np.isfinite(env.reward) and env.reward <= 0


# ---------------------------------------------------------------- serving adapters

def _decision(k=2):
    mat = np.random.default_rng(3).normal(size=(k, 40))
    return Decision(0.0, mat, False, 100.0, [], mat[-1])


def test_pg_policy_sampling_frequencies_within_three_sigma():
    net = init_network(ArchConfig(foundation="mlp", k=2, hidden=(4,)), seed=7)
    d = _decision()
    p, _ = action_probs(net, d.matrix)
    pol = PGPolicy(net)
    pol.begin(np.random.default_rng(11))
    n = 100_000
    hits = sum(pol.decide(d) for _ in range(n))
    sigma = np.sqrt(n * p * (1 - p))
    assert abs(hits - n * p) <= 3 * sigma


def test_dqn_policy_is_deterministic():
    net = init_network(ArchConfig(foundation="mlp", k=2, hidden=(4,)), seed=7)
    pol = DQNPolicy(net)
    pol.begin(np.random.default_rng(0))
    d = _decision()
    assert len({pol.decide(d) for _ in range(20)}) == 1


# ---------------------------------------------------------------- replay pool

def _exp(i):
    return Experience(np.array([float(i)]), SUBMIT, float(i), True)


def test_replay_evicts_oldest():
    pool = ReplayPool(capacity=2)
    for i in range(3):
        replay_push(pool, _exp(i))
    assert [e.reward for e in pool.items] == [1.0, 2.0]


def test_full_batch_is_a_permutation():
    pool = ReplayPool(capacity=10, seed=1)
    for i in range(10):
        pool.push(_exp(i))
    assert sorted(e.reward for e in replay_sample(pool, 10)) == list(map(float, range(10)))


def test_sample_errors():
    pool = ReplayPool(capacity=4)
    with pytest.raises(ValueError):
        pool.sample(1)
    pool.push(_exp(0))
    with pytest.raises(ValueError):
        pool.sample(2)
    with pytest.raises(ValueError):
        ReplayPool(capacity=0)


def test_replay_sampling_uniform_within_three_sigma():
    pool = ReplayPool(capacity=10, seed=5)
    for i in range(10):
        pool.push(_exp(i))
    n = 100_000
    counts = np.bincount([int(pool.sample(1)[0].reward) for _ in range(n)], minlength=10)
    sigma = np.sqrt(n * 0.1 * 0.9)
    assert np.all(np.abs(counts - n / 10) <= 3 * sigma)


def test_replay_seeded():
    a, b = ReplayPool(10, seed=2), ReplayPool(10, seed=2)
    for i in range(10):
        a.push(_exp(i))
        b.push(_exp(i))
    assert [e.reward for e in a.sample(5)] == [e.reward for e in b.sample(5)]

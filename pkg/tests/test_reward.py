import numpy as np
import pytest
from hypothesis import given, strategies as st

from mirage.encoder import HOLD, SUBMIT
from mirage.reward import (
    Episode, Kind, Outcome, RewardConfig, assign_episode_rewards, outcome, shape_reward,
)

H = 3600


def test_outcome_definitions():
    assert outcome(100 * H, 105 * H) == Outcome(Kind.INTERRUPTION, 5.0)
    assert outcome(100 * H, 97 * H) == Outcome(Kind.OVERLAP, 3.0)
    assert outcome(100 * H, 100 * H) == Outcome(Kind.EXACT, 0.0)


def test_outcome_invariant():
    with pytest.raises(ValueError):
        Outcome(Kind.EXACT, 1.0)
    with pytest.raises(ValueError):
        Outcome(Kind.OVERLAP, 0.0)


def test_shape_reward_examples():
    assert shape_reward(Outcome(Kind.INTERRUPTION, 5.0), RewardConfig(e_i=1.0)) == -5.0
    assert shape_reward(Outcome(Kind.OVERLAP, 4.0), RewardConfig(e_o=0.5)) == -2.0
    assert shape_reward(Outcome(Kind.EXACT, 0.0), RewardConfig()) == 0.0


def test_config_bounds():
    with pytest.raises(ValueError):
        RewardConfig(gamma=1.5)
    with pytest.raises(ValueError):
        RewardConfig(e_i=-1)


outcomes = st.one_of(
    st.just(Outcome(Kind.EXACT, 0.0)),
    st.builds(Outcome, st.sampled_from([Kind.INTERRUPTION, Kind.OVERLAP]), st.floats(1e-6, 1e4)),
)


@given(outcomes, st.floats(0.01, 100), st.floats(0.01, 100), st.floats(0.01, 100))
def test_scaling_is_exact(out, e_i, e_o, c):
    # scaling by powers of two is exact in binary floating point; general c is checked to 1 ulp-ish
    base = shape_reward(out, RewardConfig(e_i=e_i, e_o=e_o))
    for scale in (2.0, 0.25):
        assert shape_reward(out, RewardConfig(e_i=scale * e_i, e_o=scale * e_o)) == scale * base
    assert shape_reward(out, RewardConfig(e_i=c * e_i, e_o=c * e_o)) == pytest.approx(c * base, rel=1e-15, abs=0)


@given(st.sampled_from([Kind.INTERRUPTION, Kind.OVERLAP]), st.floats(1e-6, 1e3), st.floats(1e-6, 1e3))
def test_monotone_in_magnitude(kind, a, b):
    lo, hi = sorted((a, b))
    cfg = RewardConfig(e_i=1.3, e_o=0.7)
    assert shape_reward(Outcome(kind, hi), cfg) <= shape_reward(Outcome(kind, lo), cfg) <= 0


@given(outcomes)
def test_zero_iff_exact(out):
    assert (shape_reward(out, RewardConfig(e_i=1, e_o=1)) == 0) == (out.kind == Kind.EXACT)


def episode(n_holds, out):
    steps = [(i * 600.0, HOLD, np.full(3, float(i))) for i in range(n_holds)]
    steps.append((n_holds * 600.0, SUBMIT, np.full(3, float(n_holds))))
    return Episode(steps, out)


def test_assign_exact():
    exps = assign_episode_rewards(episode(3, Outcome(Kind.EXACT, 0.0)), RewardConfig())
    assert len(exps) == 4 and all(e.reward == 0 for e in exps)


def test_assign_single_submit():
    exps = assign_episode_rewards(episode(0, Outcome(Kind.INTERRUPTION, 2.0)), RewardConfig(e_i=1))
    assert len(exps) == 1 and exps[0].terminal and exps[0].reward == -2


def test_assign_overlap_shared_reward():
    exps = assign_episode_rewards(episode(2, Outcome(Kind.OVERLAP, 1.0)), RewardConfig(e_o=2))
    assert [e.reward for e in exps] == [-2, -2, -2]
    assert [e.terminal for e in exps] == [False, False, True]
    assert exps[0].next_state is exps[1].state


def test_assign_terminal_only_switch():
    exps = assign_episode_rewards(episode(2, Outcome(Kind.OVERLAP, 1.0)), RewardConfig(e_o=2, terminal_only=True))
    assert [e.reward for e in exps] == [0, 0, -2]


def test_assign_requires_submit():
    ep = Episode([(0.0, HOLD, np.zeros(3))], Outcome(Kind.EXACT, 0.0))
    with pytest.raises(ValueError):
        assign_episode_rewards(ep, RewardConfig())

import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wamlab import envs
from wamlab.consistency import ConsistencyConfig
from wamlab.core import ActionVec, derive_stream
from wamlab.envs import EnvState, TaskSpec
from wamlab.selection import (MissingValueHead, SelectionConfig, Strategy, argmin_first,
                              blend_actions, select, select_by_consensus, select_by_exploring,
                              select_by_value, select_single, select_weighted_consensus,
                              softmax_weights)
from wamlab.wam import Branch, WamSpec, sample_branches

CFG = ConsistencyConfig()


def _b(future, action=(0.0, 0.0), value=None):
    return Branch([ActionVec(action)], np.asarray(future, dtype=float), value)


def test_single_picks_first():
    bs = [_b([i, 0.0], (i, 0.0)) for i in range(4)]
    out = select_single(bs)
    assert out.chosen_index == 0
    assert out.executed_action == bs[0].actions


def test_n1_every_strategy_matches_single(reach):
    state = EnvState([0.0, 0.0])
    obs = envs.observe(state, reach)
    bs = sample_branches(obs, reach, 1, WamSpec(pred_noise_std=0.1), state, derive_stream(0, 1, 0, 0))
    ref = select_single(bs)
    for s in Strategy:
        out = select(bs, SelectionConfig(s, 1), CFG, state, reach, derive_stream(0, 1, 0, 9))
        assert out.chosen_index == 0
        assert out.executed_action == ref.executed_action


def test_value_argmax_and_ties():
    assert select_by_value([_b([0], value=v) for v in (0.1, 0.9, 0.5)]).chosen_index == 1
    assert select_by_value([_b([0], value=0.3) for _ in range(3)]).chosen_index == 0
    with pytest.raises(MissingValueHead):
        select_by_value([_b([0], value=0.1), _b([0])])


def _exploring_setup(reach):
    state = EnvState([0.1, 0.0])
    acts = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)]
    return state, acts


def test_exploring_oracle_ties_to_first(reach):
    state, acts = _exploring_setup(reach)
    bs = []
    for a in acts:
        _, o = envs.step(state, ActionVec(a), reach)
        bs.append(_b(o.latent, a))
    out = select_by_exploring(bs, state, reach, CFG, None)
    assert out.scores == [1.0] * 4
    assert out.chosen_index == 0
    assert out.exploration_cost == 4


def test_exploring_picks_exact_branch(reach):
    state, acts = _exploring_setup(reach)
    rng = np.random.default_rng(3)
    bs = []
    for i, a in enumerate(acts):
        _, o = envs.step(state, ActionVec(a), reach)
        bs.append(_b(o.latent + (0 if i == 2 else rng.normal(0, 0.1, o.latent.size)), a))
    out = select_by_exploring(bs, state, reach, CFG, None)
    assert out.chosen_index == 2
    assert out.scores[2] == 1.0


def test_exploring_order_invariant_under_replayed_noise():
    spec = TaskSpec("noisy-reach", "PointReach", noise_std=0.05)
    state = EnvState([0.0, 0.0])
    obs = envs.observe(state, spec)
    bs = sample_branches(obs, spec, 5, WamSpec(pred_noise_std=0.05, competence=0.5), state,
                         derive_stream(0, 2, 0, 0))
    stream = derive_stream(0, 2, 0, 77)
    ref = select_by_exploring(bs, state, spec, CFG, stream)
    for perm in itertools.permutations(range(5)):
        out = select_by_exploring(bs, state, spec, CFG, stream, order=perm)
        assert out.scores == ref.scores
        assert out.chosen_index == ref.chosen_index
        assert np.array_equal(out.result[1].latent, ref.result[1].latent)


def test_consensus_degenerate_cases():
    out = select_by_consensus([_b([1.0, 2.0]) for _ in range(4)], CFG, SelectionConfig())
    assert out.scores == [1.0] * 4
    assert out.weights == [0.25] * 4
    assert out.chosen_index == 0
    one = select_by_consensus([_b([5.0])], CFG, SelectionConfig(n_candidates=1))
    assert one.chosen_index == 0 and one.weights == [1.0]


def test_consensus_prefers_central_branch():
    bs = [_b([0.0]), _b([1.0]), _b([5.0])]
    assert select_by_consensus(bs, CFG, SelectionConfig()).chosen_index == 1


def test_softmax_logistic_of_one():
    w = softmax_weights([1.0, 0.0], 1.0)
    assert abs(w[0] - 0.7310585786300049) < 1e-15
    assert abs(w[1] - 0.2689414213699951) < 1e-15


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=16), st.sampled_from([1e-3, 0.1, 1, 10]))
def test_weights_on_simplex(scores, tau):
    w = softmax_weights(scores, tau)
    assert all(x >= 0 for x in w)
    assert abs(sum(w) - 1.0) < 1e-9


def test_blend_identical_actions():
    a = ActionVec([0.3], [1.2])
    out = blend_actions([a, a, a], [0.2, 0.3, 0.5])
    assert np.allclose(out.as_array(), a.as_array(), atol=1e-15)


def test_blend_opposite_headings_lands_near_zero():
    out = blend_actions([ActionVec([1.0], [3.0]), ActionVec([1.0], [-3.0])], [0.5, 0.5])
    assert out.angular[0] == 0.0
    # about pi away from both hypotheses
    assert abs(abs(out.angular[0] - 3.0) - 3.0) < 1e-12


def test_weighted_sharp_tau_converges_to_top():
    bs = [Branch([ActionVec([1.0], [0.5])], np.array([0.0])),
          Branch([ActionVec([0.2], [2.5])], np.array([0.1])),
          Branch([ActionVec([0.7], [-2.0])], np.array([3.0]))]
    out = select_weighted_consensus(bs, CFG, SelectionConfig(Strategy.WEIGHTED, 3, tau=1e-6))
    top = bs[out.chosen_index].actions[0]
    assert np.allclose(out.executed_action[0].as_array(), top.as_array(), atol=1e-6)


def test_weighted_rejects_mixed_dims():
    bs = [Branch([ActionVec([1.0], [0.5])], np.array([0.0])),
          Branch([ActionVec([1.0, 0.0])], np.array([0.0]))]
    with pytest.raises(ValueError):
        select_weighted_consensus(bs, CFG, SelectionConfig(Strategy.WEIGHTED, 2))


def test_empty_branch_list_rejected():
    with pytest.raises(ValueError):
        select_single([])


def test_selection_config_validation():
    with pytest.raises(ValueError):
        SelectionConfig(n_candidates=0)
    with pytest.raises(ValueError):
        SelectionConfig(tau=0.0)
    with pytest.raises(ValueError):
        SelectionConfig(strategy="greedy")


@given(st.lists(st.lists(st.floats(-2, 2), min_size=3, max_size=3), min_size=2, max_size=10))
def test_consensus_argmax_invariant_to_tau_and_alpha(futures):
    bs = [_b(f) for f in futures]
    ref = select_by_consensus(bs, CFG, SelectionConfig()).chosen_index
    for tau in (0.1, 1.0, 10.0):
        assert select_by_consensus(bs, CFG, SelectionConfig(tau=tau)).chosen_index == ref
    # alpha changes the scale of the scores, not their order
    mse = sorted(float(np.mean((np.asarray(f) - np.mean(futures, axis=0)) ** 2)) for f in futures)
    if all(b > a * (1 + 1e-9) for a, b in zip(mse, mse[1:])):
        mse = [float(np.mean((np.asarray(f) - np.mean(futures, axis=0)) ** 2)) for f in futures]
        for alpha in (0.01, 1.0):
            got = select_by_consensus(bs, ConsistencyConfig(alpha), SelectionConfig()).chosen_index
            assert got == int(np.argmin(mse))


def test_two_branch_consensus_is_a_tie():
    rng = np.random.default_rng(8)
    for _ in range(500):
        bs = [_b(rng.normal(0, 0.3, 8)), _b(rng.normal(0, 0.3, 8))]
        for alpha in (0.01, 0.1, 1.0):
            assert select_by_consensus(bs, ConsistencyConfig(alpha), SelectionConfig()).chosen_index == 0


def test_argmin_first_tolerance():
    assert argmin_first([0.5, 0.2, 0.2]) == 1
    assert argmin_first([0.2 * (1 + 1e-15), 0.2]) == 0
    assert argmin_first([0.2 * (1 + 1e-9), 0.2]) == 1
    assert argmin_first([0.0, 0.0]) == 0

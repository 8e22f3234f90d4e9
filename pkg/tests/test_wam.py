import math

import numpy as np
import pytest

from wamlab import envs
from wamlab.core import ActionVec, derive_stream
from wamlab.envs import ConfigError, EnvState
from wamlab.wam import (CollapseMode, Formulation, WamSpec, invert_dynamics, is_stalled,
                        predict_value, sample_branches)


def _branches(spec, wam, state, n=8, history=(), seed=0):
    obs = envs.observe(state, spec)
    return obs, sample_branches(obs, spec, n, wam, state, derive_stream(seed, 1, 0, 0), history)


def test_oracle_predictions_are_exact(reach, oracle):
    state = EnvState([0.1, 0.2])
    _, branches = _branches(reach, oracle, state)
    for b in branches:
        _, realized = envs.step(state, b.actions, reach)
        assert np.array_equal(b.predicted_future, realized.latent)


def test_collapse_predicts_current_latent(stall):
    wam = WamSpec(pred_noise_std=0.1, collapse_mode=CollapseMode.ON_STALL, persistence=2)
    obs, branches = _branches(stall, wam, EnvState([0.6, 0.0]), history=[0.5, 0.0, 0.0])
    assert all(np.array_equal(b.predicted_future, obs.latent) for b in branches)
    _, live = _branches(stall, wam, EnvState([0.6, 0.0]), history=[0.0, 0.5])
    assert not any(np.array_equal(b.predicted_future, obs.latent) for b in live)


def test_is_stalled_needs_k_low_steps():
    wam = WamSpec(stall_threshold=1e-3, persistence=3)
    assert not is_stalled([0.0, 0.0], wam)
    assert is_stalled([0.1, 0.0, 0.0, 0.0], wam)
    assert not is_stalled([0.0, 0.0, 0.01], wam)


def test_sampling_is_deterministic(reach, noisy):
    state = EnvState([0.1, 0.2])
    _, a = _branches(reach, noisy, state)
    _, b = _branches(reach, noisy, state)
    for x, y in zip(a, b):
        assert x.actions == y.actions
        assert np.array_equal(x.predicted_future, y.predicted_future)
        assert x.predicted_value == y.predicted_value


def test_branch_prefix_stable_in_n(reach, noisy):
    state = EnvState([0.1, 0.2])
    _, small = _branches(reach, noisy, state, n=2)
    _, large = _branches(reach, noisy, state, n=8)
    for x, y in zip(small, large):
        assert np.array_equal(x.predicted_future, y.predicted_future)


def test_perturbed_rate_tracks_competence(reach):
    wam = WamSpec(competence=0.7)
    state = EnvState([0.0, 0.0])
    flags = []
    for seed in range(100):
        _, bs = _branches(reach, wam, state, seed=seed)
        flags += [b.perturbed for b in bs]
    assert 0.25 < np.mean(flags) < 0.35


def test_perturbed_actions_point_away_from_goal(reach):
    wam = WamSpec(competence=0.0)
    _, bs = _branches(reach, wam, EnvState([0.0, 0.0]))
    for b in bs:
        assert b.actions[0].linear[0] <= 1e-12  # goal is along +x


def test_value_head_examples(reach):
    s = derive_stream(0, 0, 0, 0)
    at_goal = envs.observe(EnvState([1.0, 0.0]), reach)
    corner = envs.observe(EnvState([-3.0, 3.0]), reach)
    assert math.isclose(predict_value(at_goal, reach, WamSpec(), s), 1.0, abs_tol=1e-9)
    assert math.isclose(predict_value(corner, reach, WamSpec(), s), 0.0, abs_tol=1e-9)
    assert math.isclose(predict_value(at_goal, reach, WamSpec(value_miscalibration=2.0), s),
                        2.0, abs_tol=1e-9)


def test_invert_identity_is_zero_action(reach):
    state = EnvState([0.2, 0.3])
    _, still = envs.step(state, ActionVec.zeros(2), reach)
    action, clamped = invert_dynamics(state, still.latent, reach)
    assert action == ActionVec.zeros(2)
    assert not clamped


def test_invert_one_step(reach):
    state = EnvState([0.2, 0.3])
    d = np.array([0.04, -0.07])
    target = envs.encode_latent(state.physical + d, reach)
    action, clamped = invert_dynamics(state, target, reach)
    assert np.allclose(action.linear, d / reach.params["dt"], atol=1e-9)
    assert not clamped


def test_invert_far_target_clamps(reach):
    target = envs.encode_latent([2.5, -2.5], reach)
    action, clamped = invert_dynamics(EnvState([0.0, 0.0]), target, reach)
    assert clamped
    assert np.allclose(np.abs(action.linear), reach.params["max_speed"])


def test_invert_push_recovers_contact_action(push):
    state = EnvState([0.3, 0.0, 0.44, 0.02])
    true = ActionVec([0.8, 0.1])
    _, obs = envs.step(state, true, push)
    action, clamped = invert_dynamics(state, obs.latent, push)
    _, again = envs.step(state, action, push)
    assert np.allclose(again.latent, obs.latent, atol=1e-8)
    assert not clamped


def test_inverse_formulation_actions_realize_predictions(reach):
    wam = WamSpec(formulation=Formulation.INVERSE, pred_noise_std=0.01)
    state = EnvState([0.0, 0.0])
    _, bs = _branches(reach, wam, state)
    for b in bs:
        _, realized = envs.step(state, b.actions, reach)
        if not b.clamped:
            # exact in state space; the latent itself may sit off the
            # encoder's image because of the prediction noise
            assert np.allclose(envs.decode_latent(realized.latent, reach),
                               envs.decode_latent(b.predicted_future, reach), atol=1e-9)


@pytest.mark.parametrize("kwargs", [
    {"competence": 1.5}, {"pred_noise_std": -1.0}, {"persistence": 0},
    {"formulation": "sideways"}, {"stall_threshold": 0.0},
])
def test_wam_validation(kwargs):
    with pytest.raises(ConfigError):
        WamSpec(**kwargs)


def test_needs_a_branch(reach, oracle):
    with pytest.raises(ValueError):
        _branches(reach, oracle, EnvState([0.0, 0.0]), n=0)

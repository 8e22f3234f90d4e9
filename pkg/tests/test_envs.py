import itertools
import math

import numpy as np
import pytest

from wamlab import envs
from wamlab.consistency import latent_change
from wamlab.core import ActionVec, derive_stream
from wamlab.envs import ConfigError, EnvState, TaskSpec


def test_reset_is_deterministic(reach):
    s = derive_stream(0, 5, 0, 0)
    a, oa = envs.reset(reach, s)
    b, ob = envs.reset(reach, s)
    assert a == b
    assert np.array_equal(oa.latent, ob.latent)


def test_reset_without_jitter_is_canonical(reach):
    state, _ = envs.reset(reach, derive_stream(0, 1, 0, 0))
    assert np.array_equal(state.physical, [0.0, 0.0])
    assert state.step_count == 0


def test_stall_reset_starts_outside_trap():
    spec = TaskSpec("st", "StallTrap", {"start_jitter": 0.5, "stall_x": 0.35, "stall_y": 0.0,
                                         "stall_radius": 0.3})
    for ep in range(200):
        state, _ = envs.reset(spec, derive_stream(0, ep, 0, 0))
        assert not envs.in_stall_region(state, spec)


def test_stall_spec_rejects_start_in_trap():
    with pytest.raises(ConfigError):
        TaskSpec("bad", "StallTrap", {"stall_x": 0.0, "stall_y": 0.0})


def test_unknown_param_rejected():
    with pytest.raises(ConfigError, match="unknown parameters"):
        TaskSpec("bad", "PointReach", {"block_x": 1.0})


def test_zero_action_keeps_position(reach):
    state = EnvState([0.2, -0.1], 3)
    new, _ = envs.step(state, ActionVec.zeros(2), reach)
    assert np.array_equal(new.physical, state.physical)
    assert new.step_count == 4


def test_one_euler_step(reach):
    state = EnvState([0.2, -0.1])
    new, _ = envs.step(state, ActionVec([0.5, -0.25]), reach)
    assert np.allclose(new.physical, [0.2 + 0.05, -0.1 - 0.025], atol=1e-15)


def test_control_horizon_runs_substeps():
    spec = TaskSpec("ch", "PointReach", control_horizon=3)
    new, _ = envs.step(EnvState([0.0, 0.0]), ActionVec([1.0, 0.0]), spec)
    assert np.allclose(new.physical, [0.3, 0.0])
    with pytest.raises(ValueError):
        envs.step(EnvState([0.0, 0.0]), [ActionVec([1.0, 0.0])] * 2, spec)


def test_action_dimension_checked(reach, polar):
    with pytest.raises(ValueError):
        envs.step(EnvState([0.0, 0.0]), ActionVec([1.0]), reach)
    with pytest.raises(ValueError):
        envs.step(EnvState([0.0, 0.0]), ActionVec([1.0, 0.0]), polar)


def test_polar_action_moves_along_heading(polar):
    new, _ = envs.step(EnvState([0.0, 0.0]), ActionVec([1.0], [math.pi / 2]), polar)
    assert np.allclose(new.physical, [0.0, 0.1], atol=1e-15)


def test_absorbing_stall(stall):
    state = EnvState([0.6, 0.0])
    dz = []
    obs = envs.observe(state, stall)
    for t in range(3):
        state, nxt = envs.step(state, ActionVec([1.0, 0.0]), stall)
        dz.append(latent_change(obs.latent, nxt.latent))
        obs = nxt
    assert max(dz) < 1e-20


def test_snapshot_restore_matches_direct(reach):
    state = EnvState([0.3, 0.1], 2)
    a = ActionVec([0.4, 0.9])
    stream = derive_stream(0, 1, 2, 0)
    saved = envs.snapshot(state)
    _, o1 = envs.step(envs.restore(saved), a, reach, stream)
    _, o2 = envs.step(state, a, reach, stream)
    assert np.array_equal(o1.latent, o2.latent)


def test_branches_diverge_iff_actions_differ(reach):
    saved = envs.snapshot(EnvState([0.0, 0.0]))
    stream = derive_stream(0, 1, 2, 0)
    a, b = ActionVec([0.4, 0.9]), ActionVec([0.4, -0.9])
    _, oa = envs.step(envs.restore(saved), a, reach, stream)
    _, oa2 = envs.step(envs.restore(saved), a, reach, stream)
    _, ob = envs.step(envs.restore(saved), b, reach, stream)
    assert np.array_equal(oa.latent, oa2.latent)
    assert not np.array_equal(oa.latent, ob.latent)


def test_branch_order_does_not_matter(push):
    noisy = TaskSpec(push.task_id, push.family, {"goal_x": 1.2}, noise_std=0.01)
    saved = envs.snapshot(EnvState([0.3, 0.0, 0.45, 0.0]))
    stream = derive_stream(0, 1, 2, 0)
    rng = np.random.default_rng(0)
    actions = [ActionVec(rng.uniform(-1, 1, 2)) for _ in range(8)]
    ref = [envs.step(envs.restore(saved), a, noisy, stream)[1].latent for a in actions]
    for perm in itertools.islice(itertools.permutations(range(8)), 0, 40320, 997):
        out = [None] * 8
        for i in perm:
            out[i] = envs.step(envs.restore(saved), actions[i], noisy, stream)[1].latent
        assert all(np.array_equal(x, y) for x, y in zip(out, ref))


def test_success_is_strict(reach):
    eps = reach.params["success_radius"]
    assert envs.is_success(EnvState([1.0, 0.0]), reach)
    assert not envs.is_success(EnvState([1.0 + 2 * eps, 0.0]), reach)
    # a point exactly eps away along an axis: 1.0 - eps is exact in binary here
    assert not envs.is_success(EnvState([1.0, eps]), reach)


def test_push_success_uses_block(push):
    assert envs.is_success(EnvState([0.0, 0.0, 1.2, 0.0]), push)
    assert not envs.is_success(EnvState([1.2, 0.0, 0.0, 0.0]), push)


def test_pushing_moves_block(push):
    state = EnvState([0.3, 0.0, 0.45, 0.0])
    new, _ = envs.step(state, ActionVec([1.0, 0.0]), push)
    assert new.physical[2] > 0.45
    assert new.physical[0] < 0.4


def test_encoder_properties(reach):
    a = envs.encode_latent([0.3, -0.2], reach)
    assert np.array_equal(a, envs.encode_latent([0.3, -0.2], reach))
    b = envs.encode_latent([0.3 + 1e-16, -0.2], reach)
    assert np.sqrt(np.mean((a - b) ** 2)) < 1e-6
    assert np.array_equal(envs.encode_latent([0.0, 0.0], reach), np.zeros(reach.latent_dim))


def test_decode_inverts_encode(push):
    phys = np.array([0.3, -0.4, 1.1, 0.7])
    assert np.allclose(envs.decode_latent(envs.encode_latent(phys, push), push), phys, atol=1e-10)


def test_encoder_depends_on_task_id():
    a = TaskSpec("a", "PointReach")
    b = TaskSpec("b", "PointReach")
    assert not np.allclose(envs.encode_latent([1, 1], a), envs.encode_latent([1, 1], b))


def test_goal_potential_bounds(reach):
    assert envs.goal_potential([1.0, 0.0], reach) == 1.0
    assert math.isclose(envs.goal_potential([-3.0, 3.0], reach), 0.0, abs_tol=1e-12)

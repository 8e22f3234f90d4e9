"""Synthetic world-action models built on the true environment dynamics.

A model samples candidate branches (action sequence + predicted future
latent + predicted value). Prediction error is injected explicitly so it can
be dialled: Gaussian noise, a constant bias, extra noise on off-policy
(perturbed) samples, and an optional collapse mode that predicts a frozen
scene once the agent has stalled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import envs
from .core import ActionVec, RngStream, as_latent
from .envs import ConfigError, EnvState, Family, Observation, TaskSpec


class Formulation(str, Enum):
    JOINT = "joint"
    INVERSE = "inverse"


class CollapseMode(str, Enum):
    OFF = "off"
    ON_STALL = "on_stall"


@dataclass(frozen=True)
class WamSpec:
    formulation: Formulation = Formulation.JOINT
    pred_noise_std: float = 0.0
    bias: float = 0.0
    collapse_mode: CollapseMode = CollapseMode.OFF
    stall_threshold: float = 1e-3
    persistence: int = 2
    policy_noise_std: float = 0.0
    value_noise_std: float = 0.0
    value_miscalibration: float = 1.0
    competence: float = 1.0
    # prediction noise on perturbed samples is pred_noise_std * (1 + gain)
    perturbed_error_gain: float = 0.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "formulation", Formulation(self.formulation))
            object.__setattr__(self, "collapse_mode", CollapseMode(self.collapse_mode))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for name in ("pred_noise_std", "policy_noise_std", "value_noise_std", "perturbed_error_gain"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 <= self.competence <= 1.0:
            raise ConfigError("competence must lie in [0, 1]")
        if self.stall_threshold <= 0:
            raise ConfigError("stall_threshold must be > 0")
        if self.persistence < 1:
            raise ConfigError("persistence must be >= 1")


@dataclass
class Branch:
    actions: list[ActionVec]
    predicted_future: np.ndarray
    predicted_value: float | None = None
    perturbed: bool = False
    clamped: bool = False


def is_stalled(recent_changes: Sequence[float], wam: WamSpec) -> bool:
    """True once the last ``persistence`` realized latent changes all fell
    below ``stall_threshold``."""
    k = wam.persistence
    if len(recent_changes) < k:
        return False
    return all(dz < wam.stall_threshold for dz in recent_changes[-k:])


def _velocity_to_action(vel: np.ndarray, spec: TaskSpec) -> ActionVec:
    if spec.polar:
        speed = math.hypot(vel[0], vel[1])
        heading = math.atan2(vel[1], vel[0]) if speed > 0 else 0.0
        return ActionVec([speed], [heading])
    return ActionVec(vel)


def goal_action(state: EnvState, spec: TaskSpec) -> ActionVec:
    """Scripted goal-directed command for the current state."""
    p = spec.params
    reach = p["dt"] * spec.control_horizon
    vmax = p["max_speed"]
    pos = state.physical[:2]
    if spec.family is Family.PUSH_BLOCK:
        block = state.physical[2:4]
        to_goal = spec.goal - block
        gdist = math.hypot(to_goal[0], to_goal[1])
        unit = to_goal / gdist if gdist > 0 else np.array([1.0, 0.0])
        behind = block - (p["contact_radius"] + 0.05) * unit
        offset = behind - pos
        if math.hypot(offset[0], offset[1]) > 0.06:
            target_disp = offset
        else:
            target_disp = unit * (gdist + 0.05 + p["contact_radius"])
    else:
        target_disp = spec.goal - pos
    dist = math.hypot(target_disp[0], target_disp[1])
    if dist == 0:
        return _velocity_to_action(np.zeros(2), spec)
    speed = min(vmax, dist / reach)
    return _velocity_to_action(target_disp / dist * speed, spec)


def _perturbed_action(intent: ActionVec, theta: float, spec: TaskSpec) -> ActionVec:
    """Full-speed move into the half-plane facing away from ``intent``;
    ``theta`` in [-pi, pi) spreads it over that half-plane."""
    vel = envs.action_velocity(intent, spec)
    base = math.atan2(vel[1], vel[0]) if np.any(vel) else 0.0
    heading = base + math.pi + 0.5 * theta
    vmax = spec.params["max_speed"]
    return _velocity_to_action(vmax * np.array([math.cos(heading), math.sin(heading)]), spec)


def _add_policy_noise(action: ActionVec, noise: np.ndarray, spec: TaskSpec) -> ActionVec:
    if spec.polar:
        return ActionVec(action.linear + noise[:1], action.angular + noise[1:2])
    return ActionVec(action.linear + noise)


def _value(latent: np.ndarray, spec: TaskSpec, wam: WamSpec, z: float) -> float:
    phys = envs.decode_latent(latent, spec)
    return wam.value_miscalibration * envs.goal_potential(phys, spec) + wam.value_noise_std * z


def predict_value(obs: Observation, spec: TaskSpec, wam: WamSpec, stream: RngStream) -> float:
    z = float(stream.generator().normal()) if wam.value_noise_std > 0 else 0.0
    return _value(obs.latent, spec, wam, z)


def invert_dynamics(current: EnvState, target_latent, spec: TaskSpec) -> tuple[ActionVec, bool]:
    """Action that drives ``current`` to the state encoded by ``target_latent``.

    Returns ``(action, clamped)``; ``clamped`` is set when the target lies
    outside the one-step reachable set and the command was saturated.
    """
    target_latent = as_latent(target_latent)
    p = spec.params
    vmax = p["max_speed"]
    reach = p["dt"] * spec.control_horizon
    if spec.family is Family.PUSH_BLOCK:
        vel = _invert_push(current, target_latent, spec)
    else:
        disp = envs.decode_latent(target_latent, spec) - current.physical[:2]
        factor = 1.0
        if envs.in_stall_region(current, spec):
            factor = p["stall_factor"]
        if factor == 0.0:
            moved = bool(np.any(np.abs(disp) > 1e-9))
            return _velocity_to_action(np.zeros(2), spec), moved
        vel = disp / (factor * reach)
    vel = np.where(np.abs(vel) < 1e-9, 0.0, vel)
    if spec.polar:
        speed = math.hypot(vel[0], vel[1])
        clamped = speed > vmax
        if clamped:
            vel = vel * (vmax / speed)
    else:
        clamped = bool(np.any(np.abs(vel) > vmax))
        vel = np.clip(vel, -vmax, vmax)
    return _velocity_to_action(vel, spec), clamped


def _invert_push(current: EnvState, target: np.ndarray, spec: TaskSpec) -> np.ndarray:
    # Gauss-Newton on the one-step latent residual with a finite-difference
    # Jacobian; contact makes the map piecewise smooth only.
    reach = spec.params["dt"] * spec.control_horizon
    vmax = spec.params["max_speed"]
    cart = TaskSpec(spec.task_id, spec.family, _cartesian_params(spec), spec.horizon,
                    spec.control_horizon, spec.latent_dim, 0.0)
    decoded = envs.decode_latent(target, spec)
    vel = np.clip((decoded[:2] - current.physical[:2]) / reach, -vmax, vmax)

    def residual(v):
        nxt, obs = envs.step(current, ActionVec(v), cart)
        return obs.latent - target

    h = 1e-6
    for _ in range(8):
        r = residual(vel)
        jac = np.empty((r.size, 2))
        for k in range(2):
            dv = np.zeros(2)
            dv[k] = h
            jac[:, k] = (residual(vel + dv) - r) / h
        delta, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        vel = vel + delta
        if np.max(np.abs(delta)) < 1e-12:
            break
    return vel


def _cartesian_params(spec: TaskSpec) -> dict:
    params = dict(spec.params)
    params["polar"] = 0.0
    return params


def sample_branches(obs: Observation, spec: TaskSpec, n: int, wam: WamSpec,
                    state: EnvState, stream: RngStream,
                    recent_changes: Sequence[float] = ()) -> list[Branch]:
    """Sample ``n`` candidate branches from the current state.

    Branch ``i`` draws only from ``stream.child(i)``, so the first ``k``
    branches are identical whatever ``n`` is.
    """
    if n < 1:
        raise ValueError("need at least one branch (n >= 1)")
    collapsed = wam.collapse_mode is CollapseMode.ON_STALL and is_stalled(recent_changes, wam)
    intent = goal_action(state, spec)
    dim = spec.latent_dim
    branches = []
    for i in range(n):
        rng = stream.child(i).generator()
        perturbed = rng.random() >= wam.competence
        theta = rng.uniform(-math.pi, math.pi)
        pol_z = rng.normal(size=2)
        pred_z = rng.normal(size=dim)
        val_z = float(rng.normal())

        action = _perturbed_action(intent, theta, spec) if perturbed else intent
        if wam.policy_noise_std > 0:
            action = _add_policy_noise(action, wam.policy_noise_std * pol_z, spec)
        sigma = wam.pred_noise_std * ((1.0 + wam.perturbed_error_gain) if perturbed else 1.0)
        _, true_obs = envs.step(state, action, spec)
        # the value head scores the branch's own outcome before observation
        # noise is added; its error comes only from the value dials
        value = _value(true_obs.latent, spec, wam, val_z)
        predicted = true_obs.latent + wam.bias + sigma * pred_z
        clamped = False
        if wam.formulation is Formulation.INVERSE:
            action, clamped = invert_dynamics(state, predicted, spec)
        if collapsed:
            predicted = obs.latent.copy()
        branches.append(Branch(
            actions=[action] * spec.control_horizon,
            predicted_future=predicted,
            predicted_value=value,
            perturbed=bool(perturbed),
            clamped=clamped,
        ))
    return branches

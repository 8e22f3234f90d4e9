"""Toy point-mass environments with value-semantic state.

Three families share one interface:

* ``PointReach``: velocity-controlled point that must get within the success
  radius of a goal. With ``polar = 1`` the action is (speed, heading).
* ``PushBlock``: the agent pushes a disc toward a target zone; contact is
  resolved by projecting the pair apart, so block motion is non-linear in
  the action.
* ``StallTrap``: PointReach with a disc-shaped region in which all motion is
  scaled by ``stall_factor``. Once inside, the agent barely moves.

All families integrate with explicit Euler at a fixed ``dt`` and clip to a
square arena of half-width ``arena``.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Sequence

import numpy as np

from .core import ActionVec, RngStream


class ConfigError(ValueError):
    pass


class Family(str, Enum):
    POINT_REACH = "PointReach"
    PUSH_BLOCK = "PushBlock"
    STALL_TRAP = "StallTrap"


_COMMON = {
    "dt": 0.1,
    "max_speed": 1.0,
    "success_radius": 0.15,
    "arena": 3.0,
    "start_x": 0.0,
    "start_y": 0.0,
    "start_jitter": 0.0,
    "goal_x": 1.5,
    "goal_y": 0.0,
    "polar": 0.0,
    "squash": 4.0,
}

FAMILY_DEFAULTS: dict[Family, dict[str, float]] = {
    Family.POINT_REACH: dict(_COMMON),
    Family.PUSH_BLOCK: {
        **_COMMON,
        "block_x": 0.6,
        "block_y": 0.0,
        "block_jitter": 0.0,
        "contact_radius": 0.15,
        "damping": 0.2,
    },
    Family.STALL_TRAP: {
        **_COMMON,
        "stall_x": 0.8,
        "stall_y": 0.45,
        "stall_radius": 0.3,
        "stall_factor": 0.05,
    },
}

STATE_DIM = {Family.POINT_REACH: 2, Family.PUSH_BLOCK: 4, Family.STALL_TRAP: 2}


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    family: Family
    params: dict = field(default_factory=dict)
    horizon: int = 30
    control_horizon: int = 1
    latent_dim: int = 8
    noise_std: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        unknown = set(self.params) - set(FAMILY_DEFAULTS[self.family])
        if unknown:
            raise ConfigError(f"task {self.task_id}: unknown parameters {sorted(unknown)}")
        merged = {**FAMILY_DEFAULTS[self.family], **{k: float(v) for k, v in self.params.items()}}
        object.__setattr__(self, "params", merged)
        self.validate()

    def __getitem__(self, key: str) -> float:
        return self.params[key]

    def __hash__(self):
        return hash((self.task_id, self.family, tuple(sorted(self.params.items())),
                     self.horizon, self.control_horizon, self.latent_dim, self.noise_std))

    @property
    def state_dim(self) -> int:
        return STATE_DIM[self.family]

    @property
    def polar(self) -> bool:
        return self.params["polar"] != 0.0

    @property
    def action_dims(self) -> tuple[int, int]:
        """(linear, angular) component counts."""
        return (1, 1) if self.polar else (2, 0)

    @property
    def goal(self) -> np.ndarray:
        # for PushBlock this is the block's target zone
        return np.array([self.params["goal_x"], self.params["goal_y"]])

    def validate(self) -> None:
        p = self.params
        if p["success_radius"] <= 0:
            raise ConfigError(f"task {self.task_id}: success_radius must be > 0")
        if self.horizon < 1 or self.control_horizon < 1:
            raise ConfigError(f"task {self.task_id}: horizon and control_horizon must be >= 1")
        if self.latent_dim < self.state_dim:
            raise ConfigError(
                f"task {self.task_id}: latent_dim {self.latent_dim} < state dim {self.state_dim}")
        if self.noise_std < 0:
            raise ConfigError(f"task {self.task_id}: noise_std must be >= 0")
        if p["dt"] <= 0 or p["max_speed"] <= 0 or p["arena"] <= 0 or p["squash"] <= 0:
            raise ConfigError(f"task {self.task_id}: dt, max_speed, arena, squash must be > 0")
        if self.family is Family.STALL_TRAP:
            if not 0.0 <= p["stall_factor"] <= 1.0:
                raise ConfigError(f"task {self.task_id}: stall_factor must lie in [0, 1]")
            if p["stall_radius"] <= 0:
                raise ConfigError(f"task {self.task_id}: stall_radius must be > 0")
            if _in_stall(np.array([p["start_x"], p["start_y"]]), self):
                raise ConfigError(f"task {self.task_id}: canonical start lies inside the stall region")
        if self.family is Family.PUSH_BLOCK:
            if p["contact_radius"] <= 0 or not 0.0 <= p["damping"] < 1.0:
                raise ConfigError(f"task {self.task_id}: bad contact_radius/damping")


@dataclass(frozen=True)
class EnvState:
    physical: np.ndarray
    step_count: int = 0

    def __post_init__(self):
        arr = np.array(self.physical, dtype=np.float64).reshape(-1)
        arr.setflags(write=False)
        object.__setattr__(self, "physical", arr)

    def __eq__(self, other):
        if not isinstance(other, EnvState):
            return NotImplemented
        return self.step_count == other.step_count and np.array_equal(self.physical, other.physical)

    def __hash__(self):
        return hash((self.physical.tobytes(), self.step_count))


@dataclass(frozen=True)
class Observation:
    latent: np.ndarray
    proprio: np.ndarray


def snapshot(state: EnvState) -> EnvState:
    return EnvState(state.physical.copy(), state.step_count)


def restore(saved: EnvState) -> EnvState:
    return EnvState(saved.physical.copy(), saved.step_count)


@lru_cache(maxsize=None)
def _encoder(task_id: str, latent_dim: int, state_dim: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(zlib.crc32(task_id.encode("utf-8")))
    w = rng.normal(size=(latent_dim, state_dim)) / math.sqrt(state_dim)
    w_pinv = np.linalg.pinv(w)
    w.setflags(write=False)
    w_pinv.setflags(write=False)
    return w, w_pinv


def encode_latent(physical, spec: TaskSpec) -> np.ndarray:
    w, _ = _encoder(spec.task_id, spec.latent_dim, spec.state_dim)
    scale = spec.params["squash"]
    return scale * np.tanh((w @ np.asarray(physical, dtype=np.float64)) / scale)


def decode_latent(latent, spec: TaskSpec) -> np.ndarray:
    """Least-squares physical state whose encoding is closest to ``latent``."""
    _, w_pinv = _encoder(spec.task_id, spec.latent_dim, spec.state_dim)
    scale = spec.params["squash"]
    u = np.clip(np.asarray(latent, dtype=np.float64) / scale, -1 + 1e-12, 1 - 1e-12)
    return w_pinv @ (scale * np.arctanh(u))


def observe(state: EnvState, spec: TaskSpec) -> Observation:
    return Observation(encode_latent(state.physical, spec), state.physical[:2].copy())


def _in_stall(pos: np.ndarray, spec: TaskSpec) -> bool:
    p = spec.params
    return math.hypot(pos[0] - p["stall_x"], pos[1] - p["stall_y"]) < p["stall_radius"]


def reset(spec: TaskSpec, stream: RngStream) -> tuple[EnvState, Observation]:
    p = spec.params
    rng = stream.generator()
    start = np.array([p["start_x"], p["start_y"]])
    agent = start + p["start_jitter"] * rng.uniform(-1.0, 1.0, 2)
    if spec.family is Family.STALL_TRAP:
        for _ in range(100):
            if not _in_stall(agent, spec):
                break
            agent = start + p["start_jitter"] * rng.uniform(-1.0, 1.0, 2)
        else:
            agent = start
    if spec.family is Family.PUSH_BLOCK:
        block = np.array([p["block_x"], p["block_y"]]) + p["block_jitter"] * rng.uniform(-1.0, 1.0, 2)
        physical = np.concatenate([agent, block])
    else:
        physical = agent
    state = EnvState(physical, 0)
    return state, observe(state, spec)


def action_velocity(action: ActionVec, spec: TaskSpec) -> np.ndarray:
    """Planar velocity commanded by ``action``, saturated at max_speed."""
    vmax = spec.params["max_speed"]
    n_lin, n_ang = spec.action_dims
    if action.linear.size != n_lin or action.angular.size != n_ang:
        raise ValueError(
            f"action dimension ({action.linear.size}, {action.angular.size}) "
            f"does not match task ({n_lin}, {n_ang})")
    if spec.polar:
        speed = min(max(float(action.linear[0]), 0.0), vmax)
        heading = float(action.angular[0])
        return np.array([speed * math.cos(heading), speed * math.sin(heading)])
    return np.clip(action.linear, -vmax, vmax)


def _as_sequence(actions, spec: TaskSpec) -> Sequence[ActionVec]:
    if isinstance(actions, ActionVec):
        return [actions] * spec.control_horizon
    actions = list(actions)
    if len(actions) != spec.control_horizon:
        raise ValueError(
            f"expected {spec.control_horizon} actions, got {len(actions)}")
    return actions


def _substep(phys: np.ndarray, vel: np.ndarray, noise: np.ndarray | None,
             spec: TaskSpec) -> np.ndarray:
    p = spec.params
    dt = p["dt"]
    if spec.family is Family.STALL_TRAP:
        factor = p["stall_factor"] if _in_stall(phys, spec) else 1.0
        out = phys + factor * vel * dt
        if noise is not None:
            out = out + factor * noise
    elif spec.family is Family.PUSH_BLOCK:
        out = phys.copy()
        out[:2] += vel * dt
        if noise is not None:
            out += noise
        r = p["contact_radius"]
        gap = out[2:] - out[:2]
        dist = math.hypot(gap[0], gap[1])
        if dist < r:
            if dist > 0:
                unit = gap / dist
            else:
                speed = math.hypot(vel[0], vel[1])
                unit = vel / speed if speed > 0 else np.array([1.0, 0.0])
            push = (r - dist) * unit
            out[2:] += (1.0 - p["damping"]) * push
            out[:2] -= p["damping"] * push
    else:
        out = phys + vel * dt
        if noise is not None:
            out = out + noise
    return np.clip(out, -p["arena"], p["arena"])


def step(state: EnvState, actions, spec: TaskSpec,
         stream: RngStream | None = None) -> tuple[EnvState, Observation]:
    """Advance ``control_horizon`` Euler sub-steps.

    ``actions`` is one ActionVec (held for the whole horizon) or a sequence of
    exactly ``control_horizon`` of them. Transition noise is drawn from
    ``stream``; passing the same stream replays the same noise, and
    ``stream=None`` steps noiselessly.
    """
    seq = _as_sequence(actions, spec)
    vels = [action_velocity(a, spec) for a in seq]
    noises = None
    if stream is not None and spec.noise_std > 0:
        noises = spec.noise_std * stream.generator().normal(size=(len(seq), spec.state_dim))
    phys = state.physical
    for k, vel in enumerate(vels):
        phys = _substep(phys, vel, None if noises is None else noises[k], spec)
    new = EnvState(phys, state.step_count + 1)
    return new, observe(new, spec)


def is_success(state: EnvState, spec: TaskSpec) -> bool:
    pos = state.physical[2:4] if spec.family is Family.PUSH_BLOCK else state.physical[:2]
    goal = spec.goal
    return math.hypot(pos[0] - goal[0], pos[1] - goal[1]) < spec.params["success_radius"]


def in_stall_region(state: EnvState, spec: TaskSpec) -> bool:
    return spec.family is Family.STALL_TRAP and _in_stall(state.physical[:2], spec)


def goal_potential(physical, spec: TaskSpec) -> float:
    """Distance-to-goal potential in [0, 1]: 1 at the goal, 0 at the arena
    corner farthest from it.

    For PushBlock the distance is the block's distance to the target plus
    half the agent's distance to the pushing pose behind the block.
    """
    physical = np.asarray(physical, dtype=np.float64)
    goal = spec.goal
    a = spec.params["arena"]
    far = max(math.hypot(cx - goal[0], cy - goal[1]) for cx in (-a, a) for cy in (-a, a))
    if spec.family is Family.PUSH_BLOCK:
        block = physical[2:4]
        gap = goal - block
        gdist = math.hypot(gap[0], gap[1])
        unit = gap / gdist if gdist > 0 else np.array([1.0, 0.0])
        pose = block - spec.params["contact_radius"] * unit
        dist = gdist + 0.5 * math.hypot(physical[0] - pose[0], physical[1] - pose[1])
        far = far + 0.5 * 2.0 * math.sqrt(2.0) * a
    else:
        dist = math.hypot(physical[0] - goal[0], physical[1] - goal[1])
    return min(max(1.0 - dist / far, 0.0), 1.0)

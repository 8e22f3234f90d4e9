"""Numerical primitives shared by every module: latent vectors, actions,
distances and splittable seeded random streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

_MASK64 = (1 << 64) - 1


def as_latent(values) -> np.ndarray:
    """Coerce to a 1-D float64 latent vector, rejecting NaN/Inf."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError("latent vector must have dimension >= 1")
    if not np.all(np.isfinite(arr)):
        raise ValueError("latent vector contains non-finite entries")
    return arr


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")


def mse_distance(a, b) -> float:
    """Mean squared difference between two latents of equal dimension."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    _check_dims(a, b)
    if a.size == 0:
        raise ValueError("latent vector must have dimension >= 1")
    d = a - b
    return float(np.dot(d, d)) / d.size


def mean_latent(vs: Sequence) -> np.ndarray:
    if len(vs) == 0:
        raise ValueError("mean_latent needs at least one vector")
    first = np.asarray(vs[0], dtype=np.float64).reshape(-1)
    acc = first.copy()
    for v in vs[1:]:
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        _check_dims(first, v)
        acc += v
    return acc / len(vs)


def wrap_angle(x):
    """Wrap radians into [-pi, pi)."""
    return (np.asarray(x, dtype=np.float64) + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class ActionVec:
    """A control command split into linear components and angles.

    Angles are wrapped into [-pi, pi) on construction, so a linear blend of
    two headings near +pi and -pi lands near 0 rather than near pi.
    """

    linear: np.ndarray
    angular: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        lin = np.array(self.linear, dtype=np.float64).reshape(-1)
        ang = wrap_angle(np.array(self.angular, dtype=np.float64).reshape(-1))
        lin.setflags(write=False)
        ang.setflags(write=False)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "angular", ang)

    @property
    def dim(self) -> int:
        return self.linear.size + self.angular.size

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])

    @classmethod
    def zeros(cls, n_linear: int, n_angular: int = 0) -> "ActionVec":
        return cls(np.zeros(n_linear), np.zeros(n_angular))

    def to_list(self) -> list[list[float]]:
        return [self.linear.tolist(), self.angular.tolist()]

    def __eq__(self, other):
        if not isinstance(other, ActionVec):
            return NotImplemented
        return (np.array_equal(self.linear, other.linear)
                and np.array_equal(self.angular, other.angular))

    def __hash__(self):
        return hash((self.linear.tobytes(), self.angular.tobytes()))


def _mix64(x: int) -> int:
    # splitmix64 finalizer
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _derive_seed(master_seed: int, label: tuple[int, int, int]) -> int:
    h = _mix64(master_seed & _MASK64)
    for part in label:
        h = _mix64(h ^ _mix64((part & _MASK64) ^ 0xD6E8FEB86659FD93))
    return h


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream labelled (episode, step, branch).

    ``generator()`` always returns a fresh generator positioned at the start
    of the stream, so handing the same RngStream to two consumers replays
    identical draws.
    """

    master_seed: int
    label: tuple[int, int, int]

    @property
    def seed(self) -> int:
        return _derive_seed(self.master_seed, self.label)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed))

    def child(self, branch: int) -> "RngStream":
        """Same (episode, step) with a different branch label."""
        return RngStream(self.master_seed, (self.label[0], self.label[1], int(branch)))


def derive_stream(master_seed: int, episode: int, step: int, branch: int) -> RngStream:
    return RngStream(int(master_seed), (int(episode), int(step), int(branch)))

"""Action-state consistency and latent change."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .core import mse_distance

DEFAULT_ALPHA = 0.1


@dataclass(frozen=True)
class ConsistencyConfig:
    alpha: float = DEFAULT_ALPHA
    distance: str = "mse"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.distance != "mse":
            raise ValueError(f"unsupported distance {self.distance!r}")


@dataclass
class StepDiagnostics:
    t: int
    c_t: float
    delta_z: float
    chosen_branch: int
    branch_scores: list[float] = field(default_factory=list)
    value_pred: float | None = None

    def __post_init__(self):
        if not 0.0 < self.c_t <= 1.0:
            raise ValueError(f"c_t out of (0, 1]: {self.c_t}")
        if self.delta_z < 0:
            raise ValueError(f"negative latent change: {self.delta_z}")


def consistency_score(predicted, realized, cfg: ConsistencyConfig = ConsistencyConfig()) -> float:
    """exp(-alpha * mse) between a predicted and a realized latent."""
    return math.exp(-cfg.alpha * mse_distance(predicted, realized))


def latent_change(z_now, z_future) -> float:
    return mse_distance(z_now, z_future)


def episode_consistency(steps: Sequence[StepDiagnostics]) -> float:
    if not steps:
        raise ValueError("episode has no steps")
    return math.fsum(s.c_t for s in steps) / len(steps)

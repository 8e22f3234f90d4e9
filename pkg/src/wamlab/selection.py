"""Best-of-N action selection over sampled branches.

Strategies: take the first sample, maximize the model's predicted value,
execute every branch from a snapshot and keep the most consistent one
(needs environment resets), or score branches against the mean predicted
future without touching the environment. The weighted variant blends the
branch actions by their consensus weights instead of picking one.

Ties always go to the lowest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from . import envs
from .consistency import ConsistencyConfig
from .core import ActionVec, RngStream, mean_latent, mse_distance
from .envs import EnvState, Observation, TaskSpec
from .wam import Branch


class Strategy(str, Enum):
    SINGLE = "single"
    VALUE = "value"
    EXPLORING = "exploring"
    CONSENSUS = "consensus"
    WEIGHTED = "weighted"


@dataclass(frozen=True)
class SelectionConfig:
    strategy: Strategy = Strategy.SINGLE
    n_candidates: int = 8
    tau: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")


@dataclass
class SelectionOutcome:
    chosen_index: int
    scores: list[float]
    executed_action: list[ActionVec]
    weights: list[float] | None = None
    exploration_cost: int = 0
    # set by the exploring strategy: the winner's realized transition
    result: tuple[EnvState, Observation] | None = None


class MissingValueHead(ValueError):
    pass


def argmax_first(scores: Sequence[float]) -> int:
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best]:
            best = i
    return best


TIE_RTOL = 1e-12


def argmin_first(values: Sequence[float], rtol: float = TIE_RTOL) -> int:
    """Lowest index whose value is within ``rtol`` (relative) of the minimum.

    Distances that are equal in exact arithmetic, such as the two branches'
    distances to their own midpoint, differ by rounding only; they count as
    a tie and go to the lower index.
    """
    lo = min(values)
    limit = lo + rtol * abs(lo)
    return next(i for i, v in enumerate(values) if v <= limit)


def _scores(distances: Sequence[float], cfg: ConsistencyConfig) -> list[float]:
    return [math.exp(-cfg.alpha * d) for d in distances]


def softmax_weights(scores: Sequence[float], tau: float) -> list[float]:
    s = np.asarray(scores, dtype=np.float64) / tau
    e = np.exp(s - s.max())
    w = e / e.sum()
    return w.tolist()


def _require(branches: Sequence[Branch]) -> None:
    if len(branches) == 0:
        raise ValueError("no branches to select from")


def select_single(branches: Sequence[Branch]) -> SelectionOutcome:
    _require(branches)
    return SelectionOutcome(0, [1.0] + [0.0] * (len(branches) - 1), list(branches[0].actions))


def select_by_value(branches: Sequence[Branch]) -> SelectionOutcome:
    _require(branches)
    values = [b.predicted_value for b in branches]
    if any(v is None for v in values):
        raise MissingValueHead("value selection requires a predicted value on every branch")
    i = argmax_first(values)
    return SelectionOutcome(i, [float(v) for v in values], list(branches[i].actions))


def select_by_exploring(branches: Sequence[Branch], state: EnvState, spec: TaskSpec,
                        cfg: ConsistencyConfig, stream: RngStream | None,
                        order: Sequence[int] | None = None) -> SelectionOutcome:
    """Execute every branch from the same snapshot and keep the one whose
    realized future best matches its prediction.

    ``stream`` is replayed for every branch, so all branches see the same
    transition noise. ``order`` only permutes evaluation order; the result
    does not depend on it.
    """
    _require(branches)
    saved = envs.snapshot(state)
    n = len(branches)
    dist = [0.0] * n
    for i in (range(n) if order is None else order):
        env_state = envs.restore(saved)
        _, obs = envs.step(env_state, branches[i].actions, spec, stream)
        dist[i] = mse_distance(branches[i].predicted_future, obs.latent)
    # rank on the distance: same order as the scores, but alpha cannot
    # round two near-equal distances into a tie
    best = argmin_first(dist)
    final = envs.step(envs.restore(saved), branches[best].actions, spec, stream)
    return SelectionOutcome(best, _scores(dist, cfg), list(branches[best].actions),
                            exploration_cost=n, result=final)


def consensus_distances(branches: Sequence[Branch]) -> list[float]:
    center = mean_latent([b.predicted_future for b in branches])
    return [mse_distance(b.predicted_future, center) for b in branches]


def consensus_scores(branches: Sequence[Branch], cfg: ConsistencyConfig) -> list[float]:
    return _scores(consensus_distances(branches), cfg)


def select_by_consensus(branches: Sequence[Branch], cfg: ConsistencyConfig,
                        sel: SelectionConfig) -> SelectionOutcome:
    _require(branches)
    dist = consensus_distances(branches)
    scores = _scores(dist, cfg)
    weights = softmax_weights(scores, sel.tau)
    # rank on the distance rather than on the weights or scores: the order
    # is the same, but neither tau nor alpha can round it into a false tie
    i = argmin_first(dist)
    return SelectionOutcome(i, scores, list(branches[i].actions), weights=weights)


def blend_actions(actions: Sequence[ActionVec], weights: Sequence[float]) -> ActionVec:
    """Componentwise weighted mean. Angles are averaged as plain numbers."""
    w = np.asarray(weights, dtype=np.float64)
    lin = sum(wi * a.linear for wi, a in zip(w, actions))
    ang = sum(wi * a.angular for wi, a in zip(w, actions))
    return ActionVec(lin, ang)


def select_weighted_consensus(branches: Sequence[Branch], cfg: ConsistencyConfig,
                              sel: SelectionConfig) -> SelectionOutcome:
    _require(branches)
    dims = {(a.linear.size, a.angular.size) for b in branches for a in b.actions}
    if len(dims) != 1:
        raise ValueError(f"branches disagree on action dimensions: {sorted(dims)}")
    out = select_by_consensus(branches, cfg, sel)
    horizon = len(branches[0].actions)
    out.executed_action = [
        blend_actions([b.actions[k] for b in branches], out.weights) for k in range(horizon)
    ]
    return out


def select(branches: Sequence[Branch], sel: SelectionConfig, cfg: ConsistencyConfig,
           state: EnvState | None = None, spec: TaskSpec | None = None,
           stream: RngStream | None = None) -> SelectionOutcome:
    s = sel.strategy
    if s is Strategy.SINGLE:
        return select_single(branches)
    if s is Strategy.VALUE:
        return select_by_value(branches)
    if s is Strategy.EXPLORING:
        if state is None or spec is None:
            raise ValueError("exploring selection needs the environment state")
        return select_by_exploring(branches, state, spec, cfg, stream)
    if s is Strategy.CONSENSUS:
        return select_by_consensus(branches, cfg, sel)
    return select_weighted_consensus(branches, cfg, sel)

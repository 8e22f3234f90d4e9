"""Separability statistics: per-task z-scores, Cohen's d, 1-D logistic
regression, cross-validated ROC/AUC, correlations and success-failure gap
curves."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .core import RngStream


@dataclass(frozen=True)
class LabeledScore:
    task_id: str
    episode_id: int
    score: float
    label: bool


@dataclass
class RocCurve:
    points: list[tuple[float, float]]
    auc: float


@dataclass
class LogisticFit:
    intercept: float
    slope: float
    iterations: int
    converged: bool
    separated: bool

    def decision(self, x) -> np.ndarray:
        return self.intercept + self.slope * np.asarray(x, dtype=np.float64)

    def predict(self, x) -> np.ndarray:
        return expit(self.decision(x))


@dataclass
class FoldResult:
    fold: int
    fit: LogisticFit
    test_index: list[int]
    auc: float
    raw_auc: float


@dataclass
class CvRoc:
    curve: RocCurve
    folds: list[FoldResult]
    k_used: int
    flags: list[str] = field(default_factory=list)

    @property
    def auc(self) -> float:
        return self.curve.auc


def zscore_per_task(scores: Sequence[LabeledScore]) -> tuple[list[LabeledScore], set[str]]:
    """Standardize scores within each task (population std).

    Returns the rescored list in input order and the set of task ids with
    zero variance, whose members all get z = 0.
    """
    groups: dict[str, list[float]] = defaultdict(list)
    for s in scores:
        groups[s.task_id].append(s.score)
    moments = {}
    degenerate = set()
    for task, vals in groups.items():
        arr = np.asarray(vals, dtype=np.float64)
        mu, sd = float(arr.mean()), float(arr.std())
        if not sd > 1e-15 * max(1.0, abs(mu)):
            degenerate.add(task)
        moments[task] = (mu, sd)
    out = []
    for s in scores:
        mu, sd = moments[s.task_id]
        z = 0.0 if s.task_id in degenerate else (s.score - mu) / sd
        out.append(replace(s, score=z))
    return out, degenerate


def cohens_d(group_a: Sequence[float], group_b: Sequence[float]) -> float:
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("Cohen's d needs at least 2 observations per group")
    pooled_var = ((a.size - 1) * a.var(ddof=1) + (b.size - 1) * b.var(ddof=1)) / (a.size + b.size - 2)
    if not pooled_var > 0:
        raise ValueError("pooled variance is zero; effect size undefined")
    return float((a.mean() - b.mean()) / math.sqrt(pooled_var))


def _check_binary(labels: np.ndarray) -> None:
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise ValueError("both outcome classes must be present")


def fit_logistic_1d(features: Sequence[float], labels: Sequence[bool],
                    tol: float = 1e-8, max_iter: int = 100) -> LogisticFit:
    """Maximum-likelihood fit of P(y=1) = sigmoid(b0 + b1 x) by IRLS."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if x.size == 0 or x.size != y.size:
        raise ValueError("features and labels must be aligned and nonempty")
    _check_binary(y)
    yf = y.astype(np.float64)
    X = np.column_stack([np.ones_like(x), x])
    beta = np.zeros(2)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(X @ beta)
        w = p * (1.0 - p)
        grad = X.T @ (yf - p)
        hess = X.T @ (X * w[:, None])
        step, *_ = np.linalg.lstsq(hess, grad, rcond=None)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    lo_pos, hi_pos = x[y].min(), x[y].max()
    lo_neg, hi_neg = x[~y].min(), x[~y].max()
    separated = bool(hi_neg < lo_pos or hi_pos < lo_neg)
    return LogisticFit(float(beta[0]), float(beta[1]), it, converged and not separated, separated)


def auc_raw(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """P(score_pos > score_neg) with ties counted one half (Mann-Whitney)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    _check_binary(y)
    ranks = rankdata(s)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores: Sequence[float], labels: Sequence[bool]) -> RocCurve:
    """ROC by sweeping a threshold down through the distinct scores."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    _check_binary(y)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < s.size:
        j = i
        while j < s.size and s[j] == s[i]:
            j += 1
        tp += int(y[i:j].sum())
        fp += int((j - i) - y[i:j].sum())
        points.append((fp / n_neg, tp / n_pos))
        i = j
    return RocCurve(points, trapezoid_area(points))


def trapezoid_area(points: Sequence[tuple[float, float]]) -> float:
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def stratified_folds(labels: Sequence[bool], k: int, stream: RngStream) -> list[list[int]]:
    """Shuffle each class with ``stream`` and deal its members round-robin."""
    y = np.asarray(labels, dtype=bool)
    rng = stream.generator()
    folds: list[list[int]] = [[] for _ in range(k)]
    offset = 0
    for cls in (True, False):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        for j, i in enumerate(idx):
            folds[(j + offset) % k].append(int(i))
        offset += idx.size
    return [sorted(f) for f in folds]


def roc_auc_cv(scores: Sequence[LabeledScore], k_folds: int = 5,
               stream: RngStream | None = None) -> CvRoc:
    """Pooled out-of-fold ROC of a 1-D logistic classifier on ``score``.

    If a class has fewer members than ``k_folds``, k is reduced so every
    fold keeps both classes in its training split, and a flag is recorded.
    """
    if k_folds < 2:
        raise ValueError("k_folds must be >= 2")
    stream = stream or RngStream(0, (0, 0, 0))
    x = np.asarray([s.score for s in scores], dtype=np.float64)
    y = np.asarray([s.label for s in scores], dtype=bool)
    _check_binary(y)
    flags = []
    k = min(k_folds, int(y.sum()), int((~y).sum()))
    if k < k_folds:
        flags.append(f"k reduced from {k_folds} to {k}: minority class too small")
    if k < 2:
        raise ValueError("too few members of a class for cross-validation")
    folds = stratified_folds(y, k, stream)
    oof = np.empty(x.size)
    results = []
    for f, test in enumerate(folds):
        mask = np.ones(x.size, dtype=bool)
        mask[test] = False
        fit = fit_logistic_1d(x[mask], y[mask])
        if fit.separated:
            flags.append(f"fold {f}: training data perfectly separated")
        # rank on the log-odds: same ROC as probabilities, without ties
        # from sigmoid saturation
        oof[test] = fit.decision(x[test])
        yt = y[test]
        if 0 < yt.sum() < yt.size:
            fold_auc, raw = auc_raw(oof[test], yt), auc_raw(x[test], yt)
        else:
            fold_auc = raw = float("nan")
        results.append(FoldResult(f, fit, list(test), fold_auc, raw))
    return CvRoc(roc_curve(oof, y), results, k, flags)


def correlations(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """(Pearson, Spearman) with midranks for ties."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.size != ya.size or xa.size < 3:
        raise ValueError("need two aligned series of length >= 3")
    return _pearson(xa, ya), _pearson(rankdata(xa), rankdata(ya))


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ValueError("zero variance; correlation undefined")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass
class GapCurve:
    values: list[float]
    truncated: bool


def alive_means(series: Sequence[Sequence[float]]) -> list[float]:
    """Per-step mean over the episodes that reached that step."""
    length = max((len(s) for s in series), default=0)
    out = []
    for t in range(length):
        vals = [s[t] for s in series if len(s) > t]
        out.append(math.fsum(vals) / len(vals))
    return out


def gap_curve(success_series: Sequence[Sequence[float]],
              failure_series: Sequence[Sequence[float]]) -> GapCurve:
    """Per-step success-minus-failure mean, stopping at the first step one
    class no longer has any surviving episode."""
    if not success_series or not failure_series:
        raise ValueError("need at least one episode per class")
    ms, mf = alive_means(success_series), alive_means(failure_series)
    n = min(len(ms), len(mf))
    truncated = len(ms) != len(mf)
    return GapCurve([a - b for a, b in zip(ms[:n], mf[:n])], truncated)

"""Analyses over a RunDataset and their CSV outputs.

Every function here is a pure function of the dataset (plus a seed where
cross-validation needs one), so re-running an analysis reproduces its CSVs
byte for byte.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import stats
from .consistency import ConsistencyConfig, consistency_score
from .core import derive_stream, mean_latent
from .harness import Alignment, EpisodeLog, RunDataset, success_rate
from .selection import Strategy, consensus_scores
from .wam import Branch

CV_LABEL = (1 << 40) + 7
LATE_FRACTION = 1.0 / 3.0
MITIGATION_BINS = 15


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    if v is None:
        return ""
    return v


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs) if xs else float("nan")


def diagnostic_episodes(ds: RunDataset) -> list[EpisodeLog]:
    """Single-strategy episodes when the dataset has them, else everything."""
    single = [e for e in ds.episodes if e.strategy == Strategy.SINGLE.value]
    return single or list(ds.episodes)


def late_steps(e: EpisodeLog):
    n = len(e.steps)
    return e.steps[n - max(1, math.ceil(n * LATE_FRACTION)):]


# -- separability -----------------------------------------------------------

@dataclass
class SeparabilityReport:
    zscores: list[stats.LabeledScore]
    cohens_d: float
    cv: stats.CvRoc | None
    auc_all: float
    per_task: list[dict]
    degenerate: set[str]
    flags: list[str] = field(default_factory=list)

    @property
    def auc(self) -> float:
        return self.cv.auc if self.cv is not None else float("nan")


def separability(ds: RunDataset, master_seed: int = 0, k_folds: int = 5) -> SeparabilityReport:
    episodes = diagnostic_episodes(ds)
    raw = [stats.LabeledScore(e.task_id, i, e.episode_consistency, e.success)
           for i, e in enumerate(episodes)]
    z, degenerate = stats.zscore_per_task(raw)
    flags = [f"task {t}: zero variance, z set to 0" for t in sorted(degenerate)]
    usable = [s for s in z if s.task_id not in degenerate]
    succ = [s.score for s in usable if s.label]
    fail = [s.score for s in usable if not s.label]
    try:
        d = stats.cohens_d(succ, fail)
    except ValueError as exc:
        d = float("nan")
        flags.append(f"pooled Cohen's d undefined: {exc}")
    try:
        auc_all = stats.roc_auc_cv(usable, k_folds, derive_stream(master_seed, 0, 0, CV_LABEL)).auc
    except ValueError as exc:
        auc_all = float("nan")
        flags.append(f"all-task AUC undefined: {exc}")
    aligned = [s for s in usable if ds.alignment.get(s.task_id) is Alignment.ALIGNED]
    cv = None
    try:
        cv = stats.roc_auc_cv(aligned, k_folds, derive_stream(master_seed, 0, 0, CV_LABEL))
        flags.extend(cv.flags)
    except ValueError as exc:
        flags.append(f"aligned-task AUC undefined: {exc}")
    return SeparabilityReport(z, d, cv, auc_all, per_task_table(ds, episodes), degenerate, flags)


def per_task_table(ds: RunDataset, episodes: Sequence[EpisodeLog]) -> list[dict]:
    groups: dict[str, list[EpisodeLog]] = defaultdict(list)
    for e in episodes:
        groups[e.task_id].append(e)
    rows = []
    for task in sorted(groups):
        eps = groups[task]
        cs = [e.episode_consistency for e in eps if e.success]
        cf = [e.episode_consistency for e in eps if not e.success]
        try:
            d = stats.cohens_d(cs, cf)
        except ValueError:
            d = float("nan")
        auc = (stats.auc_raw([e.episode_consistency for e in eps], [e.success for e in eps])
               if cs and cf else float("nan"))
        rows.append({
            "task_id": task,
            "alignment": ds.alignment.get(task, Alignment.UNDETERMINED).value,
            "n_success": len(cs),
            "n_failure": len(cf),
            "mean_consistency_success": _mean(cs),
            "mean_consistency_failure": _mean(cf),
            "cohens_d": d,
            "auc": auc,
        })
    return rows


def write_separability(rep: SeparabilityReport, ds: RunDataset, out: Path) -> list[Path]:
    episodes = diagnostic_episodes(ds)
    paths = [write_csv(out / "zscores.csv", ["task_id", "episode_seed", "strategy", "success", "z"],
                       ((e.task_id, e.episode_seed, e.strategy, int(e.success), z.score)
                        for e, z in zip(episodes, rep.zscores)))]
    points = rep.cv.curve.points if rep.cv is not None else []
    paths.append(write_csv(out / "roc_points.csv", ["fpr", "tpr"], points))
    cols = list(rep.per_task[0]) if rep.per_task else ["task_id"]
    paths.append(write_csv(out / "per_task.csv", cols, ([r[c] for c in cols] for r in rep.per_task)))
    return paths


# -- background collapse ----------------------------------------------------

CELLS = [(Alignment.ALIGNED, True), (Alignment.ALIGNED, False),
         (Alignment.MISALIGNED, True), (Alignment.MISALIGNED, False)]


def cell_name(cell) -> str:
    return f"{cell[0].value}/{'Success' if cell[1] else 'Failure'}"


@dataclass
class CollapseReport:
    trajectories: dict[str, list[float]]
    late_dz: dict[str, float]
    mean_consistency: dict[str, float]
    pearson: float
    spearman: float
    alignment: dict[str, Alignment]
    flags: list[str]

    @property
    def misaligned_tasks(self) -> list[str]:
        return [t for t, a in self.alignment.items() if a is Alignment.MISALIGNED]


def collapse(ds: RunDataset) -> CollapseReport:
    episodes = diagnostic_episodes(ds)
    by_cell: dict[str, list[EpisodeLog]] = {cell_name(c): [] for c in CELLS}
    for e in episodes:
        a = ds.alignment.get(e.task_id, Alignment.UNDETERMINED)
        if a is Alignment.UNDETERMINED:
            continue
        by_cell[cell_name((a, e.success))].append(e)
    flags = []
    traj, late, cons = {}, {}, {}
    for name, eps in by_cell.items():
        if not eps:
            flags.append(f"cell {name}: no episodes")
            continue
        traj[name] = stats.alive_means([e.series("delta_z") for e in eps])
        late[name] = _mean([s.delta_z for e in eps for s in late_steps(e)])
        cons[name] = _mean([e.episode_consistency for e in eps])
    dz = [s.delta_z for e in episodes for s in e.steps]
    c = [s.c_t for e in episodes for s in e.steps]
    try:
        pearson, spearman = stats.correlations(dz, c)
    except ValueError as exc:
        pearson = spearman = float("nan")
        flags.append(f"correlation undefined: {exc}")
    return CollapseReport(traj, late, cons, pearson, spearman, dict(ds.alignment), flags)


def write_collapse(rep: CollapseReport, out: Path) -> list[Path]:
    names = [cell_name(c) for c in CELLS]
    length = max((len(v) for v in rep.trajectories.values()), default=0)
    rows = []
    for t in range(length):
        row = [t]
        for n in names:
            v = rep.trajectories.get(n, [])
            row.append(v[t] if t < len(v) else float("nan"))
        rows.append(row)
    paths = [write_csv(out / "collapse_dz.csv", ["step"] + [f"dz_{n}" for n in names], rows)]
    paths.append(write_csv(out / "collapse_summary.csv",
                           ["cell", "late_mean_dz", "mean_episode_consistency"],
                           ([n, rep.late_dz.get(n, float("nan")), rep.mean_consistency.get(n, float("nan"))]
                            for n in names)))
    paths.append(write_csv(out / "collapse_correlation.csv", ["pearson", "spearman"],
                           [[rep.pearson, rep.spearman]]))
    paths.append(write_csv(out / "alignment.csv", ["task_id", "alignment"],
                           sorted((t, a.value) for t, a in rep.alignment.items())))
    return paths


# -- utility gap ------------------------------------------------------------

@dataclass
class UtilityGap:
    value_gap: list[float]
    consistency_gap: list[float]
    n_tasks: list[int]

    def sign_agreement(self) -> float:
        pairs = [(v, c) for v, c in zip(self.value_gap, self.consistency_gap) if v != 0 and c != 0]
        if not pairs:
            return float("nan")
        return sum((v > 0) == (c > 0) for v, c in pairs) / len(pairs)


def utility_gap(ds: RunDataset) -> UtilityGap:
    """Success-minus-failure curves for value and consistency, computed per
    task and averaged over tasks at each step."""
    groups: dict[str, list[EpisodeLog]] = defaultdict(list)
    for e in diagnostic_episodes(ds):
        groups[e.task_id].append(e)
    curves = []
    for task in sorted(groups):
        s = [e for e in groups[task] if e.success]
        f = [e for e in groups[task] if not e.success]
        if not s or not f:
            continue
        if any(st.value_pred is None for e in groups[task] for st in e.steps):
            raise ValueError(f"task {task}: episodes carry no value predictions")
        vg = stats.gap_curve([e.series("value_pred") for e in s], [e.series("value_pred") for e in f])
        cg = stats.gap_curve([e.series("c_t") for e in s], [e.series("c_t") for e in f])
        curves.append((vg.values, cg.values))
    if not curves:
        raise ValueError("no task has both successful and failed episodes")
    length = max(len(v) for v, _ in curves)
    value, cons, counts = [], [], []
    for t in range(length):
        vs = [v[t] for v, _ in curves if t < len(v)]
        cs = [c[t] for _, c in curves if t < len(c)]
        value.append(_mean(vs))
        cons.append(_mean(cs))
        counts.append(len(vs))
    return UtilityGap(value, cons, counts)


def write_utility(gap: UtilityGap, out: Path) -> list[Path]:
    return [
        write_csv(out / "value_gap.csv", ["step", "value_gap", "n_tasks"],
                  ([t, v, n] for t, (v, n) in enumerate(zip(gap.value_gap, gap.n_tasks)))),
        write_csv(out / "consistency_gap.csv", ["step", "consistency_gap", "n_tasks"],
                  ([t, c, n] for t, (c, n) in enumerate(zip(gap.consistency_gap, gap.n_tasks)))),
    ]


# -- scaling ----------------------------------------------------------------

def scaling(ds: RunDataset) -> dict[int, dict[str, float]]:
    """N -> strategy -> success rate over the whole suite."""
    groups: dict[tuple[int, str], list[EpisodeLog]] = defaultdict(list)
    for e in ds.episodes:
        groups[(e.n_candidates, e.strategy)].append(e)
    table: dict[int, dict[str, float]] = defaultdict(dict)
    for (n, strat), eps in sorted(groups.items()):
        table[n][strat] = success_rate(eps)
    return dict(sorted(table.items()))


def write_scaling(table: dict[int, dict[str, float]], out: Path) -> list[Path]:
    strategies = [s.value for s in Strategy if any(s.value in row for row in table.values())]
    rows = ([n] + [row.get(s, float("nan")) for s in strategies] for n, row in table.items())
    return [write_csv(out / "scaling.csv", ["N"] + strategies, rows)]


# -- mitigation -------------------------------------------------------------

@dataclass
class MitigationCurves:
    bin_edges: list[float]
    dz_diff: list[float]
    c_diff: list[float]
    n_pairs: list[int]
    tasks: list[str] = field(default_factory=list)

    def late_bins(self) -> list[int]:
        return [i for i in range(len(self.dz_diff)) if self.bin_edges[i] >= 1.0 - LATE_FRACTION - 1e-12]


def _binned(series: Sequence[float], bins: int) -> list[float]:
    # mean of the steps whose relative position (t + 0.5) / n falls in each bin
    n = len(series)
    acc: list[list[float]] = [[] for _ in range(bins)]
    for t, v in enumerate(series):
        acc[min(bins - 1, int((t + 0.5) / n * bins))].append(v)
    return [_mean(a) for a in acc]


def mitigation(ds: RunDataset, strategy: str = "consensus", n_candidates: int | None = None,
               baseline: str = "single", bins: int = MITIGATION_BINS,
               scope: str = "misaligned") -> MitigationCurves:
    """Strategy-minus-baseline curves of latent change and consistency over
    matched (task, preset, seed) pairs, on normalized episode progress.

    ``scope="misaligned"`` keeps only tasks the baseline marks Misaligned,
    i.e. where stall-driven collapse is present to be mitigated; it falls
    back to every task when there are none. ``scope="all"`` pools all tasks.
    """
    if scope not in ("misaligned", "all"):
        raise ValueError(f"unknown scope {scope!r}")
    keep = None
    if scope == "misaligned":
        mis = {t for t, a in ds.alignment.items() if a is Alignment.MISALIGNED}
        keep = mis or None

    def pick(strat, n):
        out = {}
        for e in ds.episodes:
            if keep is not None and e.task_id not in keep:
                continue
            if e.strategy == strat and (n is None or e.n_candidates == n):
                k = (e.task_id, e.preset, e.episode_seed)
                if k in out:
                    raise ValueError(f"several {strat} episodes for {k}; pass n_candidates")
                out[k] = e
        return out

    high, low = pick(strategy, n_candidates), pick(baseline, None)
    if not high or not low:
        raise ValueError(f"dataset lacks {strategy!r} or {baseline!r} episodes")
    if set(high) != set(low):
        missing = sorted(set(high) ^ set(low))[:3]
        raise ValueError(f"unmatched (task, preset, seed) pairs, e.g. {missing}")
    dz_acc: list[list[float]] = [[] for _ in range(bins)]
    c_acc: list[list[float]] = [[] for _ in range(bins)]
    for key in sorted(high):
        h, l = high[key], low[key]
        hd, ld = _binned(h.series("delta_z"), bins), _binned(l.series("delta_z"), bins)
        hc, lc = _binned(h.series("c_t"), bins), _binned(l.series("c_t"), bins)
        for b in range(bins):
            if not (math.isnan(hd[b]) or math.isnan(ld[b])):
                dz_acc[b].append(hd[b] - ld[b])
                c_acc[b].append(hc[b] - lc[b])
    return MitigationCurves([b / bins for b in range(bins)],
                            [_mean(a) for a in dz_acc], [_mean(a) for a in c_acc],
                            [len(a) for a in dz_acc], sorted({k[0] for k in high}))


def write_mitigation(cur: MitigationCurves, out: Path, name: str = "mitigation.csv") -> list[Path]:
    rows = ([i, cur.bin_edges[i], cur.dz_diff[i], cur.c_diff[i], cur.n_pairs[i]]
            for i in range(len(cur.dz_diff)))
    return [write_csv(out / name,
                      ["bin", "progress_start", "dz_diff", "c_diff", "n_pairs"], rows)]


# -- WTA vs weighted ----------------------------------------------------------

def wta(ds: RunDataset) -> dict[str, float]:
    groups: dict[str, list[EpisodeLog]] = defaultdict(list)
    for e in ds.episodes:
        groups[f"{e.strategy}:{e.n_candidates}"].append(e)
    return {k: success_rate(v) for k, v in sorted(groups.items())}


def write_wta(table: dict[str, float], out: Path) -> list[Path]:
    return [write_csv(out / "wta.csv", ["cell", "success_rate"], sorted(table.items()))]


# -- consensus proxy ----------------------------------------------------------

@dataclass
class ProxyReport:
    root_error_ratio: float
    target: float
    spearman: float
    trials: int


def proxy_soundness(sigma: float = 0.5, n: int = 8, trials: int = 1000, dim: int = 8,
                    seed: int = 0, cfg: ConsistencyConfig = ConsistencyConfig()) -> ProxyReport:
    """Check the consensus mean against single predictions under zero-mean
    Gaussian prediction noise around a known true future.

    Returns the ratio sqrt(E[mse(mean, truth)]) / sqrt(E[mse(sample, truth)])
    and the pooled Spearman correlation between consensus scores and true
    consistency scores.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    err_mean, err_single = [], []
    proxy, truth = [], []
    for _ in range(trials):
        true_future = rng.normal(size=dim)
        preds = true_future + sigma * rng.normal(size=(n, dim))
        center = mean_latent(list(preds))
        err_mean.append(float(np.mean((center - true_future) ** 2)))
        err_single.append(float(np.mean((preds - true_future) ** 2)))
        branches = [Branch([], p) for p in preds]
        proxy.extend(consensus_scores(branches, cfg))
        truth.extend(consistency_score(p, true_future, cfg) for p in preds)
    ratio = math.sqrt(_mean(err_mean)) / math.sqrt(_mean(err_single))
    _, rho = stats.correlations(proxy, truth)
    return ProxyReport(ratio, 1.0 / math.sqrt(n), rho, trials)

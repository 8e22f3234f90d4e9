"""Episode and suite execution, plus the JSONL dataset format."""

from __future__ import annotations

import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from . import envs
from .consistency import (ConsistencyConfig, StepDiagnostics, consistency_score,
                          episode_consistency, latent_change)
from .core import derive_stream
from .envs import TaskSpec
from .selection import SelectionConfig, Strategy, select
from .wam import WamSpec, is_stalled, predict_value, sample_branches

# stream labels outside the branch-index range
RESET_STEP = 1 << 40
ENV_BRANCH = 1 << 40
VALUE_BRANCH = (1 << 40) + 1


class Alignment(str, Enum):
    ALIGNED = "Aligned"
    MISALIGNED = "Misaligned"
    UNDETERMINED = "Undetermined"


@dataclass
class EpisodeLog:
    task_id: str
    preset: str
    episode_seed: int
    strategy: str
    n_candidates: int
    steps: list[StepDiagnostics]
    success: bool
    episode_consistency: float
    stall_onset: int | None
    total_exploration_cost: int

    @property
    def key(self) -> tuple:
        return (self.task_id, self.preset, self.strategy, self.n_candidates, self.episode_seed)

    def series(self, name: str) -> list[float]:
        return [getattr(s, name) for s in self.steps]

    def to_json(self) -> str:
        return json.dumps(asdict(self), allow_nan=False)

    @classmethod
    def from_json(cls, line: str) -> "EpisodeLog":
        raw = json.loads(line)
        raw["steps"] = [StepDiagnostics(**s) for s in raw["steps"]]
        return cls(**raw)


def episode_key(task_id: str, seed: int) -> int:
    """Stream label for one (task, seed); shared by every strategy and N so
    matched episodes start from identical samples."""
    return (zlib.crc32(task_id.encode("utf-8")) << 24) | (seed & 0xFFFFFF)


def run_episode(spec: TaskSpec, wam: WamSpec, sel: SelectionConfig, cfg: ConsistencyConfig,
                master_seed: int, episode_index: int, preset: str = "") -> EpisodeLog:
    ep = episode_key(spec.task_id, episode_index)
    state, obs = envs.reset(spec, derive_stream(master_seed, ep, RESET_STEP, 0))
    steps: list[StepDiagnostics] = []
    history: list[float] = []
    stall_onset = None
    cost = 0
    success = False
    for t in range(spec.horizon):
        base = derive_stream(master_seed, ep, t, 0)
        branches = sample_branches(obs, spec, sel.n_candidates, wam, state, base, history)
        env_stream = base.child(ENV_BRANCH)
        out = select(branches, sel, cfg, state, spec, env_stream)
        if out.result is not None:
            new_state, new_obs = out.result
        else:
            new_state, new_obs = envs.step(state, out.executed_action, spec, env_stream)
        # true consistency of the chosen prediction, logged for every strategy
        c = consistency_score(branches[out.chosen_index].predicted_future, new_obs.latent, cfg)
        dz = latent_change(obs.latent, new_obs.latent)
        value = predict_value(obs, spec, wam, base.child(VALUE_BRANCH))
        steps.append(StepDiagnostics(t, c, dz, out.chosen_index, list(out.scores), value))
        history.append(dz)
        if stall_onset is None and is_stalled(history, wam):
            stall_onset = t - wam.persistence + 1
        cost += out.exploration_cost
        state, obs = new_state, new_obs
        if envs.is_success(state, spec):
            success = True
            break
    return EpisodeLog(spec.task_id, preset, episode_index, sel.strategy.value, sel.n_candidates,
                      steps, success, episode_consistency(steps), stall_onset, cost)


@dataclass(frozen=True)
class Cell:
    task: TaskSpec
    preset: str
    wam: WamSpec
    selection: SelectionConfig
    seed: int

    @property
    def key(self) -> tuple:
        return (self.task.task_id, self.preset, self.selection.strategy.value,
                self.selection.n_candidates, self.seed)


@dataclass
class Grid:
    tasks: list[TaskSpec]
    presets: dict[str, WamSpec]
    selections: list[SelectionConfig]
    seeds: int

    def cells(self) -> list[Cell]:
        if not (self.tasks and self.presets and self.selections and self.seeds > 0):
            raise ValueError("empty grid")
        cells = [Cell(t, name, w, s, k)
                 for t in self.tasks for name, w in self.presets.items()
                 for s in self.selections for k in range(self.seeds)]
        return sorted(cells, key=lambda c: c.key)


@dataclass
class RunDataset:
    fingerprint: str
    episodes: list[EpisodeLog]
    alignment: dict[str, Alignment] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.alignment:
            self.alignment = compute_alignment(self.episodes)

    def select(self, **match) -> list[EpisodeLog]:
        return [e for e in self.episodes
                if all(getattr(e, k) == v for k, v in match.items())]

    def write(self, path: str | Path) -> Path:
        """Write the JSONL body and a ``.meta.json`` sidecar.

        Files are written to temporaries and renamed, so a failure never
        leaves a half-written dataset behind.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "fingerprint": self.fingerprint,
            "manifest": self.manifest,
            "alignment": {k: v.value for k, v in sorted(self.alignment.items())},
            "n_episodes": len(self.episodes),
            "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        body_tmp = path.with_name(path.name + ".tmp")
        meta_path = meta_path_for(path)
        meta_tmp = meta_path.with_name(meta_path.name + ".tmp")
        try:
            with open(body_tmp, "w", encoding="utf-8", newline="\n") as fh:
                for e in self.episodes:
                    fh.write(e.to_json() + "\n")
            meta_tmp.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
            body_tmp.replace(path)
            meta_tmp.replace(meta_path)
        finally:
            for tmp in (body_tmp, meta_tmp):
                tmp.unlink(missing_ok=True)
        return path

    @classmethod
    def read(cls, path: str | Path) -> "RunDataset":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            episodes = [EpisodeLog.from_json(line) for line in fh if line.strip()]
        meta_path = meta_path_for(path)
        fingerprint, manifest = "", {}
        if meta_path.exists():
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            fingerprint, manifest = meta.get("fingerprint", ""), meta.get("manifest", {})
        return cls(fingerprint, episodes, manifest=manifest)


def meta_path_for(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def compute_alignment(episodes: Iterable[EpisodeLog]) -> dict[str, Alignment]:
    """Per-task alignment from Single-strategy episodes only."""
    by_task: dict[str, tuple[list[float], list[float]]] = {}
    tasks = set()
    for e in episodes:
        tasks.add(e.task_id)
        if e.strategy != Strategy.SINGLE.value:
            continue
        succ, fail = by_task.setdefault(e.task_id, ([], []))
        (succ if e.success else fail).append(e.episode_consistency)
    out = {}
    for task in sorted(tasks):
        succ, fail = by_task.get(task, ([], []))
        if not succ or not fail:
            out[task] = Alignment.UNDETERMINED
        elif math.fsum(succ) / len(succ) > math.fsum(fail) / len(fail):
            out[task] = Alignment.ALIGNED
        else:
            out[task] = Alignment.MISALIGNED
    return out


def _run_cell(args) -> EpisodeLog:
    cell, cfg, master_seed = args
    return run_episode(cell.task, cell.wam, cell.selection, cfg, master_seed, cell.seed, cell.preset)


def run_suite(grid: Grid, cfg: ConsistencyConfig, master_seed: int, jobs: int = 1,
              fingerprint: str = "", manifest: dict | None = None) -> RunDataset:
    cells = grid.cells()
    work = [(c, cfg, master_seed) for c in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            episodes = list(pool.map(_run_cell, work, chunksize=8))
    else:
        episodes = [_run_cell(w) for w in work]
    episodes.sort(key=lambda e: e.key)
    return RunDataset(fingerprint, episodes, manifest=manifest or {})


def success_rate(episodes: Sequence[EpisodeLog]) -> float:
    if not episodes:
        return float("nan")
    return sum(e.success for e in episodes) / len(episodes)

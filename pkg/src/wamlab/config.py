"""INI run configuration: tasks, model presets, suites and experiment wiring.

See ``data/default.cfg`` for the grammar. Overrides are applied to the raw
``(section, key)`` values before parsing, so the fingerprint of an
overridden run can be recomputed from the file plus the same overrides.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

from .consistency import ConsistencyConfig
from .envs import ConfigError, TaskSpec
from .harness import Grid
from .selection import SelectionConfig, Strategy
from .wam import WamSpec

EXPERIMENTS = ("separability", "collapse", "utility", "scaling", "mitigation", "wta")

_TASK_FIELDS = {"family": str, "horizon": int, "control_horizon": int,
                "latent_dim": int, "noise_std": float}
_WAM_TYPES = {f.name: f.type for f in dataclasses.fields(WamSpec)}


@dataclass(frozen=True)
class SuiteSpec:
    name: str
    tasks: tuple[str, ...]
    presets: tuple[str, ...]
    cells: tuple[tuple[str, int], ...]
    seeds: int


@dataclass
class RunConfig:
    master_seed: int
    alpha: float
    tau: float
    jobs: int
    output_dir: str
    tasks: dict[str, TaskSpec]
    presets: dict[str, WamSpec]
    suites: dict[str, SuiteSpec]
    experiments: dict[str, str]
    fingerprint: str
    overrides: dict[str, str]

    @property
    def consistency(self) -> ConsistencyConfig:
        return ConsistencyConfig(alpha=self.alpha)

    def suite(self, name: str) -> SuiteSpec:
        if name not in self.suites:
            raise ConfigError(f"unknown suite {name!r}; defined: {', '.join(sorted(self.suites))}")
        return self.suites[name]

    def grid(self, suite_name: str) -> Grid:
        s = self.suite(suite_name)
        return Grid(
            tasks=[self.tasks[t] for t in s.tasks],
            presets={p: self.presets[p] for p in s.presets},
            selections=[SelectionConfig(Strategy(st), n, self.tau) for st, n in s.cells],
            seeds=s.seeds,
        )

    def manifest(self, suite_name: str) -> dict:
        s = self.suite(suite_name)
        return {
            "suite": s.name,
            "tasks": list(s.tasks),
            "presets": list(s.presets),
            "cells": [f"{st}:{n}" for st, n in s.cells],
            "seeds": s.seeds,
            "master_seed": self.master_seed,
            "alpha": self.alpha,
            "tau": self.tau,
            "overrides": dict(sorted(self.overrides.items())),
        }


def default_config_text() -> str:
    return resources.files("wamlab").joinpath("data/default.cfg").read_text(encoding="utf-8")


def _parser(text: str, source: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cp


def canonical_text(cp: configparser.ConfigParser) -> str:
    lines = []
    for section in sorted(cp.sections()):
        for key in sorted(cp[section]):
            lines.append(f"{section}.{key}={cp[section][key].strip()}")
    return "\n".join(lines) + "\n"


def fingerprint_of(cp: configparser.ConfigParser) -> str:
    return hashlib.sha256(canonical_text(cp).encode("utf-8")).hexdigest()[:16]


def load_config(path: str | Path | None = None,
                overrides: Mapping[str, str] | None = None) -> RunConfig:
    """Parse a config file (the packaged default when ``path`` is None).

    ``overrides`` maps ``"section.key"`` to a raw value string.
    """
    if path is None:
        text, source = default_config_text(), "default.cfg"
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        source = str(path)
    cp = _parser(text, source)
    overrides = dict(overrides or {})
    for dotted, value in overrides.items():
        section, _, key = dotted.rpartition(".")
        if not cp.has_section(section):
            raise ConfigError(f"override {dotted}: no section [{section}]")
        cp[section][key] = str(value)
    return _build(cp, source, overrides)


def _num(section: str, key: str, raw: str, typ):
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {typ.__name__}") from None


def _names(raw: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in raw.split(",") if x.strip())


def _build(cp: configparser.ConfigParser, source: str, overrides: dict) -> RunConfig:
    run = cp["run"] if cp.has_section("run") else {}
    tasks: dict[str, TaskSpec] = {}
    raw_wams: dict[str, dict] = {}
    suites: dict[str, SuiteSpec] = {}
    for section in cp.sections():
        kind, _, name = section.partition(":")
        body = cp[section]
        if kind == "task":
            fields, params = {}, {}
            for key, raw in body.items():
                if key in _TASK_FIELDS:
                    fields[key] = _num(section, key, raw, _TASK_FIELDS[key])
                else:
                    params[key] = _num(section, key, raw, float)
            if "family" not in fields:
                raise ConfigError(f"[{section}] family: missing")
            try:
                tasks[name] = TaskSpec(name, fields.pop("family"), params, **fields)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {exc}") from None
        elif kind == "wam":
            raw_wams[name] = dict(body)
        elif kind == "suite":
            suites[name] = _suite(section, name, body)
        elif section not in ("run", "experiments"):
            raise ConfigError(f"{source}: unknown section [{section}]")
    presets = {name: _wam(name, raw_wams) for name in raw_wams}
    for s in suites.values():
        for t in s.tasks:
            if t not in tasks:
                raise ConfigError(f"[suite:{s.name}] tasks: undefined task {t!r}")
        for p in s.presets:
            if p not in presets:
                raise ConfigError(f"[suite:{s.name}] presets: undefined preset {p!r}")
    experiments = dict(cp["experiments"]) if cp.has_section("experiments") else {}
    for exp, suite in experiments.items():
        if exp not in EXPERIMENTS:
            raise ConfigError(f"[experiments] {exp}: unknown experiment; valid: {', '.join(EXPERIMENTS)}")
        if suite not in suites:
            raise ConfigError(f"[experiments] {exp}: undefined suite {suite!r}")
    cfg = RunConfig(
        master_seed=_num("run", "master_seed", run.get("master_seed", "0"), int),
        alpha=_num("run", "alpha", run.get("alpha", "0.1"), float),
        tau=_num("run", "tau", run.get("tau", "1.0"), float),
        jobs=_num("run", "jobs", run.get("jobs", "1"), int),
        output_dir=run.get("output_dir", "wamlab-out"),
        tasks=tasks, presets=presets, suites=suites, experiments=experiments,
        fingerprint=fingerprint_of(cp), overrides=overrides,
    )
    try:
        ConsistencyConfig(cfg.alpha)
        SelectionConfig(tau=cfg.tau)
    except ValueError as exc:
        raise ConfigError(f"[run] {exc}") from None
    return cfg


def _suite(section: str, name: str, body) -> SuiteSpec:
    for key in ("tasks", "presets", "cells", "seeds"):
        if key not in body:
            raise ConfigError(f"[{section}] {key}: missing")
    cells = []
    for item in _names(body["cells"]):
        strat, _, n = item.partition(":")
        try:
            cells.append((Strategy(strat.strip()).value, int(n)))
        except ValueError:
            raise ConfigError(f"[{section}] cells: bad entry {item!r} (want strategy:N, "
                              f"strategy in {[s.value for s in Strategy]})") from None
        if cells[-1][1] < 1:
            raise ConfigError(f"[{section}] cells: N must be >= 1 in {item!r}")
    seeds = _num(section, "seeds", body["seeds"], int)
    if seeds < 1:
        raise ConfigError(f"[{section}] seeds: must be >= 1")
    return SuiteSpec(name, _names(body["tasks"]), _names(body["presets"]),
                     tuple(dict.fromkeys(cells)), seeds)


def _wam(name: str, raw: dict[str, dict], seen: tuple = ()) -> WamSpec:
    if name in seen:
        raise ConfigError(f"[wam:{name}] base: cycle through {' -> '.join(seen + (name,))}")
    if name not in raw:
        raise ConfigError(f"[wam:{seen[-1]}] base: undefined preset {name!r}")
    body = dict(raw[name])
    values = {}
    base = body.pop("base", None)
    if base:
        values = dataclasses.asdict(_wam(base.strip(), raw, seen + (name,)))
    for key, val in body.items():
        if key not in _WAM_TYPES:
            raise ConfigError(f"[wam:{name}] {key}: unknown field")
        typ = {"int": int, "float": float}.get(_WAM_TYPES[key], str)
        values[key] = _num(f"wam:{name}", key, val, typ)
    try:
        return WamSpec(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[wam:{name}] {exc}") from None

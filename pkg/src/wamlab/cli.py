"""Command-line entry point: ``wamlab run | analyze | experiment | report``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage or
configuration error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path
from typing import Callable, Sequence

from . import experiments as ex
from .config import EXPERIMENTS, RunConfig, load_config
from .envs import ConfigError
from .harness import Alignment, RunDataset, run_suite, success_rate
from .selection import Strategy

OUT_ENV = "WAMLAB_OUT"
ALL_EXPERIMENTS = EXPERIMENTS + ("proxy",)


class UsageError(Exception):
    pass


def _f(x: float, nd: int = 3) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.{nd}f}"


def output_root(args, cfg: RunConfig | None = None) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    return Path(cfg.output_dir if cfg else "wamlab-out")


def _overrides(args, suite: str | None) -> dict[str, str]:
    ov = {}
    for flag, key in (("seed", "run.master_seed"), ("alpha", "run.alpha"),
                      ("tau", "run.tau"), ("jobs", "run.jobs")):
        if getattr(args, flag, None) is not None:
            ov[key] = str(getattr(args, flag))
    if suite is None:
        return ov
    if getattr(args, "seeds", None) is not None:
        ov[f"suite:{suite}.seeds"] = str(args.seeds)
    strategy, n = getattr(args, "strategy", None), getattr(args, "candidates", None)
    if strategy is not None or n is not None:
        strategy = strategy or Strategy.CONSENSUS.value
        if n is None:
            n = 1 if strategy == Strategy.SINGLE.value else 8
        ov[f"suite:{suite}.cells"] = f"{strategy}:{n}"
    return ov


def _load(args, suite: str | None) -> RunConfig:
    return load_config(args.config, _overrides(args, suite))


def summary_lines(ds: RunDataset) -> list[str]:
    groups: dict[tuple[str, int], list] = {}
    for e in ds.episodes:
        groups.setdefault((e.strategy, e.n_candidates), []).append(e)
    lines = []
    for (strat, n), eps in sorted(groups.items()):
        cost = sum(e.total_exploration_cost for e in eps) / len(eps)
        lines.append(f"strategy={strat} N={n} episodes={len(eps)} "
                     f"success={_f(100 * success_rate(eps), 1)}% "
                     f"mean_consistency={_f(sum(e.episode_consistency for e in eps) / len(eps), 4)} "
                     f"exploration_cost={_f(cost, 1)}")
    return lines


def run_and_write(cfg: RunConfig, suite: str, path: Path) -> RunDataset:
    ds = run_suite(cfg.grid(suite), cfg.consistency, cfg.master_seed, cfg.jobs,
                   cfg.fingerprint, cfg.manifest(suite))
    ds.write(path)
    return ds


# -- analyses ---------------------------------------------------------------

def analyze_dataset(ds: RunDataset, out: Path, master_seed: int = 0) -> list[str]:
    rep = ex.separability(ds, master_seed)
    ex.write_separability(rep, ds, out)
    lines = [f"cohens_d={_f(rep.cohens_d)} auc_cv={_f(rep.auc)} auc_all_tasks={_f(rep.auc_all)}"]
    counts = {a: sum(1 for v in ds.alignment.values() if v is a) for a in Alignment}
    lines.append("alignment: " + " ".join(f"{a.value}={counts[a]}" for a in Alignment))
    lines += [f"warning: {f}" for f in rep.flags]
    return lines


def _exp_separability(ds, out, cfg):
    return analyze_dataset(ds, out, cfg.master_seed)


def _exp_collapse(ds, out, cfg):
    rep = ex.collapse(ds)
    ex.write_collapse(rep, out)
    lines = [f"misaligned_tasks={len(rep.misaligned_tasks)} "
             f"pearson={_f(rep.pearson)} spearman={_f(rep.spearman)}"]
    for name in (ex.cell_name(c) for c in ex.CELLS):
        lines.append(f"{name}: late_dz={_f(rep.late_dz.get(name, float('nan')), 5)} "
                     f"mean_c={_f(rep.mean_consistency.get(name, float('nan')), 4)}")
    return lines + [f"warning: {f}" for f in rep.flags]


def _exp_utility(ds, out, cfg):
    gap = ex.utility_gap(ds)
    ex.write_utility(gap, out)
    return [f"steps={len(gap.value_gap)} value_gap_step0={_f(gap.value_gap[0], 4)} "
            f"consistency_gap_step0={_f(gap.consistency_gap[0], 4)} "
            f"sign_agreement={_f(gap.sign_agreement())}"]


def _exp_scaling(ds, out, cfg):
    table = ex.scaling(ds)
    ex.write_scaling(table, out)
    return [f"N={n} " + " ".join(f"{s}={_f(100 * v, 1)}%" for s, v in row.items())
            for n, row in table.items()]


def _exp_mitigation(ds, out, cfg):
    lines = []
    for scope, name in (("misaligned", "mitigation.csv"), ("all", "mitigation_all_tasks.csv")):
        cur = ex.mitigation(ds, "consensus", None, scope=scope)
        ex.write_mitigation(cur, out, name)
        late = cur.late_bins()
        pos = sum(cur.dz_diff[b] > 0 for b in late)
        lines.append(f"scope={scope} tasks={len(cur.tasks)} late_bins={len(late)} dz_diff_positive={pos} "
                     f"fraction={_f(pos / len(late) if late else float('nan'))}")
    return lines


def _exp_wta(ds, out, cfg):
    table = ex.wta(ds)
    ex.write_wta(table, out)
    return [" ".join(f"{k}={_f(100 * v, 1)}%" for k, v in table.items())]


def _exp_proxy(out, cfg):
    rep = ex.proxy_soundness(seed=cfg.master_seed, cfg=cfg.consistency)
    ex.write_csv(out / "proxy.csv", ["root_error_ratio", "target", "spearman", "trials"],
                 [[rep.root_error_ratio, rep.target, rep.spearman, rep.trials]])
    return [f"root_error_ratio={_f(rep.root_error_ratio, 4)} target={_f(rep.target, 4)} "
            f"spearman={_f(rep.spearman)}"]


_DATASET_EXPERIMENTS: dict[str, Callable] = {
    "separability": _exp_separability,
    "collapse": _exp_collapse,
    "utility": _exp_utility,
    "scaling": _exp_scaling,
    "mitigation": _exp_mitigation,
    "wta": _exp_wta,
}


def run_experiment(name: str, cfg: RunConfig, root: Path, cache: dict | None = None) -> list[str]:
    out = root / name
    out.mkdir(parents=True, exist_ok=True)
    if name == "proxy":
        return _exp_proxy(out, cfg)
    if name not in cfg.experiments:
        raise ConfigError(f"[experiments] {name}: no suite assigned")
    suite = cfg.experiments[name]
    cache = {} if cache is None else cache
    if suite not in cache:
        cache[suite] = run_and_write(cfg, suite, root / "runs" / f"{suite}.jsonl")
    return _DATASET_EXPERIMENTS[name](cache[suite], out, cfg)


# -- commands ---------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = _load(args, args.suite)
    root = output_root(args, cfg)
    path = root / f"{args.suite}.jsonl"
    ds = run_and_write(cfg, args.suite, path)
    for line in summary_lines(ds):
        print(line)
    print(f"wrote {path} fingerprint={cfg.fingerprint}")
    return 0


def cmd_analyze(args) -> int:
    path = Path(args.dataset)
    if not path.exists():
        raise UsageError(f"dataset not found: {path}")
    try:
        ds = RunDataset.read(path)
    except (ValueError, TypeError, KeyError) as exc:
        raise UsageError(f"{path}: not a valid dataset ({exc})") from None
    out = Path(args.out) if args.out else path.with_name(path.stem + "-analysis")
    for line in analyze_dataset(ds, out, args.seed or 0):
        print(line, file=sys.stderr if line.startswith("warning") else sys.stdout)
    print(f"wrote {out}")
    return 0


def cmd_experiment(args) -> int:
    if args.name not in ALL_EXPERIMENTS:
        raise UsageError(f"unknown experiment {args.name!r}; valid: {', '.join(ALL_EXPERIMENTS)}")
    cfg = _load(args, None)
    root = output_root(args, cfg)
    for line in run_experiment(args.name, cfg, root):
        print(line)
    print(f"wrote {root / args.name}")
    return 0


def cmd_report(args) -> int:
    cfg = _load(args, None)
    root = output_root(args, cfg)
    cache: dict = {}
    lines = [f"fingerprint={cfg.fingerprint} master_seed={cfg.master_seed} alpha={cfg.alpha} tau={cfg.tau}"]
    for name in ALL_EXPERIMENTS:
        if name != "proxy" and name not in cfg.experiments:
            continue
        lines.append(f"[{name}]")
        lines += run_experiment(name, cfg, root, cache)
    for suite, ds in sorted(cache.items()):
        lines.append(f"[run:{suite}]")
        lines += summary_lines(ds)
    text = "\n".join(lines) + "\n"
    (root / "summary.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wamlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_suite_flags=True):
        sp.add_argument("--config", help="config file (default: packaged default.cfg)")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--tau", type=float)
        sp.add_argument("--jobs", type=int, help="max concurrent episodes")
        sp.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or config output_dir)")
        if with_suite_flags:
            sp.add_argument("--seeds", type=int, help="episodes per cell")
            sp.add_argument("--strategy", choices=[s.value for s in Strategy])
            sp.add_argument("--candidates", type=int, help="N, branches per step")

    r = sub.add_parser("run", help="run one suite and write its JSONL dataset")
    common(r)
    r.add_argument("--suite", default="noisy")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="separability report for a dataset")
    a.add_argument("dataset")
    a.add_argument("--out")
    a.add_argument("--seed", type=int, help="seed for the cross-validation folds")
    a.set_defaults(func=cmd_analyze)

    e = sub.add_parser("experiment", help=f"run one experiment: {', '.join(ALL_EXPERIMENTS)}")
    e.add_argument("name")
    common(e, with_suite_flags=False)
    e.set_defaults(func=cmd_experiment)

    rp = sub.add_parser("report", help="run every experiment and write summary.txt")
    common(rp, with_suite_flags=False)
    rp.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"wamlab: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"wamlab: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

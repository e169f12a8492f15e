"""Command-line surface: stable subcommands over documented file formats.

Exit codes: 0 success, 1 validation error (bad input, leaky suite, malformed
tag), 2 runtime failure.  Every emitted file is deterministic given flags
and seeds; the one exception is `eval --timing`, which records wall-clock
inference times on request.
"""

from __future__ import annotations

import argparse
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import analysis
from . import study_harness
from .factor_space import (
    TagError,
    canonical_sort,
    enumerate_space,
    make_support,
    shell,
)
from .policies import ClipSpec, FrozenEncoder, init_policy, load_policy, save_policy
from .rollout_eval import ExpertDriver, evaluate
from .split_builder import build_suite, check_leakage, read_suite, write_suite
from .tables import fmt, read_episodes, read_eval_table, write_episodes, write_eval_table
from .trainer import (
    LossWeights,
    TrainConfig,
    Trace,
    DemoDataset,
    collect_demos,
    train,
    write_train_manifest,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class CliError(Exception):
    """Validation failure; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _support_arg(text: str):
    return make_support(tag.strip() for tag in text.split(",") if tag.strip())


def _ks_arg(text: str) -> set[int]:
    return {int(part) for part in text.split(",") if part.strip()}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="factorshift", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_space = sub.add_parser("space", help="environment configuration space")
    space_sub = p_space.add_subparsers(dest="space_command", required=True)
    space_sub.add_parser("enumerate", help="print all 96 tags in canonical order")

    p_shell = sub.add_parser("shell", help="print a k-factor OOD shell")
    p_shell.add_argument("--support", required=True, type=str,
                         help="comma-separated ID tags")
    p_shell.add_argument("--k", required=True, type=int)

    p_suite = sub.add_parser("suite", help="build or check a test suite")
    suite_sub = p_suite.add_subparsers(dest="suite_command", required=True)
    p_build = suite_sub.add_parser("build")
    p_build.add_argument("--support", required=True, type=str)
    p_build.add_argument("--ks", type=str, default="0,1")
    p_build.add_argument("--budget", type=int, default=100)
    p_build.add_argument("--seed-base", type=int, default=0)
    p_build.add_argument("--route-set", type=str, default="routes-v1")
    p_build.add_argument("--out", required=True, type=Path)
    p_check = suite_sub.add_parser("check")
    p_check.add_argument("--suite", required=True, type=Path)

    p_demos = sub.add_parser("demos", help="collect expert demonstrations")
    demos_sub = p_demos.add_subparsers(dest="demos_command", required=True)
    p_collect = demos_sub.add_parser("collect")
    p_collect.add_argument("--support", required=True, type=str)
    p_collect.add_argument("--traces", type=int, default=5)
    p_collect.add_argument("--clip-t", type=int, default=1)
    p_collect.add_argument("--clip-stride", type=int, default=1)
    p_collect.add_argument("--seed", type=int, default=0)
    p_collect.add_argument("--out", required=True, type=Path)

    p_train = sub.add_parser("train", help="fit a policy on collected demos")
    p_train.add_argument("--demos", required=True, type=Path)
    p_train.add_argument("--kind", required=True,
                         choices=("linear", "mlp", "frozen_encoder_head", "recurrent"))
    p_train.add_argument("--policy-id", type=str, default="")
    p_train.add_argument("--encoder-seed", type=int, default=None)
    p_train.add_argument("--lr", type=float, default=1e-3)
    p_train.add_argument("--epochs", type=int, default=200)
    p_train.add_argument("--patience", type=int, default=10)
    p_train.add_argument("--val-fraction", type=float, default=0.2)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--steer-weight", type=float, default=1.0)
    p_train.add_argument("--throttle-weight", type=float, default=1.0)
    p_train.add_argument("--out", required=True, type=Path)
    p_train.add_argument("--manifest", type=Path, default=None)

    p_eval = sub.add_parser("eval", help="closed-loop evaluation on a suite")
    p_eval.add_argument("--policy", required=True, type=str,
                        help="checkpoint path, or 'expert'")
    p_eval.add_argument("--suite", required=True, type=Path)
    p_eval.add_argument("--horizon", type=int, default=200)
    p_eval.add_argument("--out", required=True, type=Path)
    p_eval.add_argument("--episodes-out", type=Path, default=None)
    p_eval.add_argument("--logs", type=Path, default=None)
    p_eval.add_argument("--timing", action="store_true",
                        help="measure wall-clock predict time (non-deterministic)")
    p_eval.add_argument("--jobs", type=int, default=1)

    p_an = sub.add_parser("analyze", help="drops, themes, interactions, stats")
    an_sub = p_an.add_subparsers(dest="analyze_command", required=True)
    p_drops = an_sub.add_parser("drops")
    p_drops.add_argument("--table", required=True, type=Path)
    p_drops.add_argument("--baseline", required=True, type=str)
    p_drops.add_argument("--tol", type=float, default=1.0)
    p_drops.add_argument("--out-drops", required=True, type=Path)
    p_drops.add_argument("--out-perk", required=True, type=Path)
    p_drops.add_argument("--out-shifts", type=Path, default=None)
    p_drops.add_argument("--out-interactions", type=Path, default=None)
    p_themes = an_sub.add_parser("themes")
    p_themes.add_argument("--shifts", required=True, type=Path)
    p_themes.add_argument("--theme", required=True, type=str,
                          help="comma-separated axis names, e.g. scene,time")
    p_themes.add_argument("--out", type=Path, default=None)
    p_inter = an_sub.add_parser("interactions")
    p_inter.add_argument("--singles", required=True, type=str)
    p_inter.add_argument("--combo", required=True, type=float)
    p_inter.add_argument("--tol", type=float, default=1.0)
    p_stats = an_sub.add_parser("stats")
    p_stats.add_argument("--episodes-a", required=True, type=Path)
    p_stats.add_argument("--episodes-b", required=True, type=Path)
    p_stats.add_argument("--alpha", type=float, default=0.05)
    p_stats.add_argument("--resamples", type=int, default=10_000)
    p_stats.add_argument("--seed", type=int, default=20_240_501)
    p_stats.add_argument("--out", type=Path, default=None)

    p_study = sub.add_parser("study", help="run a study recipe")
    study_sub = p_study.add_subparsers(dest="study_command", required=True)
    p_run = study_sub.add_parser("run")
    p_run.add_argument("spec", type=Path)
    p_run.add_argument("--out", required=True, type=Path)
    p_run.add_argument("--jobs", type=int, default=1)

    p_report = sub.add_parser("report", help="consolidate study outputs")
    report_sub = p_report.add_subparsers(dest="report_command", required=True)
    p_emit = report_sub.add_parser("emit")
    p_emit.add_argument("--study", required=True, type=Path)
    p_emit.add_argument("--out", required=True, type=Path)
    p_emit.add_argument("--figures", action="store_true",
                        help="render figures via the plotviz package")
    return parser


def _cmd_space(args) -> int:
    for config in enumerate_space():
        print(config.tag)
    return EXIT_OK


def _cmd_shell(args) -> int:
    support = _support_arg(args.support)
    for config in canonical_sort(shell(support, args.k)):
        print(config.tag)
    return EXIT_OK


def _cmd_suite_build(args) -> int:
    suite = build_suite(
        _support_arg(args.support), _ks_arg(args.ks), args.budget,
        args.seed_base, args.route_set,
    )
    write_suite(args.out, suite)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_suite_check(args) -> int:
    suite = read_suite(args.suite)
    violations = check_leakage(suite)
    if violations:
        for v in violations:
            print(v, file=sys.stderr)
        return EXIT_USAGE
    print("OK")
    return EXIT_OK


def _cmd_demos_collect(args) -> int:
    clip = ClipSpec(args.clip_t, args.clip_stride)
    data = collect_demos(_support_arg(args.support), args.traces, clip, args.seed)
    np.savez_compressed(
        args.out,
        windows=np.stack([t.windows for t in data.traces]),
        targets=np.stack([t.targets for t in data.traces]),
        tags=np.array([t.tag for t in data.traces]),
        trace_ids=np.array([t.trace_id for t in data.traces]),
        clip=np.array([clip.t, clip.stride]),
    )
    print(f"wrote {args.out} ({data.trace_count} traces, {data.sample_count} samples)")
    return EXIT_OK


def _load_demos(path: Path) -> DemoDataset:
    raw = np.load(path, allow_pickle=False)
    clip = ClipSpec(int(raw["clip"][0]), int(raw["clip"][1]))
    traces = [
        Trace(str(tag), str(trace_id), windows, targets)
        for tag, trace_id, windows, targets in zip(
            raw["tags"], raw["trace_ids"], raw["windows"], raw["targets"]
        )
    ]
    return DemoDataset(traces=traces, clip=clip)


def _cmd_train(args) -> int:
    data = _load_demos(args.demos)
    encoder = FrozenEncoder(seed=args.encoder_seed) if args.encoder_seed is not None else None
    policy0 = init_policy(
        args.kind, data.clip, seed=args.seed, encoder=encoder,
        policy_id=args.policy_id or args.kind,
    )
    cfg = TrainConfig(
        learning_rate=args.lr, max_epochs=args.epochs,
        early_stop_patience=args.patience, validation_fraction=args.val_fraction,
        seed=args.seed,
    )
    weights = LossWeights(args.steer_weight, args.throttle_weight)
    policy, report = train(policy0, data, cfg, weights)
    save_policy(args.out, policy)
    if args.manifest:
        write_train_manifest(args.manifest, report, policy, cfg)
    best = report.checks[report.best_check][2] if report.checks else float("nan")
    print(f"wrote {args.out} (best val loss {best:.6g})")
    return EXIT_OK


def _cmd_eval(args) -> int:
    policy = ExpertDriver() if args.policy == "expert" else load_policy(Path(args.policy))
    suite = read_suite(args.suite)
    table, outcomes = evaluate(
        policy, suite, horizon=args.horizon, measure_time=args.timing,
        log_dir=args.logs, jobs=args.jobs,
    )
    write_eval_table(args.out, table)
    if args.episodes_out:
        write_episodes(args.episodes_out, policy.policy_id, outcomes)
    print(f"wrote {args.out} ({len(table.rows)} rows)")
    return EXIT_OK


def _cmd_analyze_drops(args) -> int:
    table = read_eval_table(args.table)
    report = analysis.drops(table, args.baseline, tol=args.tol)
    analysis.write_drop_report(
        report, args.out_drops, args.out_perk,
        interactions_path=args.out_interactions, shifts_path=args.out_shifts,
    )
    print(f"wrote {args.out_drops}")
    return EXIT_OK


def _cmd_analyze_themes(args) -> int:
    shifts = analysis.read_shifts(args.shifts)
    theme = analysis.parse_axes_key(
        "+".join(part.strip() for part in args.theme.split(","))
    )
    agg = analysis.theme_aggregate(shifts, theme)
    if agg.mean_drop is None:
        print("no member shifts match the theme")
    else:
        print(f"members = {len(agg.members)}")
        print(f"mean_drop = {fmt(agg.mean_drop)}")
    if args.out is not None:
        if not agg.members:
            raise CliError("refusing to write an empty theme table")
        analysis.write_shifts(args.out, agg.members)
    return EXIT_OK


def _cmd_analyze_interactions(args) -> int:
    singles = [float(part) for part in args.singles.split(",") if part.strip()]
    print(analysis.classify_interaction(singles, args.combo, tol=args.tol))
    return EXIT_OK


def _cmd_analyze_stats(args) -> int:
    eps_a = read_episodes(args.episodes_a)
    eps_b = read_episodes(args.episodes_b)
    by_tag_a: dict[str, dict[int, float]] = {}
    by_tag_b: dict[str, dict[int, float]] = {}
    for rows, acc in ((eps_a, by_tag_a), (eps_b, by_tag_b)):
        for r in rows:
            acc.setdefault(r["tag"], {})[r["episode"]] = r["completion"]
    tags = sorted(set(by_tag_a) & set(by_tag_b))
    if not tags:
        raise CliError("no shared configurations between the two episode files")
    results = []
    for tag in tags:
        episodes = sorted(set(by_tag_a[tag]) & set(by_tag_b[tag]))
        if not episodes:
            raise CliError(f"no matched episodes for {tag}")
        a = [by_tag_a[tag][e] for e in episodes]
        b = [by_tag_b[tag][e] for e in episodes]
        p = analysis.paired_test(a, b, resamples=args.resamples, seed=args.seed)
        results.append((tag, len(episodes), p))
    rejects = analysis.holm([p for _, _, p in results], alpha=args.alpha)
    for (tag, n, p), rej in zip(results, rejects):
        print(f"{tag}\tn={n}\tp={fmt(p)}\treject={'yes' if rej else 'no'}")
    if args.out is not None:
        analysis.write_stats(
            args.out, [(t, n, p, r) for (t, n, p), r in zip(results, rejects)]
        )
    return EXIT_OK


def _cmd_study_run(args) -> int:
    spec = study_harness.load_study_spec(args.spec)
    statuses = study_harness.run_study(spec, args.out, jobs=args.jobs)
    failed = {k: v for k, v in statuses.items() if v != "ok"}
    for label, status in sorted(statuses.items()):
        print(f"{label}: {status}")
    return EXIT_RUNTIME if failed else EXIT_OK


def _cmd_report_emit(args) -> int:
    study_dir = Path(args.study)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    points = sorted(
        p for p in study_dir.iterdir() if p.is_dir() and (p / "eval_table.csv").exists()
    )
    if not points:
        raise CliError(f"no grid-point outputs under {study_dir}")

    summary_rows = []
    for point in points:
        table = read_eval_table(point / "eval_table.csv")
        shutil.copy(point / "eval_table.csv", out / f"{point.name}__eval_table.csv")
        perk_path = point / "perk.csv"
        if perk_path.exists():
            shutil.copy(perk_path, out / f"{point.name}__perk.csv")
            for rec in analysis.read_perk(perk_path):
                summary_rows.append(
                    (point.name, rec["policy"], rec["k"],
                     fmt(rec["mean_success_pct"]), fmt(rec["mean_drop_pct"]))
                )
    from .tables import write_rows

    write_rows(out / "summary.csv",
               ("point", "policy", "k", "mean_success_pct", "mean_drop_pct"),
               summary_rows)
    print(f"wrote {out / 'summary.csv'} ({len(summary_rows)} rows)")

    if args.figures:
        renderer = shutil.which("plotviz")
        if renderer is None:
            print("plotviz is not installed; cannot render figures", file=sys.stderr)
            return EXIT_RUNTIME
        rendered = 0
        for point in points:
            perk_path = out / f"{point.name}__perk.csv"
            if perk_path.exists():
                _render(renderer, perk_path, "perk", out / f"{point.name}__perk.svg")
                rendered += 1
            shifts_path = point / "shifts.csv"
            if shifts_path.exists():
                shifts = analysis.read_shifts(shifts_path)
                for axes in sorted({s.axes for s in shifts},
                                   key=lambda a: analysis._axes_key(a)):
                    agg = analysis.theme_aggregate(shifts, axes)
                    key = analysis._axes_key(axes).replace("+", "_")
                    theme_csv = out / f"{point.name}__theme_{key}.csv"
                    analysis.write_shifts(theme_csv, agg.members)
                    _render(renderer, theme_csv, "stars",
                            out / f"{point.name}__theme_{key}.svg")
                    rendered += 1
            eval_path = out / f"{point.name}__eval_table.csv"
            _render(renderer, eval_path, "runtime", out / f"{point.name}__runtime.svg")
            rendered += 1
        _render(renderer, out / "summary.csv", "bars", out / "summary_bars.svg")
        print(f"rendered {rendered + 1} figures")
    return EXIT_OK


def _render(renderer: str, table: Path, kind: str, out: Path) -> None:
    proc = subprocess.run(
        [renderer, "render", "--table", str(table), "--kind", kind, "--out", str(out)],
        capture_output=True, text=True,
    )
    if proc.returncode != 0:
        raise RuntimeError(f"plotviz failed on {table}: {proc.stderr.strip()}")


_HANDLERS = {
    ("space", "enumerate"): _cmd_space,
    ("shell", None): _cmd_shell,
    ("suite", "build"): _cmd_suite_build,
    ("suite", "check"): _cmd_suite_check,
    ("demos", "collect"): _cmd_demos_collect,
    ("train", None): _cmd_train,
    ("eval", None): _cmd_eval,
    ("analyze", "drops"): _cmd_analyze_drops,
    ("analyze", "themes"): _cmd_analyze_themes,
    ("analyze", "interactions"): _cmd_analyze_interactions,
    ("analyze", "stats"): _cmd_analyze_stats,
    ("study", "run"): _cmd_study_run,
    ("report", "emit"): _cmd_report_emit,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    subcommand = getattr(
        args,
        f"{args.command}_command",
        None,
    )
    handler = _HANDLERS[(args.command, subcommand)]
    try:
        return handler(args)
    except (CliError, TagError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

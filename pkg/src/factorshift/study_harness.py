"""Declarative experiment recipes: policy/support/budget grids over one suite.

A study is data, not code: a JSON recipe names the policy variants, ID
supports, trace budgets, and suite shape.  Every grid point of a study
shares the same per-support suite, so all compared models consume identical
routes and seeds; episode seeds depend only on (seed_base, tag, episode),
never on the grid point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import analysis
from .factor_space import EnvConfig, canonical_sort, make_support
from .policies import ClipSpec, FrozenEncoder, init_policy, save_policy
from .rollout_eval import evaluate
from .split_builder import TestSuite, build_suite, write_suite
from .tables import write_episodes, write_eval_table
from .trainer import (
    LossWeights,
    TrainConfig,
    collect_demos,
    train,
    write_train_manifest,
)

STUDY_IDS = ("S1", "S2", "S3", "S4", "S5")


@dataclass(frozen=True)
class PolicyVariant:
    name: str
    kind: str
    clip: ClipSpec = ClipSpec()
    encoder_seed: int | None = None


@dataclass
class StudySpec:
    study_id: str
    seed_base: int
    episodes_per_config: int
    ks: set[int]
    supports: list[frozenset[EnvConfig]]
    trace_budgets: list[int]
    policies: list[PolicyVariant]
    route_set_id: str = "routes-v1"
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.study_id not in STUDY_IDS:
            raise ValueError(f"study id must be one of {STUDY_IDS}")
        if not self.supports or not self.policies or not self.trace_budgets:
            raise ValueError("policy, support, and trace-budget grids must be non-empty")


def load_study_spec(path: str | Path) -> StudySpec:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    default_clip = ClipSpec(**raw.get("clip", {"t": 1, "stride": 1}))
    policies = [
        PolicyVariant(
            name=p["name"],
            kind=p["kind"],
            clip=ClipSpec(**p["clip"]) if "clip" in p else default_clip,
            encoder_seed=p.get("encoder_seed"),
        )
        for p in raw["policies"]
    ]
    train_raw = raw.get("train", {})
    weights_raw = raw.get("loss_weights", {})
    return StudySpec(
        study_id=raw["study"],
        seed_base=int(raw["seed_base"]),
        episodes_per_config=int(raw["episodes_per_config"]),
        ks=set(raw["ks"]),
        supports=[make_support(tags) for tags in raw["supports"]],
        trace_budgets=[int(b) for b in raw["trace_budgets"]],
        policies=policies,
        route_set_id=raw.get("route_set_id", "routes-v1"),
        train_cfg=TrainConfig(
            learning_rate=float(train_raw.get("learning_rate", 1e-3)),
            max_epochs=int(train_raw.get("max_epochs", 200)),
            early_stop_patience=int(train_raw.get("patience", 10)),
            validation_fraction=float(train_raw.get("validation_fraction", 0.2)),
            seed=int(train_raw.get("seed", 0)),
        ),
        loss_weights=LossWeights(
            steer=float(weights_raw.get("steer", 1.0)),
            throttle=float(weights_raw.get("throttle", 1.0)),
        ),
    )


def support_label(support: frozenset[EnvConfig]) -> str:
    return f"id{len(support)}-" + "+".join(c.tag for c in canonical_sort(support))


def grid_points(spec: StudySpec):
    for variant in spec.policies:
        for support in spec.supports:
            for budget in spec.trace_budgets:
                yield variant, support, budget


def run_study(spec: StudySpec, out_dir: str | Path, jobs: int = 1) -> dict:
    """Execute every grid point; failures are recorded and do not stop the grid.

    Study outputs never include wall-clock measurements, so re-running with
    the same recipe reproduces every table byte for byte.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    suites: dict[frozenset[EnvConfig], TestSuite] = {}
    for support in spec.supports:
        # The ID rows (k=0) are always evaluated: they are the drop baselines.
        suite = build_suite(
            support, set(spec.ks) | {0}, spec.episodes_per_config, spec.seed_base,
            spec.route_set_id,
        )
        suites[support] = suite
        write_suite(out / f"suite__{support_label(support)}.txt", suite)

    manifest: list[str] = [
        f"study = {spec.study_id}",
        f"seed_base = {spec.seed_base}",
        f"route_set_id = {spec.route_set_id}",
        f"episodes_per_config = {spec.episodes_per_config}",
        f"ks = {sorted(spec.ks)}",
        f"train_seed = {spec.train_cfg.seed}",
        f"learning_rate = {spec.train_cfg.learning_rate}",
    ]
    statuses: dict[str, str] = {}

    for variant, support, budget in grid_points(spec):
        label = f"{variant.name}__{support_label(support)}__tr{budget}"
        point_dir = out / label
        point_dir.mkdir(exist_ok=True)
        try:
            _run_grid_point(spec, variant, support, budget, suites[support],
                            point_dir, jobs)
            statuses[label] = "ok"
        except Exception as exc:  # grid point failures must not kill the study
            statuses[label] = f"failed: {exc}"
            (point_dir / "FAILED.txt").write_text(str(exc) + "\n", encoding="utf-8")

    for label in sorted(statuses):
        manifest.append(f"point {label} = {statuses[label]}")
    (out / "manifest.txt").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    return statuses


def _run_grid_point(
    spec: StudySpec,
    variant: PolicyVariant,
    support: frozenset[EnvConfig],
    budget: int,
    suite: TestSuite,
    point_dir: Path,
    jobs: int,
) -> None:
    demos = collect_demos(
        support, budget, variant.clip, seed=spec.seed_base,
    )
    encoder = (
        FrozenEncoder(seed=variant.encoder_seed)
        if variant.encoder_seed is not None
        else None
    )
    policy0 = init_policy(
        variant.kind, variant.clip, seed=spec.train_cfg.seed, encoder=encoder,
        policy_id=variant.name,
    )
    policy, report = train(policy0, demos, spec.train_cfg, spec.loss_weights)
    save_policy(point_dir / "checkpoint.json", policy)
    write_train_manifest(point_dir / "train_manifest.txt", report, policy, spec.train_cfg)

    table, outcomes = evaluate(policy, suite, jobs=jobs)
    write_eval_table(point_dir / "eval_table.csv", table)
    write_episodes(point_dir / "episodes.csv", policy.policy_id, outcomes)

    baseline = canonical_sort(support)[0].tag
    report_d = analysis.drops(table, baseline)
    analysis.write_drop_report(
        report_d,
        point_dir / "drops.csv",
        point_dir / "perk.csv",
        interactions_path=point_dir / "interactions.csv",
        shifts_path=point_dir / "shifts.csv",
    )

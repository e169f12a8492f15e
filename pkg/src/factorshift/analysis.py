"""Baseline-relative drops, themed aggregation, interaction classes, and stats.

Drops are expressed in percentage points (ID baseline minus value); per-k
summaries are unweighted means over the shell rows at each change count.
Published result tables can be loaded as fixture inputs to every operation
here; nothing in this module depends on the simulator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .factor_space import Axis, AXES, changed_axes, parse_tag
from .rollout_eval import EvalTable
from .tables import (
    DROP_COLUMNS,
    INTERACTION_COLUMNS,
    PERK_COLUMNS,
    SHIFT_COLUMNS,
    STATS_COLUMNS,
    fmt,
    read_rows,
    write_rows,
)

SUB_ADDITIVE = "sub_additive"
ADDITIVE = "additive"
SUPER_ADDITIVE = "super_additive"


@dataclass(frozen=True)
class DropRow:
    policy_id: str
    config_tag: str
    k: int
    value_pct: float  # closed-loop success in percent
    drop_pct: float  # baseline minus value; positive = degradation


@dataclass(frozen=True)
class ShiftRecord:
    """One OOD row described as a factor shift away from the baseline."""

    policy_id: str
    axes: frozenset[Axis]
    from_levels: tuple[str, ...]  # baseline levels on the changed axes
    to_levels: tuple[str, ...]
    drop_pct: float


@dataclass(frozen=True)
class InteractionRecord:
    policy_id: str
    axes: frozenset[Axis]
    from_levels: tuple[str, ...]
    to_levels: tuple[str, ...]
    combo_drop: float
    single_drops: tuple[float, ...]
    classification: str


@dataclass
class DropReport:
    baseline_tag: str
    rows: list[DropRow]
    per_k_value: dict[tuple[str, int], float]  # (policy, k) -> mean success pct
    per_k_drop: dict[tuple[str, int], float]
    shifts: list[ShiftRecord] = field(default_factory=list)
    interactions: list[InteractionRecord] = field(default_factory=list)


@dataclass
class ThemeAggregate:
    theme: frozenset[Axis]
    members: list[ShiftRecord]
    mean_drop: float | None  # None when no member matches the theme


def classify_interaction(
    singles: Sequence[float], combo: float, tol: float = 1.0
) -> str:
    """Compare a multi-factor drop against the sum of its single-factor drops."""
    if len(singles) == 0:
        raise ValueError("singles must be non-empty")
    total = sum(singles)
    if combo < total - tol:
        return SUB_ADDITIVE
    if combo > total + tol:
        return SUPER_ADDITIVE
    return ADDITIVE


def _ordered_axes(axes: frozenset[Axis]) -> list[Axis]:
    return [axis for axis in AXES if axis in axes]


def drops(table: EvalTable, baseline_tag: str, tol: float = 1.0) -> DropReport:
    """Per-row drops relative to each policy's baseline row, plus per-k means.

    Shift and interaction records describe each OOD row as the set of axes
    changed away from the baseline configuration; an interaction is
    classified only when every component single-factor row is present.
    """
    baseline_config = parse_tag(baseline_tag)
    policies = sorted({r.policy_id for r in table.rows})
    report = DropReport(baseline_tag=baseline_tag, rows=[], per_k_value={}, per_k_drop={})
    for policy in policies:
        rows = [r for r in table.rows if r.policy_id == policy]
        baseline = next((r for r in rows if r.config_tag == baseline_tag), None)
        if baseline is None:
            raise ValueError(f"baseline row {baseline_tag} missing for policy {policy}")
        base_pct = baseline.success_rate * 100.0

        single_drop: dict[tuple[Axis, str], float] = {}
        drop_rows: list[DropRow] = []
        for r in rows:
            value = r.success_rate * 100.0
            drop = base_pct - value
            drop_rows.append(DropRow(policy, r.config_tag, r.k, value, drop))
            config = parse_tag(r.config_tag)
            axes = changed_axes(baseline_config, config)
            if len(axes) == 1:
                (axis,) = axes
                single_drop[(axis, config.level(axis))] = drop
        report.rows.extend(drop_rows)

        ks = sorted({r.k for r in rows})
        for k in ks:
            vals = [d.value_pct for d in drop_rows if d.k == k]
            ds = [d.drop_pct for d in drop_rows if d.k == k]
            report.per_k_value[(policy, k)] = sum(vals) / len(vals)
            report.per_k_drop[(policy, k)] = sum(ds) / len(ds)

        for d in drop_rows:
            config = parse_tag(d.config_tag)
            axes = changed_axes(baseline_config, config)
            if not axes:
                continue
            ordered = _ordered_axes(axes)
            from_levels = tuple(baseline_config.level(a) for a in ordered)
            to_levels = tuple(config.level(a) for a in ordered)
            report.shifts.append(
                ShiftRecord(policy, frozenset(axes), from_levels, to_levels, d.drop_pct)
            )
            if len(axes) >= 2:
                singles = [
                    single_drop.get((a, config.level(a))) for a in ordered
                ]
                if any(s is None for s in singles):
                    continue
                report.interactions.append(
                    InteractionRecord(
                        policy, frozenset(axes), from_levels, to_levels,
                        d.drop_pct, tuple(singles),
                        classify_interaction(singles, d.drop_pct, tol),
                    )
                )
    return report


def theme_aggregate(
    shifts: Sequence[ShiftRecord], theme: frozenset[Axis]
) -> ThemeAggregate:
    """All shift records whose changed-axes set equals the theme, plus mean."""
    members = [s for s in shifts if s.axes == frozenset(theme)]
    mean = sum(m.drop_pct for m in members) / len(members) if members else None
    return ThemeAggregate(theme=frozenset(theme), members=members, mean_drop=mean)


def paired_test(
    a: Sequence[float],
    b: Sequence[float],
    resamples: int = 10_000,
    seed: int = 20_240_501,
) -> float:
    """Two-sided paired sign-flip permutation test on matched outcomes.

    Index i of both sequences must share the same (route, seed); the
    statistic is the mean difference, and the resampling seed is fixed so
    the p-value is deterministic.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired_test requires two equal-length 1-d sequences")
    diffs = a - b
    observed = abs(float(diffs.mean()))
    rng = np.random.default_rng(seed)
    signs = rng.integers(0, 2, size=(resamples, diffs.size)) * 2 - 1
    stats = np.abs(signs @ diffs) / diffs.size
    hits = int(np.sum(stats >= observed - 1e-12))
    return (1 + hits) / (1 + resamples)


def holm(p_values: Sequence[float], alpha: float = 0.05) -> list[bool]:
    """Step-down familywise correction; flags returned in input order.

    Ascending p-values are rejected while p_(i) <= alpha / (m - i + 1)
    (1-indexed), stopping at the first failure.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    for p in p_values:
        if not 0.0 < p <= 1.0:
            raise ValueError(f"p-values must be in (0, 1], got {p}")
    m = len(p_values)
    reject = [False] * m
    order = sorted(range(m), key=lambda i: p_values[i])
    for rank, idx in enumerate(order):
        if p_values[idx] <= alpha / (m - rank):
            reject[idx] = True
        else:
            break
    return reject


# --- serialization -----------------------------------------------------------

def _axes_key(axes: frozenset[Axis]) -> str:
    return "+".join(a.value for a in _ordered_axes(axes))


def parse_axes_key(key: str) -> frozenset[Axis]:
    return frozenset(Axis(part) for part in key.split("+"))


def write_drop_report(report: DropReport, drops_path, perk_path, interactions_path=None,
                      shifts_path=None) -> None:
    write_rows(
        drops_path,
        DROP_COLUMNS,
        [(r.policy_id, r.config_tag, r.k, fmt(r.value_pct), fmt(r.drop_pct))
         for r in report.rows],
    )
    write_rows(
        perk_path,
        PERK_COLUMNS,
        [(policy, k, fmt(report.per_k_value[(policy, k)]), fmt(report.per_k_drop[(policy, k)]))
         for (policy, k) in sorted(report.per_k_value)],
    )
    if shifts_path is not None:
        write_shifts(shifts_path, report.shifts)
    if interactions_path is not None:
        write_rows(
            interactions_path,
            INTERACTION_COLUMNS,
            [
                (
                    r.policy_id, _axes_key(r.axes),
                    "+".join(r.from_levels), "+".join(r.to_levels),
                    fmt(r.combo_drop), ";".join(fmt(s) for s in r.single_drops),
                    r.classification,
                )
                for r in report.interactions
            ],
        )


def write_shifts(path, shifts: Sequence[ShiftRecord]) -> None:
    write_rows(
        path,
        SHIFT_COLUMNS,
        [
            (s.policy_id, _axes_key(s.axes), "+".join(s.from_levels),
             "+".join(s.to_levels), fmt(s.drop_pct))
            for s in shifts
        ],
    )


def read_shifts(path) -> list[ShiftRecord]:
    out = []
    for rec in read_rows(path, SHIFT_COLUMNS):
        out.append(
            ShiftRecord(
                policy_id=rec["policy"],
                axes=parse_axes_key(rec["axes"]),
                from_levels=tuple(rec["from_levels"].split("+")),
                to_levels=tuple(rec["to_levels"].split("+")),
                drop_pct=float(rec["drop_pct"]),
            )
        )
    return out


def write_stats(path, rows: Sequence[tuple[str, int, float, bool]]) -> None:
    write_rows(
        path,
        STATS_COLUMNS,
        [(tag, n, fmt(p), int(rej)) for tag, n, p, rej in rows],
    )


def read_perk(path) -> list[dict]:
    return [
        {
            "policy": rec["policy"],
            "k": int(rec["k"]),
            "mean_success_pct": float(rec["mean_success_pct"]),
            "mean_drop_pct": float(rec["mean_drop_pct"]),
        }
        for rec in read_rows(path, PERK_COLUMNS)
    ]

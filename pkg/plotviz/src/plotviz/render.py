"""Render factorshift result tables to deterministic SVG figures.

This package reads only the delimited files the factorshift CLI documents;
it never imports the simulator side, so either side can evolve
independently.  Rendering is deterministic: fixed layout, pinned SVG hash
salt, no embedded timestamps, so re-rendering the same table reproduces the
same bytes.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "plotviz"

import matplotlib.pyplot as plt
import numpy as np

# Figure key for factor abbreviations used in labels and captions.
FACTOR_KEY = (
    "Sc, scene (R, rural; U, urban); "
    "Se, season (Wi, winter; Sp, spring; Su, summer; Fa, fall); "
    "We, weather (Dr, dry; Ra, rain; Sn, snow); "
    "Ti, time (D, day; N, night); "
    "Ag, agents (C, car; An, animal)"
)

_AXIS_ABBREV = {"scene": "Sc", "season": "Se", "weather": "We", "time": "Ti", "agent": "Ag"}
_LEVEL_ABBREV = {
    "rural": "R", "urban": "U",
    "winter": "Wi", "spring": "Sp", "summer": "Su", "fall": "Fa",
    "dry": "Dr", "rain": "Ra", "snow": "Sn",
    "day": "D", "night": "N",
    "car": "C", "animal": "An",
}

PERK_COLUMNS = ("policy", "k", "mean_success_pct", "mean_drop_pct")
SHIFT_COLUMNS = ("policy", "axes", "from_levels", "to_levels", "drop_pct")
EVAL_COLUMNS = (
    "policy", "tag", "k", "n", "success", "completion_mean", "completion_std",
    "collisions", "out_of_lane", "off_road", "stability", "mean_predict_ms",
)
SUMMARY_COLUMNS = ("point", "policy", "k", "mean_success_pct", "mean_drop_pct")

FIGURE_KINDS = ("perk", "stars", "runtime", "bars")


class SchemaError(ValueError):
    """Input table does not match the documented schema for the figure kind."""


def _read_table(path: str | Path, expected: tuple[str, ...]) -> list[dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file, expected columns {list(expected)}")
        missing = [c for c in expected if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column {missing[0]!r}")
        extra = [c for c in header if c not in expected]
        if extra:
            raise SchemaError(f"{path}: unexpected column {extra[0]!r}")
        rows = [dict(zip(header, row)) for row in reader]
    if not rows:
        raise SchemaError(f"{path}: table has no data rows")
    return rows


def _new_figure(width=6.0, height=4.2, polar=False):
    fig = plt.figure(figsize=(width, height))
    ax = fig.add_subplot(111, polar=polar)
    return fig, ax


def build_perk_figure(path: str | Path):
    """Success as a function of the number of changed factors, per policy."""
    rows = _read_table(path, PERK_COLUMNS)
    fig, ax = _new_figure()
    policies = sorted({r["policy"] for r in rows})
    ks = sorted({int(r["k"]) for r in rows})
    for policy in policies:
        points = sorted(
            ((int(r["k"]), float(r["mean_success_pct"])) for r in rows
             if r["policy"] == policy)
        )
        ax.plot([p[0] for p in points], [p[1] for p in points], marker="o", label=policy)
    ax.set_xticks(ks)
    ax.set_xlabel("changed factors (k)")
    ax.set_ylabel("mean closed-loop success (%)")
    ax.set_ylim(-2, 102)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return fig


def _shift_label(axes_key: str, from_levels: str, to_levels: str) -> str:
    parts = []
    for axis, src, dst in zip(axes_key.split("+"), from_levels.split("+"),
                              to_levels.split("+")):
        parts.append(
            f"{_AXIS_ABBREV.get(axis, axis)}:{_LEVEL_ABBREV.get(src, src)}"
            f"→{_LEVEL_ABBREV.get(dst, dst)}"
        )
    return "\n".join(parts)


def build_stars_figure(path: str | Path):
    """Themed star plot: one spoke per member shift, radius = drop."""
    rows = _read_table(path, SHIFT_COLUMNS)
    fig, ax = _new_figure(width=6.0, height=5.4, polar=True)
    n = len(rows)
    angles = [2.0 * math.pi * i / n for i in range(n)]
    drops = [float(r["drop_pct"]) for r in rows]
    labels = [_shift_label(r["axes"], r["from_levels"], r["to_levels"]) for r in rows]
    closed_angles = angles + angles[:1]
    closed_drops = drops + drops[:1]
    ax.plot(closed_angles, closed_drops, marker="o")
    ax.fill(closed_angles, closed_drops, alpha=0.25)
    ax.set_xticks(angles)
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_title("drop vs baseline (percentage points)", fontsize=9)
    fig.text(0.5, 0.01, f"Key: {FACTOR_KEY}", fontsize=5.5, ha="center", wrap=True)
    fig.tight_layout(rect=(0, 0.05, 1, 1))
    return fig


def build_runtime_figure(path: str | Path):
    """Mean inference time vs mean success, one point per policy."""
    rows = _read_table(path, EVAL_COLUMNS)
    fig, ax = _new_figure()
    policies = sorted({r["policy"] for r in rows})
    for policy in policies:
        mine = [r for r in rows if r["policy"] == policy]
        ms = float(np.mean([float(r["mean_predict_ms"]) for r in mine]))
        success = 100.0 * float(np.mean([float(r["success"]) for r in mine]))
        ax.scatter([ms], [success], s=40)
        ax.annotate(policy, (ms, success), textcoords="offset points",
                    xytext=(4, 4), fontsize=8)
    ax.set_xlabel("mean inference time per step (ms)")
    ax.set_ylabel("mean closed-loop success (%)")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return fig


def build_bars_figure(path: str | Path):
    """Mean OOD success per study grid point (training-choice comparison)."""
    rows = _read_table(path, SUMMARY_COLUMNS)
    by_point: dict[str, list[float]] = {}
    for r in rows:
        if int(r["k"]) >= 1:
            by_point.setdefault(r["point"], []).append(float(r["mean_success_pct"]))
    if not by_point:  # only ID rows present
        for r in rows:
            by_point.setdefault(r["point"], []).append(float(r["mean_success_pct"]))
    points = sorted(by_point)
    values = [float(np.mean(by_point[p])) for p in points]
    fig, ax = _new_figure(width=max(6.0, 1.2 * len(points)), height=4.2)
    ax.bar(range(len(points)), values)
    ax.set_xticks(range(len(points)))
    ax.set_xticklabels(points, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("mean OOD success (%)")
    ax.set_ylim(0, 102)
    fig.tight_layout()
    return fig


_BUILDERS = {
    "perk": build_perk_figure,
    "stars": build_stars_figure,
    "runtime": build_runtime_figure,
    "bars": build_bars_figure,
}


def render(table: str | Path, kind: str, out: str | Path) -> Path:
    """Render one table to an image file; never mutates the input table.

    The output format follows the file extension (SVG by default); SVG
    output carries no timestamps, so re-rendering is byte-idempotent.
    """
    if kind not in _BUILDERS:
        raise ValueError(f"unknown figure kind {kind!r}, expected one of {FIGURE_KINDS}")
    out = Path(out)
    fig = _BUILDERS[kind](table)
    try:
        fig.savefig(out, metadata={"Date": None} if out.suffix == ".svg" else None)
    finally:
        plt.close(fig)
    return out

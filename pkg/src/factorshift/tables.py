"""Documented delimited file formats shared by the CLI, studies, and plots.

All tables are comma-separated with a header row, stable column order, and
floats pinned to 4 decimal places so that golden-file comparisons are
byte-stable.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

from .rollout_eval import EpisodeOutcome, EvalRow, EvalTable

EVAL_COLUMNS = (
    "policy", "tag", "k", "n", "success", "completion_mean", "completion_std",
    "collisions", "out_of_lane", "off_road", "stability", "mean_predict_ms",
)
EPISODE_COLUMNS = (
    "policy", "tag", "k", "episode", "seed", "steps", "completion", "success",
    "termination",
)
DROP_COLUMNS = ("policy", "tag", "k", "success_pct", "drop_pct")
PERK_COLUMNS = ("policy", "k", "mean_success_pct", "mean_drop_pct")
SHIFT_COLUMNS = ("policy", "axes", "from_levels", "to_levels", "drop_pct")
INTERACTION_COLUMNS = (
    "policy", "axes", "from_levels", "to_levels", "combo_drop_pct",
    "single_drops_pct", "classification",
)
STATS_COLUMNS = ("tag", "n", "p_value", "reject")


def fmt(x: float) -> str:
    return f"{x:.4f}"


def write_rows(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def read_rows(path: str | Path, expected_header: Sequence[str]) -> list[dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        if tuple(header) != tuple(expected_header):
            raise ValueError(
                f"{path}: unexpected header {header}, expected {list(expected_header)}"
            )
        return [dict(zip(header, row)) for row in reader]


def write_eval_table(path: str | Path, table: EvalTable) -> None:
    rows = [
        (
            r.policy_id, r.config_tag, r.k, r.n,
            fmt(r.success_rate), fmt(r.completion_mean), fmt(r.completion_std),
            r.collisions, r.out_of_lane, r.off_road, r.stability,
            fmt(r.mean_predict_ms),
        )
        for r in table.rows
    ]
    write_rows(path, EVAL_COLUMNS, rows)


def read_eval_table(path: str | Path) -> EvalTable:
    rows = []
    for rec in read_rows(path, EVAL_COLUMNS):
        rows.append(
            EvalRow(
                policy_id=rec["policy"],
                config_tag=rec["tag"],
                k=int(rec["k"]),
                n=int(rec["n"]),
                success_rate=float(rec["success"]),
                completion_mean=float(rec["completion_mean"]),
                completion_std=float(rec["completion_std"]),
                collisions=int(rec["collisions"]),
                out_of_lane=int(rec["out_of_lane"]),
                off_road=int(rec["off_road"]),
                stability=int(rec["stability"]),
                mean_predict_ms=float(rec["mean_predict_ms"]),
            )
        )
    return EvalTable(rows)


def write_episodes(path: str | Path, policy_id: str, outcomes: Iterable[EpisodeOutcome]) -> None:
    rows = [
        (
            policy_id, o.config_tag, o.k, o.episode, o.seed, o.steps_traveled,
            fmt(o.completion), int(o.success), o.termination_event or "",
        )
        for o in outcomes
    ]
    write_rows(path, EPISODE_COLUMNS, rows)


def read_episodes(path: str | Path) -> list[dict]:
    out = []
    for rec in read_rows(path, EPISODE_COLUMNS):
        out.append(
            {
                "policy": rec["policy"],
                "tag": rec["tag"],
                "k": int(rec["k"]),
                "episode": int(rec["episode"]),
                "seed": int(rec["seed"]),
                "steps": int(rec["steps"]),
                "completion": float(rec["completion"]),
                "success": bool(int(rec["success"])),
                "termination": rec["termination"] or None,
            }
        )
    return out

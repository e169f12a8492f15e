"""Closed-loop evaluation protocol: seeded episodes, completion, infractions.

Every episode's (route, seed) pair is a pure function of the test suite, so
compared policies consume identical randomness.  Success means completing
the full horizon without an early termination event; route completion is
steps_traveled / horizon for early terminations and 1.0 otherwise.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from . import driving_sim as sim
from .driving_sim import EVENT_KINDS, Route, SimParams, DEFAULTS
from .factor_space import EnvConfig, canonical_index
from .policies import ClipSpec, Policy, build_window, predict
from .split_builder import TestSuite, check_leakage

# Single termination event per episode; when one step trips several
# thresholds at once, the most severe kind wins.
_TERMINATION_PRECEDENCE = ("collision", "off_road", "out_of_lane", "stability")


class ExpertDriver:
    """Expert controller adapter for the evaluation loop.

    Reads the true simulator state instead of the observation window, so it
    serves as the infraction-free reference policy in every configuration.
    """

    kind = "expert"
    policy_id = "expert"
    clip = ClipSpec(1, 1)


@dataclass(frozen=True)
class StepRecord:
    step: int
    u: float
    d: float
    psi: float
    v: float
    steer: float
    throttle: float
    events: tuple[str, ...]


@dataclass(frozen=True)
class EpisodeResult:
    config_tag: str
    seed: int
    steps_traveled: int
    terminated_early: bool
    termination_event: str | None
    infraction_flags: dict[str, bool]
    wall_time_ms: float  # mean predict() time per step; 0.0 when not measured


def route_completion(result: EpisodeResult, horizon: int) -> float:
    """Fraction of the horizon traversed; 1.0 for completed episodes."""
    if result.terminated_early:
        return result.steps_traveled / horizon
    return 1.0


def run_episode(
    policy: Policy | ExpertDriver,
    config: EnvConfig,
    route: Route,
    seed: int,
    horizon: int = DEFAULTS.horizon,
    params: SimParams = DEFAULTS,
    measure_time: bool = False,
    collect_steps: bool = False,
) -> tuple[EpisodeResult, list[StepRecord]]:
    """One closed-loop rollout: observe -> window -> predict -> step.

    Deterministic in all inputs (timing excluded).  Stops at the horizon or
    at the first terminal event.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    expert = isinstance(policy, ExpertDriver)
    state = sim.init_state(seed, params)
    history: list[sim.Observation] = []
    records: list[StepRecord] = []
    flags = {kind: False for kind in EVENT_KINDS}
    steps_traveled = horizon
    terminated_early = False
    termination_event: str | None = None
    predict_ns = 0

    for t in range(horizon):
        obs = sim.observe(state, route, config, params)
        history.append(obs)
        if expert:
            controls = sim.expert_controls(state, route, params)
        else:
            window = build_window(history, policy.clip)
            if measure_time:
                t0 = time.perf_counter_ns()
                controls = predict(policy, window)
                predict_ns += time.perf_counter_ns() - t0
            else:
                controls = predict(policy, window)
        state, events = sim.step(state, route, controls, params)
        if collect_steps:
            records.append(
                StepRecord(t, state.u, state.d, state.psi, state.v,
                           controls.steer_curvature, controls.throttle, events)
            )
        if events:
            for kind in events:
                flags[kind] = True
            termination_event = next(k for k in _TERMINATION_PRECEDENCE if k in events)
            steps_traveled = t
            terminated_early = True
            break

    result = EpisodeResult(
        config_tag=config.tag,
        seed=seed,
        steps_traveled=steps_traveled,
        terminated_early=terminated_early,
        termination_event=termination_event,
        infraction_flags=flags,
        wall_time_ms=(predict_ns / 1e6 / max(len(history), 1)) if measure_time else 0.0,
    )
    return result, records


def write_step_log(path: str | Path, records: Iterable[StepRecord]) -> None:
    """Line-delimited structured per-step log for one episode."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "step": r.step,
                        "u": round(r.u, 4),
                        "d": round(r.d, 4),
                        "psi": round(r.psi, 4),
                        "v": round(r.v, 4),
                        "steer": round(r.steer, 4),
                        "throttle": round(r.throttle, 4),
                        "events": list(r.events),
                    }
                )
                + "\n"
            )


@dataclass(frozen=True)
class EvalRow:
    policy_id: str
    config_tag: str
    k: int
    n: int
    success_rate: float
    completion_mean: float
    completion_std: float
    collisions: int
    out_of_lane: int
    off_road: int
    stability: int
    mean_predict_ms: float


@dataclass
class EvalTable:
    rows: list[EvalRow]

    def row(self, policy_id: str, tag: str) -> EvalRow:
        for r in self.rows:
            if r.policy_id == policy_id and r.config_tag == tag:
                return r
        raise KeyError(f"no row for ({policy_id}, {tag})")


@dataclass
class EpisodeOutcome:
    """Per-episode record kept alongside the aggregate table."""

    config_tag: str
    k: int
    episode: int
    seed: int
    steps_traveled: int
    completion: float
    success: bool
    termination_event: str | None


def _aggregate_row(
    policy_id: str, tag: str, k: int, results: list[EpisodeResult], horizon: int
) -> EvalRow:
    n = len(results)
    completions = [route_completion(r, horizon) for r in results]
    successes = sum(1 for r in results if not r.terminated_early)
    mean = sum(completions) / n
    var = sum((c - mean) ** 2 for c in completions) / n
    return EvalRow(
        policy_id=policy_id,
        config_tag=tag,
        k=k,
        n=n,
        success_rate=successes / n,
        completion_mean=mean,
        completion_std=var**0.5,
        collisions=sum(r.infraction_flags["collision"] for r in results),
        out_of_lane=sum(r.infraction_flags["out_of_lane"] for r in results),
        off_road=sum(r.infraction_flags["off_road"] for r in results),
        stability=sum(r.infraction_flags["stability"] for r in results),
        mean_predict_ms=sum(r.wall_time_ms for r in results) / n,
    )


def evaluate(
    policy: Policy | ExpertDriver,
    suite: TestSuite,
    horizon: int = DEFAULTS.horizon,
    params: SimParams = DEFAULTS,
    measure_time: bool = False,
    log_dir: str | Path | None = None,
    jobs: int = 1,
) -> tuple[EvalTable, list[EpisodeOutcome]]:
    """Run the full protocol over a suite; one EvalRow per configuration.

    Raises on a leaky suite.  With jobs > 1, configurations are evaluated
    in parallel worker processes; aggregation is order-insensitive and the
    output is byte-identical to a sequential run.
    """
    violations = check_leakage(suite)
    if violations:
        raise ValueError(f"suite fails leakage check: {violations[:3]}")

    work = suite.configs()
    if jobs > 1 and log_dir is None and len(work) > 1:
        from concurrent.futures import ProcessPoolExecutor

        args = [(policy, suite, k, config, horizon, params, measure_time) for k, config in work]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            partials = list(pool.map(_eval_config, args))
    else:
        partials = [
            _eval_config((policy, suite, k, config, horizon, params, measure_time),
                         log_dir=log_dir)
            for k, config in work
        ]

    rows: list[EvalRow] = []
    outcomes: list[EpisodeOutcome] = []
    for (k, config), (results, _) in zip(work, partials):
        rows.append(_aggregate_row(policy.policy_id, config.tag, k, results, horizon))
        for j, r in enumerate(results):
            outcomes.append(
                EpisodeOutcome(
                    config_tag=config.tag,
                    k=k,
                    episode=j,
                    seed=r.seed,
                    steps_traveled=r.steps_traveled,
                    completion=route_completion(r, horizon),
                    success=not r.terminated_early,
                    termination_event=r.termination_event,
                )
            )
    rows.sort(key=lambda r: (r.k, canonical_index_from_tag(r.config_tag)))
    return EvalTable(rows), outcomes


def canonical_index_from_tag(tag: str) -> int:
    from .factor_space import parse_tag

    return canonical_index(parse_tag(tag))


def _eval_config(args, log_dir=None):
    policy, suite, k, config, horizon, params, measure_time = args
    results: list[EpisodeResult] = []
    for j in range(suite.episodes_per_config):
        route = sim.generate_route(suite.route_seed(j), config.scene, params)
        seed = suite.episode_seed(config.tag, j)
        collect = log_dir is not None
        result, records = run_episode(
            policy, config, route, seed, horizon, params,
            measure_time=measure_time, collect_steps=collect,
        )
        if collect:
            directory = Path(log_dir) / config.tag
            directory.mkdir(parents=True, exist_ok=True)
            write_step_log(directory / f"episode_{j:04d}.jsonl", records)
        results.append(result)
    return results, k

import numpy as np
import pytest

from factorshift import driving_sim as sim
from factorshift import rollout_eval as re_
from factorshift.factor_space import make_support, parse_tag
from factorshift.policies import ClipSpec, init_policy
from factorshift.split_builder import TestSuite, build_suite

# Committed protocol cases: (steps, early, horizon) -> completion.
COMPLETION_CASES = [
    (150, True, 200, 0.75),
    (200, False, 200, 1.0),
    (0, True, 200, 0.0),
    (199, True, 200, 0.995),
    (100, True, 200, 0.5),
    (50, True, 200, 0.25),
    (1, True, 200, 0.005),
    (180, True, 200, 0.9),
    (120, False, 120, 1.0),
    (30, True, 120, 0.25),
]


def make_result(steps, early, horizon):
    return re_.EpisodeResult(
        config_tag="RSuDDC",
        seed=0,
        steps_traveled=steps,
        terminated_early=early,
        termination_event="out_of_lane" if early else None,
        infraction_flags={k: False for k in sim.EVENT_KINDS},
        wall_time_ms=0.0,
    )


@pytest.mark.parametrize("steps,early,horizon,expected", COMPLETION_CASES)
def test_route_completion_formula(steps, early, horizon, expected):
    assert re_.route_completion(make_result(steps, early, horizon), horizon) == expected


def hard_right_policy():
    policy = init_policy("linear", ClipSpec(1, 1), policy_id="hard-right")
    policy.params["b"] = np.array([10.0, 0.5])  # steer clips to +0.2
    return policy


def test_expert_completes_pinned_triples():
    expert = re_.ExpertDriver()
    for i, tag in enumerate(("RSuDDC", "UFRNA", "RWSDC")):
        config = parse_tag(tag)
        route = sim.generate_route(500 + i, config.scene)
        result, _ = re_.run_episode(expert, config, route, seed=600 + i)
        assert result.steps_traveled == 200
        assert not result.terminated_early
        assert result.termination_event is None
        assert not any(result.infraction_flags.values())


def test_hard_right_policy_exits_lane_early():
    config = parse_tag("RSuDDC")
    route = sim.generate_route(501, config.scene)
    result, _ = re_.run_episode(hard_right_policy(), config, route, seed=601)
    assert result.terminated_early
    assert result.steps_traveled < 100
    assert result.termination_event in ("out_of_lane", "stability")


def test_run_episode_bit_exact_replay():
    config = parse_tag("USuRNC")
    route = sim.generate_route(502, config.scene)
    policy = hard_right_policy()
    a, steps_a = re_.run_episode(policy, config, route, seed=602, collect_steps=True)
    b, steps_b = re_.run_episode(policy, config, route, seed=602, collect_steps=True)
    assert a == b
    assert steps_a == steps_b


def test_run_episode_rejects_bad_horizon():
    config = parse_tag("RSuDDC")
    route = sim.generate_route(1, "rural")
    with pytest.raises(ValueError):
        re_.run_episode(re_.ExpertDriver(), config, route, seed=1, horizon=0)


def test_step_log_format(tmp_path):
    config = parse_tag("RSuDDC")
    route = sim.generate_route(503, config.scene)
    _, records = re_.run_episode(re_.ExpertDriver(), config, route, seed=603,
                                 horizon=5, collect_steps=True)
    path = tmp_path / "episode.jsonl"
    re_.write_step_log(path, records)
    import json

    lines = path.read_text().splitlines()
    assert len(lines) == 5
    first = json.loads(lines[0])
    assert set(first) == {"step", "u", "d", "psi", "v", "steer", "throttle", "events"}


def small_suite(ks={0, 1}, budget=3):
    return build_suite(make_support(["RSuDDC"]), ks, budget, seed_base=77)


def test_evaluate_expert_all_success():
    table, outcomes = re_.evaluate(re_.ExpertDriver(), small_suite())
    assert len(table.rows) == 9
    for row in table.rows:
        assert row.success_rate == 1.0
        assert row.completion_mean == 1.0
        assert row.n == 3
        assert row.collisions + row.out_of_lane + row.off_road + row.stability == 0
    assert len(outcomes) == 27


def test_evaluate_rows_sorted_and_budget_matched():
    table, _ = re_.evaluate(re_.ExpertDriver(), small_suite())
    ks = [row.k for row in table.rows]
    assert ks == sorted(ks)
    assert all(row.n == 3 for row in table.rows)


def test_evaluate_pins_seeds_across_policies():
    suite = small_suite(budget=2)
    _, outcomes_a = re_.evaluate(re_.ExpertDriver(), suite)
    _, outcomes_b = re_.evaluate(hard_right_policy(), suite)
    seeds_a = {(o.config_tag, o.episode): o.seed for o in outcomes_a}
    seeds_b = {(o.config_tag, o.episode): o.seed for o in outcomes_b}
    assert seeds_a == seeds_b


def test_success_bounded_by_completion():
    suite = small_suite(budget=4)
    table, _ = re_.evaluate(hard_right_policy(), suite)
    for row in table.rows:
        assert row.success_rate <= row.completion_mean <= 1.0


def test_infraction_counts_match_episode_flags():
    suite = small_suite(budget=4)
    policy = hard_right_policy()
    table, _ = re_.evaluate(policy, suite)
    for row in table.rows:
        config = parse_tag(row.config_tag)
        counts = {k: 0 for k in sim.EVENT_KINDS}
        early = 0
        for j in range(suite.episodes_per_config):
            route = sim.generate_route(suite.route_seed(j), config.scene)
            result, _ = re_.run_episode(policy, config, route,
                                        seed=suite.episode_seed(config.tag, j))
            early += result.terminated_early
            for kind, flag in result.infraction_flags.items():
                counts[kind] += flag
        assert row.collisions == counts["collision"]
        assert row.out_of_lane == counts["out_of_lane"]
        assert row.off_road == counts["off_road"]
        assert row.stability == counts["stability"]
        assert early == round((1 - row.success_rate) * row.n)


def test_evaluate_rejects_leaky_suite():
    member = parse_tag("RSuDDC")
    leaky = TestSuite(
        id_support=frozenset({member}),
        shells={1: (member,)},
        episodes_per_config=1,
        seed_base=0,
    )
    with pytest.raises(ValueError):
        re_.evaluate(re_.ExpertDriver(), leaky)


def test_wall_time_only_when_measured():
    suite = small_suite(ks={0}, budget=2)
    policy = hard_right_policy()
    table, _ = re_.evaluate(policy, suite, measure_time=False)
    assert table.rows[0].mean_predict_ms == 0.0
    table, _ = re_.evaluate(policy, suite, measure_time=True)
    assert table.rows[0].mean_predict_ms > 0.0


def test_parallel_evaluation_matches_sequential():
    suite = small_suite(budget=2)
    seq, _ = re_.evaluate(re_.ExpertDriver(), suite, jobs=1)
    par, _ = re_.evaluate(re_.ExpertDriver(), suite, jobs=2)
    assert seq.rows == par.rows

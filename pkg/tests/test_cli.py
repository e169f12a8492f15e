import re
from pathlib import Path

import pytest

from factorshift.cli import main

FIXTURES = Path(__file__).parent / "fixtures"

K1_SHELL = [
    "RSuDDA", "RSuDNC", "RSuRDC", "RSuSDC",
    "RWDDC", "RSpDDC", "RFDDC", "USuDDC",
]


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_space_enumerate(capsys):
    code, out, _ = run(capsys, "space", "enumerate")
    lines = out.splitlines()
    assert code == 0
    assert len(lines) == 96
    assert lines[0] == "RSuDDC"
    assert len(set(lines)) == 96


def test_shell_command_sorted_tags(capsys):
    code, out, _ = run(capsys, "shell", "--support", "RSuDDC", "--k", "1")
    assert code == 0
    assert out.splitlines() == K1_SHELL


def test_shell_rejects_bad_tag(capsys):
    code, _, err = run(capsys, "shell", "--support", "XSuDDC", "--k", "1")
    assert code == 1
    assert "error" in err


def test_unknown_subcommand_usage_on_stderr(capsys):
    code, _, err = run(capsys, "frobnicate")
    assert code == 1
    assert "usage" in err.lower()


def test_suite_build_and_check(tmp_path, capsys):
    suite_path = tmp_path / "suite.txt"
    code, _, _ = run(capsys, "suite", "build", "--support", "RSuDDC",
                     "--ks", "0,1", "--budget", "3", "--seed-base", "5",
                     "--out", str(suite_path))
    assert code == 0
    code, out, _ = run(capsys, "suite", "check", "--suite", str(suite_path))
    assert code == 0
    assert out.strip() == "OK"


def test_suite_check_flags_corruption(tmp_path, capsys):
    suite_path = tmp_path / "suite.txt"
    run(capsys, "suite", "build", "--support", "RSuDDC", "--ks", "0,1",
        "--budget", "3", "--seed-base", "5", "--out", str(suite_path))
    text = suite_path.read_text().replace("[shell 1]\nRSuDDA", "[shell 1]\nRSuDDC")
    suite_path.write_text(text)
    code, _, err = run(capsys, "suite", "check", "--suite", str(suite_path))
    assert code == 1
    assert "leak" in err or "distance" in err


def test_analyze_interactions_fixture(capsys):
    code, out, _ = run(capsys, "analyze", "interactions",
                       "--singles", "31.15,31.00", "--combo", "28.63")
    assert code == 0
    assert out.strip() == "sub_additive"
    code, out, _ = run(capsys, "analyze", "interactions",
                       "--singles", "15.23,31.00", "--combo", "81.02")
    assert out.strip() == "super_additive"


def test_analyze_themes_fixture(tmp_path, capsys):
    out_csv = tmp_path / "theme.csv"
    code, out, _ = run(capsys, "analyze", "themes",
                       "--shifts", str(FIXTURES / "published_shifts.csv"),
                       "--theme", "season,time", "--out", str(out_csv))
    assert code == 0
    assert "members = 2" in out
    assert "mean_drop = 74.9100" in out
    assert out_csv.exists()


def test_analyze_drops_perk_fixture(tmp_path, capsys):
    code, _, _ = run(capsys, "analyze", "drops",
                     "--table", str(FIXTURES / "perk_reference.csv"),
                     "--baseline", "RSuDDC",
                     "--out-drops", str(tmp_path / "drops.csv"),
                     "--out-perk", str(tmp_path / "perk.csv"))
    assert code == 0
    perk = (tmp_path / "perk.csv").read_text().splitlines()
    assert perk[0] == "policy,k,mean_success_pct,mean_drop_pct"
    assert "enc-ref+head,1,86.2000,13.8000" in perk
    assert "enc-ref+head,2,81.8600,18.1400" in perk
    assert "enc-ref+head,3,85.3300,14.6700" in perk


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """demos collect -> train -> suite build -> eval, all through the CLI."""
    root = tmp_path_factory.mktemp("pipeline")
    demos = root / "demos.npz"
    ckpt = root / "policy.json"
    suite = root / "suite.txt"
    table = root / "table.csv"
    episodes = root / "episodes.csv"
    assert main(["demos", "collect", "--support", "RSuDDC", "--traces", "2",
                 "--seed", "3", "--out", str(demos)]) == 0
    assert main(["train", "--demos", str(demos), "--kind", "linear",
                 "--policy-id", "lin", "--epochs", "40", "--seed", "3",
                 "--out", str(ckpt), "--manifest", str(root / "train.txt")]) == 0
    assert main(["suite", "build", "--support", "RSuDDC", "--ks", "0,1",
                 "--budget", "2", "--seed-base", "8", "--out", str(suite)]) == 0
    assert main(["eval", "--policy", str(ckpt), "--suite", str(suite),
                 "--out", str(table), "--episodes-out", str(episodes)]) == 0
    return root


def test_pipeline_outputs_exist(pipeline):
    assert (pipeline / "table.csv").exists()
    assert (pipeline / "episodes.csv").exists()
    assert (pipeline / "train.txt").read_text().startswith("policy_id = lin")


def test_eval_table_formatting(pipeline):
    lines = (pipeline / "table.csv").read_text().splitlines()
    assert lines[0] == ("policy,tag,k,n,success,completion_mean,completion_std,"
                        "collisions,out_of_lane,off_road,stability,mean_predict_ms")
    for line in lines[1:]:
        fields = line.split(",")
        for value in (fields[4], fields[5], fields[6], fields[11]):
            assert re.fullmatch(r"-?\d+\.\d{4}", value), value


def test_eval_deterministic(pipeline, tmp_path, capsys):
    table2 = tmp_path / "table2.csv"
    code, _, _ = run(capsys, "eval", "--policy", str(pipeline / "policy.json"),
                     "--suite", str(pipeline / "suite.txt"), "--out", str(table2))
    assert code == 0
    assert table2.read_bytes() == (pipeline / "table.csv").read_bytes()


def test_expert_eval_and_stats_null(pipeline, tmp_path, capsys):
    expert_eps = tmp_path / "expert_eps.csv"
    code, _, _ = run(capsys, "eval", "--policy", "expert",
                     "--suite", str(pipeline / "suite.txt"),
                     "--out", str(tmp_path / "expert_table.csv"),
                     "--episodes-out", str(expert_eps))
    assert code == 0
    # a policy against itself: all p-values 1, no rejections
    out_csv = tmp_path / "stats.csv"
    code, out, _ = run(capsys, "analyze", "stats",
                       "--episodes-a", str(pipeline / "episodes.csv"),
                       "--episodes-b", str(pipeline / "episodes.csv"),
                       "--out", str(out_csv))
    assert code == 0
    for line in out_csv.read_text().splitlines()[1:]:
        assert line.endswith(",1.0000,0")


def test_study_run_and_report_emit(tmp_path, capsys):
    spec = {
        "study": "S1",
        "seed_base": 77,
        "episodes_per_config": 2,
        "ks": [1],
        "supports": [["RSuDDC"]],
        "trace_budgets": [2],
        "policies": [{"name": "linear", "kind": "linear"}],
        "train": {"learning_rate": 0.001, "max_epochs": 10, "seed": 2},
    }
    import json

    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec))
    out_dir = tmp_path / "study"
    code, out, _ = run(capsys, "study", "run", str(spec_path), "--out", str(out_dir))
    assert code == 0
    assert "ok" in out
    report_dir = tmp_path / "report"
    code, out, _ = run(capsys, "report", "emit", "--study", str(out_dir),
                       "--out", str(report_dir))
    assert code == 0
    summary = (report_dir / "summary.csv").read_text().splitlines()
    assert summary[0] == "point,policy,k,mean_success_pct,mean_drop_pct"
    assert len(summary) == 3  # k = 0 and k = 1 rows


def test_missing_file_is_validation_error(capsys):
    code, _, err = run(capsys, "eval", "--policy", "nope.json",
                       "--suite", "nowhere.txt", "--out", "x.csv")
    assert code == 1
    assert "error" in err

import csv
import json
import math

import pytest
from click.testing import CliRunner

from cli import main


@pytest.fixture
def runner():
    return CliRunner()


def read_rows(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


def test_tail_laplace_case(runner, tmp_path):
    out = tmp_path / "tail.csv"
    result = runner.invoke(main, ["tail", "--m", "2", "--k", "2", "--kappa", "2", "--u", "4", "--out", str(out)])
    assert result.exit_code == 0, result.output
    row = read_rows(out)[0]
    assert float(row["asymptotic"]) == pytest.approx(0.5 * math.exp(-2), rel=1e-9)
    assert float(row["oracle"]) == pytest.approx(0.5 * math.exp(-2), rel=1e-9)
    assert float(row["ratio"]) == pytest.approx(1.0, rel=1e-9)


def test_tail_chi_square(runner, tmp_path):
    out = tmp_path / "tail.csv"
    result = runner.invoke(main, ["tail", "--m", "2", "--k", "0", "--kappa", "2", "--u", "4", "--u", "8", "--out", str(out)])
    assert result.exit_code == 0, result.output
    rows = read_rows(out)
    assert [float(r["u"]) for r in rows] == [4.0, 8.0]
    assert float(rows[0]["asymptotic"]) == pytest.approx(math.exp(-2), rel=1e-12)
    assert float(rows[0]["oracle"]) == pytest.approx(math.exp(-2), rel=1e-12)


def test_sidecar_round_trip(runner, tmp_path):
    first, second = tmp_path / "first.csv", tmp_path / "second.csv"
    args = ["sup-prob", "--m", "1", "--k", "1", "--T", "2", "--u", "2", "--u", "3", "--reps", "100",
            "--mesh-delta", "0.5", "--h-override", "1.0", "--out", str(first)]
    assert runner.invoke(main, args).exit_code == 0
    sidecar = json.loads((tmp_path / "first.json").read_text())
    assert sidecar["command"] == "sup-prob"
    assert sidecar["config"]["reps"] == 100
    assert sidecar["config"]["h_override"] == 1.0
    assert "version" in sidecar and sidecar["runtime_seconds"] >= 0

    again = runner.invoke(main, ["sup-prob", "--config", str(tmp_path / "first.json"), "--out", str(second)])
    assert again.exit_code == 0, again.output
    assert first.read_bytes() == second.read_bytes()


def test_parallelism_does_not_change_output(runner, tmp_path):
    outputs = []
    for workers in ("1", "3"):
        out = tmp_path / f"run{workers}.csv"
        args = ["sup-prob", "--T", "2", "--u", "3", "--reps", "60", "--mesh-delta", "0.5",
                "--h-override", "1.0", "--parallelism", workers, "--out", str(out)]
        assert runner.invoke(main, args).exit_code == 0
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]


def test_degenerate_pickands_exits_with_config_code(runner):
    result = runner.invoke(main, ["pickands", "--kappa", "0.5", "--k", "0", "--reps", "10"])
    assert result.exit_code == 2
    assert "DegenerateConfigurationError" in result.output


def error_records(output):
    return [json.loads(line) for line in output.splitlines() if line.startswith("{")]


def test_unknown_flag_is_usage_error(runner):
    result = runner.invoke(main, ["tail", "--bogus", "1"])
    assert result.exit_code == 2
    records = error_records(result.output)
    assert len(records) == 1
    assert records[0]["error"] == "ConfigError"
    assert "--bogus" in records[0]["message"]


def test_bad_flag_value_leaves_error_record(runner):
    result = runner.invoke(main, ["tail", "--m", "two"])
    assert result.exit_code == 2
    assert error_records(result.output)[0]["error"] == "ConfigError"


def test_config_file_errors(runner, tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert runner.invoke(main, ["tail", "--config", str(broken)]).exit_code == 2

    extra = tmp_path / "extra.json"
    extra.write_text(json.dumps({"m": 1, "colour": "blue"}))
    assert runner.invoke(main, ["tail", "--config", str(extra)]).exit_code == 2

    ranged = tmp_path / "ranged.json"
    ranged.write_text(json.dumps({"alpha": 3.0}))
    assert runner.invoke(main, ["tail", "--config", str(ranged)]).exit_code == 2


def test_flags_override_file(runner, tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"m": 2, "k": 0, "kappa": 2.0, "u": [2.0]}))
    out = tmp_path / "tail.csv"
    assert runner.invoke(main, ["tail", "--config", str(config), "--u", "4", "--out", str(out)]).exit_code == 0
    row = read_rows(out)[0]
    assert row["m"] == "2"
    assert float(row["u"]) == 4.0


def test_validate_model(runner, tmp_path):
    out = tmp_path / "validate.csv"
    result = runner.invoke(main, ["validate-model", "--m", "1", "--k", "1", "--C", "1.0", "--C", "2.0", "--out", str(out)])
    assert result.exit_code == 0, result.output
    rows = read_rows(out)
    assert len(rows) == 2
    assert float(rows[1]["C_local"]) == pytest.approx(2.0, rel=1e-2)
    assert rows[0]["berman_satisfied"] == "true"


def test_gumbel_refusal_exits_with_infeasible_code(runner):
    args = ["gumbel", "--family", "generalized_cauchy", "--gamma", "0.1", "--T", "200", "--reps", "10", "--h-override", "1.0"]
    result = runner.invoke(main, args)
    assert result.exit_code == 3
    assert "BermanConditionError" in result.output


def test_upsilon_command(runner, tmp_path):
    out = tmp_path / "upsilon.csv"
    args = ["upsilon", "--a", "0.1", "--horizon", "10", "--x-grid", "0", "--x-grid", "1", "--reps", "300", "--out", str(out)]
    result = runner.invoke(main, args)
    assert result.exit_code == 0, result.output
    rows = read_rows(out)
    assert float(rows[0]["upsilon"]) == 1.0
    assert float(rows[1]["upsilon"]) <= 1.0


def test_repeated_pickands_step_is_config_error(runner):
    result = runner.invoke(main, ["pickands", "--a", "0.2", "--a", "0.2", "--reps", "200", "--horizon", "5"])
    assert result.exit_code == 2
    assert error_records(result.output)[0]["error"] == "ConfigError"


def test_upsilon_and_sojourn_share_one_curve(runner, tmp_path):
    common = ["--a", "0.2", "--a", "0.1", "--horizon", "10", "--x-grid", "0", "--x-grid", "1", "--limit-reps", "400", "--master-seed", "9"]
    upsilon_out, sojourn_out = tmp_path / "upsilon.csv", tmp_path / "sojourn.csv"
    result = runner.invoke(main, ["upsilon", *common, "--parallelism", "3", "--out", str(upsilon_out)])
    assert result.exit_code == 0, result.output
    args = ["sojourn", *common, "--u", "1.0", "--t-window", "2", "--reps", "40", "--out", str(sojourn_out)]
    result = runner.invoke(main, args)
    assert result.exit_code == 0, result.output
    upsilon_rows, sojourn_rows = read_rows(upsilon_out), read_rows(sojourn_out)
    assert [float(r["upsilon"]) for r in upsilon_rows] == [float(r["upsilon"]) for r in sojourn_rows]

import json

import pytest

from hmrsim.cli import main

from factories import make_scenario


def _config(tmp_path, **kwargs):
    path = tmp_path / "scenario.json"
    path.write_text(make_scenario(**kwargs).model_dump_json())
    return path


def _only(out, pattern):
    [path] = out.glob(f"*/{pattern}")
    return path


def test_run_writes_a_report(tmp_path, capsys):
    config = _config(tmp_path, mode="dmr", expect={"result_correct": True})
    out = tmp_path / "out"
    assert main(["--log-level", "WARNING", "run", "--config", str(config), "--out", str(out)]) == 0
    report = json.loads(_only(out, "run-functional.json").read_text())
    assert report["result_correct"] is True
    assert report["mode"] == "dmr"
    assert "cycles, result_correct=True" in capsys.readouterr().out


def test_run_reports_are_byte_identical(tmp_path):
    config = _config(tmp_path, mode="tmr", dim=4)
    out = tmp_path / "out"
    main(["run", "--config", str(config), "--out", str(out), "--calibrated"])
    first = _only(out, "run-calibrated.json").read_bytes()
    main(["run", "--config", str(config), "--out", str(out), "--calibrated"])
    assert _only(out, "run-calibrated.json").read_bytes() == first
    assert "calibration_reference" in json.loads(first)


def test_failed_expectation_exits_one(tmp_path, capsys):
    config = _config(tmp_path, dim=4, expect={"max_cycles": 10})
    assert main(["run", "--config", str(config), "--out", str(tmp_path / "out")]) == 1
    assert "assertion failed" in capsys.readouterr().err


def test_unknown_config_key_exits_two(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"cluster": {"n_cores": 6, "cores": 2}}))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "out")]) == 2
    err = capsys.readouterr().err
    assert err.startswith("error:") and "cluster.cores" in err


def test_missing_config_exits_two(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 2


def test_missing_workload_exits_two(tmp_path, capsys):
    path = tmp_path / "no-workload.json"
    path.write_text(json.dumps({"cluster": {"n_cores": 6, "boot_mode": "dmr"}}))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "out")]) == 2
    assert "workload" in capsys.readouterr().err


def test_inject_writes_campaign_files(tmp_path, capsys):
    config = _config(tmp_path, dim=4, campaign={"runs": 4, "mode": "dmr_rapid", "target": "rf"}, expect={"sdc": 0})
    out = tmp_path / "out"
    assert main(["inject", "--config", str(config), "--out", str(out), "--csv", "--workers", "2"]) == 0
    payload = json.loads(_only(out, "campaign-dmr_rapid.json").read_text())
    assert payload["runs"] == 4 and len(payload["records"]) == 4
    lines = _only(out, "campaign-dmr_rapid.csv").read_text().splitlines()
    assert len(lines) == 5
    assert "sdc=0" in capsys.readouterr().out


def test_model_prints_landmarks(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["model", "--workload", "cfft", "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "nominal independent: 989.0 MOPS" in printed
    assert "nominal tmr: 385.0 MOPS" in printed
    assert _only(out, "curves-cfft.csv").read_text().startswith("rate,baseline,dcls_sw")
    assert _only(out, "overhead.csv").exists()
    assert "monte_carlo" not in json.loads(_only(out, "model-cfft.json").read_text())


def test_model_validate_adds_monte_carlo(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["model", "--validate", "--seed", "3", "--out", str(out)]) == 0
    report = json.loads(_only(out, "model-matmul.json").read_text())
    assert set(report["monte_carlo"]) == {"dcls_sw", "dcls_rapid", "tcls_sw", "tcls_rapid"}
    assert report["seed"] == 3
    assert all(err < 0.05 for errs in report["monte_carlo"].values() for err in errs.values())
    assert "monte carlo tcls_sw" in capsys.readouterr().out


def test_command_is_required():
    with pytest.raises(SystemExit):
        main([])

import json
import subprocess
import sys

import pytest

from ensamp.cli import main


@pytest.fixture
def cfgs(tmp_path):
    res = tmp_path / "resource.cfg"
    res.write_text("name = local\nslots = 4\n")
    ker = tmp_path / "kernel.cfg"
    ker.write_text("workflow = dmdmd\nnum_iterations = 3\nnum_replicas = 8\nn_steps = 40\ndynamic_instances = yes\n")
    return res, ker


def run_cli(*args):
    return main([str(a) for a in args])


def strip_timing(report):
    for it in report["iterations"]:
        for key in ("sim_wall_s", "analysis_wall_s", "overhead_s"):
            it.pop(key)
    return report


def test_run_writes_reports(cfgs, tmp_path):
    res, ker = cfgs
    out = tmp_path / "out"
    assert run_cli("run", "--resource", res, "--kernel", ker, "--out", out) == 0
    names = {p.name for p in out.iterdir()}
    assert {"report.json", "iterations.csv", "tasks.csv", "final_ensemble.txt", "manifest.json"} <= names
    report = json.loads((out / "report.json").read_text())
    assert len(report["iterations"]) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "run" and manifest["status"] == "ok"
    assert "workflow = dmdmd" in manifest["kernel_config"]
    assert manifest["ensamp_version"]


def test_same_seed_same_report(cfgs, tmp_path):
    res, ker = cfgs
    reports = []
    for name in ("a", "b"):
        assert run_cli("run", "--resource", res, "--kernel", ker, "--out", tmp_path / name, "--seed", 5) == 0
        reports.append(strip_timing(json.loads((tmp_path / name / "report.json").read_text())))
    assert reports[0] == reports[1]
    assert (tmp_path / "a" / "final_ensemble.txt").read_text() == (tmp_path / "b" / "final_ensemble.txt").read_text()


def test_seed_from_environment(cfgs, tmp_path, monkeypatch):
    res, ker = cfgs
    monkeypatch.setenv("ENSAMP_SEED", "11")
    assert run_cli("run", "--resource", res, "--kernel", ker, "--out", tmp_path / "o") == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["seed"] == 11 and "seed = 11" in manifest["kernel_config"]
    monkeypatch.setenv("ENSAMP_SEED", "eleven")
    assert run_cli("run", "--resource", res, "--kernel", ker, "--out", tmp_path / "p") == 1


def test_refuses_non_empty_out_without_force(cfgs, tmp_path, capsys):
    res, ker = cfgs
    out = tmp_path / "out"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert run_cli("run", "--resource", res, "--kernel", ker, "--out", out) == 1
    assert "--force" in capsys.readouterr().err
    assert run_cli("run", "--resource", res, "--kernel", ker, "--out", out, "--force") == 0
    assert (out / "keep.txt").exists()


def test_bad_key_exit_one(cfgs, tmp_path, capsys):
    res, _ = cfgs
    bad = tmp_path / "bad.cfg"
    bad.write_text("workflow = dmdmd\nwarp_factor = 9\n")
    assert run_cli("run", "--resource", res, "--kernel", bad, "--out", tmp_path / "o") == 1
    err = capsys.readouterr().err
    assert "warp_factor" in err and "bad.cfg" in err


def test_unknown_flag_exit_one(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["overhead", "--bogus"])
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_overhead_csv(tmp_path):
    out = tmp_path / "ov"
    assert run_cli("overhead", "--tasks", "64", "--repeats", "2", "--out", out) == 0
    lines = (out / "overhead.csv").read_text().splitlines()
    assert lines[0].startswith("#") and lines[2].startswith("64,2,")
    assert (out / "manifest.json").exists()


def test_runtime_failure_exit_two(tmp_path):
    res = tmp_path / "r.cfg"
    res.write_text("name = local\nslots = 2\n")
    ker = tmp_path / "k.cfg"
    # a time step this large blows up every trajectory, so the run aborts
    ker.write_text("workflow = dmdmd\nnum_replicas = 4\nbarrier_height = 40\ndt = 5\n")
    out = tmp_path / "o"
    assert run_cli("run", "--resource", res, "--kernel", ker, "--out", out) == 2
    report = json.loads((out / "report.json").read_text())
    assert report["aborted"]
    assert json.loads((out / "manifest.json").read_text())["status"].startswith("aborted")


def test_other_subcommands(tmp_path, cfgs):
    _, ker = cfgs
    assert run_cli("demo-potential", "--potential", "mueller_brown", "--grid", "5", "--out", tmp_path / "p") == 0
    assert len((tmp_path / "p" / "potential.csv").read_text().splitlines()) == 26
    assert run_cli("baseline", "--resource", cfgs[0], "--kernel", ker, "--out", tmp_path / "b") == 0
    assert json.loads((tmp_path / "b" / "report.json").read_text())["total_steps"] == 3 * 8 * 40
    assert run_cli("scale-strong", "--kernel", ker, "--slots", "2,4", "--padding", "0.01", "--repeats", "1",
                   "--out", tmp_path / "s") == 0
    assert run_cli("scale-weak", "--kernel", ker, "--points", "4:4,8:8", "--padding", "0.01", "--repeats", "1",
                   "--out", tmp_path / "w") == 0
    assert run_cli("oversub", "--instances", "2,4", "--slots", "2", "--task-seconds", "0.01", "--mode", "sleep",
                   "--repeats", "1", "--out", tmp_path / "v") == 0
    assert run_cli("scale-weak", "--kernel", ker, "--points", "4:4,8:4", "--out", tmp_path / "w2") == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ensamp", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "ensamp" in proc.stdout

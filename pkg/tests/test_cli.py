import json

import pytest

from envyloc.cli import main
from envyloc.instance import Regime, enumerate_optimum, generate_instance, read_instance


@pytest.fixture()
def inst_file(tmp_path):
    path = tmp_path / "inst.txt"
    assert main(["gen", "--seed", "3", "-M", "7", "-p", "2", "--regime", "CloserSelfService",
                 "--out", str(path)]) == 0
    return path


def run_json(capsys, argv):
    assert main(argv) == 0
    return json.loads(capsys.readouterr().out)


def test_gen_matches_library(inst_file):
    assert read_instance(inst_file) == generate_instance(3, 7, 2, Regime.CLOSER_SELF_SERVICE)


def test_gen_to_stdout(capsys):
    assert main(["gen", "--seed", "1", "-M", "4", "-p", "1"]) == 0
    assert capsys.readouterr().out.startswith("4 1 RandomPrefs 1\n")


@pytest.mark.parametrize("fid", ["F1", "F2", "F3", "F3R", "F4"])
@pytest.mark.parametrize("suffix", [".lp", ".mps"])
def test_build_then_solve_file(capsys, tmp_path, inst_file, fid, suffix):
    model = tmp_path / f"m{suffix}"
    assert main(["build", "--formulation", fid, "--instance", str(inst_file), "--out", str(model)]) == 0
    out = run_json(capsys, ["solve", "--model", str(model), "--json"])
    factor = 2 if fid == "F3R" else 1
    assert out["status"] == "Optimal"
    assert out["value"] * factor == enumerate_optimum(read_instance(inst_file)).envy


def test_solve_from_instance_with_everything(capsys, inst_file):
    out = run_json(capsys, ["solve", "--instance", str(inst_file), "--formulation", "F2",
                            "--families", "p101,p104", "--preprocess", "--sep", "--json"])
    opt = enumerate_optimum(read_instance(inst_file))
    assert out["envy"] == opt.envy
    assert len(out["open"]) == 2
    pre = out["preprocess"]
    assert pre["pct_v0_of_probed"] + pre["pct_v1_of_probed"] <= 100


def test_separated_model_file_needs_instance(tmp_path, inst_file, capsys):
    model = tmp_path / "f5.lp"
    main(["build", "--formulation", "F5.1", "--instance", str(inst_file), "--out", str(model)])
    with pytest.raises(SystemExit):
        main(["solve", "--model", str(model)])
    out = run_json(capsys, ["solve", "--model", str(model), "--instance", str(inst_file), "--json"])
    assert out["envy"] == enumerate_optimum(read_instance(inst_file)).envy


def test_mismatched_model_rejected(tmp_path, inst_file):
    model = tmp_path / "f1.lp"
    main(["build", "--formulation", "F1", "--instance", str(inst_file), "--out", str(model)])
    with pytest.raises(SystemExit):
        main(["solve", "--model", str(model), "--instance", str(inst_file), "--formulation", "F2"])


def test_build_with_static_families(capsys, inst_file):
    assert main(["build", "--formulation", "F2", "--instance", str(inst_file),
                 "--families", "p101"]) == 0
    assert "p101_0:" in capsys.readouterr().out


def test_bench_report_verify(tmp_path, capsys):
    csv_path = tmp_path / "rows.csv"
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("grid = 6:2\nregimes = RandomPrefs\nvariants = F1, F2, F3, F5.1, F5.2\n"
                   f"seeds = 1\ntime_limit = 60\nreport = {tmp_path / 'table.md'}\n")
    assert main(["bench", "--config", str(cfg), "--csv", str(csv_path), "--quiet"]) == 0
    table = (tmp_path / "table.md").read_text()
    assert "### RandomPrefs" in table and "LP gap trend" in table
    assert len(csv_path.read_text().splitlines()) == 6
    capsys.readouterr()
    assert main(["report", "--csv", str(csv_path), "--cells-csv", str(tmp_path / "c.csv")]) == 0
    assert "| (F2)" in capsys.readouterr().out
    assert main(["verify", "--config", str(cfg)]) == 0
    assert "0 mismatches" in capsys.readouterr().out


def test_bad_input_exit_code(tmp_path):
    assert main(["gen", "--seed", "1", "-M", "3", "-p", "5"]) == 2
    assert main(["solve", "--model", str(tmp_path / "missing.lp")]) == 2

import json
import subprocess
import sys

import pytest

from spacetime_obstacle.cli import SUITE, build_parser, main
from spacetime_obstacle.study import read_csv


def test_run_writes_csv(tmp_path, capsys):
    out = tmp_path / "r.csv"
    assert main(["run", "--problem", "stefan", "--levels", "2", "--out", str(out)]) == 0
    assert len(read_csv(out)) == 2
    assert "rho_total" in capsys.readouterr().out


def test_run_with_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"problem": "pyramid", "levels": 5}))
    out = tmp_path / "r.csv"
    assert main(["run", "--config", str(cfg), "--levels", "2", "--refine", "adaptive",
                 "--seed-mesh", "2,3", "--out", str(out)]) == 0
    recs = read_csv(out)
    assert len(recs) == 2 and recs[0].n_elements == 12


def test_rejected_combination_exits_2(capsys):
    code = main(["run", "--problem", "pyramid", "--family", "tensor", "--refine", "adaptive",
                 "--levels", "2"])
    assert code == 2
    assert "use --refine uniform" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path):
    assert main(["run", "--config", str(tmp_path / "none.json")]) == 2


def test_rates(tmp_path, capsys):
    out = tmp_path / "r.csv"
    main(["run", "--levels", "3", "--out", str(out)])
    capsys.readouterr()
    assert main(["rates", str(out), "--window", "3"]) == 0
    text = capsys.readouterr().out
    assert "rho_total" in text and "err_total" in text
    assert main(["rates", str(out), "--columns", "nonsense"]) == 2


def test_suite_only(tmp_path, capsys):
    assert main(["suite", "--out", str(tmp_path), "--only", "stefan_tensor_uniform",
                 "--single-thread"]) == 0
    assert (tmp_path / "stefan_tensor_uniform.csv").exists()
    assert "stefan_tensor_uniform" in capsys.readouterr().out


def test_suite_unknown_name(tmp_path):
    assert main(["suite", "--out", str(tmp_path), "--only", "bogus"]) == 2


def test_suite_names_unique():
    names = [s[0] for s in SUITE]
    assert len(names) == len(set(names)) == 9


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "spacetime_obstacle", "--help"],
                          capture_output=True, text=True, check=True)
    assert "run" in proc.stdout and "rates" in proc.stdout


def test_rates_span(tmp_path, capsys):
    out = tmp_path / "r.csv"
    main(["run", "--levels", "3", "--out", str(out)])
    capsys.readouterr()
    assert main(["rates", str(out), "--span", "16"]) == 0
    assert "rho_total" in capsys.readouterr().out
    with pytest.raises(SystemExit):
        main(["rates", str(out), "--span", "16", "--window", "2"])

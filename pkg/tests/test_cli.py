import json
import subprocess
import sys

import pytest

from deeptherm.cli import build_parser, main


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps({"experiment": "ergodicity", "lattice": {"rows": 1, "cols": 3},
                                "pattern": "010", "times_ns": [2, 50, 306]}))
    return path


def test_run_writes_outputs(small_config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(small_config), "--out", str(out), "--seed", "3"]) == 0
    assert (out / "manifest.json").exists()
    assert json.loads((out / "resolved_config.json").read_text())["seed"] == 3
    assert "wrote" in capsys.readouterr().out


def test_mitigation_flag_spelling(small_config, tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(small_config), "--out", str(out), "--mode", "shots",
                 "--mitigation", "as-written"]) == 0
    assert json.loads((out / "resolved_config.json").read_text())["mitigation"] == "as_written"


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"experiment": "ergodicity", "workers": 0}')
    assert main(["run", str(bad)]) == 2
    assert "bad.json:1:" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.json")]) == 2


def test_selftest_invariants(capsys):
    assert main(["selftest"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines and all(line.startswith("[PASS] invariant") for line in lines)


def test_selftest_selected_criterion(capsys):
    assert main(["selftest", "--criteria", "4"]) == 0
    assert "[PASS] criterion  4" in capsys.readouterr().out


def test_parser_rejects_unknown_mode():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["run", "x.json", "--mode", "magic"])


def test_console_entry_point(small_config, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "deeptherm.cli", "run", str(small_config),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr

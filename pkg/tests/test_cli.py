from __future__ import annotations

import subprocess
import sys

from dalock import cli, harness
from dalock.harness import CSV_HEADER, SUMMARY_HEADER
from dalock.sketch import CountSketch


def test_validate(capsys):
    assert cli.main(["validate"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 5 and all(line.startswith("PASS") for line in out)


def test_validate_failure_exit_code(monkeypatch, capsys):
    monkeypatch.setattr(harness, "validate", lambda seed=0: [("broken", False, "forced")])
    assert cli.main(["validate"]) == 3
    assert "FAIL" in capsys.readouterr().out


def test_usability_to_file(tmp_path):
    out = tmp_path / "u.csv"
    assert cli.main(["usability", "--users", "200", "--set", "horizon=48", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == CSV_HEADER and len(lines) == 49


def test_security_stdout(capsys):
    assert cli.main(["security", "--users", "100", "--psi", "2^-9", "--k", "3", "--set", "horizon=24"]) == 0
    assert capsys.readouterr().out.startswith(CSV_HEADER + "\n1,")


def test_config_errors(capsys):
    assert cli.main(["usability", "--users", "0"]) == 2
    assert cli.main(["usability", "--set", "nonsense=1"]) == 2
    assert cli.main(["usability", "--config", "/no/such.conf"]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_matrix(tmp_path, capsys):
    conf = tmp_path / "m.conf"
    out = tmp_path / "res"
    conf.write_text(f"users = 150\nhorizon = 100\nout = {out}\ncell = mechanism=kstrikes K=3\ncell = K=10\n",
                    encoding="utf-8")
    assert cli.main(["matrix", "--config", str(conf)]) == 0
    summary = capsys.readouterr().out
    assert summary.splitlines()[0] == SUMMARY_HEADER
    assert (out / "summary.csv").read_text() == summary
    assert (out / "3-strikes.csv").is_file()


def test_sketch_build(tmp_path):
    corpus = tmp_path / "c.txt"
    corpus.write_text("123456\t50\npassword\t20\nqwerty\t5\n", encoding="utf-8")
    out = tmp_path / "s.bin"
    assert cli.main(["sketch-build", "--set", f"corpus={corpus}", "--set", "sketch_w=4096", "--out", str(out)]) == 0
    sk = CountSketch.load(out)
    assert sk.total_freq() == 75 and sk.estimate("123456") == 50


def test_sketch_build_needs_out():
    assert cli.main(["sketch-build"]) == 2


def test_console_module():
    proc = subprocess.run([sys.executable, "-m", "dalock.cli", "validate"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.count("PASS") == 5

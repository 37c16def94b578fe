import json
import subprocess
import sys

import numpy as np
import pytest

from bdfdyn.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, main, snapshot_name
from bdfdyn.io import read_observables

CONFIG = """
[lattice]
h = 1.0
cutoff = 1.5

[source]
Z = 1.0
alpha = 0.05

[initial]
mode = {mode}
N = 1

[evolve]
dt = 0.05
n_steps = 8
record_interval = 2
{extra}

[output]
directory = {outdir}
snapshot_interval = 4
"""


def write_config(tmp_path, mode="charged_free", extra="", name="run.ini", outdir="out"):
    path = tmp_path / name
    path.write_text(CONFIG.format(mode=mode, extra=extra, outdir=tmp_path / outdir))
    return path


def test_evolve_writes_outputs(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["evolve", str(cfg)]) == EXIT_OK
    out = tmp_path / "out"
    data = read_observables(out / "observables.csv")
    assert data.shape == (5, 7)
    assert np.allclose(data[:, 0], [0.0, 0.1, 0.2, 0.3, 0.4])
    assert np.allclose(data[:, 1], 1.0, atol=1e-12)
    assert (out / snapshot_name(4)).exists() and (out / snapshot_name(8)).exists()
    report = json.loads((out / "run_report.json").read_text())
    assert report["step_index"] == 8


def test_output_directory_override(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)
    monkeypatch.setenv("BDFDYN_OUTPUT_DIR", str(tmp_path / "elsewhere"))
    assert main(["evolve", str(cfg)]) == EXIT_OK
    assert (tmp_path / "elsewhere" / "observables.csv").exists()
    assert not (tmp_path / "out").exists()


def test_runs_are_bit_identical(tmp_path):
    a = write_config(tmp_path, name="a.ini", outdir="a")
    b = write_config(tmp_path, name="b.ini", outdir="b")
    assert main(["evolve", str(a)]) == main(["evolve", str(b)]) == EXIT_OK
    for name in ("observables.csv", "final.bdfk", snapshot_name(4)):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_resume_reproduces_uninterrupted_run(tmp_path):
    full = write_config(tmp_path, name="full.ini", outdir="full")
    assert main(["evolve", str(full)]) == EXIT_OK
    part = write_config(tmp_path, name="part.ini", outdir="part")
    assert main(["evolve", str(part)]) == EXIT_OK
    # throw away the second half and continue from the step-4 snapshot
    csv = tmp_path / "part" / "observables.csv"
    lines = csv.read_text().splitlines()
    csv.write_text("\n".join(lines[:4]) + "\n")
    snap = tmp_path / "part" / snapshot_name(4)
    assert main(["resume", str(snap), str(part)]) == EXIT_OK
    assert csv.read_bytes() == (tmp_path / "full" / "observables.csv").read_bytes()


def test_snapshot_initial_mode(tmp_path):
    cfg = write_config(tmp_path, outdir="first")
    assert main(["evolve", str(cfg)]) == EXIT_OK
    snap = tmp_path / "first" / "final.bdfk"
    text = CONFIG.format(mode="snapshot", extra="", outdir=tmp_path / "second")
    text = text.replace("n_steps = 8", "n_steps = 12").replace("N = 1", f"snapshot_path = {snap}")
    (tmp_path / "second.ini").write_text(text)
    assert main(["evolve", str(tmp_path / "second.ini")]) == EXIT_OK
    data = read_observables(tmp_path / "second" / "observables.csv")
    assert np.allclose(data[:, 0], [0.4, 0.5, 0.6])


def test_vacuum_mode(tmp_path):
    cfg = write_config(tmp_path, mode="vacuum")
    text = cfg.read_text().replace("Z = 1.0", "Z = 0.0")
    cfg.write_text(text)
    assert main(["evolve", str(cfg)]) == EXIT_OK
    data = read_observables(tmp_path / "out" / "observables.csv")
    assert np.abs(data[:, 1:]).max() <= 1e-12


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[lattice]\nh = 1\ncutoff = 1.5\n[source]\nalpha = -1\n")
    assert main(["evolve", str(cfg)]) == EXIT_CONFIG
    assert "source.α" in capsys.readouterr().err


def test_missing_evolve_section_is_config_error(tmp_path):
    cfg = tmp_path / "noevolve.ini"
    cfg.write_text(f"[lattice]\nh = 1\ncutoff = 1.5\n[output]\ndirectory = {tmp_path / 'o'}\n")
    assert main(["evolve", str(cfg)]) == EXIT_CONFIG


def test_io_error_exit_code(tmp_path):
    assert main(["evolve", str(tmp_path / "missing.ini")]) == EXIT_IO
    cfg = write_config(tmp_path)
    assert main(["resume", str(tmp_path / "missing.bdfk"), str(cfg)]) == EXIT_IO


def test_numerical_abort_exit_code(tmp_path):
    cfg = write_config(tmp_path, extra="idempotence_hard_limit = 1e-300")
    assert main(["evolve", str(cfg)]) == EXIT_NUMERICAL


def test_scf_subcommand(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["scf", str(cfg)]) == EXIT_OK
    report = json.loads((tmp_path / "out" / "scf_report.json").read_text())
    assert report["converged"] and abs(report["charge"]) < 1e-8
    assert (tmp_path / "out" / "scf_state.bdfk").exists()


def test_scf_charge_target_subcommand(tmp_path):
    cfg = write_config(tmp_path)
    cfg.write_text(cfg.read_text().replace("Z = 1.0\nalpha = 0.05", "Z = 10.0\nalpha = 0.5") + "\n[scf]\nN = 1\n")
    assert main(["scf", str(cfg)]) == EXIT_OK
    report = json.loads((tmp_path / "out" / "scf_report.json").read_text())
    assert report["gamma_rank"] == 1 and round(report["charge"]) == 1


def test_selftest_subcommand(capsys):
    assert main(["selftest"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "pineq_max_ratio" in out and "FAIL" not in out


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "bdfdyn", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("evolve", "scf", "selftest", "resume"):
        assert sub in proc.stdout

import json
import os
from pathlib import Path

import pytest
from click.testing import CliRunner

from cuspscatter.cli import main
from cuspscatter.io import LOCK_NAME, RunConfig, read_csv

SMALL = ["--surface", "pentagon1", "--tmax", "6", "--steps", "3", "--re", "2.5", "3.5",
         "--im", "10", "30", "--rect", "2.5", "3.5", "10", "30"]
STAGES = ["surface", "enum", "coeffs", "series", "eval", "zeros", "certify"]


def _run(args):
    result = CliRunner().invoke(main, args, catch_exceptions=False)
    return result.exit_code, result.output


def test_enum_writes_spectrum(tmp_path):
    code, out = _run(["enum", "--surface", "pentagon2", "--tmax", "4.5", "--out", str(tmp_path)])
    assert code == 0 and out.strip().endswith("spectrum.csv")
    text = (tmp_path / "spectrum.csv").read_text()
    assert text.startswith("# config_hash=")
    _, header, rows = read_csv(tmp_path / "spectrum.csv")
    assert header == ["i", "j", "T", "multiplicity", "a0", "a1", "source", "homotopy_id"]
    first = {(r[0], r[1]): float(r[2]) for r in reversed(rows)}
    assert first[("1", "2")] == pytest.approx(3.2847991917915365, abs=1e-12)


def test_pipeline_is_deterministic(tmp_path):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        for stage in STAGES:
            code, out = _run([stage, *SMALL, "--out", str(d)])
            assert code == 0, out
    names = sorted(p.name for p in dirs[0].iterdir() if p.is_file())
    assert {"surface.json", "spectrum.csv", "coefficients.csv", "model.json", "grid.csv",
            "zeros.csv", "certificate.json"} <= set(names)
    for name in names:
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes(), name
    # cached intermediates give the same bytes as a fresh computation
    code, _ = _run(["eval", *SMALL, "--out", str(dirs[0])])
    assert code == 0
    assert (dirs[0] / "grid.csv").read_bytes() == (dirs[1] / "grid.csv").read_bytes()


def test_config_file_and_flags_agree(tmp_path):
    cfg = RunConfig(surface="pentagon1", t_max=5.0, out_dir=str(tmp_path / "x"))
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert _run(["enum", "--config", str(path)])[0] == 0
    assert _run(["enum", "--surface", "pentagon1", "--tmax", "5", "--out", str(tmp_path / "y")])[0] == 0
    assert (tmp_path / "x" / "spectrum.csv").read_bytes() == (tmp_path / "y" / "spectrum.csv").read_bytes()


def test_certificate_contents(tmp_path):
    code, _ = _run(["certify", *SMALL, "--out", str(tmp_path)])
    assert code == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["half_plane"] is True
    assert set(cert["ledger"]) >= {"tail_vs_leading", "lower_order_vs_leading", "remainder_vs_leading"}
    assert len(cert["config_hash"]) == 16


def test_zero_steps_is_a_validation_failure(tmp_path):
    code, out = _run(["eval", "--steps", "0", "--out", str(tmp_path)])
    assert code == 5 and "steps" in out


def test_grid_left_of_abscissa_is_rejected(tmp_path):
    code, _ = _run(["eval", "--surface", "pentagon1", "--tmax", "6", "--re", "0.2", "0.5",
                    "--out", str(tmp_path)])
    assert code == 5


def test_budget_exhaustion_exit_code(tmp_path):
    code, out = _run(["enum", "--surface", "pentagon2", "--budget", "10", "--out", str(tmp_path)])
    assert code == 3 and "budget" in out


def test_locked_output_directory(tmp_path):
    (tmp_path / LOCK_NAME).write_text(str(os.getpid()))
    code, _ = _run(["enum", "--surface", "pentagon1", "--tmax", "2", "--out", str(tmp_path)])
    assert code == 6
    (tmp_path / LOCK_NAME).unlink()


def test_stale_lock_is_reclaimed(tmp_path):
    (tmp_path / LOCK_NAME).write_text("999999999")
    code, _ = _run(["enum", "--surface", "pentagon1", "--tmax", "2", "--out", str(tmp_path)])
    assert code == 0
    assert not (tmp_path / LOCK_NAME).exists()


def test_unknown_config_key(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"surface": "pentagon1", "colour": 3}))
    code, out = _run(["enum", "--config", str(path), "--out", str(tmp_path)])
    assert code == 5 and "colour" in out


def test_variation_report(tmp_path):
    code, out = _run(["variation", "--surface", "pentagon2", "--tmax", "4.5",
                      "--vary-bump", "0.137", "0.3", "0.05", "5e-5", "--vary-pair", "1", "2",
                      "--vary-count", "2", "--out", str(tmp_path)])
    assert code == 0, out
    _, header, rows = read_csv(tmp_path / "variation.csv")
    assert header == ["i", "j", "homotopy_id", "T", "dT", "dlog_a0"]
    assert len(rows) == 2
    assert any(float(r[4]) != 0.0 for r in rows)


def test_surface_json_round_trip(tmp_path):
    assert _run(["surface", "--surface", "pentagon2", "--ell", "0.4", "--out", str(tmp_path / "s")])[0] == 0
    saved = tmp_path / "s" / "surface.json"
    assert _run(["enum", "--surface-json", str(saved), "--tmax", "4", "--out", str(tmp_path / "a")])[0] == 0
    assert _run(["enum", "--surface", "pentagon2", "--ell", "0.4", "--tmax", "4",
                 "--out", str(tmp_path / "b")])[0] == 0
    rows_a = read_csv(tmp_path / "a" / "spectrum.csv")[2]
    rows_b = read_csv(tmp_path / "b" / "spectrum.csv")[2]
    assert rows_a == rows_b

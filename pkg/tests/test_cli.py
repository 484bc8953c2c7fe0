import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from fracflow.cli import main, manifest_hash
from fracflow.grid import read_snapshot

SMALL = ["--set", "grid.n=64", "--set", "grid.h=0.0625", "--set", "flow.T=0.02"]


def run(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


# eval ---------------------------------------------------------------------------------


def test_eval_zero_profile_all_zero(tmp_path):
    code, out = run(tmp_path, "eval", "--profile", "zero", *SMALL)
    assert code == 0
    rows = read_csv(out / "curvature.csv")
    assert rows[0] == ["x", "u", "H"] and len(rows) == 65
    assert all(float(r[2]) == 0.0 for r in rows[1:])
    side = json.loads((out / "curvature.meta.json").read_text())
    manifest = json.loads((out / "manifest.json").read_text())
    assert side["manifest_hash"] == manifest["manifest_hash"] == manifest_hash(manifest["manifest"])


def test_eval_weighted_2d(tmp_path):
    code, out = run(
        tmp_path, "eval", "--profile", "gaussian-bump",
        "--set", "grid.d=2", "--set", "grid.n=33", "--set", "grid.h=0.125", "--set", "eval.weighted=true",
    )
    assert code == 0
    rows = read_csv(out / "curvature.csv")
    assert rows[0] == ["x", "y", "u", "H", "QH"] and len(rows) == 33 * 33 + 1
    s = json.loads((out / "summary.json").read_text())
    assert s["sup_QH"] >= s["sup_H"] > 0


def test_config_file_sections_and_precedence(tmp_path):
    cfg = tmp_path / "m.ini"
    cfg.write_text("profile = gaussian-bump\n[grid]\nn = 65\nh = 0.0625\n[profile]\namplitude = 0.1\n")
    code, out = run(tmp_path, "eval", "--config", str(cfg), "--set", "profile.amplitude=0.2")
    assert code == 0
    m = json.loads((out / "manifest.json").read_text())["manifest"]
    assert m["grid.n"] == "65" and m["profile.amplitude"] == "0.2"
    rows = read_csv(out / "curvature.csv")
    assert max(float(r[1]) for r in rows[1:]) == pytest.approx(0.2)
    # --profile replaces the profile and drops its parameters
    code, out2 = run(tmp_path, "eval", "--config", str(cfg), "--profile", "zero", name="o2")
    assert code == 0 and "profile.amplitude" not in json.loads((out2 / "manifest.json").read_text())["manifest"]


# flow and compare --------------------------------------------------------------------------


def test_flow_outputs_and_snapshots(tmp_path):
    code, out = run(tmp_path, "flow", "--profile", "gaussian-bump", *SMALL, "--set", "flow.snapshot_times=0,0.01")
    assert code == 0
    rows = read_csv(out / "trace.csv")
    assert rows[0][:4] == ["t", "sup_norm", "lip_norm", "sup_dtu"]
    assert float(rows[-1][0]) == pytest.approx(0.02)
    snaps = sorted(p.name for p in (out / "snapshots").glob("*.json"))
    assert snaps == ["final.json", "snap_t0p000000.json", "snap_t0p010000.json"]
    fin = read_snapshot(out / "snapshots" / "final")
    assert fin.shape == (64,) and fin.extension == "compact-support"
    s = json.loads((out / "summary.json").read_text())
    assert s["monitors"]["sup_norm"]["worst_excess"] <= 1e-12 and "manifest_hash" in s


def test_flow_from_snapshot(tmp_path):
    run(tmp_path, "flow", "--profile", "gaussian-bump", *SMALL, name="a")
    snap = tmp_path / "a" / "snapshots" / "final"
    code, out = run(tmp_path, "eval", "--profile", f"snapshot:{snap}", name="b")
    assert code == 0 and len(read_csv(out / "curvature.csv")) == 65


def test_flow_byte_identical_across_threads(tmp_path):
    args = ["flow", "--profile", "sum-of-bumps", *SMALL, "--set", "grid.n=97"]
    code1, a = run(tmp_path, *args, "--threads", "1", name="t1")
    code2, b = run(tmp_path, *args, "--threads", "4", name="t4")
    code3, c = run(tmp_path, *args, "--threads", "4", name="t4b")
    assert code1 == code2 == code3 == 0
    ta = (a / "trace.csv").read_bytes()
    assert ta == (b / "trace.csv").read_bytes() == (c / "trace.csv").read_bytes()
    assert (a / "snapshots" / "final.bin").read_bytes() == (b / "snapshots" / "final.bin").read_bytes()


def test_compare_command(tmp_path):
    code, out = run(tmp_path, "compare", "--profile", "cosine", "--set", "grid.n=32", "--set", "grid.h=0.2", "--set", "flow.T=0.005", "--set", "profile.amplitude=0.1")
    assert code == 0
    s = json.loads((out / "summary.json").read_text())
    assert 0 <= s["max_diff"] < 1e-3 and s["samples"] >= 2


# verify and oracle ------------------------------------------------------------------------------


def test_verify_suite_passes(tmp_path, capsys):
    code, out = run(tmp_path, "verify", "--profile", "gaussian-bump", *SMALL, "--set", "verify.suite=universal,sign,comparison", "--set", "verify.upper.amplitude=0.3")
    assert code == 0
    lines = (out / "report.jsonl").read_text().splitlines()
    assert [json.loads(l)["test"] for l in lines] == ["universal", "sign_preservation", "comparison"]
    assert capsys.readouterr().out.count("PASS") == 3


def test_verify_negative_control_fails(tmp_path, capsys):
    code, _ = run(tmp_path, "verify", "--profile", "gaussian-bump", *SMALL, "--set", "verify.suite=negative-control")
    assert code == 1 and "FAIL negative_control_universal" in capsys.readouterr().out


def test_verify_swapped_comparison_fails(tmp_path):
    code, _ = run(tmp_path, "verify", "--profile", "gaussian-bump", *SMALL, "--set", "verify.suite=comparison", "--set", "verify.upper.amplitude=0.05")
    assert code == 1


def test_oracle_command(tmp_path):
    code, out = run(tmp_path, "oracle", "--profile", "gaussian-bump", "--set", "grid.n=129", "--set", "grid.h=0.03125", "--set", "oracle.alphas=0.5", "--set", "oracle.points=0.0")
    assert code == 0
    lam = read_csv(out / "lambda.csv")
    a, l1, l2, lc = map(float, lam[1])
    assert l1 == pytest.approx(lc, rel=1e-9) and l2 == pytest.approx(lc, rel=1e-9)
    cross = read_csv(out / "cross.csv")
    assert float(cross[1][-2]) < 1e-3 and float(cross[1][-1]) < 1e-3


# exit codes -----------------------------------------------------------------------------------------------


@pytest.mark.parametrize(
    "args",
    [
        ["oracle", "--set", "oracle.alphas="],
        ["eval", "--profile", "nosuch"],
        ["eval", "--set", "order.alpha=1.5"],
        ["eval", "--set", "quad.bogus=1"],
        ["flow", "--set", "flow.warp=9"],
        ["eval", "--set", "novalue"],
        ["eval", "--threads", "0"],
        ["verify", "--set", "verify.suite=vibes"],
        ["eval", "--profile", "snapshot:/nonexistent/x"],
        ["nosuchcommand"],
    ],
)
def test_config_errors_exit_2(tmp_path, args):
    assert main([*args, "--out", str(tmp_path / "o")]) == 2


def test_missing_config_file_exit_2(tmp_path):
    assert main(["eval", "--config", str(tmp_path / "none.ini"), "--out", str(tmp_path / "o")]) == 2


def test_numerical_abort_exit_3(tmp_path):
    code, out = run(
        tmp_path, "flow", "--profile", "random", "--set", "grid.n=32", "--set", "grid.h=0.19634954084936207",
        "--set", "profile.amplitude=1", "--set", "profile.modes=3", "--set", "flow.scheme=explicit",
        "--set", "flow.dt=5", "--set", "flow.T=100",
    )
    assert code == 3
    assert (out / "trace.csv").exists() and json.loads((out / "trace.meta.json").read_text())["aborted"]


def test_rough_data_exit_3(tmp_path):
    code, _ = run(tmp_path, "eval", "--profile", "rough-cusp", "--set", "profile.beta=0.2", "--set", "profile.mollify=0.01", "--set", "grid.n=257", "--set", "grid.h=0.015625")
    assert code == 3


def test_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("FRACFLOW_THREADS", "x")
    assert main(["eval", *SMALL, "--out", str(tmp_path / "o")]) == 2
    monkeypatch.setenv("FRACFLOW_THREADS", "2")
    assert main(["eval", *SMALL, "--out", str(tmp_path / "o")]) == 0


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "fracflow.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()


def test_set_overrides_profile_parameters(tmp_path):
    code, out = run(tmp_path, "eval", "--profile", "gaussian-bump", *SMALL, "--set", "profile.amplitude=0.1")
    assert code == 0
    assert json.loads((out / "manifest.json").read_text())["manifest"]["profile.amplitude"] == "0.1"

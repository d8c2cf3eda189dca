import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from tatmem import formats
from tatmem.cli import COMMANDS, main

ROOT = Path(__file__).resolve().parents[1]
SMALL = """[geometry]
nx = 81
radius = 0.7
[medium]
c = 1 + 0.2 * exp(-r**2 / 0.1)
a = 1.0
q = 1.0
alpha_decay = 2.0
[run]
T = 2.52
[reconstruct]
m_max = 6
n_samples = 2
[phantom]
features = 0.1 0.0 0.3 1.0; -0.25 0.2 0.2 0.5
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return p


def _run(*argv):
    return main([str(a) for a in argv])


def test_no_arguments_prints_usage(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err
    proc = subprocess.run([sys.executable, "-m", "tatmem"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr


def test_every_command_requires_a_config():
    for cmd in COMMANDS:
        with pytest.raises(SystemExit) as info:
            main([cmd])
        assert info.value.code == 2


def test_missing_config_is_an_error(tmp_path, capsys):
    assert _run("forward", "--config", tmp_path / "nope.ini", "--out", tmp_path / "o") == 1
    assert "error:" in capsys.readouterr().err


def test_check_kernel_cosine_fails(tmp_path):
    out = tmp_path / "k"
    assert _run("check-kernel", "--config", ROOT / "configs/cosine_kernel.ini", "--out", out) == 1
    body = json.loads((out / "kernel_check.json").read_text())
    assert body["ok"] is False and body["first_diff_ok"] is False
    assert len(body["config_sha256"]) == 64


def test_check_kernel_and_speed_pass_on_example(tmp_path):
    out = tmp_path / "c"
    assert _run("check-kernel", "--config", ROOT / "configs/example.ini", "--out", out) == 0
    assert _run("check-speed", "--config", ROOT / "configs/example.ini", "--out", out) == 0
    speed = json.loads((out / "speed_check.json").read_text())
    assert speed["ok"] and speed["T"] >= 1.5 * speed["damped_threshold"] - 1e-9
    assert {"manifest_check_kernel.json", "manifest_check_speed.json"} <= {p.name for p in out.iterdir()}


def test_roundtrip_on_example_config(tmp_path):
    out = tmp_path / "rt"
    assert _run("roundtrip", "--config", ROOT / "configs/example.ini", "--out", out) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["converged"] and report["final_relative_error"] < 0.02
    assert np.all(np.diff(report["residual_norms"][2:]) < 0)
    manifest = json.loads((out / "manifest_roundtrip.json").read_text())
    for name, digest in manifest["files"].items():
        assert formats.file_sha256(out / name) == digest
    assert {"fhat.mtat", "fhat.pgm", "trace.mtrc", "phantom.mtat", "config.ini"} <= set(manifest["files"])
    assert not [p for p in out.iterdir() if p.name.startswith(".staging")]


def test_forward_then_reconstruct(tmp_path, small_cfg):
    out = tmp_path / "fr"
    assert _run("forward", "--config", small_cfg, "--out", out, "--snapshots", 50) == 0
    assert formats.read_trace(out / "trace.mtrc").n_boundary == 256
    assert (out / "snapshot_000050.mtat").exists()
    cols = formats.read_energy_csv(out / "energy.csv")
    assert cols["E_box"][-1] < cols["E_box"][0]
    assert _run("reconstruct", "--config", small_cfg, "--out", out) == 0
    fhat = formats.read_field(out / "fhat.mtat")
    phantom = formats.read_field(out / "phantom.mtat")
    assert np.linalg.norm(fhat - phantom) / np.linalg.norm(phantom) < 0.1


def test_other_commands(tmp_path, small_cfg):
    out = tmp_path / "o"
    assert _run("phantom", "--config", small_cfg, "--out", out) == 0
    assert formats.read_pgm(out / "phantom.pgm").shape == formats.read_field(out / "phantom.mtat").shape
    assert _run("energy-report", "--config", small_cfg, "--out", out) == 0
    assert "E_box" in (out / "energy.csv").read_text().splitlines()[0]
    assert _run("contraction", "--config", small_cfg, "--out", out, "--threads", 2) == 0
    body = json.loads((out / "contraction.json").read_text())
    assert len(body["ratios"]) == 2 and body["rho"] < 1


def test_failed_stage_leaves_no_partial_output(tmp_path, small_cfg, capsys):
    out = tmp_path / "empty"
    assert _run("reconstruct", "--config", small_cfg, "--out", out) == 1
    assert not out.exists() or list(out.iterdir()) == []
    diverging = tmp_path / "div.ini"
    diverging.write_text(SMALL.replace("a = 1.0", "a = 0").replace("q = 1.0", "q = 0")
                         .replace("m_max = 6", "m_max = 60\ntol_rel = 1e-14\nfilter_order = 0"))
    out2 = tmp_path / "div"
    assert _run("roundtrip", "--config", diverging, "--out", out2) == 1
    assert "diverging" in capsys.readouterr().err
    assert not out2.exists() or list(out2.iterdir()) == []


def test_seed_and_threads_flags(tmp_path, small_cfg, capsys):
    rnd = tmp_path / "rnd.ini"
    rnd.write_text(SMALL.replace("[phantom]\n", "[phantom]\nkind = random\n"))
    fields = []
    for seed in (1, 2):
        out = tmp_path / f"s{seed}"
        assert _run("phantom", "--config", rnd, "--out", out, "--seed", seed) == 0
        fields.append(formats.read_field(out / "phantom.mtat"))
    assert not np.array_equal(*fields)
    assert _run("phantom", "--config", rnd, "--out", tmp_path / "bad", "--seed", -1) == 1
    assert _run("phantom", "--config", rnd, "--out", tmp_path / "bad", "--threads", 0) == 1
    assert "error:" in capsys.readouterr().err


def test_outputs_are_bit_identical_across_runs(tmp_path, small_cfg):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert _run("roundtrip", "--config", small_cfg, "--out", out) == 0
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == sorted(p.name for p in outs[1].iterdir())
    for name in names:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name

import csv

import pytest

from growafem.cli import main

SMOKE = """\
[domain]
map = dilation
[mesh]
n = 4
[time]
tau = 0.01
T = 0.05
[output]
directory = out
snapshot_stride = 2
formats = csv, vtk
"""


def test_validate_ok(tmp_path, capsys):
    cfg = tmp_path / "ok.cfg"
    cfg.write_text(SMOKE)
    assert main(["validate", str(cfg)]) == 0
    assert "ok (5 steps" in capsys.readouterr().out
    assert sorted(p.name for p in tmp_path.iterdir()) == ["ok.cfg"]


@pytest.mark.parametrize("text", ["[adapt]\ntheta = 1.5\n", "[time]\nT = 2\n[domain]\nmap = dilation\n",
                                  "[time\n"])
def test_validate_broken_exits_2_without_files(tmp_path, capsys, text):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    assert main(["validate", str(cfg)]) == 2
    assert "error" in capsys.readouterr().err
    assert sorted(p.name for p in tmp_path.iterdir()) == ["bad.cfg"]


def test_missing_file_is_an_error(tmp_path):
    assert main(["validate", str(tmp_path / "nope.cfg")]) != 0


def test_run_writes_outputs(tmp_path):
    cfg = tmp_path / "smoke.cfg"
    cfg.write_text(SMOKE)
    assert main(["run", str(cfg)]) == 0
    out = tmp_path / "out"
    with open(out / "diagnostics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5
    assert float(rows[-1]["t"]) == pytest.approx(0.05)
    assert all(int(r["dofs"]) == 25 for r in rows)
    # initial state plus every second step
    assert sorted(p.name for p in out.glob("*.vtk")) == [f"snapshot_{k:05d}.vtk" for k in range(3)]


def test_run_overrides(tmp_path):
    cfg = tmp_path / "smoke.cfg"
    cfg.write_text(SMOKE)
    assert main(["run", str(cfg), "--T", "0.02", "--output", str(tmp_path / "alt")]) == 0
    text = (tmp_path / "alt" / "diagnostics.csv").read_text()
    assert len(text.splitlines()) == 3


def test_bench_eoc(tmp_path):
    cfg = tmp_path / "b.cfg"
    cfg.write_text("[domain]\nmap = dilation\n[bench]\nT = 0.05\n[output]\ndirectory = eoc\n")
    assert main(["bench-eoc", str(cfg), "--levels", "4,8"]) == 0
    lines = (tmp_path / "eoc" / "eoc.csv").read_text().splitlines()
    assert lines[0].startswith("h,eta,eoc_eta") and len(lines) == 3


def test_demo_seed_determinism(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    for name in ("a", "b"):
        assert main(["demo", "fig2", "--T", "0.03", "--seed", "7", "--output", name]) == 0
    a = (tmp_path / "a" / "diagnostics.csv").read_bytes()
    assert a == (tmp_path / "b" / "diagnostics.csv").read_bytes()
    assert main(["demo", "fig2", "--T", "0.03", "--seed", "8", "--output", "c"]) == 0
    assert a != (tmp_path / "c" / "diagnostics.csv").read_bytes()

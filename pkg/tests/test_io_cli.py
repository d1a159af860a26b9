from __future__ import annotations

import struct

import numpy as np
import pytest

from roughkin import io
from roughkin.cli import main
from roughkin.rough_path import TimeGrid, sample_brownian_lift


def test_rough_path_dump_round_trip(tmp_path):
    rp = sample_brownian_lift(2, TimeGrid(0, 1, 16), seed=3)
    p = tmp_path / "z.rkrp"
    io.write_rough_path(p, rp)
    raw = p.read_bytes()
    assert raw[:5] == b"RKRP1"
    assert struct.unpack_from("<QQd", raw, 5) == (2, 16, 2.5)
    back = io.read_rough_path(p)
    assert np.array_equal(back.level1, rp.level1)
    assert np.array_equal(back.level2, rp.level2)
    assert back.p == rp.p


def test_rough_path_dump_errors(tmp_path):
    p = tmp_path / "bad.rkrp"
    p.write_bytes(b"XXXXX" + bytes(24))
    with pytest.raises(io.DumpFormatError):
        io.read_rough_path(p)
    rp = sample_brownian_lift(1, TimeGrid(0, 1, 4), seed=0)
    io.write_rough_path(p, rp)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(io.DumpFormatError):
        io.read_rough_path(p)
    p.write_bytes(b"RK")
    with pytest.raises(io.DumpFormatError):
        io.read_rough_path(p)


def test_kinetic_dump_round_trip(tmp_path):
    F = np.random.default_rng(0).uniform(0, 1, (2, 3, 4))
    p = tmp_path / "f.rkks"
    io.write_kinetic(p, F)
    assert np.array_equal(io.read_kinetic(p), F)
    p.write_bytes(b"NOPE1" + p.read_bytes()[5:])
    with pytest.raises(io.DumpFormatError):
        io.read_kinetic(p)


def _path_csv(tmp_path, n=64):
    t = np.linspace(0, 1, n + 1)
    p = tmp_path / "path.csv"
    io.write_csv(p, ("t", "z"), zip(t, t + 0.1 * np.sin(3 * t)))
    return p


def test_cli_lift_and_flow(tmp_path, capsys):
    src = _path_csv(tmp_path)
    dump = tmp_path / "z.rkrp"
    assert main(["lift", "--input", str(src), "--output", str(dump)]) == 0
    assert "PASS" in capsys.readouterr().out
    assert io.read_rough_path(dump).n_steps == 16
    out = tmp_path / "flow.csv"
    rc = main(["flow", "--path", str(dump), "--output", str(out), "--set", "n_x=8", "--set", "n_xi=8"])
    assert rc == 0
    rows = np.loadtxt(out, delimiter=",", skiprows=1)
    assert rows.shape == (64, 5)
    assert np.allclose(rows[:, 3], rows[:, 1])  # Burgers keeps xi
    assert main(["flow", "--inverse", "--path", str(dump), "--output", str(out),
                 "--set", "n_x=8", "--set", "n_xi=8"]) == 0


def test_cli_lift_bad_resolution(tmp_path):
    src = _path_csv(tmp_path, 63)
    assert main(["lift", "--input", str(src), "--output", str(tmp_path / "z")]) == 2


def test_cli_flow_dimension_mismatch(tmp_path):
    dump = tmp_path / "z.rkrp"
    io.write_rough_path(dump, sample_brownian_lift(3, TimeGrid(0, 1, 8), seed=0))
    assert main(["flow", "--path", str(dump), "--output", str(tmp_path / "f.csv")]) == 2


def test_cli_solve(tmp_path, capsys):
    scn = tmp_path / "s.txt"
    scn.write_text("n_x = 16\nn_xi = 16\ndt = 1/32\nt_end = 0.25\neps = 0.05\nL = 1.5\n")
    out = tmp_path / "run"
    assert main(["solve", "--scenario", str(scn), "--out", str(out)]) == 0
    assert (out / "diagnostics.csv").exists() and (out / "final.rkks").exists()
    assert io.read_kinetic(out / "final.rkks").shape == (16, 16)
    assert "solve PASS" in capsys.readouterr().out


def test_cli_ensemble(tmp_path):
    out = tmp_path / "e.csv"
    rc = main(["ensemble", "--output", str(out), "--set", "n_x=16", "--set", "n_xi=16",
               "--set", "dt=1/32", "--set", "eps=0.05", "--set", "driver=brownian",
               "--set", "initial=sine:mean=0.5,amp=0.25", "--set", "initial2=constant:value=0.5",
               "--set", "n_paths=3"])
    assert rc == 0
    assert np.loadtxt(out, delimiter=",", skiprows=1).shape == (9, 5)


def test_cli_validate_and_study(tmp_path, capsys):
    assert main(["validate", "--set", "n_x=16", "--set", "n_xi=16", "--set", "dt=1/32"]) == 0
    assert "validate PASS" in capsys.readouterr().out
    out = tmp_path / "st.csv"
    assert main(["study", "--output", str(out), "--set", "ladder=16,32", "--set", "L=1.25"]) == 0
    assert np.loadtxt(out, delimiter=",", skiprows=1).shape == (2, 7)


def test_cli_unknown_key():
    assert main(["solve", "--set", "nonsense=1"]) == 2

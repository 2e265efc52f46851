import csv
import struct

import numpy as np
import pytest

from mrtopopt.cli import build_parser, main, resolve_config
from mrtopopt.exceptions import ConfigurationError
from mrtopopt.io import (
    CSV_COLUMNS,
    parse_config,
    read_density_bin,
    read_density_vtk,
    write_density_bin,
    write_density_vtk,
    write_history_csv,
)


def test_vtk_round_trip_is_bit_exact(tmp_path):
    rho = np.random.default_rng(0).uniform(0, 1, 4 * 3 * 2)
    rho[:3] = [0.0, 1.0, 1e-300]
    write_density_vtk(rho, (4, 3, 2), tmp_path / "d.vtk", spacing=0.5)
    back, dims, h = read_density_vtk(tmp_path / "d.vtk")
    assert dims == (4, 3, 2) and h == 0.5
    assert np.array_equal(back, rho)
    text = (tmp_path / "d.vtk").read_text().splitlines()
    assert text[3] == "DATASET STRUCTURED_POINTS"
    assert "DIMENSIONS 5 4 3" in text and "CELL_DATA 24" in text


def test_vtk_shape_mismatch(tmp_path):
    with pytest.raises(ValueError):
        write_density_vtk(np.zeros(5), (2, 2, 1), tmp_path / "x.vtk")


def test_bin_layout(tmp_path):
    rho = np.arange(6, dtype=float) / 7
    write_density_bin(rho, (3, 2, 1), tmp_path / "d.bin")
    raw = (tmp_path / "d.bin").read_bytes()
    assert len(raw) == 24 + 6 * 8
    assert struct.unpack("<3q", raw[:24]) == (3, 2, 1)
    back, shape = read_density_bin(tmp_path / "d.bin")
    assert shape == (3, 2, 1) and np.array_equal(back, rho)
    (tmp_path / "t.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        read_density_bin(tmp_path / "t.bin")


def test_history_csv(tmp_path):
    rows = [dict(stage="slp", iter=1, accepted=1, F=1.5, volume=0.2, gP_inf=0.1, delta=0.1, theta=1.0,
                 pcg_iters=7, time_ms=3.25)]
    write_history_csv(rows, tmp_path / "run.csv")
    with open(tmp_path / "run.csv") as fh:
        data = list(csv.reader(fh))
    assert tuple(data[0]) == CSV_COLUMNS
    assert data[1] == ["slp", "1", "1", "1.5", "0.2", "0.1", "0.1", "1.0", "7", "3.25"]


def test_parse_config():
    cfg = parse_config("# comment\nproblem = mbb\nnel = 12 4 4  # trailing\nmax-outer=5\n\n")
    assert cfg == {"problem": "mbb", "nel": "12 4 4", "max_outer": "5"}
    with pytest.raises(ConfigurationError):
        parse_config("no equals sign")
    with pytest.raises(ConfigurationError):
        parse_config("= 3")


def test_resolve_config_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("problem = mbb\nnel = 12, 4, 4\nnmr = 2\ndmr = 2\nthreshold = no\nout = here\n")
    args = build_parser().parse_args(["--config", str(path), "--nel", "8", "4", "4"])
    params, out = resolve_config(args)
    assert params["nel"] == (8, 4, 4) and params["problem"] == "mbb"
    assert params["mode"] == "mr" and params["threshold"] is False
    assert out == "here"
    path.write_text("colour = red\n")
    with pytest.raises(ConfigurationError):
        resolve_config(build_parser().parse_args(["--config", str(path)]))


def test_cli_configuration_errors(tmp_path, capsys):
    assert main(["--nel", "0", "2", "2", "--out", str(tmp_path)]) == 2
    assert main(["--nmr", "2", "--dmr", "3", "--out", str(tmp_path)]) == 2
    assert main(["--config", str(tmp_path / "missing.cfg")]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_cli_iteration_cap_writes_outputs(tmp_path, capsys):
    out = tmp_path / "o"
    code = main(["--problem", "cb", "--nel", "4", "2", "2", "--max-outer", "2", "--no-threshold", "--out", str(out)])
    assert code == 4
    for name in ("density.vtk", "density_thresholded.vtk", "density.bin", "density_thresholded.bin", "run.csv", "summary.txt"):
        assert (out / name).exists()
    summary = (out / "summary.txt").read_text()
    assert "stop=max_outer" in summary and "status           4" in summary
    assert "problem          cb4x2x2" in capsys.readouterr().out
    rho, shape = read_density_bin(out / "density.bin")
    assert shape == (4, 2, 2) and rho.size == 16


def test_cli_default_output_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("TOPOPT_LOG", "ERROR")
    assert main(["--problem", "mbb", "--nel", "4", "2", "2", "--max-outer", "1", "--no-threshold"]) == 4
    assert (tmp_path / "mbb4x2x2" / "run.csv").exists()

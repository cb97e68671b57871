import numpy as np
import pytest

from helmhomog.cli import main
from helmhomog.microstructure import read_microstructure

from test_harness import TINY


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY, encoding="utf-8")
    return str(path)


def test_sample(tmp_path, config):
    out = tmp_path / "s"
    assert main(["sample", "--config", config, "--seed", "3", "--index", "2", "--out", str(out)]) == 0
    ms = read_microstructure(out / "microstructure.txt")
    assert ms.period == 5.0 and len(ms) > 0


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("scatter.k = -\n", encoding="utf-8")
    assert main(["sample", "--config", str(bad)]) == 2
    assert main(["sample", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert "config error" in capsys.readouterr().err


def test_homogenize(tmp_path, config):
    out = tmp_path / "h"
    assert main(["homogenize", "--config", config, "--out", str(out)]) == 0
    lines = (out / "homog.csv").read_text().splitlines()
    assert lines[0] == "seed,a11,a12,a21,a22,nhom" and len(lines) == 2


def test_solve_with_points(tmp_path, config):
    out = tmp_path / "u"
    pts = tmp_path / "pts.txt"
    pts.write_text("1.5 0.0\n0.0 -1.6\n", encoding="utf-8")
    assert main(["solve", "--config", config, "--out", str(out), "--points", str(pts)]) == 0
    field = np.loadtxt(out / "field.csv", delimiter=",", skiprows=1)
    assert field.shape[1] == 4 and np.all(np.abs(field[:, :2]) <= 2.0 + 1e-12)
    ext = np.loadtxt(out / "exterior.csv", delimiter=",", skiprows=1)
    assert ext.shape == (2, 4)
    # the boundary representation agrees with the nodal field at those points
    near = [field[np.argmin(np.hypot(field[:, 0] - x, field[:, 1] - y))] for x, y in ext[:, :2]]
    near = np.array(near)
    assert np.allclose(ext[:, 2] + 1j * ext[:, 3], near[:, 2] + 1j * near[:, 3], atol=0.05)
    assert main(["solve", "--config", config, "--out", str(out), "--homogenized"]) == 0


def test_sweep_and_report(tmp_path, config):
    out = tmp_path / "w"
    assert main(["sweep", "--config", config, "--out", str(out)]) == 0
    rates = (out / "rates.csv").read_bytes()
    timings = (out / "timings.csv").read_bytes()
    assert main(["report", "--config", config, "--out", str(out)]) == 0
    assert (out / "rates.csv").read_bytes() == rates
    assert (out / "timings.csv").read_bytes() == timings


def test_report_without_errors_file(tmp_path, config):
    assert main(["report", "--config", config, "--out", str(tmp_path / "none")]) == 1

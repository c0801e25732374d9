import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from eikopath import config as cf
from eikopath.cli import main
from eikopath.errors import ConfigError

EUCLID = """
[metric]
kind = euclidean

[task]
name = distance
x = 3, 4
n = 32
"""


def write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_parse_config_and_points():
    cfg = cf.parse_config(EUCLID)
    assert cfg.task == "distance" and cfg.seed == 0 and cfg.workers == 1
    assert_allclose(cf.parse_points(cfg.options["x"]), [[3.0, 4.0]])
    assert cf.parse_points("1 2; 3, 4").shape == (2, 2)
    with pytest.raises(ConfigError):
        cf.parse_points("1, 2; 3")


@pytest.mark.parametrize("text", [
    "not an ini file",
    "[task]\nname = distance\n",
    "[metric]\nkind = hyperbolic\n",
    "[metric]\nkind = euclidean\ncolour = red\n",
    "[metric]\nkind = euclidean\n[task]\nname = teleport\n",
    "[metric]\nkind = euclidean\n[run]\nseed = -1\n",
    "[metric]\nkind = euclidean\n[run]\nworkers = 0\n",
    "[metric]\nkind = constant\nmatrix = 1 2 2 1\n",
    "[metric]\nkind = spiral\ndim = 3\n",
    "[metric]\nkind = potential-induced\npotential = constant\nvalue = 0.5\n",
    "[metric]\nkind = radial\nbeta = abc\n",
    "[metric]\nkind = euclidean\nperturbation = wave\n",
])
def test_invalid_configs_raise_config_error(text):
    with pytest.raises(ConfigError):
        cf.parse_config(text)


@pytest.mark.parametrize("section, kind", [
    ({"kind": "euclidean", "dim": "3"}, "euclidean"),
    ({"kind": "constant", "matrix": "2 0 0 1"}, "analytic"),
    ({"kind": "radial", "beta": "0.5", "floor": "0.5"}, "analytic"),
    ({"kind": "potential-induced", "potential": "two-term", "n_nodes": "2000"}, "potential-induced"),
    ({"kind": "spiral", "eps": "0.02"}, "spiral"),
    ({"kind": "euclidean", "perturbation": "tail", "perturbation_eps": "0.01"}, "perturbed"),
])
def test_build_metric(section, kind):
    assert cf.build_metric(section).kind == kind


def test_criterion_names_are_tasks():
    cfg = cf.parse_config("[metric]\nkind = euclidean\n[task]\nname = hardy-bounds\n")
    assert cfg.task == "hardy-bounds"


def test_cli_distance_writes_report_and_grids(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["--config", write(tmp_path, EUCLID), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["passed"] and rep["seed"] == 0
    assert rep["results"]["solutions"][0]["S"] == pytest.approx(5.0, abs=1e-12)
    grid = np.loadtxt(out / "grids" / "distance.csv", delimiter=",", skiprows=1)
    assert grid[2] == pytest.approx(5.0)


def test_cli_is_deterministic(tmp_path):
    cfgp = write(tmp_path, EUCLID)
    for k in range(2):
        assert main(["--config", cfgp, "--out", str(tmp_path / f"o{k}"), "--seed", "7"]) == 0
    a = (tmp_path / "o0" / "report.json").read_bytes()
    b = (tmp_path / "o1" / "report.json").read_bytes()
    assert a == b


def test_cli_failed_check_exits_one(tmp_path, capsys):
    text = ("[metric]\nkind = radial\n[task]\nname = geodesic\nv = 1, 2\nstart = 1, 0\n"
            "conservation_tol = 1e-300\n")
    assert main(["--config", write(tmp_path, text), "--out", str(tmp_path / "o")]) == 1
    assert "check failed" in capsys.readouterr().err


def test_cli_usage_errors_exit_two(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "missing.ini")]) == 2
    assert main(["--config", write(tmp_path, "[metric]\nkind = nope\n")]) == 2
    assert main(["--task", "teleport", "--out", str(tmp_path / "o")]) == 2
    assert main(["--bogus"]) == 2


def test_cli_default_and_criterion_task(tmp_path, capsys):
    assert main(["--task", "hardy-bounds", "--out", str(tmp_path / "o")]) == 0
    assert "[PASS] 11 hardy-bounds" in capsys.readouterr().out
    assert main(["--out", str(tmp_path / "d")]) == 0


def test_cli_verify_induced(tmp_path):
    text = "[metric]\nkind = potential-induced\nmu = 1\nn_nodes = 2000\n[task]\nname = verify\n"
    assert main(["--config", write(tmp_path, text), "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["checks"] and all(c["passed"] for c in rep["checks"].values())

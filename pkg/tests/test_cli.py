import csv
import json

import pytest

from steinflow.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main


def _cfg(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def test_run(tmp_path, capsys):
    cfg = _cfg(tmp_path, "run.json", {"t_end": 5.0, "n_particles": 30, "n_records": 2, "reference_size": 2000})
    assert main(["run", "--config", cfg, "--output", str(tmp_path / "out")]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["t"] == 5.0 and out["sigma"] > 0
    with open(tmp_path / "out" / "metrics.csv") as fh:
        assert next(csv.reader(fh)) == ["t", "grad_evals", "pair_evals", "w1", "stein_fisher"]


def test_sweep(tmp_path, capsys):
    cfg = _cfg(tmp_path, "run.json", {"t_end": 2.0, "n_particles": 20, "n_records": 1, "reference_size": 1000})
    code = main(["sweep", "--config", cfg, "--axis", "seed", "--values", "0,1", "--output", str(tmp_path / "s")])
    assert code == EXIT_OK
    assert (tmp_path / "s" / "aggregate.csv").exists()


def test_pde(tmp_path, capsys):
    cfg = _cfg(tmp_path, "pde.json", {"t_end": 0.2, "dt": 0.01, "grid": {"n": 128}, "snapshot_every": 10, "record_every": 1})
    assert main(["pde", "--config", cfg, "--output", str(tmp_path / "p")]) == EXIT_OK
    with open(tmp_path / "p" / "series.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "kl", "stein_fisher", "ratio"] and len(rows) == 22
    assert len(list((tmp_path / "p" / "snapshots").iterdir())) == 3


def test_spectrum_hessian_geodesic(tmp_path, capsys):
    sp = _cfg(tmp_path, "sp.json", {"n_basis": [16], "grid": {"n": 128}})
    assert main(["spectrum", "--config", sp, "--output", str(tmp_path / "sp")]) == EXIT_OK
    h = _cfg(tmp_path, "h.json", {"grid": {"n": 256}, "psi": {"kind": "sine"}})
    capsys.readouterr()
    assert main(["hessian", "--config", h]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["rayleigh"] > 0
    g = _cfg(tmp_path, "g.json", {"grid": {"n": 128}, "horizon": 0.05, "dt": 0.01})
    assert main(["geodesic", "--config", g, "--output", str(tmp_path / "g")]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["mass_drift"] <= 1e-10


def test_sample_and_w1(tmp_path, capsys):
    a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    assert main(["sample", "--n", "50", "--seed", "1", "--output", a]) == EXIT_OK
    assert main(["sample", "--n", "50", "--seed", "2", "--output", b, "--target", "mixture_1d"]) == EXIT_OK
    capsys.readouterr()
    assert main(["w1", a, b, "--method", "auto"]) == EXIT_OK
    first = json.loads(capsys.readouterr().out)
    assert main(["w1", a, b, "--method", "assignment"]) == EXIT_OK
    second = json.loads(capsys.readouterr().out)
    assert first["w1"] == pytest.approx(second["w1"], abs=1e-12)


@pytest.mark.parametrize(
    "argv",
    [["run", "--config", "does-not-exist.json"], ["frobnicate"], ["sweep", "--config", "x.json"]],
)
def test_config_errors(argv):
    assert main(argv) == EXIT_CONFIG


def test_invalid_values(tmp_path):
    assert main(["run", "--config", _cfg(tmp_path, "bad.json", {"t_end": -1})]) == EXIT_CONFIG
    bad_json = tmp_path / "broken.json"
    bad_json.write_text("{not json")
    assert main(["run", "--config", str(bad_json)]) == EXIT_CONFIG
    med = _cfg(tmp_path, "med.json", {"kernel": {"kind": "p_exponential", "sigma": "median"}})
    assert main(["spectrum", "--config", med]) == EXIT_CONFIG


def test_numerical_failure(tmp_path):
    cfg = _cfg(
        tmp_path,
        "u.json",
        {
            "t_end": 1.0,
            "dt": 50.0,
            "kernel": {"kind": "laplace", "sigma": 0.05},
            "rho0": {"kind": "gaussian", "mean": [1.0], "cov": [[0.09]]},
        },
    )
    assert main(["pde", "--config", cfg, "--output", str(tmp_path / "u")]) == EXIT_NUMERICAL


def test_version(capsys):
    assert main(["--version"]) == EXIT_OK

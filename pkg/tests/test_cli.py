import io
import json

import numpy as np

from hdclt import cli
from hdclt.datagen import read_dataset
from hdclt.errors import NotPositiveSemidefiniteError


def run_cli(argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli.run(argv, stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def write_config(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def rho_config(tmp_path, **overrides):
    cfg = {
        "seed": 12345,
        "out": str(tmp_path / "rho.json"),
        "design": {"kind": "rademacher", "p": 10},
        "n": 50,
        "family": {"kind": "rectangles", "K": 10},
        "R": 5000,
    }
    cfg.update(overrides)
    return cfg


def test_estimate_rho_happy_path(tmp_path):
    path = write_config(tmp_path, "c.json", rho_config(tmp_path))
    code, _, err = run_cli(["estimate-rho", "--config", path])
    assert code == 0, err
    payload = json.loads((tmp_path / "rho.json").read_text())
    assert payload["command"] == "estimate-rho"
    assert payload["config"]["seed"] == 12345  # config echo
    assert 0.0 <= payload["estimate"]["sup_diff"] <= 1.0
    assert len(payload["estimate"]["per_set"]) == 10


def test_alpha_outside_domain_exits_2(tmp_path):
    path = write_config(tmp_path, "c.json", rho_config(tmp_path))
    code, _, err = run_cli(["estimate-rho", "--config", path, "--set", "params.alpha=0.5"])
    assert code == 2
    assert "alpha" in err


def test_unknown_command_exits_2(tmp_path):
    code, _, err = run_cli(["frobnicate", "--config", "x.json"])
    assert code == 2
    assert "Usage" in err or "usage" in err.lower() or "Commands" in err


def test_missing_seed_exits_2(tmp_path):
    cfg = rho_config(tmp_path)
    del cfg["seed"]
    path = write_config(tmp_path, "c.json", cfg)
    code, _, err = run_cli(["estimate-rho", "--config", path])
    assert code == 2
    assert "seed" in err


def test_malformed_config_exits_2(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    code, _, err = run_cli(["estimate-rho", "--config", str(path)])
    assert code == 2


def test_reruns_and_worker_counts_byte_identical(tmp_path):
    path = write_config(tmp_path, "c.json", rho_config(tmp_path))
    outputs = []
    for args in ([], ["--workers", "1"], ["--workers", "2"], ["--workers", "8"], []):
        code, _, err = run_cli(["estimate-rho", "--config", path] + args)
        assert code == 0, err
        outputs.append((tmp_path / "rho.json").read_bytes())
    assert all(o == outputs[0] for o in outputs)


def test_estimate_rho_csv_format(tmp_path):
    cfg = rho_config(tmp_path, format="csv", out=str(tmp_path / "rho.csv"))
    path = write_config(tmp_path, "c.json", cfg)
    code, _, err = run_cli(["estimate-rho", "--config", path])
    assert code == 0, err
    lines = (tmp_path / "rho.csv").read_text().splitlines()
    assert lines[0] == "label,p_x,p_y,diff,se_diff"
    assert len(lines) == 11


def test_interpolation_grid_via_v_grid(tmp_path):
    cfg = rho_config(tmp_path, v_grid=[0.0, 1.0], R=2000)
    cfg["family"] = {"kind": "rectangles", "K": 4}
    path = write_config(tmp_path, "c.json", cfg)
    code, _, err = run_cli(["estimate-rho", "--config", path])
    # two-sided rectangles are rejected for the interpolation statistic
    assert code == 2 and "one-sided" in err


def test_simulate_and_bootstrap_pipeline(tmp_path):
    sim = {
        "seed": 7, "out": str(tmp_path / "data.bin"), "n": 300,
        "design": {"kind": "gaussian", "p": 4, "covariance": {"model": "ar1", "r": 0.5}},
    }
    path = write_config(tmp_path, "sim.json", sim)
    assert run_cli(["simulate", "--config", path])[0] == 0
    ds = read_dataset(str(tmp_path / "data.bin"))
    assert ds.values.shape == (300, 4)

    sim_csv = dict(sim, out=str(tmp_path / "data.csv"), format="csv")
    path = write_config(tmp_path, "simcsv.json", sim_csv)
    assert run_cli(["simulate", "--config", path])[0] == 0
    assert np.array_equal(read_dataset(str(tmp_path / "data.csv")).values, ds.values)

    boot = {
        "seed": 8, "out": str(tmp_path / "boot.json"), "dataset": str(tmp_path / "data.bin"),
        "mode": "EB", "R": 3000,
        "sigma": {"source": "design",
                  "design": {"kind": "gaussian", "p": 4,
                             "covariance": {"model": "ar1", "r": 0.5}}},
        "family": {"kind": "rectangles", "K": 6},
    }
    path = write_config(tmp_path, "boot.json", boot)
    code, _, err = run_cli(["bootstrap", "--config", path])
    assert code == 0, err
    payload = json.loads((tmp_path / "boot.json").read_text())
    assert payload["estimate"]["sides"] == ["empirical", "gaussian"]

    boot_emp = dict(boot, sigma={"source": "empirical"}, out=str(tmp_path / "boot2.json"))
    path = write_config(tmp_path, "boot2.json", boot_emp)
    assert run_cli(["bootstrap", "--config", path])[0] == 0


def test_bounds_command_design_route(tmp_path):
    cfg = {
        "seed": 9, "out": str(tmp_path / "b.json"), "n": 200, "moment_R": 1000,
        "design": {"kind": "rademacher", "p": 10},
        "params": {"q": 5.0, "alpha": 0.05},
    }
    path = write_config(tmp_path, "b.json", cfg)
    code, _, err = run_cli(["bounds", "--config", path])
    assert code == 0, err
    report = json.loads((tmp_path / "b.json").read_text())["report"]
    assert report["provenance"] == "population"
    assert {"D1", "D2q", "D1_alpha", "D2q_alpha", "L_n", "M_x", "M_y",
            "phi_n", "main_bound"} <= set(report)


def test_bounds_command_dataset_route(tmp_path):
    sim = {"seed": 4, "out": str(tmp_path / "d.bin"), "n": 100,
           "design": {"kind": "gaussian", "p": 5}}
    run_cli(["simulate", "--config", write_config(tmp_path, "s.json", sim)])
    cfg = {
        "seed": 10, "out": str(tmp_path / "be.json"), "dataset": str(tmp_path / "d.bin"),
        "moment_R": 1000, "design": {"kind": "gaussian", "p": 5},
        "sigma": {"source": "design"},
        "params": {"B_n": 2.0},
    }
    path = write_config(tmp_path, "be.json", cfg)
    code, _, err = run_cli(["bounds", "--config", path])
    assert code == 0, err
    report = json.loads((tmp_path / "be.json").read_text())["report"]
    assert report["provenance"] == "empirical"
    assert "delta_nr" in report


def test_rate_scan_command(tmp_path):
    cfg = {
        "seed": 11, "out": str(tmp_path / "scan.json"),
        "design": {"kind": "rademacher"},
        "n_grid": [8, 32], "p_rule": {"rule": "fixed", "p": 10},
        "family": {"K": 10}, "R": 5000, "moment_R": 500,
    }
    path = write_config(tmp_path, "scan.json", cfg)
    code, _, err = run_cli(["rate-scan", "--config", path])
    assert code == 0, err
    result = json.loads((tmp_path / "scan.json").read_text())["result"]
    assert [r["n"] for r in result["rows"]] == [8, 32]


def test_nazarov_command(tmp_path):
    cfg = {
        "seed": 12, "out": str(tmp_path / "nz.csv"), "format": "csv",
        "sigma": {"p": 5, "covariance": {"model": "equicorrelated", "r": 0.5}},
        "y_count": 3, "a_grid": [0.05], "R": 2000,
    }
    path = write_config(tmp_path, "nz.json", cfg)
    code, _, err = run_cli(["nazarov", "--config", path])
    assert code == 0, err
    assert (tmp_path / "nz.csv").read_text().splitlines()[0] == "p,a,y_label,diff_hat,se,ratio"


def test_smoothmax_command(tmp_path):
    cfg = {"seed": 13, "out": str(tmp_path / "sm.json"),
           "beta_grid": [1.0, 10.0], "p_grid": [2, 10], "trials": 500}
    path = write_config(tmp_path, "sm.json", cfg)
    code, _, err = run_cli(["smoothmax", "--config", path])
    assert code == 0, err
    payload = json.loads((tmp_path / "sm.json").read_text())
    assert payload["passes"] is True
    assert payload["max_violation"] <= 1e-12


def test_io_failure_exits_4(tmp_path):
    cfg = rho_config(tmp_path, out=str(tmp_path / "no_dir" / "rho.json"), R=1000)
    path = write_config(tmp_path, "c.json", cfg)
    code, _, err = run_cli(["estimate-rho", "--config", path])
    assert code == 4


def test_numerical_failure_exits_3(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise NotPositiveSemidefiniteError("factorization failed")

    monkeypatch.setattr(cli, "population_moments", boom)
    path = write_config(tmp_path, "c.json", rho_config(tmp_path))
    code, _, err = run_cli(["estimate-rho", "--config", path])
    assert code == 3
    assert "factorization" in err


def test_help_exits_0():
    code, out, _ = run_cli(["--help"])
    assert code == 0
    assert "Commands" in out or "commands" in out

import json
import os
import subprocess
import sys

import numpy as np
import pytest
import yaml

from dyadzi import ItemMeasurement, MeasurementParams, StructuralParams
from dyadzi import io as dio
from dyadzi.cli import main


def write_param_files(tmp_path):
    nz = 1

    def items():
        return (
            ItemMeasurement(tau=0.0, lam=1.0, delta=np.zeros(nz), zeta=np.zeros(nz),
                            fixed_anchor=True),
            ItemMeasurement(tau=0.4, lam=1.1, delta=np.array([0.3]), zeta=np.array([-0.2])),
            ItemMeasurement(tau=-0.5, lam=0.9, delta=np.zeros(nz), zeta=np.zeros(nz)),
        )

    phi = MeasurementParams(items(), items())
    psi = StructuralParams(
        [0.2, 0.3], [-0.1, 0.2], 1.2, 0.9, 0.45,
        [0.3, -0.1], [0.2, 0.2], [0.8, 0.1],
    )
    phi_path = tmp_path / "true_phi.json"
    psi_path = tmp_path / "true_psi.json"
    dio.save_measurement(str(phi_path), phi, z_names=["female"],
                         item_names_g=["g0", "g1", "g2"], item_names_r=["r0", "r1", "r2"])
    dio.save_structural(str(psi_path), psi)
    return phi_path, psi_path


def write_config(tmp_path, phi_path, psi_path, n=400):
    cfg = {
        "dataset": {
            "covariates": ["female"],
            "items_g": ["g0", "g1", "g2"],
            "items_r": ["r0", "r1", "r2"],
            "z_cols": ["female"],
            "missing_token": "NA",
        },
        "anchors": {"g": "g0", "r": "r0"},
        "pattern": {"g": {"g1": ["female"]}, "r": {"r1": ["female"]}},
        "priors": {"sigma2_beta": 100.0, "sigma2_gamma": 100.0, "wishart_df": 2.0},
        "chain": {"iterations": 120, "burn_in": 40, "thin": 2, "chains": 2, "threads": 1},
        "fit_measurement": {"quad_order": 15, "max_iter": 300},
        "simulate": {
            "n": n,
            "covariates": [
                {"name": "const", "kind": "constant"},
                {"name": "female", "kind": "binary", "p": 0.5},
            ],
            "phi": str(phi_path),
            "psi": str(psi_path),
        },
        "pi_table": {
            "settings": [
                {"label": "Sample"},
                {"label": "Male", "column": "female", "value": 0},
                {"label": "Female", "column": "female", "value": 1},
            ]
        },
    }
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


@pytest.fixture()
def pipeline(tmp_path):
    phi_path, psi_path = write_param_files(tmp_path)
    cfg = write_config(tmp_path, phi_path, psi_path)
    return tmp_path, cfg, phi_path, psi_path


def test_full_pipeline(pipeline, capsys):
    tmp_path, cfg, phi_path, psi_path = pipeline
    data = tmp_path / "data.csv"
    assert main(["simulate", "--config", str(cfg), "--seed", "5", "--out", str(data)]) == 0
    assert data.exists()
    assert (tmp_path / "data.csv.truth.json").exists()
    manifest = json.loads((tmp_path / "data.csv.manifest.json").read_text())
    assert manifest["seed"] == 5
    assert manifest["command"] == "simulate"

    phi_hat = tmp_path / "phi_hat.json"
    assert main(["fit-measurement", "--config", str(cfg), "--data", str(data),
                 "--out", str(phi_hat)]) == 0
    phi2, z_names, names_g, _ = dio.load_measurement(str(phi_hat))
    assert z_names == ["female"]
    assert phi2.items_G[0].tau == 0.0 and phi2.items_G[0].lam == 1.0

    draws_path = tmp_path / "draws.txt"
    assert main(["fit", "--config", str(cfg), "--data", str(data), "--phi", str(phi_hat),
                 "--seed", "9", "--out", str(draws_path)]) == 0
    draws = dio.load_draws(str(draws_path))
    assert draws.n_chains == 2
    assert draws.n_draws == 40

    summary_csv = tmp_path / "summary.csv"
    assert main(["summarize", "--draws", str(draws_path), "--out", str(summary_csv)]) == 0
    summary_lines = summary_csv.read_text().splitlines()
    assert summary_lines[0].startswith("# run_id:")
    assert summary_lines[1].startswith("parameter,")
    assert (tmp_path / "summary.csv.manifest.json").exists()

    pi_csv = tmp_path / "pi.csv"
    assert main(["pi-table", "--config", str(cfg), "--data", str(data),
                 "--draws", str(draws_path), "--out", str(pi_csv)]) == 0
    pi_lines = pi_csv.read_text().splitlines()
    assert pi_lines[0].startswith("# run_id:")
    assert "odds_ratio" in pi_lines[1]
    # dataset CSV carries its manifest reference too
    assert data.read_text().splitlines()[0].startswith("# run_id:")

    assert main(["loglik", "--config", str(cfg), "--data", str(data),
                 "--phi", str(phi_path), "--psi", str(psi_path)]) == 0
    out = capsys.readouterr().out
    ll = float(out.strip().splitlines()[-1])
    assert np.isfinite(ll) and ll < 0


def test_fit_rerun_is_byte_identical(pipeline):
    tmp_path, cfg, phi_path, psi_path = pipeline
    data = tmp_path / "data.csv"
    main(["simulate", "--config", str(cfg), "--seed", "5", "--out", str(data)])
    d1 = tmp_path / "d1.txt"
    d2 = tmp_path / "d2.txt"
    for out in (d1, d2):
        assert main(["fit", "--config", str(cfg), "--data", str(data),
                     "--phi", str(phi_path), "--seed", "77", "--threads", "1",
                     "--out", str(out)]) == 0
    assert d1.read_bytes() == d2.read_bytes()


def test_verify_manifest_flag(pipeline, capsys):
    tmp_path, cfg, phi_path, psi_path = pipeline
    data = tmp_path / "data.csv"
    main(["simulate", "--config", str(cfg), "--seed", "5", "--out", str(data)])
    manifest = str(tmp_path / "data.csv.manifest.json")
    rc = main(["simulate", "--config", str(cfg), "--seed", "5", "--out", str(data),
               "--verify-manifest", manifest])
    assert rc == 0
    # tamper with an input listed in the manifest
    phi_path.write_text(phi_path.read_text() + "\n")
    rc = main(["simulate", "--config", str(cfg), "--seed", "5", "--out", str(data),
               "--verify-manifest", manifest])
    assert rc == 1
    err = capsys.readouterr().err
    assert "error[data]" in err and "mismatch" in err


def test_auto_seed_recorded_in_manifest(pipeline, capsys):
    tmp_path, cfg, phi_path, psi_path = pipeline
    # config has no seed for simulate; none passed on the command line
    data = tmp_path / "auto.csv"
    assert main(["simulate", "--config", str(cfg), "--out", str(data)]) == 0
    manifest = json.loads((tmp_path / "auto.csv.manifest.json").read_text())
    assert manifest["seed_auto_generated"] is True
    assert manifest["seed"] > 0
    out = capsys.readouterr().out
    assert "auto-generated" in out


def test_unknown_subcommand_exits_2():
    proc = subprocess.run(
        [sys.executable, "-m", "dyadzi.cli", "frobnicate"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 2
    assert "usage" in (proc.stderr + proc.stdout).lower()


def test_pi_table_bad_column_exits_1(pipeline, capsys):
    tmp_path, cfg, phi_path, psi_path = pipeline
    data = tmp_path / "data.csv"
    main(["simulate", "--config", str(cfg), "--seed", "5", "--out", str(data)])
    phi_hat = tmp_path / "phi_hat.json"
    main(["fit-measurement", "--config", str(cfg), "--data", str(data), "--out", str(phi_hat)])
    draws_path = tmp_path / "draws.txt"
    main(["fit", "--config", str(cfg), "--data", str(data), "--phi", str(phi_hat),
          "--seed", "9", "--out", str(draws_path)])
    bad_cfg = yaml.safe_load((cfg).read_text())
    bad_cfg["pi_table"]["settings"].append({"label": "bad", "column": "nope", "value": 1})
    bad_path = tmp_path / "bad.yaml"
    bad_path.write_text(yaml.safe_dump(bad_cfg))
    rc = main(["pi-table", "--config", str(bad_path), "--data", str(data),
               "--draws", str(draws_path)])
    assert rc == 1
    assert "error[data]" in capsys.readouterr().err


def test_malformed_config_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("dataset: [unclosed\n")
    rc = main(["simulate", "--config", str(bad), "--seed", "1", "--out", str(tmp_path / "x.csv")])
    assert rc == 1
    assert "error[config]" in capsys.readouterr().err

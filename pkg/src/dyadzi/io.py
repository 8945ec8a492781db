"""File formats, configuration, and run provenance.

Formats: CSV datasets with a configurable missing-data token; JSON parameter
files (floats round-trip exactly through repr); a columnar text draws file
whose header documents the parameter ordering; a JSON run manifest holding
the seed, config digest, and input digests recorded before compute begins.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np
import yaml

from .engine import PosteriorDraws, param_names
from .params import (
    DataError,
    Dataset,
    ItemMeasurement,
    LatentState,
    MeasurementParams,
    StructuralParams,
)

__all__ = [
    "ConfigError",
    "load_config",
    "DatasetSchema",
    "load_dataset",
    "save_dataset",
    "save_measurement",
    "load_measurement",
    "save_structural",
    "load_structural",
    "save_truth",
    "load_truth",
    "save_draws",
    "load_draws",
    "file_digest",
    "make_run_id",
    "write_manifest",
    "verify_manifest",
]

DRAWS_MAGIC = "# dyadzi-draws-v1"
MEAS_FORMAT = "dyadzi-measurement-v1"
STRUCT_FORMAT = "dyadzi-structural-v1"
TRUTH_FORMAT = "dyadzi-truth-v1"
MANIFEST_FORMAT = "dyadzi-manifest-v1"


class ConfigError(ValueError):
    """Malformed or incomplete configuration."""


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            cfg = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must be a mapping of sections")
    return cfg


# -- dataset ---------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSchema:
    """Column roles for a dataset CSV."""

    covariates: tuple[str, ...]
    items_g: tuple[str, ...]
    items_r: tuple[str, ...]
    z_cols: tuple[str, ...] = ()
    missing_token: str = "NA"
    add_intercept: bool = True

    @staticmethod
    def from_config(cfg: dict) -> "DatasetSchema":
        try:
            section = cfg["dataset"]
            return DatasetSchema(
                covariates=tuple(section["covariates"]),
                items_g=tuple(section["items_g"]),
                items_r=tuple(section["items_r"]),
                z_cols=tuple(section.get("z_cols", ())),
                missing_token=str(section.get("missing_token", "NA")),
                add_intercept=bool(section.get("add_intercept", True)),
            )
        except KeyError as exc:
            raise ConfigError(f"dataset section missing key {exc}") from exc


def _parse_cell(token: str, missing: str, path: str, line: int, col: str) -> float:
    token = token.strip()
    if token == missing or token == "":
        return np.nan
    try:
        return float(token)
    except ValueError:
        raise DataError(
            f"{path}:{line}: cannot parse {col}={token!r} as a number"
        ) from None


def load_dataset(path: str, schema: DatasetSchema) -> Dataset:
    """Read and validate a dataset CSV.

    Rows with a missing covariate are rejected with their row numbers;
    observed item values must be exactly 0 or 1.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = None
        n_skipped = 0
        for row in reader:
            if row and row[0].lstrip().startswith("#"):
                n_skipped += 1
                continue
            header = row
            break
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        pos = {name: k for k, name in enumerate(header)}
        needed = list(schema.covariates) + list(schema.items_g) + list(schema.items_r)
        missing_cols = [c for c in needed if c not in pos]
        if missing_cols:
            raise DataError(f"{path}: columns not found: {missing_cols}")
        rows = []
        for line_no, row in enumerate(reader, start=2 + n_skipped):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{line_no}: wrong number of fields")
            rows.append((line_no, row))
    if not rows:
        raise DataError(f"{path}: no data rows")

    def block(names):
        out = np.empty((len(rows), len(names)))
        for i, (line_no, row) in enumerate(rows):
            for j, name in enumerate(names):
                out[i, j] = _parse_cell(row[pos[name]], schema.missing_token, path, line_no, name)
        return out

    Xraw = block(schema.covariates)
    bad = np.isnan(Xraw).any(axis=1)
    if bad.any():
        lines = [rows[i][0] for i in np.nonzero(bad)[0][:10]]
        raise DataError(f"{path}: missing covariate values at rows {lines}")
    Y_G = block(schema.items_g)
    Y_R = block(schema.items_r)
    for label, Y, names in (("G", Y_G, schema.items_g), ("R", Y_R, schema.items_r)):
        obs = ~np.isnan(Y)
        bad = obs & ~np.isin(Y, (0.0, 1.0))
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise DataError(
                f"{path}:{rows[i][0]}: non-binary item value "
                f"{Y[i, j]!r} in column {names[j]}"
            )

    x_names = list(schema.covariates)
    if schema.add_intercept:
        Xraw = np.column_stack([np.ones(Xraw.shape[0]), Xraw])
        x_names = ["const"] + x_names
    try:
        z_cols = tuple(x_names.index(z) for z in schema.z_cols)
    except ValueError as exc:
        raise DataError(f"z column not among covariates: {exc}") from exc
    return Dataset(
        X=Xraw,
        Y_G=Y_G,
        Y_R=Y_R,
        z_cols=z_cols,
        x_names=tuple(x_names),
        g_names=tuple(schema.items_g),
        r_names=tuple(schema.items_r),
    )


def save_dataset(path: str, data: Dataset, missing_token: str = "NA", run_id: str | None = None):
    """Write a dataset CSV (covariates without the intercept column)."""
    x_names = list(data.covariate_names())
    g_names = list(data.g_names or (f"g{j}" for j in range(data.p_G)))
    r_names = list(data.r_names or (f"r{j}" for j in range(data.p_R)))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if run_id:
            fh.write(f"# run_id: {run_id}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(x_names[1:] + g_names + r_names)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.X[i, 1:]]
            for Y, p in ((data.Y_G, data.p_G), (data.Y_R, data.p_R)):
                for j in range(p):
                    v = Y[i, j]
                    row.append(missing_token if np.isnan(v) else str(int(v)))
            writer.writerow(row)


# -- parameter files -------------------------------------------------------


def _item_to_dict(it: ItemMeasurement, z_names) -> dict:
    return {
        "tau": it.tau,
        "lam": it.lam,
        "delta": {z: float(v) for z, v in zip(z_names, it.delta)},
        "zeta": {z: float(v) for z, v in zip(z_names, it.zeta)},
        "anchor": it.fixed_anchor,
    }


def _item_from_dict(d: dict, z_names) -> ItemMeasurement:
    return ItemMeasurement(
        tau=d["tau"],
        lam=d["lam"],
        delta=np.array([d["delta"].get(z, 0.0) for z in z_names]),
        zeta=np.array([d["zeta"].get(z, 0.0) for z in z_names]),
        fixed_anchor=bool(d.get("anchor", False)),
    )


def save_measurement(
    path: str,
    phi: MeasurementParams,
    z_names,
    item_names_g=None,
    item_names_r=None,
    run_id: str | None = None,
):
    z_names = list(z_names)
    doc = {
        "format": MEAS_FORMAT,
        "run_id": run_id,
        "z_cols": z_names,
        "items_G": {
            (item_names_g[j] if item_names_g else f"g{j}"): _item_to_dict(it, z_names)
            for j, it in enumerate(phi.items_G)
        },
        "items_R": {
            (item_names_r[j] if item_names_r else f"r{j}"): _item_to_dict(it, z_names)
            for j, it in enumerate(phi.items_R)
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_measurement(path: str) -> tuple[MeasurementParams, list[str], list[str], list[str]]:
    """Returns (phi, z_names, item_names_g, item_names_r)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != MEAS_FORMAT:
        raise DataError(f"{path}: not a measurement-parameter file")
    z_names = list(doc["z_cols"])
    names_g = list(doc["items_G"])
    names_r = list(doc["items_R"])
    phi = MeasurementParams(
        items_G=tuple(_item_from_dict(doc["items_G"][n], z_names) for n in names_g),
        items_R=tuple(_item_from_dict(doc["items_R"][n], z_names) for n in names_r),
    )
    return phi, z_names, names_g, names_r


def save_structural(path: str, psi: StructuralParams, run_id: str | None = None):
    doc = {
        "format": STRUCT_FORMAT,
        "run_id": run_id,
        "beta_G": psi.beta_G.tolist(),
        "beta_R": psi.beta_R.tolist(),
        "sigma2_G": psi.sigma2_G,
        "sigma2_R": psi.sigma2_R,
        "rho_GR": psi.rho_GR,
        "gamma_01": psi.gamma_01.tolist(),
        "gamma_10": psi.gamma_10.tolist(),
        "gamma_11": psi.gamma_11.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_structural(path: str) -> StructuralParams:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != STRUCT_FORMAT:
        raise DataError(f"{path}: not a structural-parameter file")
    return StructuralParams(
        beta_G=doc["beta_G"],
        beta_R=doc["beta_R"],
        sigma2_G=doc["sigma2_G"],
        sigma2_R=doc["sigma2_R"],
        rho_GR=doc["rho_GR"],
        gamma_01=doc["gamma_01"],
        gamma_10=doc["gamma_10"],
        gamma_11=doc["gamma_11"],
    )


def save_truth(path: str, psi: StructuralParams, state: LatentState, run_id=None):
    doc = {
        "format": TRUTH_FORMAT,
        "run_id": run_id,
        "psi": {
            "beta_G": psi.beta_G.tolist(),
            "beta_R": psi.beta_R.tolist(),
            "sigma2_G": psi.sigma2_G,
            "sigma2_R": psi.sigma2_R,
            "rho_GR": psi.rho_GR,
            "gamma_01": psi.gamma_01.tolist(),
            "gamma_10": psi.gamma_10.tolist(),
            "gamma_11": psi.gamma_11.tolist(),
        },
        "latents": {
            "xi_G": state.xi_G.tolist(),
            "xi_R": state.xi_R.tolist(),
            "eta_G": state.eta_G.tolist(),
            "eta_R": state.eta_R.tolist(),
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_truth(path: str) -> tuple[StructuralParams, LatentState]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != TRUTH_FORMAT:
        raise DataError(f"{path}: not a truth file")
    p = doc["psi"]
    psi = StructuralParams(
        beta_G=p["beta_G"], beta_R=p["beta_R"], sigma2_G=p["sigma2_G"],
        sigma2_R=p["sigma2_R"], rho_GR=p["rho_GR"], gamma_01=p["gamma_01"],
        gamma_10=p["gamma_10"], gamma_11=p["gamma_11"],
    )
    lt = doc["latents"]
    return psi, LatentState(lt["xi_G"], lt["xi_R"], lt["eta_G"], lt["eta_R"])


# -- draws file ------------------------------------------------------------


def save_draws(path: str, draws: PosteriorDraws, run_id: str | None = None):
    """Columnar text: header block documents the fixed parameter ordering."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(DRAWS_MAGIC + "\n")
        fh.write(f"# run_id: {run_id or ''}\n")
        fh.write(f"# q: {draws.q}\n")
        fh.write(f"# seed: {draws.seed}\n")
        fh.write("# ordering: beta_G, beta_R, sigma2_G, sigma2_R, rho_GR, gamma_01, gamma_10, gamma_11\n")
        fh.write("chain,draw," + ",".join(draws.names) + "\n")
        for c in range(draws.n_chains):
            for d in range(draws.n_draws):
                vals = ",".join(repr(float(v)) for v in draws.draws[c, d])
                fh.write(f"{draws.chains[c]},{d},{vals}\n")


def load_draws(path: str) -> PosteriorDraws:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != DRAWS_MAGIC:
            raise DataError(f"{path}: not a draws file")
        meta = {}
        line = fh.readline()
        while line.startswith("#"):
            body = line[1:].strip()
            if ":" in body:
                key, _, val = body.partition(":")
                meta[key.strip()] = val.strip()
            line = fh.readline()
        header = line.rstrip("\n").split(",")
        if header[:2] != ["chain", "draw"]:
            raise DataError(f"{path}: malformed draws header")
        names = tuple(header[2:])
        q = int(meta.get("q", 0))
        expected = param_names(q) if q else None
        if expected is not None:
            def base(n):
                return n.split("[")[0]
            if tuple(map(base, names)) != tuple(map(base, expected)):
                raise DataError(f"{path}: parameter ordering mismatch")
        rows = []
        chains = []
        for line in fh:
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(",")
            chains.append(int(parts[0]))
            rows.append([float(v) for v in parts[2:]])
    if not rows:
        raise DataError(f"{path}: no draws")
    arr = np.asarray(rows)
    chain_ids = sorted(set(chains))
    chains = np.asarray(chains)
    per = [arr[chains == c] for c in chain_ids]
    n_min = min(p.shape[0] for p in per)
    stacked = np.stack([p[:n_min] for p in per])
    return PosteriorDraws(
        draws=stacked,
        names=names,
        q=q,
        seed=int(meta.get("seed", 0)),
        chains=tuple(chain_ids),
        provenance={"run_id": meta.get("run_id", "")},
    )


# -- manifests -------------------------------------------------------------


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def make_run_id(command: str, config_digest: str, seed: int, threads: int, inputs: dict) -> str:
    doc = {
        "command": command,
        "config": config_digest,
        "seed": seed,
        "threads": threads,
        "inputs": dict(sorted(inputs.items())),
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def write_manifest(
    path: str,
    command: str,
    run_id: str,
    seed: int,
    threads: int,
    config_digest: str,
    inputs: dict,
    outputs: list,
    wall_time_s: float,
    exit_status: int = 0,
    extra: dict | None = None,
):
    import numba
    import scipy

    doc = {
        "format": MANIFEST_FORMAT,
        "run_id": run_id,
        "command": command,
        "seed": seed,
        "threads": threads,
        "config_sha256": config_digest,
        "inputs": dict(sorted(inputs.items())),
        "outputs": list(outputs),
        "wall_time_s": wall_time_s,
        "exit_status": exit_status,
        "versions": {
            "dyadzi": __import__("dyadzi").__version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
        },
    }
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def verify_manifest(path: str) -> list[str]:
    """Re-hash the manifest's inputs; return a list of mismatch messages."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != MANIFEST_FORMAT:
        raise DataError(f"{path}: not a manifest file")
    problems = []
    base = os.path.dirname(os.path.abspath(path))
    for name, digest in doc.get("inputs", {}).items():
        cand = name if os.path.isabs(name) else os.path.join(base, name)
        if not os.path.exists(cand) and os.path.exists(name):
            cand = name
        if not os.path.exists(cand):
            problems.append(f"input missing: {name}")
            continue
        actual = file_digest(cand)
        if actual != digest:
            problems.append(f"digest mismatch for {name}: {actual} != {digest}")
    return problems

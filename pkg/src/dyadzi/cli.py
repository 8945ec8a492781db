"""Command-line interface: simulate -> fit-measurement -> fit -> summaries.

Every randomized command either takes an explicit --seed or records an
auto-generated one in its manifest. Module errors exit with status 1 and a
machine-readable category on stderr; usage errors exit with status 2.
"""

from __future__ import annotations

import argparse
import secrets
import sys
import time

import numpy as np

from . import io as dio
from .ars import ArsError
from .diagnostics import Setting, pi_table, save_trace_plots, summarize
from .engine import ChainConfig, SamplerError, run_chain
from .fit_measurement import FitError, FitOptions, fit_block
from .model import full_loglik_oracle
from .params import DataError, MeasurementParams, ModelError, PriorSpec
from .simulate import CovariateSpec, MissingRule, SimSpec, simulate

_ERROR_CATEGORY = [
    (dio.ConfigError, "config"),
    (DataError, "data"),
    (FitError, "fit"),
    (SamplerError, "sampler"),
    (ArsError, "ars"),
    (ModelError, "model"),
    (OSError, "io"),
]


def _fail(exc: Exception) -> int:
    category = "internal"
    for cls, name in _ERROR_CATEGORY:
        if isinstance(exc, cls):
            category = name
            break
    print(f"error[{category}]: {exc}", file=sys.stderr)
    return 1


def _resolve_seed(args, cfg_section) -> tuple[int, bool]:
    if args.seed is not None:
        return int(args.seed), False
    if cfg_section and "seed" in cfg_section:
        return int(cfg_section["seed"]), False
    return secrets.randbits(48), True


def _prior_from_config(cfg: dict) -> PriorSpec:
    section = cfg.get("priors", {}) or {}
    return PriorSpec(
        sigma2_beta=float(section.get("sigma2_beta", 100.0)),
        sigma2_gamma=float(section.get("sigma2_gamma", 100.0)),
        wishart_scale=np.asarray(section.get("wishart_scale", np.eye(2)), dtype=float),
        wishart_df=float(section.get("wishart_df", 2.0)),
    )


def _check_verify(args) -> None:
    if getattr(args, "verify_manifest", None):
        problems = dio.verify_manifest(args.verify_manifest)
        if problems:
            raise DataError("; ".join(problems))
        print(f"manifest {args.verify_manifest}: inputs verified")


def _manifest_path(out: str) -> str:
    return out + ".manifest.json"


def cmd_simulate(args) -> int:
    cfg = dio.load_config(args.config)
    _check_verify(args)
    section = cfg.get("simulate")
    if not section:
        raise dio.ConfigError("config lacks a 'simulate' section")
    seed, auto = _resolve_seed(args, section)
    covs = []
    for c in section.get("covariates", []):
        covs.append(
            CovariateSpec(kind=c["kind"], p=float(c.get("p", 0.5)), name=c.get("name", ""))
        )
    phi_path = section["phi"]
    psi_path = section["psi"]
    phi, z_names, _, _ = dio.load_measurement(phi_path)
    psi = dio.load_structural(psi_path)
    names = [c.name for c in covs]
    try:
        z_cols = tuple(names.index(z) for z in z_names)
    except ValueError as exc:
        raise dio.ConfigError(f"z column not among simulated covariates: {exc}") from exc
    miss = section.get("missing", {}) or {}
    rules = tuple(
        MissingRule(
            block=r["block"].upper(),
            item=int(r["item"]),
            column=names.index(r["column"]),
            value=float(r["value"]),
        )
        for r in miss.get("rules", [])
    )
    spec = SimSpec(
        n=int(section["n"]),
        covariates=tuple(covs),
        phi=phi,
        psi=psi,
        z_cols=z_cols,
        miss_prob_G=np.asarray(miss["g"], dtype=float) if "g" in miss else None,
        miss_prob_R=np.asarray(miss["r"], dtype=float) if "r" in miss else None,
        miss_rules=rules,
        seed=seed,
    )
    inputs = {
        args.config: dio.file_digest(args.config),
        phi_path: dio.file_digest(phi_path),
        psi_path: dio.file_digest(psi_path),
    }
    run_id = dio.make_run_id("simulate", inputs[args.config], seed, 1, inputs)
    t0 = time.perf_counter()
    data, truth = simulate(spec)
    out = args.out
    dio.save_dataset(
        out, data,
        missing_token=str(cfg.get("dataset", {}).get("missing_token", "NA")),
        run_id=run_id,
    )
    truth_path = out + ".truth.json"
    dio.save_truth(truth_path, psi, truth, run_id=run_id)
    dio.write_manifest(
        _manifest_path(out),
        command="simulate",
        run_id=run_id,
        seed=seed,
        threads=1,
        config_digest=inputs[args.config],
        inputs=inputs,
        outputs=[out, truth_path],
        wall_time_s=time.perf_counter() - t0,
        extra={"seed_auto_generated": auto},
    )
    if auto:
        print(f"seed (auto-generated): {seed}")
    print(f"wrote {out} (+truth, +manifest), n={data.n}")
    return 0


def _load_data_from_config(cfg: dict, data_path: str):
    schema = dio.DatasetSchema.from_config(cfg)
    return dio.load_dataset(data_path, schema), schema


def cmd_fit_measurement(args) -> int:
    cfg = dio.load_config(args.config)
    _check_verify(args)
    data, schema = _load_data_from_config(cfg, args.data)
    fit_cfg = cfg.get("fit_measurement", {}) or {}
    opts = FitOptions(
        quad_order=int(fit_cfg.get("quad_order", 21)),
        max_iter=int(fit_cfg.get("max_iter", 500)),
        gtol=float(fit_cfg.get("gtol", 1e-4)),
    )
    anchors = cfg.get("anchors", {}) or {}
    pattern_cfg = cfg.get("pattern", {}) or {}
    z_names = list(schema.z_cols)

    def block_inputs(which: str, item_names, Y):
        try:
            anchor_name = anchors[which]
        except KeyError:
            raise dio.ConfigError(f"anchors section must name the '{which}' anchor item") from None
        if anchor_name not in item_names:
            raise dio.ConfigError(f"anchor {anchor_name!r} is not an item of block {which}")
        pat_block = pattern_cfg.get(which, {}) or {}
        pattern = []
        for name in item_names:
            cols = pat_block.get(name, [])
            try:
                pattern.append(tuple(z_names.index(z) for z in cols))
            except ValueError as exc:
                raise dio.ConfigError(f"pattern for {name}: {exc}") from exc
        return pattern, item_names.index(anchor_name)

    inputs = {
        args.config: dio.file_digest(args.config),
        args.data: dio.file_digest(args.data),
    }
    run_id = dio.make_run_id("fit-measurement", inputs[args.config], 0, 1, inputs)
    t0 = time.perf_counter()
    Z = data.Z
    pattern_g, anchor_g = block_inputs("g", list(schema.items_g), data.Y_G)
    rep_g = fit_block(data.Y_G, Z, pattern_g, anchor_g, opts)
    pattern_r, anchor_r = block_inputs("r", list(schema.items_r), data.Y_R)
    rep_r = fit_block(data.Y_R, Z, pattern_r, anchor_r, opts)
    phi = MeasurementParams(items_G=rep_g.phi_hat, items_R=rep_r.phi_hat)
    dio.save_measurement(
        args.out,
        phi,
        z_names,
        item_names_g=list(schema.items_g),
        item_names_r=list(schema.items_r),
        run_id=run_id,
    )
    dio.write_manifest(
        _manifest_path(args.out),
        command="fit-measurement",
        run_id=run_id,
        seed=0,
        threads=1,
        config_digest=inputs[args.config],
        inputs=inputs,
        outputs=[args.out],
        wall_time_s=time.perf_counter() - t0,
        extra={
            "loglik_g": rep_g.loglik,
            "loglik_r": rep_r.loglik,
            "iterations": [rep_g.iterations, rep_r.iterations],
        },
    )
    print(
        f"wrote {args.out}: block G ll={rep_g.loglik:.2f} "
        f"({rep_g.iterations} it), block R ll={rep_r.loglik:.2f} ({rep_r.iterations} it)"
    )
    return 0


def cmd_fit(args) -> int:
    cfg = dio.load_config(args.config)
    _check_verify(args)
    data, _ = _load_data_from_config(cfg, args.data)
    phi, z_names, _, _ = dio.load_measurement(args.phi)
    expect_z = [data.covariate_names()[c] for c in data.z_cols]
    if z_names != expect_z:
        raise DataError(
            f"measurement z columns {z_names} do not match dataset z columns {expect_z}"
        )
    chain_cfg = cfg.get("chain", {}) or {}
    seed, auto = _resolve_seed(args, chain_cfg)
    config = ChainConfig(
        iterations=int(args.iterations or chain_cfg.get("iterations", 110_000)),
        burn_in=int(args.burn_in if args.burn_in is not None else chain_cfg.get("burn_in", 10_000)),
        thin=int(args.thin or chain_cfg.get("thin", 1)),
        n_chains=int(args.chains or chain_cfg.get("chains", 2)),
        seed=seed,
        threads=int(args.threads or chain_cfg.get("threads", 1)),
        prior=_prior_from_config(cfg),
    )
    inputs = {
        args.config: dio.file_digest(args.config),
        args.data: dio.file_digest(args.data),
        args.phi: dio.file_digest(args.phi),
    }
    run_id = dio.make_run_id("fit", inputs[args.config], seed, config.threads, inputs)
    t0 = time.perf_counter()
    draws = run_chain(data, phi, config)
    dio.save_draws(args.out, draws, run_id=run_id)
    dio.write_manifest(
        _manifest_path(args.out),
        command="fit",
        run_id=run_id,
        seed=seed,
        threads=config.threads,
        config_digest=inputs[args.config],
        inputs=inputs,
        outputs=[args.out],
        wall_time_s=time.perf_counter() - t0,
        extra={
            "seed_auto_generated": auto,
            "iterations": config.iterations,
            "burn_in": config.burn_in,
            "thin": config.thin,
            "chains": config.n_chains,
            "ars_density_evals": draws.provenance.get("ars_density_evals"),
        },
    )
    if auto:
        print(f"seed (auto-generated): {seed}")
    print(f"wrote {args.out}: {draws.n_chains} chains x {draws.n_draws} draws")
    return 0


def cmd_summarize(args) -> int:
    _check_verify(args)
    t0 = time.perf_counter()
    draws = dio.load_draws(args.draws)
    table = summarize(draws)
    inputs = {args.draws: dio.file_digest(args.draws)}
    run_id = dio.make_run_id("summarize", "", 0, 1, inputs)
    outputs = []
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(f"# run_id: {run_id}\n")
            fh.write(table.to_csv())
        outputs.append(args.out)
        print(f"wrote {args.out}")
    print(table.to_text())
    if args.plots:
        save_trace_plots(draws, args.plots)
        outputs.append(args.plots)
        print(f"wrote {args.plots}")
    if args.out:
        dio.write_manifest(
            _manifest_path(args.out), command="summarize", run_id=run_id, seed=0,
            threads=1, config_digest="", inputs=inputs, outputs=outputs,
            wall_time_s=time.perf_counter() - t0,
        )
    return 0


def cmd_pi_table(args) -> int:
    cfg = dio.load_config(args.config)
    _check_verify(args)
    data, _ = _load_data_from_config(cfg, args.data)
    draws = dio.load_draws(args.draws)
    section = cfg.get("pi_table", {}) or {}
    settings = []
    for s in section.get("settings", [{"label": "Sample"}]):
        settings.append(
            Setting(
                label=str(s["label"]),
                column=s.get("column"),
                value=float(s.get("value", 0.0)),
            )
        )
    t0 = time.perf_counter()
    table = pi_table(draws, data, settings, max_draws=section.get("max_draws"))
    if args.out:
        inputs = {
            args.config: dio.file_digest(args.config),
            args.data: dio.file_digest(args.data),
            args.draws: dio.file_digest(args.draws),
        }
        run_id = dio.make_run_id("pi-table", inputs[args.config], 0, 1, inputs)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(f"# run_id: {run_id}\n")
            fh.write(table.to_csv())
        dio.write_manifest(
            _manifest_path(args.out), command="pi-table", run_id=run_id, seed=0,
            threads=1, config_digest=inputs[args.config], inputs=inputs,
            outputs=[args.out], wall_time_s=time.perf_counter() - t0,
        )
        print(f"wrote {args.out}")
    print(table.to_text())
    return 0


def cmd_loglik(args) -> int:
    cfg = dio.load_config(args.config)
    _check_verify(args)
    data, _ = _load_data_from_config(cfg, args.data)
    phi, _, _, _ = dio.load_measurement(args.phi)
    psi = dio.load_structural(args.psi)
    ll = full_loglik_oracle(data, phi, psi, quad_order=args.quad_order)
    print(repr(ll))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dyadzi",
        description="Zero-inflated bivariate latent-variable models for dyadic binary data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, seed=False):
        if config:
            p.add_argument("--config", required=True, help="YAML configuration file")
        if seed:
            p.add_argument("--seed", type=int, default=None)
        p.add_argument("--verify-manifest", default=None, metavar="MANIFEST",
                       help="re-hash this manifest's inputs before running")

    p = sub.add_parser("simulate", help="draw a synthetic dataset from parameter files")
    common(p, seed=True)
    p.add_argument("--out", required=True, help="output dataset CSV path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-measurement", help="first-step ML fit of the item parameters")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="measurement-parameter JSON path")
    p.set_defaults(func=cmd_fit_measurement)

    p = sub.add_parser("fit", help="MCMC estimation of the structural model")
    common(p, seed=True)
    p.add_argument("--data", required=True)
    p.add_argument("--phi", required=True, help="measurement-parameter file")
    p.add_argument("--out", required=True, help="draws file path")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--chains", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--burn-in", type=int, default=None, dest="burn_in")
    p.add_argument("--thin", type=int, default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("summarize", help="posterior summary table from a draws file")
    common(p, config=False)
    p.add_argument("--draws", required=True)
    p.add_argument("--out", default=None, help="CSV output path")
    p.add_argument("--plots", default=None, help="trace/density plot PNG path")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("pi-table", help="fitted class-probability table")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--draws", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_pi_table)

    p = sub.add_parser("loglik", help="evaluate the marginal log-likelihood oracle")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--phi", required=True)
    p.add_argument("--psi", required=True)
    p.add_argument("--quad-order", type=int, default=21, dest="quad_order")
    p.set_defaults(func=cmd_loglik)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except tuple(cls for cls, _ in _ERROR_CATEGORY) as exc:
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line surface: simulate / fit / grid / baseline / report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.
Failures print a machine-readable JSON error object to stderr. The
NETLMM_THREADS environment variable caps worker processes for multi-chain
and grid runs (default 1); results do not depend on it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np
from scipy.special import ndtri

from .baseline import fit_all_edges
from .core import HyperParams, edge_pairs
from .io import (
    DataFormatError,
    RESULTS_SCHEMA_VERSION,
    atomic_write_text,
    file_sha256,
    load_dataset,
    read_json,
    write_covariates,
    write_genotypes,
    write_json,
    write_kinship,
    write_phenotype,
)
from .projection import prepare_model_data
from .sampler import NumericalAbortError, SamplerConfig, run_chains
from .selection import FitSummary, grid_search, summarize_fit
from .simulate import Scenario, generate_dataset

USAGE_ERROR, DATA_ERROR, NUMERIC_ERROR = 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _emit_error(kind: str, message: str):
    print(json.dumps({"error": {"type": kind, "message": message}}),
          file=sys.stderr)


def _n_jobs() -> int:
    raw = os.environ.get("NETLMM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _build_parser() -> _Parser:
    parser = _Parser(prog="netlmm", description=__doc__)
    sub = parser.add_subparsers(dest="mode", required=True)

    sim = sub.add_parser("simulate", help="write a synthetic dataset with known truth")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--scenario-subjects", type=int, default=100)
    sim.add_argument("--scenario-nodes", type=int, default=50)
    sim.add_argument("--scenario-components", type=int, default=1)
    sim.add_argument("--scenario-weights", type=str, default="1.0",
                     help="comma-separated component weights")
    sim.add_argument("--scenario-sparsity", type=float, default=0.5)
    sim.add_argument("--scenario-sigma-a", type=float, default=1.5)
    sim.add_argument("--scenario-sigma-e", type=float, default=1.0)
    sim.add_argument("--scenario-no-covariates", action="store_true")
    sim.add_argument("--scenario-identity-kinship", action="store_true")

    def add_data_flags(p, covariates=True):
        p.add_argument("--pheno", required=True)
        p.add_argument("--geno", required=True)
        p.add_argument("--kinship", required=True)
        if covariates:
            p.add_argument("--covariates", default=None)
        p.add_argument("--out", required=True, help="results.json path")
        p.add_argument("--seed", type=int, default=0)

    def add_sampler_flags(p):
        p.add_argument("--iters", type=int, default=7000)
        p.add_argument("--burnin", type=int, default=2000)
        p.add_argument("--thin", type=int, default=1)
        p.add_argument("--chains", type=int, default=1)
        p.add_argument("--adapt-mh", dest="adapt_mh", action="store_true",
                       default=True)
        p.add_argument("--no-adapt-mh", dest="adapt_mh", action="store_false")

    fit = sub.add_parser("fit", help="fit the network mixed model")
    add_data_flags(fit)
    add_sampler_flags(fit)
    fit.add_argument("--H", type=int, default=3, help="component budget")
    fit.add_argument("--nu", type=float, default=1.0, help="shrinkage rate")
    fit.add_argument("--chains-out", default=None,
                     help="optional CSV of per-iteration scalar draws")

    grid = sub.add_parser("grid", help="BIC grid search over H and nu")
    add_data_flags(grid)
    add_sampler_flags(grid)
    grid.add_argument("--H", type=str, default="3", help="comma list, e.g. 1,2,3")
    grid.add_argument("--nu", type=str, default="0.5,0.8,1.0")

    base = sub.add_parser("baseline", help="independent per-edge mixed models")
    add_data_flags(base)
    base.add_argument("--alpha", type=float, default=0.05)

    rep = sub.add_parser("report", help="emit plot-ready CSVs from results.json")
    rep.add_argument("--results", required=True)
    rep.add_argument("--out", required=True, help="output directory")
    return parser


def _scenario_from_args(args) -> Scenario:
    return Scenario(
        n_subjects=args.scenario_subjects,
        n_nodes=args.scenario_nodes,
        n_true_components=args.scenario_components,
        weights=tuple(_float_list(args.scenario_weights)),
        sparsity=args.scenario_sparsity,
        sigma_a_true=args.scenario_sigma_a,
        sigma_e_true=args.scenario_sigma_e,
        n_covariates=0 if args.scenario_no_covariates else 3,
        identity_kinship=args.scenario_identity_kinship,
        seed=args.seed,
    )


def cmd_simulate(args) -> int:
    scenario = _scenario_from_args(args)
    ds = generate_dataset(scenario)
    out = args.out
    os.makedirs(out, exist_ok=True)
    width = len(str(scenario.n_subjects))
    ids = [f"s{i + 1:0{width}d}" for i in range(scenario.n_subjects)]

    files = {
        "kinship.csv": lambda p: write_kinship(p, ids, ds.kinship.matrix),
        "phenotype.tsv": lambda p: write_phenotype(p, ids, ds.phenotype),
        "genotype.tsv": lambda p: write_genotypes(p, ids, ds.genotype),
    }
    if ds.covariates is not None:
        files["covariates.tsv"] = lambda p: write_covariates(p, ids, ds.covariates)
    for name, writer in files.items():
        writer(os.path.join(out, name))

    truth = {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "theta": ds.truth.theta.tolist(),
        "support_pairs": (ds.truth.support_pairs() + 1).tolist(),
        "component_supports": ds.truth.component_supports.astype(int).tolist(),
        "covariate_coefficients": (
            None if ds.truth.covariate_coefficients is None
            else ds.truth.covariate_coefficients.tolist()),
        "weights": list(scenario.weights),
    }
    write_json(os.path.join(out, "truth.json"), truth)

    manifest = {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "seed": scenario.seed,
        "scenario": scenario.to_flat_dict(),
        "files": {name: file_sha256(os.path.join(out, name))
                  for name in list(files) + ["truth.json"]},
    }
    write_json(os.path.join(out, "manifest.json"), manifest)
    print(f"wrote {len(manifest['files']) + 1} files to {out}")
    return 0


def _make_config(args) -> SamplerConfig:
    hyper = HyperParams(nu=float(args.nu))
    return SamplerConfig(n_iterations=args.iters, burn_in=args.burnin,
                         thinning=args.thin, n_chains=args.chains,
                         seed=args.seed, hyper=hyper, adapt_mh=args.adapt_mh)


def _config_echo(args) -> dict:
    skip = {"mode", "func"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _write_chain_csv(path, chains):
    rows = []
    n_comp = chains[0].n_components
    header = ["chain", "draw", "iteration", "log_likelihood"]
    header += [f"eta_{h + 1}" for h in range(n_comp)]
    header += [f"tau_{h + 1}" for h in range(n_comp)]
    rows.append(",".join(header))
    for c in chains:
        cfg = c.config
        for j in range(c.n_kept):
            it = cfg.burn_in + (j + 1) * cfg.thinning
            vals = [str(c.chain_index), str(j + 1), str(it),
                    repr(float(c.log_likelihood[j]))]
            vals += [repr(float(v)) for v in c.eta[j]]
            vals += [repr(float(v)) for v in c.tau[j]]
            rows.append(",".join(vals))
    atomic_write_text(path, "\n".join(rows) + "\n")


def cmd_fit(args) -> int:
    started = time.perf_counter()
    ds = load_dataset(args.kinship, args.pheno, args.geno, args.covariates)
    config = _make_config(args)
    fits = []
    all_chains = []
    for snp_index, genotype in enumerate(ds.genotypes):
        data = prepare_model_data(ds.phenotype, genotype, ds.kinship,
                                  ds.covariates, subject_ids=ds.subject_ids)
        chains = run_chains(data, config, n_components=args.H,
                            n_jobs=_n_jobs(), spawn_prefix=(snp_index,))
        summary = summarize_fit(chains, data)
        fits.append({
            "snp_id": genotype.snp_id,
            "n_components": args.H,
            "nu": args.nu,
            "data_hash": data.content_hash(),
            "summary": summary.to_dict(),
        })
        all_chains.extend(chains)
    if args.chains_out:
        _write_chain_csv(args.chains_out, all_chains)
    result = {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "method": "network_mixed_model",
        "config": _config_echo(args),
        "seed": args.seed,
        "fits": fits,
        "wall_clock_sec": time.perf_counter() - started,
    }
    write_json(args.out, result)
    print(f"wrote {args.out}")
    return 0


def cmd_grid(args) -> int:
    started = time.perf_counter()
    ds = load_dataset(args.kinship, args.pheno, args.geno, args.covariates)
    h_grid = _int_list(args.H)
    nu_grid = _float_list(args.nu)
    config = SamplerConfig(n_iterations=args.iters, burn_in=args.burnin,
                           thinning=args.thin, n_chains=args.chains,
                           seed=args.seed, adapt_mh=args.adapt_mh)
    fits = []
    for genotype in ds.genotypes:
        data = prepare_model_data(ds.phenotype, genotype, ds.kinship,
                                  ds.covariates, subject_ids=ds.subject_ids)
        res = grid_search(data, h_grid, nu_grid, config, n_jobs=_n_jobs())
        fits.append({
            "snp_id": genotype.snp_id,
            "chosen": {"n_components": res.n_components, "nu": res.nu},
            "data_hash": data.content_hash(),
            "summary": res.summary.to_dict(),
            "cells": [
                {"n_components": c.n_components, "nu": c.nu, "bic": c.bic,
                 "n_selected": (None if c.summary is None
                                else c.summary.n_selected),
                 "error": c.error}
                for c in res.cells
            ],
        })
    result = {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "method": "network_mixed_model",
        "config": _config_echo(args),
        "seed": args.seed,
        "fits": fits,
        "wall_clock_sec": time.perf_counter() - started,
    }
    write_json(args.out, result)
    print(f"wrote {args.out}")
    return 0


def cmd_baseline(args) -> int:
    started = time.perf_counter()
    ds = load_dataset(args.kinship, args.pheno, args.geno, args.covariates)
    fits = []
    for genotype in ds.genotypes:
        data = prepare_model_data(ds.phenotype, genotype, ds.kinship,
                                  ds.covariates, subject_ids=ds.subject_ids)
        res = fit_all_edges(data, alpha=args.alpha)
        fits.append({
            "snp_id": genotype.snp_id,
            "n_nodes": res.n_nodes,
            "bonferroni_alpha": res.bonferroni_alpha,
            "data_hash": data.content_hash(),
            "edges": {
                "beta": _nan_list(res.beta),
                "se": _nan_list(res.se),
                "pvalue": res.pvalue.tolist(),
                "sigma_g": _nan_list(res.sigma_g),
                "sigma_eps": _nan_list(res.sigma_eps),
                "significant": [bool(s) for s in res.significant],
            },
            "skipped": list(res.skipped),
        })
    result = {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "method": "edgewise_lmm",
        "config": _config_echo(args),
        "seed": args.seed,
        "fits": fits,
        "wall_clock_sec": time.perf_counter() - started,
    }
    write_json(args.out, result)
    print(f"wrote {args.out}")
    return 0


def _nan_list(arr) -> list:
    return [None if not np.isfinite(v) else float(v) for v in arr]


def _nan_arr(values) -> np.ndarray:
    return np.array([np.nan if v is None else float(v) for v in values])


def _csv_matrix(path, matrix):
    rows = [",".join(repr(float(v)) for v in row) for row in matrix]
    atomic_write_text(path, "\n".join(rows) + "\n")


def _report_model_fit(out, sfx, entry):
    summary = FitSummary.from_dict(entry["summary"])
    _csv_matrix(os.path.join(out, f"theta_mean{sfx}.csv"), summary.theta_mean)

    pairs = edge_pairs(summary.n_nodes)
    rows = ["node_k,node_l,mean,lo,hi,significant"]
    for e, (k, l) in enumerate(pairs):
        rows.append(f"{k + 1},{l + 1},{summary.edge_mean[e]!r},"
                    f"{summary.edge_lo[e]!r},{summary.edge_hi[e]!r},"
                    f"{int(summary.significant[e])}")
    atomic_write_text(os.path.join(out, f"edge_significance{sfx}.csv"),
                      "\n".join(rows) + "\n")

    rows = ["component,eta_mean,eta_sd,tau_mean,selected"]
    for h in range(summary.n_components):
        rows.append(f"{h + 1},{summary.eta_mean[h]!r},{summary.eta_sd[h]!r},"
                    f"{summary.tau_mean[h]!r},"
                    f"{int(h in summary.selected_components)}")
    atomic_write_text(os.path.join(out, f"tau_summary{sfx}.csv"),
                      "\n".join(rows) + "\n")

    diag = [("bic", summary.bic),
            ("log_likelihood_mean", summary.log_likelihood_mean),
            ("acceptance_sigma_a", summary.acceptance_sigma_a),
            ("acceptance_sigma_e", summary.acceptance_sigma_e),
            ("heritability_median", summary.heritability_median),
            ("n_selected", summary.n_selected),
            ("n_kept_total", summary.n_kept_total)]
    if summary.rhat:
        diag.extend((f"rhat_{name}", val) for name, val in sorted(summary.rhat.items()))
    rows = ["metric,value"] + [f"{k},{v!r}" for k, v in diag]
    atomic_write_text(os.path.join(out, f"diagnostics{sfx}.csv"),
                      "\n".join(rows) + "\n")


def _report_baseline_fit(out, sfx, entry):
    v = int(entry["n_nodes"])
    edges = entry["edges"]
    beta = _nan_arr(edges["beta"])
    se = _nan_arr(edges["se"])
    pairs = edge_pairs(v)

    theta = np.zeros((v, v))
    filled = np.where(np.isfinite(beta), beta, 0.0)
    theta[pairs[:, 0], pairs[:, 1]] = filled
    theta[pairs[:, 1], pairs[:, 0]] = filled
    _csv_matrix(os.path.join(out, f"theta_mean{sfx}.csv"), theta)

    # Bonferroni-level Wald interval, so the CI excludes zero exactly when
    # the edge clears the multiplicity-adjusted test.
    alpha = float(entry["bonferroni_alpha"]) / len(pairs)
    crit = float(ndtri(1.0 - alpha / 2.0))
    lo = beta - crit * se
    hi = beta + crit * se
    significant = edges["significant"]
    rows = ["node_k,node_l,mean,lo,hi,significant"]
    for e, (k, l) in enumerate(pairs):
        rows.append(f"{k + 1},{l + 1},{beta[e]!r},{lo[e]!r},{hi[e]!r},"
                    f"{int(significant[e])}")
    atomic_write_text(os.path.join(out, f"edge_significance{sfx}.csv"),
                      "\n".join(rows) + "\n")

    sigma_g = _nan_arr(edges["sigma_g"])
    sigma_eps = _nan_arr(edges["sigma_eps"])
    diag = [("n_significant", int(np.sum(significant))),
            ("n_skipped", len(entry["skipped"])),
            ("median_sigma_g", float(np.nanmedian(sigma_g))),
            ("median_sigma_eps", float(np.nanmedian(sigma_eps)))]
    rows = ["metric,value"] + [f"{k},{v!r}" for k, v in diag]
    atomic_write_text(os.path.join(out, f"diagnostics{sfx}.csv"),
                      "\n".join(rows) + "\n")


def cmd_report(args) -> int:
    payload = read_json(args.results)
    version = payload.get("schema_version")
    if version != RESULTS_SCHEMA_VERSION:
        raise DataFormatError(args.results,
                              f"unsupported results schema version {version!r}")
    os.makedirs(args.out, exist_ok=True)
    fits = payload.get("fits", [])
    if not fits:
        raise DataFormatError(args.results, "results contain no fits")
    multi = len(fits) > 1
    for entry in fits:
        sfx = f"_{entry['snp_id']}" if multi else ""
        if payload["method"] == "edgewise_lmm":
            _report_baseline_fit(args.out, sfx, entry)
        else:
            _report_model_fit(args.out, sfx, entry)
    print(f"wrote report CSVs to {args.out}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "grid": cmd_grid,
    "baseline": cmd_baseline,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        _emit_error("usage", str(err))
        return USAGE_ERROR
    try:
        return _COMMANDS[args.mode](args)
    except NumericalAbortError as err:
        _emit_error("numerical", str(err))
        return NUMERIC_ERROR
    except (DataFormatError, ValueError, OSError) as err:
        _emit_error("data", str(err))
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())

"""Batch command-line front end.

Subcommands: simulate, estimate, forecast, metrics, table1, censor.  Every
command writes its outputs plus a manifest.json recording the command line,
input content hashes, seed, option values and wall-clock duration, so runs
are citable and reproducible.  All randomness flows from an explicit
--seed; commands that need entropy refuse to run without one.

Exit codes: 0 success (and converged where that applies), 2 validation
error, 3 non-convergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .estimation import (
    EstimationError,
    FitOptions,
    em_fit,
    fit_metrics,
    gradient_fit,
    multi_start,
    null_log_likelihood,
    standard_errors,
)
from .design import build_design
from .forecast import (
    estimated_class_shares,
    forecast,
    identity_scenario,
    scenario_from_json,
    write_class_shares_csv,
    write_mode_shares_csv,
)
from .hmm import ZeroLikelihoodError, dataset_loglik
from .model import (
    SpecError,
    load_json,
    n_free_params,
    params_from_json,
    params_to_json,
    save_json,
    spec_from_json,
)
from .panel import PanelValidationError, censor_left, load_panel, write_panel
from .simulation import GenerativeConfig, generate_panel, table1_experiment

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NO_CONVERGENCE = 3
EXIT_IO = 4


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, inputs: list, seed, options: dict,
                    t_start: float):
    manifest = {
        "command": command,
        "tool_version": __version__,
        "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in inputs],
        "seed": seed,
        "options": options,
        "duration_seconds": round(time.time() - t_start, 3),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    save_json(manifest, out_dir / "manifest.json")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(args):
    return load_panel(args.choices, args.covariates, args.schema)


def cmd_simulate(args) -> int:
    t0 = time.time()
    doc = load_json(args.config)
    spec = spec_from_json(doc["spec"])
    params = params_from_json(doc["params"], spec)
    config = GenerativeConfig(
        spec=spec,
        true_params=params,
        n_individuals=int(doc["n_individuals"]),
        n_waves=int(doc["n_waves"]),
        situations_per_wave=int(doc.get("situations_per_wave", 1)),
        covariate_generators=doc.get("covariates", {}),
        attribute_generators=doc.get("attributes", {}),
        seed=args.seed,
    )
    ds, states = generate_panel(config)
    out = _out_dir(args)
    write_panel(ds, out / "choices.csv", out / "covariates.csv", out / "schema.json")
    with open(out / "latent_truth.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["person_id", "wave", "class_index", "class_name"])
        for n, rec in enumerate(ds.individuals):
            for t in range(states.shape[1]):
                s = int(states[n, t])
                writer.writerow([rec.person_id, t + 1, s + 1, spec.classes[s].name])
    _write_manifest(out, "simulate", [args.config], args.seed,
                    {"threads": args.threads}, t0)
    return EXIT_OK


def cmd_estimate(args) -> int:
    t0 = time.time()
    ds = _load_dataset(args)
    spec = spec_from_json(load_json(args.spec))
    options = FitOptions(seed=args.seed, n_threads=args.threads)
    params, report, runs = multi_start(
        ds, spec, n_starts=args.starts, seed=args.seed, fitter=args.method,
        options=options,
    )
    out = _out_dir(args)
    doc = params_to_json(params, spec)
    if args.standard_errors:
        doc["standard_errors"] = standard_errors(ds, spec, params)
    save_json(doc, out / "params.json")
    report_doc = report.to_json()
    report_doc["starts"] = [
        {"start": r["start"], "log_likelihood": r["log_likelihood"],
         "converged": r["converged"], "iterations": r["iterations"]}
        for r in runs
    ]
    save_json(report_doc, out / "fit_report.json")
    with open(out / "ll_trace.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "log_likelihood"])
        for i, v in enumerate(report.ll_trace):
            writer.writerow([i, repr(v)])
    _write_manifest(out, "estimate",
                    [args.choices, args.covariates, args.schema, args.spec],
                    args.seed,
                    {"method": args.method, "starts": args.starts,
                     "threads": args.threads}, t0)
    return EXIT_OK if report.converged else EXIT_NO_CONVERGENCE


def cmd_forecast(args) -> int:
    t0 = time.time()
    ds = _load_dataset(args)
    spec = spec_from_json(load_json(args.spec))
    params = params_from_json(load_json(args.params), spec)
    scenario = (scenario_from_json(load_json(args.scenario))
                if args.scenario else identity_scenario())
    result = forecast(ds, spec, params, args.horizon, scenario)
    out = _out_dir(args)
    write_class_shares_csv(result, out / "class_shares.csv")
    write_mode_shares_csv(result, out / "mode_shares.csv")
    if result.average_transition is not None:
        with open(out / "avg_transition.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["from_class", "to_class", "probability"])
            for r, row in enumerate(result.average_transition):
                for s, v in enumerate(row):
                    writer.writerow([result.class_names[r], result.class_names[s],
                                     repr(float(v))])
    inputs = [args.choices, args.covariates, args.schema, args.spec, args.params]
    if args.scenario:
        inputs.append(args.scenario)
    _write_manifest(_out_dir(args), "forecast", inputs, None,
                    {"horizon": args.horizon}, t0)
    return EXIT_OK


def cmd_metrics(args) -> int:
    t0 = time.time()
    ds = _load_dataset(args)
    spec = spec_from_json(load_json(args.spec))
    params = params_from_json(load_json(args.params), spec)
    design = build_design(ds, spec)
    ll = dataset_loglik(design, spec, params)
    ll0 = null_log_likelihood(design)
    K = n_free_params(spec)
    n_obs = design.n_sit
    doc = {
        "log_likelihood": ll,
        "null_log_likelihood": ll0,
        "n_parameters": K,
        "n_observations": n_obs,
        **fit_metrics(ll, K, n_obs, ll0),
        "null_model": "equal probability over each situation's available set",
    }
    out = _out_dir(args)
    save_json(doc, out / "metrics.json")
    _write_manifest(out, "metrics",
                    [args.choices, args.covariates, args.schema, args.spec,
                     args.params], None, {}, t0)
    return EXIT_OK


def cmd_table1(args) -> int:
    t0 = time.time()
    result = table1_experiment(args.seed)
    out = _out_dir(args)
    with open(out / "table1.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variable", "true_value", "full_panel", "censored_panel"])
        for row in result["table"]:
            writer.writerow([row["variable"], repr(row["true_value"]),
                             repr(row["full_panel"]), repr(row["censored_panel"])])
    provenance = {
        "seed": result["seed"],
        "n_individuals": result["n_individuals"],
        "n_waves": result["n_waves"],
        "first_kept_wave": result["first_kept_wave"],
        "censored_initialization_target": result["censored_initialization_target"],
        "tolerance_band": 0.02,
        "iterations": {k: r.iterations for k, r in result["reports"].items()},
        "log_likelihoods": {k: r.log_likelihood for k, r in result["reports"].items()},
    }
    save_json(provenance, out / "provenance.json")
    _write_manifest(out, "table1", [], args.seed, {}, t0)
    return EXIT_OK


def cmd_censor(args) -> int:
    t0 = time.time()
    ds = _load_dataset(args)
    censored = censor_left(ds, args.first_kept_wave)
    out = _out_dir(args)
    write_panel(censored, out / "choices.csv", out / "covariates.csv",
                out / "schema.json")
    _write_manifest(out, "censor", [args.choices, args.covariates, args.schema],
                    None, {"first_kept_wave": args.first_kept_wave}, t0)
    return EXIT_OK


def _add_data_args(p):
    p.add_argument("--choices", required=True, help="long-format choices CSV")
    p.add_argument("--covariates", required=True, help="per-(person, wave) covariates CSV")
    p.add_argument("--schema", required=True, help="JSON schema sidecar")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmmchoice",
        description="Latent preference dynamics: estimate, simulate, forecast.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic panel from known parameters")
    p.add_argument("config", help="generative config JSON (spec, params, sizes, generators)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit parameters by maximum likelihood")
    _add_data_args(p)
    p.add_argument("--spec", required=True, help="model spec JSON")
    p.add_argument("--method", choices=["em", "gradient"], default="em")
    p.add_argument("--starts", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--standard-errors", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("forecast", help="propagate class shares through future waves")
    _add_data_args(p)
    p.add_argument("--spec", required=True)
    p.add_argument("--params", required=True, help="fitted parameters JSON")
    p.add_argument("--scenario", default=None, help="scenario JSON (optional)")
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("metrics", help="fit metrics of given parameters on a dataset")
    _add_data_args(p)
    p.add_argument("--spec", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("table1", help="two-state recovery and censoring experiment")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser("censor", help="drop leading waves and re-index")
    _add_data_args(p)
    p.add_argument("--first-kept-wave", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_censor)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PanelValidationError, SpecError, ZeroLikelihoodError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

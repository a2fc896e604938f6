"""
Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 numeric failure, 3 a check
subcommand ran but at least one of its checks failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DiffvarError, NumericError, ParameterError, SimulationError
from .grid import RNG_ALGORITHM, GridDesign, GridProcess, ProcessSpec, evaluate_function, simulate_process
from .harness import (
    ExperimentConfig,
    load_config_file,
    moments_check,
    rate_check,
    replicate_seed,
    reproduce_table1,
    run_experiment,
    write_outputs,
)
from .pipeline import EVAL_GRID, estimate_variance, evaluate

logger = logging.getLogger("diffvar")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3

# flag name -> ExperimentConfig field
_OVERRIDES = {
    "seed": "seed",
    "replicates": "replicates",
    "n": "n",
    "sigma": "sigma",
    "theta": "theta",
    "kernel_order": "kernel_order",
    "kernel_smoothness": "kernel_smoothness",
    "boundary_policy": "boundary_policy",
    "phi": "phi",
    "h": "h",
    "convention": "convention",
    "workers": "workers",
    "dump_curves": "dump_curves",
    "mc_replicates": "mc_replicates",
    "diagonal": "diagonal",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat YAML or JSON file of configuration keys")
    common.add_argument("--out-dir", type=Path, default=Path("diffvar-out"), help="output directory")
    common.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
    common.add_argument("--replicates", type=int, help="replicates per cell")
    common.add_argument("--n", help="comma-separated grid sizes, e.g. 100,200,500")
    common.add_argument("--sigma", help="sine | step | constant:<c>")
    common.add_argument("--theta", choices=("0.1", "0.01", "indep"), help="exponential range or indep")
    common.add_argument("--kernel-order", type=int, help="even kernel order (2, 4, 6 or 8)")
    common.add_argument("--kernel-smoothness", type=int, help="number of vanishing edge derivatives")
    common.add_argument("--boundary-policy", choices=("renormalize", "fixed_bandwidth_edge"))
    common.add_argument("--phi", type=float, help="range of the deviance working covariance (0 disables whitening)")
    common.add_argument("--h", type=int, help="differencing lag")
    common.add_argument("--convention", choices=("endpoint", "midpoint"), help="grid convention")
    common.add_argument("--diagonal", choices=("computed", "literal"), help="smoother diagonal used in the CV score")
    common.add_argument("--format", choices=("csv", "json-lines"), default="csv", help="per-replicate output format")
    common.add_argument("--workers", type=int, help="parallel worker processes")
    common.add_argument("--dump-curves", type=int, help="write curve files for the first K replicates")
    common.add_argument("--mc-replicates", type=int, help="Monte Carlo replicates for moments-check")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(
        prog="diffvar",
        description="Difference-based variance-function estimation under correlated errors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate realizations and write them as CSV")
    p = sub.add_parser("estimate", parents=[common], help="estimate the variance function of one series")
    p.add_argument("--input", type=Path, help="CSV with columns s,z (zero-mean data); simulated if omitted")
    sub.add_parser("select", parents=[common], help="run the selected-bandwidth experiment")
    sub.add_parser("oracle", parents=[common], help="run the oracle-bandwidth experiment")
    sub.add_parser("moments-check", parents=[common], help="Monte Carlo check of the squared-residual moments")
    p = sub.add_parser("rate-check", parents=[common], help="DMSE slope in n and correlation decay")
    p.add_argument("--method", choices=("oracle", "select"), default="oracle")
    sub.add_parser("reproduce-table1", parents=[common], help="oracle and selected bandwidths for every cell")
    return parser


def resolve_config(args: argparse.Namespace, mode: str | None = None) -> ExperimentConfig:
    """Config file values, overridden by any flag given on the command line."""
    values = load_config_file(args.config) if args.config else {}
    values = {str(k).replace("-", "_"): v for k, v in values.items()}
    for flag, name in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[name] = value
    if mode is not None:
        values["mode"] = mode
    try:
        return ExperimentConfig.from_mapping(values)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc


def _read_series(path: Path, convention: str) -> GridProcess:
    try:
        with path.open() as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not rows or not {"s", "z"} <= set(rows[0]):
        raise ConfigError(f"{path} must be a CSV with columns s and z")
    try:
        s = np.array([float(r["s"]) for r in rows])
        z = np.array([float(r["z"]) for r in rows])
    except ValueError as exc:
        raise ConfigError(f"non-numeric entry in {path}: {exc}") from exc
    design = GridDesign(len(s), convention)
    if not np.allclose(s, design.locations, rtol=0, atol=1e-9):
        raise ConfigError(f"locations in {path} do not form the {convention} grid with n={len(s)}")
    return GridProcess(design, z, ProcessSpec())


def _cmd_simulate(args, config: ExperimentConfig) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = config.process_spec()
    for k, n in enumerate(config.n):
        path = out / f"simulated_n{n}.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("replicate", "seed", "s", "z", "true_sd"))
            for r in range(config.replicates):
                seed = replicate_seed(config.seed, k, config.replicates, r)
                proc = simulate_process(spec, config.design(n), seed)
                sd = evaluate_function(spec.sd, proc.locations)
                for s, z, v in zip(proc.locations, proc.values, sd):
                    writer.writerow((r, seed, repr(float(s)), repr(float(z)), repr(float(v))))
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_estimate(args, config: ExperimentConfig) -> int:
    if args.input is not None:
        process = _read_series(args.input, config.convention)
        truth = None
    else:
        spec = config.process_spec()
        process = simulate_process(spec, config.design(config.n[0]), config.seed)
        truth = spec.sd
    est = estimate_variance(
        process,
        config.kernel(),
        config.candidate_grid(process.design.n),
        config.phi,
        config.h,
        EVAL_GRID,
        config.max_lag,
        config.diagonal,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    curve = est.curve
    path = out / "estimate.csv"
    true_sd = evaluate_function(truth, curve.eval_points) if truth is not None else None
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("s", "estimated_variance", "estimated_sd") + (("true_sd",) if truth is not None else ()))
        for k, (s, v) in enumerate(zip(curve.eval_points, curve.values)):
            row = [repr(float(s)), repr(float(v)), repr(float(np.sqrt(v)))]
            if true_sd is not None:
                row.append(repr(float(true_sd[k])))
            writer.writerow(row)
    info = {
        "bandwidth": est.selection.bandwidth,
        "theta_hat": est.fit.theta,
        "sigma2_star": est.fit.sigma2_star,
        "zstar_variance": est.fit.zstar_variance,
        "degenerate_fit": est.fit.degenerate,
        "kernel": config.kernel().label,
        "boundary_policy": config.boundary_policy,
        "phi": config.phi,
        "rng": RNG_ALGORITHM,
        "scores": [[lam, score] for lam, score in est.selection.scores],
    }
    if truth is not None:
        report = evaluate(curve, truth)
        info.update(dmse=report.dmse, max=report.max, max_sd=report.max_sd, seed=config.seed)
    (out / "estimate.json").write_text(json.dumps(info, indent=2) + "\n")
    print(f"bandwidth={est.selection.bandwidth:.6g} theta_hat={est.fit.theta:.6g} sigma2_star={est.fit.sigma2_star:.6g}")
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_experiment(args, config: ExperimentConfig) -> int:
    result = run_experiment(config)
    paths = write_outputs(result, args.out_dir, args.format)
    print(paths["summary_text"].read_text(), end="")
    return EXIT_OK


def _cmd_table1(args, config: ExperimentConfig) -> int:
    for sigma, result in reproduce_table1(config).items():
        paths = write_outputs(result, args.out_dir, args.format, tag=sigma)
        print(paths["summary_text"].read_text())
    return EXIT_OK


def _write_report(args, report, name: str) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    (out / f"{name}.txt").write_text(report.render())
    print(report.render(), end="")
    return EXIT_OK if report.passed else EXIT_CHECK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    command = args.command
    try:
        if command in ("select", "oracle"):
            config = resolve_config(args, command)
            return _cmd_experiment(args, config)
        config = resolve_config(args, "rate-check" if command == "rate-check" else None)
        if command == "simulate":
            return _cmd_simulate(args, config)
        if command == "estimate":
            return _cmd_estimate(args, config)
        if command == "reproduce-table1":
            return _cmd_table1(args, config)
        if command == "moments-check":
            return _write_report(args, moments_check(config), "moments_check")
        if command == "rate-check":
            return _write_report(args, rate_check(config, args.method), "rate_check")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, SimulationError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ParameterError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DiffvarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    parser.error(f"unknown command {command!r}")
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

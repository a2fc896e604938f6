"""
Seeded simulation experiments, summaries and verification checks.

Every replicate is a pure function of the configuration and its seed, so runs
are reproducible and the worker pool (if any) only changes wall time. Seeds are
assigned as ``base_seed + cell * replicates + r`` where ``cell`` enumerates the
``(sigma, theta, n)`` cells of a run, so no seed is reused across cells while
the oracle and selected methods of one cell see the same realizations.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .bandwidth import DEFAULT_GRID_SIZE, DEFAULT_PHI, CandidateGrid, whiten, whitening_transform
from .errors import ConfigError, DiffvarError, NumericError
from .grid import (
    RNG_ALGORITHM,
    CorrelationModel,
    FunctionSpec,
    GridDesign,
    ProcessSpec,
    evaluate_function,
    is_positive_on,
    simulate_many,
    simulate_process,
)
from .kernels import SUPPORTED_ORDERS, KernelSpec, build_base_kernel
from .pipeline import (
    DEFAULT_MAX_LAG,
    EVAL_GRID,
    CorrelationFit,
    estimate_variance,
    evaluate,
    oracle_bandwidth,
    plugin_variance,
)
from .variogram import (
    estimate_local_variogram,
    isserlis_cov,
    moment_inputs,
    p_taylor,
    pseudo_residuals,
    squared_residual_correlation,
    squared_residual_moments,
)

logger = logging.getLogger(__name__)

MODES = ("select", "oracle", "moments-check", "rate-check")
METHOD_LABELS = {"oracle": "Diff-oracle", "select": "Diff-selected"}
THETA_CHOICES = ("0.1", "0.01", "indep")
MAX_ERROR_FRACTION = 0.10
SUMMARY_COLUMNS = ("method", "n", "theta", "mean", "sd")
RUN_COLUMNS = (
    "method",
    "sigma",
    "theta",
    "n",
    "replicate",
    "seed",
    "bandwidth",
    "theta_hat",
    "sigma2_star",
    "degenerate",
    "dmse",
    "max",
    "max_sd",
    "floored",
    "error",
)


class BatchFailure(NumericError):
    """More than the tolerated fraction of replicates in a cell failed."""


# -- configuration ---------------------------------------------------------------


def parse_sigma(text: str) -> FunctionSpec:
    """``sine``, ``step`` or ``constant:<c>``."""
    text = str(text).strip()
    if text == "sine":
        return FunctionSpec.sine()
    if text == "step":
        return FunctionSpec.step()
    if text.startswith("constant:"):
        try:
            c = float(text.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"bad constant sigma {text!r}") from exc
        return FunctionSpec.constant(c)
    raise ConfigError(f"sigma must be sine, step or constant:<c>, got {text!r}")


def parse_theta(text) -> CorrelationModel:
    label = normalize_theta(text)
    if label == "indep":
        return CorrelationModel.independent()
    return CorrelationModel.exponential(float(label))


def normalize_theta(text) -> str:
    label = str(text).strip().lower()
    if label in ("indep", "independent", "0", "none"):
        return "indep"
    try:
        value = float(label)
    except ValueError as exc:
        raise ConfigError(f"theta must be 0.1, 0.01 or indep, got {text!r}") from exc
    label = f"{value:g}"
    if label not in THETA_CHOICES:
        raise ConfigError(f"theta must be one of {THETA_CHOICES}, got {text!r}")
    return label


def _parse_n(value) -> tuple[int, ...]:
    if isinstance(value, str):
        items = [v for v in value.replace(" ", "").split(",") if v]
    elif isinstance(value, Iterable):
        items = list(value)
    else:
        items = [value]
    try:
        out = tuple(int(v) for v in items)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"n must be a list of integers, got {value!r}") from exc
    if any(float(v) != int(v) for v in items if not isinstance(v, str)):
        raise ConfigError(f"n must be integers, got {value!r}")
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an experiment's output."""

    sigma: str = "sine"
    theta: str = "0.1"
    n: tuple[int, ...] = (100,)
    replicates: int = 100
    kernel_order: int = 2
    kernel_smoothness: int = 3
    boundary_policy: str = "fixed_bandwidth_edge"
    grid_size: int = DEFAULT_GRID_SIZE
    grid_upper: float = 0.5
    phi: float = DEFAULT_PHI
    h: int = 1
    seed: int = 20240601
    convention: str = "endpoint"
    mode: str = "select"
    diagonal: str = "computed"
    max_lag: int = DEFAULT_MAX_LAG
    mc_replicates: int = 20000
    dump_curves: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "n", _parse_n(self.n))
        object.__setattr__(self, "theta", normalize_theta(self.theta))
        self.validate()

    def validate(self) -> None:
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if not self.n:
            raise ConfigError("n list is empty")
        if any(v < 20 for v in self.n):
            raise ConfigError(f"every n must be >= 20, got {self.n}")
        sigma = parse_sigma(self.sigma)
        if not is_positive_on(sigma, GridDesign(max(self.n), self.convention_checked())):
            raise ConfigError(f"sigma {self.sigma!r} is not positive on [0, 1]")
        if self.kernel_order not in SUPPORTED_ORDERS:
            raise ConfigError(f"kernel order must be one of {SUPPORTED_ORDERS}")
        if not 1 <= self.kernel_smoothness <= 4:
            raise ConfigError("kernel smoothness must lie in 1..4")
        if self.boundary_policy not in ("renormalize", "fixed_bandwidth_edge"):
            raise ConfigError(f"unknown boundary policy {self.boundary_policy!r}")
        if self.grid_size < 1 or not 0 < self.grid_upper <= 0.5:
            raise ConfigError("candidate grid needs size >= 1 and upper bound in (0, 0.5]")
        if self.phi < 0:
            raise ConfigError("phi must be >= 0")
        if self.h < 1:
            raise ConfigError("lag h must be >= 1")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.diagonal not in ("computed", "literal"):
            raise ConfigError("diagonal must be computed or literal")
        if self.mc_replicates < 2 or self.workers < 1 or self.dump_curves < 0:
            raise ConfigError("mc_replicates >= 2, workers >= 1 and dump_curves >= 0 are required")

    def convention_checked(self) -> str:
        if self.convention not in ("midpoint", "endpoint"):
            raise ConfigError(f"unknown grid convention {self.convention!r}")
        return self.convention

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> "ExperimentConfig":
        """Build from a flat key-value map; keys may use ``-`` or ``_``."""
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in mapping.items():
            name = str(key).replace("-", "_")
            if name not in names:
                raise ConfigError(f"unknown configuration key {key!r}")
            kwargs[name] = value
        return cls(**_coerce(kwargs))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **_coerce(changes))

    def process_spec(self) -> ProcessSpec:
        return ProcessSpec(FunctionSpec.constant(0.0), parse_sigma(self.sigma), parse_theta(self.theta))

    def design(self, n: int) -> GridDesign:
        return GridDesign(int(n), self.convention_checked())

    def kernel(self) -> KernelSpec:
        return build_base_kernel(self.kernel_order, self.boundary_policy, self.kernel_smoothness)

    def candidate_grid(self, n: int) -> CandidateGrid:
        return CandidateGrid.default(self.design(n).spacing, self.grid_size, self.grid_upper)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["n"] = list(self.n)
        return out


_INT_FIELDS = {
    "replicates",
    "kernel_order",
    "kernel_smoothness",
    "grid_size",
    "h",
    "seed",
    "max_lag",
    "mc_replicates",
    "dump_curves",
    "workers",
}
_FLOAT_FIELDS = {"phi", "grid_upper"}


def _coerce(kwargs: dict) -> dict:
    out = dict(kwargs)
    try:
        for key in _INT_FIELDS & out.keys():
            value = out[key]
            if isinstance(value, float) and not value.is_integer():
                raise ConfigError(f"{key} must be an integer, got {value!r}")
            out[key] = int(value)
        for key in _FLOAT_FIELDS & out.keys():
            out[key] = float(out[key])
        for key in ("sigma", "theta", "mode", "convention", "diagonal", "boundary_policy"):
            if key in out:
                out[key] = str(out[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad configuration value: {exc}") from exc
    return out


def load_config_file(path: str | Path) -> dict:
    """Read a flat YAML or JSON document into a dict."""
    import yaml

    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict) or any(isinstance(v, dict) for v in data.values()):
        raise ConfigError("config file must be a flat key-value map")
    return data


# -- replicate execution ----------------------------------------------------------


@dataclass(frozen=True)
class RunRecord:
    """One method applied to one replicate of one cell."""

    method: str
    sigma: str
    theta: str
    n: int
    replicate: int
    seed: int
    bandwidth: float = math.nan
    theta_hat: float = math.nan
    sigma2_star: float = math.nan
    degenerate: bool = False
    dmse: float = math.nan
    max: float = math.nan
    max_sd: float = math.nan
    floored: int = 0
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in RUN_COLUMNS}


@dataclass(frozen=True, eq=False)
class CurveDump:
    method: str
    sigma: str
    theta: str
    n: int
    replicate: int
    eval_points: np.ndarray
    true_sd: np.ndarray
    estimated_sd: np.ndarray


@dataclass(frozen=True)
class _Task:
    config: ExperimentConfig
    methods: tuple[str, ...]
    n: int
    replicate: int
    seed: int


def replicate_seed(base_seed: int, cell: int, replicates: int, replicate: int) -> int:
    return int(base_seed) + int(cell) * int(replicates) + int(replicate)


def _error_code(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}"


def _run_task(task: _Task):
    """Run every requested method on one simulated replicate.

    Returns ``(records, timings, curves)``; method failures are recorded in the
    row rather than raised.
    """
    config = task.config
    spec = config.process_spec()
    design = config.design(task.n)
    kernel = config.kernel()
    grid = config.candidate_grid(task.n)
    truth = spec.sd
    base = dict(sigma=parse_sigma(config.sigma).label, theta=config.theta, n=task.n, replicate=task.replicate, seed=task.seed)
    records, timings, curves = [], [], []
    try:
        process = simulate_process(spec, design, task.seed)
    except DiffvarError as exc:
        for method in task.methods:
            records.append(RunRecord(METHOD_LABELS[method], error=_error_code(exc), **base))
            timings.append(0.0)
        return records, timings, curves

    for method in task.methods:
        start = time.perf_counter()
        label = METHOD_LABELS[method]
        try:
            if method == "oracle":
                known = CorrelationFit.known(spec.correlation)
                sel = oracle_bandwidth(process, kernel, grid, truth, known, config.h)
                lv = estimate_local_variogram(pseudo_residuals(process, config.h), kernel, sel.bandwidth, EVAL_GRID)
                curve = plugin_variance(lv, known, config.h, design)
                fit, floored = known, lv.metadata["floored"]
            else:
                est = estimate_variance(
                    process, kernel, grid, config.phi, config.h, EVAL_GRID, config.max_lag, config.diagonal
                )
                sel, curve, fit = est.selection, est.curve, est.fit
                floored = est.local_variogram.metadata["floored"] + curve.metadata["floored_sites"]
            report = evaluate(curve, truth)
        except DiffvarError as exc:
            records.append(RunRecord(label, error=_error_code(exc), **base))
            timings.append(time.perf_counter() - start)
            continue
        theta_hat = math.nan if (fit.degenerate and method == "oracle") else fit.theta
        records.append(
            RunRecord(
                label,
                bandwidth=sel.bandwidth,
                theta_hat=float(theta_hat),
                sigma2_star=float(fit.sigma2_star),
                degenerate=bool(fit.degenerate),
                dmse=report.dmse,
                max=report.max,
                max_sd=report.max_sd,
                floored=int(floored),
                **base,
            )
        )
        timings.append(time.perf_counter() - start)
        if task.replicate < config.dump_curves:
            curves.append(
                CurveDump(
                    label,
                    base["sigma"],
                    config.theta,
                    task.n,
                    task.replicate,
                    np.asarray(curve.eval_points),
                    np.asarray(evaluate_function(truth, curve.eval_points)),
                    np.sqrt(curve.values),
                )
            )
    return records, timings, curves


@dataclass(eq=False)
class ExperimentResult:
    config: ExperimentConfig
    records: list[RunRecord] = field(default_factory=list)
    timings: list[float] = field(default_factory=list)
    curves: list[CurveDump] = field(default_factory=list)

    def extend(self, other: "ExperimentResult") -> None:
        self.records.extend(other.records)
        self.timings.extend(other.timings)
        self.curves.extend(other.curves)

    def rows(self, method: str | None = None, n: int | None = None, theta: str | None = None) -> list[RunRecord]:
        return [
            r
            for r in self.records
            if (method is None or r.method == METHOD_LABELS.get(method, method))
            and (n is None or r.n == n)
            and (theta is None or r.theta == theta)
        ]

    def values(self, column: str, **where) -> np.ndarray:
        return np.array([getattr(r, column) for r in self.rows(**where) if r.ok], dtype=float)

    def summary(self) -> list[dict]:
        """Bandwidth mean and standard deviation per (method, n, theta) cell."""
        out = []
        keys = []
        for r in self.records:
            key = (r.method, r.n, r.theta)
            if key not in keys:
                keys.append(key)
        for method, n, theta in keys:
            lam = self.values("bandwidth", method=method, n=n, theta=theta)
            sd = float(np.std(lam, ddof=1)) if lam.size > 1 else math.nan
            out.append({"method": method, "n": n, "theta": theta, "mean": float(np.mean(lam)) if lam.size else math.nan, "sd": sd})
        return out


def _execute(tasks: list[_Task], workers: int):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            yield from pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers)))
    else:
        yield from map(_run_task, tasks)


def run_experiment(config: ExperimentConfig, methods: Sequence[str] | None = None, cell_offset: int = 0) -> ExperimentResult:
    """Run every replicate for each ``n`` of ``config``.

    ``methods`` defaults to the config mode (``select`` or ``oracle``); pass
    both to get paired rows on shared realizations.
    """
    if methods is None:
        if config.mode not in METHOD_LABELS:
            raise ConfigError(f"run_experiment needs mode select or oracle, got {config.mode!r}")
        methods = (config.mode,)
    methods = tuple(methods)
    if not methods or any(m not in METHOD_LABELS for m in methods):
        raise ConfigError(f"methods must be drawn from {tuple(METHOD_LABELS)}")
    result = ExperimentResult(config)
    for k, n in enumerate(config.n):
        cell = cell_offset + k
        tasks = [
            _Task(config, methods, n, r, replicate_seed(config.seed, cell, config.replicates, r))
            for r in range(config.replicates)
        ]
        for records, timings, curves in _execute(tasks, config.workers):
            result.records.extend(records)
            result.timings.extend(timings)
            result.curves.extend(curves)
        for method in methods:
            rows = result.rows(method=method, n=n, theta=config.theta)
            failed = [r for r in rows if not r.ok]
            logger.info("%s n=%d theta=%s: %d/%d replicates failed", METHOD_LABELS[method], n, config.theta, len(failed), len(rows))
            if len(failed) > MAX_ERROR_FRACTION * len(rows):
                raise BatchFailure(
                    f"{len(failed)} of {len(rows)} replicates failed for {METHOD_LABELS[method]} "
                    f"n={n} theta={config.theta}; first error: {failed[0].error}"
                )
    return result


def reproduce_table1(
    config: ExperimentConfig,
    sigmas: Sequence[str] = ("sine", "step"),
    thetas: Sequence[str] = THETA_CHOICES,
) -> dict[str, ExperimentResult]:
    """Oracle and selected bandwidths for every (sigma, theta, n) cell.

    Returns one result per sigma kind; seeds differ across all cells.
    """
    out = {}
    cell = 0
    for sigma in sigmas:
        combined = ExperimentResult(config.replace(sigma=sigma))
        for theta in thetas:
            cfg = config.replace(sigma=sigma, theta=theta)
            combined.extend(run_experiment(cfg, ("oracle", "select"), cell_offset=cell))
            cell += len(cfg.n)
        out[sigma] = combined
    return out


# -- output -----------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_table(path: Path, rows: list[dict], columns: Sequence[str], fmt: str) -> Path:
    if fmt == "json-lines":
        path = path.with_suffix(".jsonl")
        with path.open("w") as fh:
            for row in rows:
                clean = {c: (None if isinstance(row[c], float) and math.isnan(row[c]) else row[c]) for c in columns}
                fh.write(json.dumps(clean, sort_keys=False) + "\n")
        return path
    path = path.with_suffix(".csv")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])
    return path


def render_summary(summary: list[dict], title: str) -> str:
    """Fixed-width text table: one row per (method, n), one column per theta."""
    thetas = [t for t in THETA_CHOICES if any(r["theta"] == t for r in summary)]
    width = 34
    lines = [title, "", f"{'method':<15}{'n':>6}  " + "".join(f"{'theta=' + t:<{width}}" for t in thetas)]
    seen = []
    for r in summary:
        if (r["method"], r["n"]) not in seen:
            seen.append((r["method"], r["n"]))
    for method, n in seen:
        cells = []
        for t in thetas:
            match = [r for r in summary if r["method"] == method and r["n"] == n and r["theta"] == t]
            cells.append(f"{match[0]['mean']:.12f} ({match[0]['sd']:.12f})" if match else "-")
        lines.append(f"{method:<15}{n:>6}  " + "".join(f"{c:<{width}}" for c in cells))
    lines.append("")
    lines.append("cells: mean (sd) of the bandwidth over replicates")
    return "\n".join(line.rstrip() for line in lines) + "\n"


def parse_summary_text(text: str) -> list[dict]:
    """Inverse of :func:`render_summary`, used to check the two outputs agree."""
    lines = text.splitlines()
    header = next(i for i, line in enumerate(lines) if line.startswith("method"))
    thetas = [tok.split("=", 1)[1] for tok in lines[header].split() if tok.startswith("theta=")]
    out = []
    for line in lines[header + 1 :]:
        if not line.strip():
            break
        tokens = line.split()
        method, n, rest = tokens[0], int(tokens[1]), tokens[2:]
        k = 0
        for t in thetas:
            if rest[k] == "-":
                k += 1
                continue
            out.append({"method": method, "n": n, "theta": t, "mean": float(rest[k]), "sd": float(rest[k + 1].strip("()"))})
            k += 2
    return out


def write_outputs(result: ExperimentResult, out_dir: str | Path, fmt: str = "csv", tag: str = "") -> dict[str, Path]:
    """Write per-replicate rows, summaries, curve dumps and timings.

    Wall times go to a separate ``timing`` file so that every other file is
    byte-identical across repeated runs with the same configuration.
    """
    if fmt not in ("csv", "json-lines"):
        raise ConfigError(f"format must be csv or json-lines, got {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    suffix = f"_{tag}" if tag else ""
    paths = {}
    paths["runs"] = _write_table(out / f"runs{suffix}", [r.to_dict() for r in result.records], RUN_COLUMNS, fmt)
    summary = result.summary()
    paths["summary"] = _write_table(out / f"summary{suffix}", summary, SUMMARY_COLUMNS, fmt)
    cfg = result.config
    title = (
        f"Bandwidth selection summary: sigma={parse_sigma(cfg.sigma).label}, replicates={cfg.replicates}, "
        f"kernel={cfg.kernel().label}, boundary={cfg.boundary_policy}, phi={cfg.phi:g}, seed={cfg.seed}"
    )
    paths["summary_text"] = out / f"summary{suffix}.txt"
    paths["summary_text"].write_text(render_summary(summary, title))
    timing_rows = [
        {"method": r.method, "theta": r.theta, "n": r.n, "replicate": r.replicate, "wall_time": t}
        for r, t in zip(result.records, result.timings)
    ]
    paths["timing"] = _write_table(out / f"timing{suffix}", timing_rows, ("method", "theta", "n", "replicate", "wall_time"), "csv")
    meta = {"config": cfg.to_dict(), "rng": RNG_ALGORITHM, "kernel_coefficients": list(cfg.kernel().coefficients)}
    paths["metadata"] = out / f"metadata{suffix}.json"
    paths["metadata"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if result.curves:
        curve_dir = out / "curves"
        curve_dir.mkdir(exist_ok=True)
        for c in result.curves:
            name = f"{c.method}_{c.sigma.replace(':', '-')}_theta{c.theta}_n{c.n}_rep{c.replicate}.csv"
            path = curve_dir / name
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(("s", "true_sd", "estimated_sd"))
                for row in zip(c.eval_points, c.true_sd, c.estimated_sd):
                    writer.writerow([repr(float(v)) for v in row])
            paths[f"curve:{name}"] = path
    return paths


# -- verification checks ----------------------------------------------------------


@dataclass(frozen=True)
class CheckEntry:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""


@dataclass(eq=False)
class CheckReport:
    name: str
    entries: list[CheckEntry] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def add(self, name: str, value: float, threshold: float, passed: bool, detail: str = "") -> None:
        self.entries.append(CheckEntry(name, float(value), float(threshold), bool(passed), detail))

    def render(self) -> str:
        lines = [f"{self.name}: {'PASS' if self.passed else 'FAIL'}"]
        for e in self.entries:
            lines.append(
                f"  [{'pass' if e.passed else 'FAIL'}] {e.name}: value={e.value:.6g} threshold={e.threshold:.6g}"
                + (f" ({e.detail})" if e.detail else "")
            )
        for key, value in self.info.items():
            lines.append(f"  {key}: {value}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "entries": [dataclasses.asdict(e) for e in self.entries],
            "info": {k: (v if isinstance(v, (int, float, str, list)) else str(v)) for k, v in self.info.items()},
        }


def _moment_pairs(m: int, h: int) -> list[tuple[int, int]]:
    """Index pairs spread over the series: same index, neighbours and a few lags."""
    anchors = np.unique(np.linspace(0, m - 1, 9).round().astype(int))
    pairs = []
    for i in anchors:
        for lag in (0, 1, h + 1, 2 * h + 3):
            j = int(i + lag)
            if j < m:
                pairs.append((int(i), j))
    return pairs


def moments_check(config: ExperimentConfig, n: int | None = None, z_limit: float = 4.0) -> CheckReport:
    """Monte Carlo moments of ``D_i^2`` against the closed-form and Isserlis oracles.

    Means, variances and covariances of the squared pseudo-residuals are
    compared at a spread of index pairs; each comparison passes if it lies
    within ``z_limit`` Monte Carlo standard errors. The closed form is also
    compared with the Isserlis computation, and the small-lag expansion of the
    cross term is checked to shrink by roughly four when ``n`` doubles.
    """
    n = int(n or config.n[0])
    spec = config.process_spec()
    design = config.design(n)
    h = config.h
    reps = config.mc_replicates
    report = CheckReport(f"moments-check sigma={config.sigma} theta={config.theta} n={n} replicates={reps}")

    z = simulate_many(spec, design, config.seed, reps)
    d2 = ((z[:, :-h] - z[:, h:]) / np.sqrt(2.0)) ** 2
    mean, cov = squared_residual_moments(spec, design, h)
    m = d2.shape[1]
    centered = d2 - d2.mean(axis=0)

    worst = {"mean": 0.0, "var": 0.0, "cov": 0.0}
    oracle_gap = 0.0
    pairs = _moment_pairs(m, h)
    for i, j in pairs:
        if i == j:
            se = np.sqrt(cov[i, i] / reps)
            zs = abs(d2[:, i].mean() - mean[i]) / se
            worst["mean"] = max(worst["mean"], zs)
            prod = centered[:, i] ** 2
            key = "var"
        else:
            prod = centered[:, i] * centered[:, j]
            key = "cov"
        sample = prod.sum() / (reps - 1)
        se = prod.std(ddof=1) / np.sqrt(reps)
        worst[key] = max(worst[key], abs(sample - cov[i, j]) / se)
        oracle_gap = max(oracle_gap, abs(cov[i, j] - isserlis_cov(spec, design, h, i, j)))

    for key in ("mean", "var", "cov"):
        report.add(f"max standardized {key} discrepancy", worst[key], z_limit, worst[key] <= z_limit)
    report.add("closed form vs Isserlis |diff|", oracle_gap, 1e-10, oracle_gap <= 1e-10)
    report.info["pairs"] = len(pairs)

    if spec.correlation.kind == "exponential":
        ratios = {}
        for form in ("printed", "leading"):
            errs = []
            for size in (n, 2 * n):
                d = config.design(size)
                i = int(np.argmin(np.abs(d.locations - 0.5)))
                P = moment_inputs(spec, d, h).P[i, i + 2]
                errs.append(abs(P - p_taylor(spec, d, h, i, form)))
            ratios[form] = errs[0] / errs[1]
        report.add("expansion error shrink factor per doubling of n", ratios["printed"], 4.0, ratios["printed"] >= 4.0)
        report.info["leading-form shrink factor"] = f"{ratios['leading']:.4f}"
    return report


def rate_check(config: ExperimentConfig, method: str = "oracle") -> CheckReport:
    """Log-log slope of mean DMSE against ``n`` and decay of the oracle correlation of ``D^2``."""
    if len(config.n) < 3:
        raise ConfigError("rate-check needs at least three values of n")
    result = run_experiment(config, (method,))
    ns = np.array(config.n, dtype=float)
    means = np.array([result.values("dmse", method=method, n=int(n)).mean() for n in config.n])
    slope = float(np.polyfit(np.log(ns), np.log(means), 1)[0])
    report = CheckReport(f"rate-check sigma={config.sigma} theta={config.theta} method={METHOD_LABELS[method]}")
    report.add("log mean DMSE vs log n slope", slope, 0.0, slope < 0)
    report.info["mean DMSE by n"] = ", ".join(f"{int(a)}: {b:.6g}" for a, b in zip(ns, means))

    spec = config.process_spec()
    if spec.correlation.kind == "exponential":
        cors = []
        for size in (100, 200, 400):
            d = config.design(size)
            i = int(np.argmin(np.abs(d.locations - 0.5)))
            cors.append(abs(squared_residual_correlation(spec, d, config.h, i, i + 2)))
        for a, b, size in zip(cors, cors[1:], (100, 200)):
            ratio = a / b
            report.add(f"cor(D^2) decay ratio n={size}->{2 * size}", ratio, 2.0, 2.0 <= ratio <= 8.0, "band [2, 8]")
    else:
        report.info["cor(D^2) decay"] = "skipped: squared residuals two apart are uncorrelated"
    return report


def whitening_check(length: int = 200, phi: float = DEFAULT_PHI, reps: int = 5000, seed: int = 0, z_limit: float = 4.0) -> CheckReport:
    """Sample covariance of whitened ``N(0, C_eps)`` draws against the identity."""
    L = whitening_transform(length, phi, length)
    rng = np.random.Generator(np.random.PCG64(seed))
    eps = rng.standard_normal((reps, length)) @ np.asarray(L).T
    xi = whiten(eps.T, phi, length).T
    cov = xi.T @ xi / reps
    # Var of x_a x_b for independent standard normals: 1 off the diagonal, 2 on it.
    se = np.where(np.eye(length, dtype=bool), np.sqrt(2.0 / reps), np.sqrt(1.0 / reps))
    zmax = float(np.max(np.abs(cov - np.eye(length)) / se))
    report = CheckReport(f"whitening length={length} phi={phi:g} replicates={reps}")
    report.add("max standardized covariance deviation", zmax, z_limit, zmax <= z_limit)
    return report

"""Monte Carlo experiment harness: type-I/power grids for the beta-min
and nonnegative-cone tables, the CI coverage/width sweep, and the
resampled-noise real-data protocol.  Emits one CSV row per grid cell
plus a JSON manifest; replicate seeds are (base_seed, cell_index *
replicates + replicate_index) so reports are reproducible regardless of
worker count.
"""

from __future__ import annotations

import csv
import json
import math
import multiprocessing
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import hypothesis_sets, kernels, scaled_lasso
from ._version import __version__ as _pkg_version
from .decorrelate import QPOptions, Subspace, build, default_mu
from .exceptions import HdinferError
from .inference import (
    PipelineConfig,
    ci_linear_from_parts,
    ci_sqnorm,
    run_test,
)
from .numcore import (
    CovarianceModel,
    Dataset,
    RngSeed,
    cholesky,
    load_csv,
    make_signal,
    sample_dataset,
    sample_noise,
)
from .scaled_lasso import ScaledLassoOptions

KINDS = ("table-betamin", "table-cone", "ci-sweep", "real-data")


class ConfigError(HdinferError):
    """Invalid experiment configuration (CLI exit code 2)."""


@dataclass
class ExperimentConfig:
    kind: str
    n: int = 0
    p: int = 0
    s0: int = 0
    b: float = 1.0
    rho: float = 0.0
    sigma: float = 1.0
    alpha: float = 0.05
    replicates: int = 100
    base_seed: int = 0
    set: dict = field(default_factory=dict)
    pipeline: str = "split"          # "split" | "fixed_U"
    U: str | None = None             # "identity" for the fixed-U pipeline
    grid: dict = field(default_factory=dict)
    mu: float | None = None
    lam: float | None = None
    A_n: float | None = None
    s0_ci: int | None = None
    sigma_grid: list = field(default_factory=list)
    standardize: bool = False
    max_failure_rate: float = 0.05

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.pipeline not in ("split", "fixed_U"):
            raise ConfigError("pipeline must be 'split' or 'fixed_U'")
        for key, values in self.grid.items():
            if not isinstance(values, (list, tuple)) or len(values) == 0:
                raise ConfigError(f"grid.{key} must be a nonempty list")
        if self.kind == "table-betamin":
            self._require_grid({"c", "rho"})
        elif self.kind == "table-cone":
            self._require_grid({"b", "rho"})
        elif self.kind == "ci-sweep":
            self._require_grid({"n", "xi_ranks"})
        elif self.kind == "real-data":
            if not self.sigma_grid:
                raise ConfigError("real-data needs a nonempty sigma_grid")
        for rho in self.grid.get("rho", [self.rho]):
            if abs(rho) >= 1:
                raise ConfigError("|rho| must be < 1")

    def _require_grid(self, keys):
        missing = keys - set(self.grid)
        if missing:
            raise ConfigError(f"{self.kind} grid needs keys {sorted(missing)}")
        extra = set(self.grid) - keys
        if extra:
            raise ConfigError(f"unknown grid keys for {self.kind}: {sorted(extra)}")

    @classmethod
    def from_dict(cls, kind: str, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__ if f != "kind"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(kind=kind, **d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            out[name] = getattr(self, name)
        return out


def preset(kind: str, name: str) -> ExperimentConfig:
    """Shipped configurations: 'desk' runs in CI time, 'paper' reproduces
    the published grids."""
    try:
        d = dict(_PRESETS[(kind, name)])
    except KeyError:
        raise ConfigError(f"no preset {name!r} for {kind!r}") from None
    return ExperimentConfig.from_dict(kind, d)


_PRESETS = {
    ("table-betamin", "desk"): {
        "n": 200, "p": 300, "s0": 5, "b": 1.0, "sigma": 1.0, "alpha": 0.05,
        "replicates": 200, "pipeline": "fixed_U", "U": "identity",
        "set": {"variant": "beta_min"},
        "grid": {"c": [1.0, 1.1, 1.3, 1.5], "rho": [0.2, 0.6]},
    },
    ("table-betamin", "paper"): {
        "n": 600, "p": 1000, "s0": 10, "b": 1.0, "sigma": 1.0, "alpha": 0.05,
        "replicates": 100, "pipeline": "fixed_U", "U": "identity",
        "set": {"variant": "beta_min"},
        "grid": {"c": [0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5],
                 "rho": [0.2, 0.4, 0.6, 0.8]},
    },
    ("table-cone", "desk"): {
        "n": 200, "p": 300, "s0": 5, "sigma": 1.0, "alpha": 0.05,
        "replicates": 200, "pipeline": "split",
        "set": {"variant": "nonneg_cone"},
        "grid": {"b": [0.5, -0.5], "rho": [0.2, 0.6]},
    },
    ("table-cone", "paper"): {
        "n": 600, "p": 1000, "s0": 10, "sigma": 1.0, "alpha": 0.05,
        "replicates": 300, "pipeline": "split",
        "set": {"variant": "nonneg_cone"},
        "grid": {"b": [1.0, 0.8, 0.6, 0.4, 0.2, -0.2, -0.4, -0.6, -0.8, -1.0],
                 "rho": [0.2, 0.4, 0.6, 0.8]},
    },
    ("ci-sweep", "desk"): {
        "p": 600, "s0": 10, "b": 0.5, "rho": 0.5, "sigma": 1.0, "alpha": 0.05,
        "replicates": 300, "set": {"variant": "linear_functional"},
        "grid": {"n": [400, 800, 1600], "xi_ranks": [1]},
    },
    ("ci-sweep", "paper"): {
        "p": 3000, "s0": 30, "b": 0.5, "rho": 0.5, "sigma": 1.0, "alpha": 0.05,
        "replicates": 300, "set": {"variant": "linear_functional"},
        "grid": {"n": [1000, 1200, 1400, 1600, 1800, 2000, 2200, 2400, 2600],
                 "xi_ranks": [1, 750, 1500, 2250, 3000]},
    },
    ("real-data", "desk"): {
        "replicates": 100, "alpha": 0.05, "sigma_grid": [1.0, 5.0, 10.0],
        "set": {"variant": "linear_functional"},
    },
    ("real-data", "paper"): {
        "replicates": 100, "alpha": 0.05, "sigma_grid": [1.0, 5.0, 10.0],
        "set": {"variant": "linear_functional"},
    },
}


@dataclass
class CellResult:
    params: dict
    rate: float | None
    stderr: float | None
    n_failures: int
    invalid: bool
    extra: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    kind: str
    cells: list
    config: dict
    elapsed_seconds: float
    backend: str
    versions: dict
    total_failures: int

    def manifest(self) -> dict:
        return {
            "kind": self.kind,
            "config": _jsonable(self.config),
            "elapsed_seconds": self.elapsed_seconds,
            "backend": self.backend,
            "versions": self.versions,
            "total_failures": self.total_failures,
            "cells": [
                {
                    "params": c.params,
                    "rate": c.rate,
                    "stderr": c.stderr,
                    "n_failures": c.n_failures,
                    "invalid": c.invalid,
                    "extra": _jsonable(c.extra),
                }
                for c in self.cells
            ],
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def binomial_stderr(rate: float, n: int) -> float:
    return math.sqrt(rate * (1.0 - rate) / n)


# -- cell contexts -------------------------------------------------------


class _TableCell:
    """One (parameter, rho) cell of a rejection-rate table."""

    def __init__(self, cfg: ExperimentConfig, cell_index: int, params: dict,
                 hset_dict: dict, split_pipeline: bool):
        self.params = params
        self.n = cfg.n
        self.p = cfg.p
        self.s0 = cfg.s0
        self.sigma = cfg.sigma
        self.alpha = cfg.alpha
        self.b = params.get("b", cfg.b)
        self.base_seed = cfg.base_seed
        self.offset = cell_index * cfg.replicates
        self.cov = CovarianceModel(p=cfg.p, rho=params["rho"], kind="toeplitz")
        self.L = cholesky(self.cov.matrix())
        self.hset = hypothesis_sets.HypothesisSet.from_dict(hset_dict)
        self.split_pipeline = split_pipeline
        self.mu = cfg.mu
        self.lam = cfg.lam
        self.lasso = ScaledLassoOptions(standardize=cfg.standardize)
        self.qp = QPOptions()
        self.U = None if split_pipeline else Subspace.identity(cfg.p)

    def run_replicate(self, rep: int) -> dict:
        seed = RngSeed(self.base_seed, self.offset + rep)
        try:
            theta0 = make_signal(self.p, self.s0, self.b, seed)
            data = sample_dataset(self.n, self.cov, theta0, self.sigma, seed,
                                  L=self.L)
            cfg = PipelineConfig(split=self.split_pipeline, U=self.U,
                                 mu=self.mu, lam=self.lam, seed=seed,
                                 lasso=self.lasso, qp=self.qp)
            outcome = run_test(data, self.hset, self.alpha, cfg)
            return {"reject": outcome.reject}
        except HdinferError as exc:
            return {"failed": str(exc)}


class _CiSweepCell:
    """One (xi rank, n) cell: design and truth fixed, noise resampled."""

    def __init__(self, cfg: ExperimentConfig, cell_index: int, n_cells: int,
                 rank: int, n: int):
        self.params = {"xi_rank": rank, "n": n}
        self.n = n
        self.p = cfg.p
        self.sigma = cfg.sigma
        self.alpha = cfg.alpha
        self.base_seed = cfg.base_seed
        self.offset = cell_index * cfg.replicates
        cell_seed = RngSeed(cfg.base_seed, n_cells * cfg.replicates + cell_index)

        cov = CovarianceModel(p=cfg.p, rho=cfg.rho, kind="toeplitz")
        Sigma = cov.matrix()
        self.xi = _toeplitz_eigenvector(Sigma, rank)
        theta0 = make_signal(cfg.p, cfg.s0, cfg.b, cell_seed)
        L = cholesky(Sigma)
        base = sample_dataset(n, cov, theta0, 0.0, cell_seed, L=L)
        self.X = base.X
        self.signal = self.X @ theta0
        self.truth_value = float(self.xi @ theta0)
        self.lam = cfg.lam if cfg.lam is not None else scaled_lasso.default_lambda(n, cfg.p)
        mu = cfg.mu if cfg.mu is not None else default_mu(n, cfg.p)
        Sigma_hat = self.X.T @ self.X / n
        self.g = build(Sigma_hat, Subspace.from_vector(self.xi), mu).G[:, 0]
        self.lasso = ScaledLassoOptions(standardize=cfg.standardize)

    def run_replicate(self, rep: int) -> dict:
        seed = RngSeed(self.base_seed, self.offset + rep)
        try:
            w = sample_noise(self.n, seed)
            data = Dataset(X=self.X, y=self.signal + self.sigma * w)
            fit = scaled_lasso.fit(data, self.lam, self.lasso)
            ci = ci_linear_from_parts(fit, data, self.xi, self.g, self.alpha)
            return {"covered": ci.contains(self.truth_value), "width": ci.width}
        except HdinferError as exc:
            return {"failed": str(exc)}


class _RealDataCell:
    """One noise level of the resampled-noise protocol: the initial fit is
    frozen as the truth, new responses are y = X theta_hat + sigma w."""

    def __init__(self, cfg: ExperimentConfig, cell_index: int, sigma: float,
                 X: np.ndarray, theta0: np.ndarray, xi: np.ndarray,
                 g_xi: np.ndarray, s0_ci: int, A_n: float):
        self.params = {"sigma": sigma}
        self.sigma = sigma
        self.alpha = cfg.alpha
        self.base_seed = cfg.base_seed
        self.offset = cell_index * cfg.replicates
        self.X = X
        self.theta0 = theta0
        self.signal = X @ theta0
        self.xi = xi
        self.g_xi = g_xi
        self.truth_linear = float(xi @ theta0)
        self.truth_sqnorm = float(theta0 @ theta0)
        self.s0_ci = s0_ci
        self.A_n = A_n
        self.lam = cfg.lam if cfg.lam is not None else scaled_lasso.default_lambda(
            X.shape[0], X.shape[1])
        self.mu = cfg.mu
        self.lasso = ScaledLassoOptions(standardize=cfg.standardize)

    def run_replicate(self, rep: int) -> dict:
        seed = RngSeed(self.base_seed, self.offset + rep)
        try:
            w = sample_noise(self.X.shape[0], seed)
            data = Dataset(X=self.X, y=self.signal + self.sigma * w)
            fit = scaled_lasso.fit(data, self.lam, self.lasso)
            ci_lin = ci_linear_from_parts(fit, data, self.xi, self.g_xi,
                                          self.alpha)
            cfg = PipelineConfig(seed=seed, mu=self.mu, lasso=self.lasso)
            ci_sq = ci_sqnorm(data, self.alpha, self.s0_ci, self.A_n, cfg)
            return {
                "covered_linear": ci_lin.contains(self.truth_linear),
                "width_linear": ci_lin.width,
                "covered_sqnorm": ci_sq.contains(self.truth_sqnorm),
                "width_sqnorm": ci_sq.width,
            }
        except HdinferError as exc:
            return {"failed": str(exc)}


def _toeplitz_eigenvector(Sigma: np.ndarray, rank: int) -> np.ndarray:
    """Eigenvector of Sigma at the given rank (1 = largest eigenvalue),
    with a deterministic sign convention."""
    p = Sigma.shape[0]
    if not 1 <= rank <= p:
        raise ConfigError(f"xi rank {rank} outside 1..{p}")
    _, vecs = scipy.linalg.eigh(Sigma)   # ascending eigenvalues
    v = vecs[:, p - rank]
    if v[int(np.argmax(np.abs(v)))] < 0:
        v = -v
    return v


# -- runner ---------------------------------------------------------------

_WORKER_CELLS = None


def _init_worker(cells):
    global _WORKER_CELLS
    _WORKER_CELLS = cells


def _run_task(task):
    cell_index, rep = task
    return _WORKER_CELLS[cell_index].run_replicate(rep)


def _run_cells(cells, replicates: int, threads: int):
    tasks = [(ci, r) for ci in range(len(cells)) for r in range(replicates)]
    if threads <= 1 or len(tasks) <= 1:
        _init_worker(cells)
        results = [_run_task(t) for t in tasks]
    else:
        with multiprocessing.Pool(threads, initializer=_init_worker,
                                  initargs=(cells,)) as pool:
            results = pool.map(_run_task, tasks, chunksize=8)
    per_cell = [[] for _ in cells]
    for (ci, _), res in zip(tasks, results):
        per_cell[ci].append(res)
    return per_cell


def _summarize_rates(cells, per_cell, replicates, max_failure_rate, key,
                     width_key=None):
    out = []
    for ctx, results in zip(cells, per_cell):
        failures = [r for r in results if "failed" in r]
        ok = [r for r in results if "failed" not in r]
        invalid = len(failures) > max_failure_rate * replicates
        rate = stderr = None
        extra = {}
        if ok and not invalid:
            rate = sum(1 for r in ok if r[key]) / len(ok)
            stderr = binomial_stderr(rate, len(ok))
            if width_key:
                extra["mean_width"] = float(np.mean([r[width_key] for r in ok]))
        if failures:
            extra["first_failure"] = failures[0]["failed"]
        out.append(CellResult(params=ctx.params, rate=rate, stderr=stderr,
                              n_failures=len(failures), invalid=invalid,
                              extra=extra))
    return out


def run_experiment(config: ExperimentConfig, threads: int = 1,
                   x_csv=None, y_csv=None) -> ExperimentReport:
    """Execute a full experiment grid and aggregate per-cell rates."""
    start = time.time()
    if config.kind == "table-betamin":
        cells = []
        index = 0
        for c in config.grid["c"]:
            for rho in config.grid["rho"]:
                hset = dict(config.set or {"variant": "beta_min"})
                hset["c"] = c
                cells.append(_TableCell(config, index, {"c": c, "rho": rho},
                                        hset, config.pipeline == "split"))
                index += 1
        per_cell = _run_cells(cells, config.replicates, threads)
        results = _summarize_rates(cells, per_cell, config.replicates,
                                   config.max_failure_rate, "reject")
    elif config.kind == "table-cone":
        cells = []
        index = 0
        for b in config.grid["b"]:
            for rho in config.grid["rho"]:
                cells.append(_TableCell(config, index, {"b": b, "rho": rho},
                                        config.set or {"variant": "nonneg_cone"},
                                        config.pipeline == "split"))
                index += 1
        per_cell = _run_cells(cells, config.replicates, threads)
        results = _summarize_rates(cells, per_cell, config.replicates,
                                   config.max_failure_rate, "reject")
    elif config.kind == "ci-sweep":
        specs = [(rank, n) for rank in config.grid["xi_ranks"]
                 for n in config.grid["n"]]
        cells = [_CiSweepCell(config, i, len(specs), rank, n)
                 for i, (rank, n) in enumerate(specs)]
        per_cell = _run_cells(cells, config.replicates, threads)
        results = _summarize_rates(cells, per_cell, config.replicates,
                                   config.max_failure_rate, "covered",
                                   width_key="width")
    elif config.kind == "real-data":
        results = _run_real_data(config, threads, x_csv, y_csv)
    else:
        raise ConfigError(config.kind)

    total_failures = sum(c.n_failures for c in results)
    return ExperimentReport(
        kind=config.kind,
        cells=results,
        config=config.to_dict(),
        elapsed_seconds=time.time() - start,
        backend=kernels.BACKEND,
        versions={
            "hdinfer": _pkg_version,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        total_failures=total_failures,
    )


def _run_real_data(config: ExperimentConfig, threads: int, x_csv, y_csv):
    if x_csv is None or y_csv is None:
        raise ConfigError("real-data needs x_csv and y_csv paths")
    data = load_csv(x_csv, y_csv)
    n, p = data.X.shape
    lam = config.lam if config.lam is not None else scaled_lasso.default_lambda(n, p)
    lasso_opts = ScaledLassoOptions(standardize=config.standardize)
    base_fit = scaled_lasso.fit(data, lam, lasso_opts)
    theta0 = base_fit.theta_hat
    s0_ci = config.s0_ci if config.s0_ci is not None else max(
        1, int(np.count_nonzero(theta0)))
    A_n = config.A_n if config.A_n is not None else 2.0 * math.sqrt(math.log(n))

    xi_seed = RngSeed(config.base_seed, 0)
    xi = xi_seed.generator(domain=4).standard_normal(p) * (p ** -0.25)

    mu = config.mu if config.mu is not None else default_mu(n, p)
    Sigma_hat = data.X.T @ data.X / n
    g_xi = build(Sigma_hat, Subspace.from_vector(xi), mu).G[:, 0]

    cells = [
        _RealDataCell(config, i, sigma, data.X, theta0, xi, g_xi, s0_ci, A_n)
        for i, sigma in enumerate(config.sigma_grid)
    ]
    per_cell = _run_cells(cells, config.replicates, threads)
    out = []
    for ctx, results in zip(cells, per_cell):
        failures = [r for r in results if "failed" in r]
        ok = [r for r in results if "failed" not in r]
        invalid = len(failures) > config.max_failure_rate * config.replicates
        for functional, cov_key, width_key in (
            ("xi_theta", "covered_linear", "width_linear"),
            ("sq_norm", "covered_sqnorm", "width_sqnorm"),
        ):
            rate = stderr = None
            extra = {"xi_seed": config.base_seed}
            if ok and not invalid:
                rate = sum(1 for r in ok if r[cov_key]) / len(ok)
                stderr = binomial_stderr(rate, len(ok))
                extra["mean_width"] = float(np.mean([r[width_key] for r in ok]))
            if failures:
                extra["first_failure"] = failures[0]["failed"]
            out.append(CellResult(
                params={**ctx.params, "functional": functional},
                rate=rate, stderr=stderr, n_failures=len(failures),
                invalid=invalid, extra=extra))
    return out


# -- report output --------------------------------------------------------


def write_report(report: ExperimentReport, outdir) -> list:
    """Write <kind>.csv, manifest.json and (ci-sweep) log-log width data;
    returns the written paths."""
    import os

    os.makedirs(outdir, exist_ok=True)
    paths = []

    param_keys = sorted({k for c in report.cells for k in c.params})
    extra_keys = sorted({k for c in report.cells for k in c.extra
                         if k != "first_failure"})
    csv_path = os.path.join(outdir, f"{report.kind}.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(param_keys + ["rate", "stderr", "n_failures",
                                      "invalid"] + extra_keys)
        for c in report.cells:
            row = [c.params.get(k, "") for k in param_keys]
            row += [_fmt(c.rate), _fmt(c.stderr), c.n_failures, int(c.invalid)]
            row += [_fmt(c.extra.get(k)) for k in extra_keys]
            writer.writerow(row)
    paths.append(csv_path)

    manifest_path = os.path.join(outdir, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(report.manifest(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(manifest_path)

    if report.kind == "ci-sweep":
        by_rank = {}
        for c in report.cells:
            if c.rate is None or "mean_width" not in c.extra:
                continue
            by_rank.setdefault(c.params["xi_rank"], []).append(
                (c.params["n"], c.extra["mean_width"]))
        for rank, rows in sorted(by_rank.items()):
            path = os.path.join(outdir, f"width_loglog_rank{rank}.csv")
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["log_n", "log_mean_width"])
                for n, width in sorted(rows):
                    writer.writerow([f"{math.log(n):.12g}",
                                     f"{math.log(width):.12g}"])
            paths.append(path)
    return paths


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.10g}"
    return value


def width_slope(report: ExperimentReport, xi_rank=None) -> float:
    """Least-squares slope of log(mean width) against log(n)."""
    points = []
    for c in report.cells:
        if xi_rank is not None and c.params.get("xi_rank") != xi_rank:
            continue
        if c.rate is None or "mean_width" not in c.extra:
            continue
        points.append((math.log(c.params["n"]), math.log(c.extra["mean_width"])))
    if len(points) < 2:
        raise ValueError("need at least two cells with widths")
    x, y = np.array(points).T
    return float(np.polyfit(x, y, 1)[0])

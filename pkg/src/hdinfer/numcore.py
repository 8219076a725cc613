"""Numeric primitives and data ingestion: normal CDF/quantile, Toeplitz
covariances, Cholesky with an explicit pivot floor, seeded Gaussian
sampling, and CSV loading.

All randomness flows through :class:`RngSeed`, a counter-based Philox
stream keyed by ``(base_seed, stream_index)`` so replicate streams are
independent and order-free.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numpy.random import Generator, Philox, SeedSequence
from scipy.special import ndtr, ndtri

from .exceptions import CsvParseError, NonSPDError

# Sub-stream tags so that two operations handed the same RngSeed never
# consume the same bit stream.
DOMAIN_USER = 0
DOMAIN_SIGNAL = 1
DOMAIN_DATA = 2
DOMAIN_SPLIT = 3
DOMAIN_XI = 4
DOMAIN_NOISE = 5

_PIVOT_FLOOR = 1e-12


@dataclass(frozen=True)
class RngSeed:
    """Key of one deterministic random stream."""

    base_seed: int
    stream_index: int = 0

    def __post_init__(self):
        if self.stream_index < 0:
            raise ValueError("stream_index must be nonnegative")

    def generator(self, domain: int = DOMAIN_USER) -> Generator:
        entropy = int(self.base_seed) & 0xFFFFFFFFFFFFFFFF
        ss = SeedSequence(entropy=entropy, spawn_key=(self.stream_index, domain))
        return Generator(Philox(seed=ss))


@dataclass(frozen=True)
class Truth:
    theta0: np.ndarray
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


@dataclass(frozen=True)
class Dataset:
    """Design matrix, response and (for simulations) the generating truth."""

    X: np.ndarray
    y: np.ndarray
    truth: Truth | None = None

    def __post_init__(self):
        X = np.ascontiguousarray(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if X.ndim != 2:
            raise ValueError("X must be a matrix")
        if X.shape[0] != y.shape[0]:
            raise ValueError(
                f"row mismatch: X has {X.shape[0]} rows, y has {y.shape[0]}"
            )
        if X.shape[0] < 2 or X.shape[1] < 1:
            raise ValueError("need n >= 2 and p >= 1")
        if self.truth is not None and self.truth.theta0.shape[0] != X.shape[1]:
            raise ValueError("truth.theta0 length must equal p")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class CovarianceModel:
    """Population covariance of the design rows; SPD with unit diagonal for
    the toeplitz/identity kinds."""

    p: int
    rho: float = 0.0
    kind: str = "toeplitz"
    matrix_: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.kind in ("toeplitz", "identity"):
            if abs(self.rho) >= 1:
                raise ValueError("|rho| must be < 1")
        elif self.kind == "explicit-matrix":
            if self.matrix_ is None or self.matrix_.shape != (self.p, self.p):
                raise ValueError("explicit-matrix kind needs a p x p matrix")
        else:
            raise ValueError(f"unknown covariance kind {self.kind!r}")

    def matrix(self) -> np.ndarray:
        if self.kind == "identity":
            return np.eye(self.p)
        if self.kind == "toeplitz":
            return toeplitz_cov(self.p, self.rho)
        return np.asarray(self.matrix_, dtype=float)


def normal_cdf(x):
    """Standard normal CDF; saturates to 0/1 for large |x|."""
    out = ndtr(x)
    return float(out) if np.isscalar(x) else out


def normal_quantile(q):
    """Inverse standard normal CDF on (0, 1)."""
    q_arr = np.asarray(q, dtype=float)
    if np.any(q_arr <= 0.0) or np.any(q_arr >= 1.0):
        raise ValueError("quantile argument must lie strictly in (0, 1)")
    out = ndtri(q_arr)
    return float(out) if np.isscalar(q) else out


def toeplitz_cov(p: int, rho: float) -> np.ndarray:
    """Covariance with entries rho^|i-j|."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if abs(rho) >= 1:
        raise ValueError("|rho| must be < 1")
    return scipy.linalg.toeplitz(rho ** np.arange(p, dtype=float))


def cholesky(S: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L L' = S; raises NonSPDError when any pivot
    falls at or below 1e-12."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("S must be square")
    if not np.allclose(S, S.T, atol=1e-10 * max(1.0, np.abs(S).max())):
        raise ValueError("S must be symmetric")
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NonSPDError(f"matrix is not positive definite: {exc}") from None
    pivots = np.diag(L) ** 2
    if pivots.min() <= _PIVOT_FLOOR:
        raise NonSPDError(
            f"Cholesky pivot {pivots.min():.3e} at or below floor {_PIVOT_FLOOR:.0e}"
        )
    return L


def make_signal(p: int, s0: int, b: float, seed: RngSeed) -> np.ndarray:
    """Vector with s0 entries equal to b on a uniformly random support."""
    if not 0 <= s0 <= p:
        raise ValueError("need 0 <= s0 <= p")
    theta0 = np.zeros(p)
    if s0 > 0:
        rng = seed.generator(DOMAIN_SIGNAL)
        support = rng.choice(p, size=s0, replace=False)
        theta0[support] = b
    return theta0


def sample_design(n: int, cov: CovarianceModel, seed: RngSeed,
                  L: np.ndarray | None = None) -> np.ndarray:
    """Rows i.i.d. N(0, Sigma); L is an optional precomputed Cholesky factor."""
    if L is None:
        L = cholesky(cov.matrix())
    rng = seed.generator(DOMAIN_DATA)
    Z = rng.standard_normal((n, cov.p))
    return Z @ L.T


def sample_noise(n: int, seed: RngSeed) -> np.ndarray:
    """Standard normal noise vector on its own sub-stream (safe to pair
    with a design drawn from a different seed)."""
    return seed.generator(DOMAIN_NOISE).standard_normal(n)


def sample_dataset(n: int, cov: CovarianceModel, theta0: np.ndarray,
                   sigma: float, seed: RngSeed,
                   L: np.ndarray | None = None) -> Dataset:
    """y = X theta0 + sigma * w with X rows N(0, Sigma), fully determined
    by the seed."""
    theta0 = np.asarray(theta0, dtype=float).ravel()
    if theta0.shape[0] != cov.p:
        raise ValueError("theta0 length must equal cov.p")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if L is None:
        L = cholesky(cov.matrix())
    rng = seed.generator(DOMAIN_DATA)
    Z = rng.standard_normal((n, cov.p))
    X = Z @ L.T
    w = rng.standard_normal(n)
    y = X @ theta0 + sigma * w
    return Dataset(X=X, y=y, truth=Truth(theta0=theta0, sigma=float(sigma)))


def _read_numeric_csv(path) -> list[list[float]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        width = None
        for lineno, row in enumerate(reader, start=1):
            if not row or all(tok.strip() == "" for tok in row):
                continue
            values = []
            for colno, tok in enumerate(row, start=1):
                try:
                    values.append(float(tok))
                except ValueError:
                    if lineno == 1 and not rows:
                        values = None  # header row, skip
                        break
                    raise CsvParseError(
                        f"{path}: non-numeric value {tok!r} at row {lineno}, "
                        f"column {colno}"
                    ) from None
            if values is None:
                continue
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise CsvParseError(
                    f"{path}: ragged row {lineno} has {len(values)} fields, "
                    f"expected {width}"
                )
            rows.append(values)
    if not rows:
        raise CsvParseError(f"{path}: no numeric rows")
    return rows


def load_csv(x_path, y_path) -> Dataset:
    """Dataset from a numeric design CSV and a single-column response CSV;
    an optional header row is auto-detected by a non-numeric first token."""
    X = np.asarray(_read_numeric_csv(x_path))
    y_rows = _read_numeric_csv(y_path)
    if any(len(r) != 1 for r in y_rows):
        raise CsvParseError(f"{y_path}: response file must have one column")
    y = np.asarray([r[0] for r in y_rows])
    if X.shape[0] != y.shape[0]:
        raise ValueError(
            f"dimension mismatch: {x_path} has {X.shape[0]} rows but "
            f"{y_path} has {y.shape[0]}"
        )
    return Dataset(X=X, y=y, truth=None)

"""End-to-end testing pipeline: data splitting, power-guided subspace
selection, debiasing on the held-out half, the z_{alpha/(2k)} decision
rule, the analytic power lower bound, and confidence intervals for
linear and squared-norm functionals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import isotonic_regression
from scipy.special import ndtr, ndtri

from . import decorrelate, scaled_lasso
from .debias import debias
from .decorrelate import QPOptions, Subspace
from .exceptions import PipelineError
from .hypothesis_sets import HypothesisSet, ProjectionResult, project, threshold_S
from .numcore import DOMAIN_SPLIT, Dataset, RngSeed, normal_quantile
from .scaled_lasso import ScaledLassoOptions

_M0_RIDGE = 1e-4
_ZERO_RESIDUAL = 1e-9


@dataclass(frozen=True)
class PowerQuery:
    """Arguments of the power lower bound: level alpha, standardized
    separation x = sqrt(n) * eta / (sigma_hat * m0), subspace dimension k."""

    alpha: float
    x: float
    k: int

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.x < 0:
            raise ValueError("x must be nonnegative")
        if self.k < 1:
            raise ValueError("k must be a positive integer")


@dataclass
class TestOutcome:
    T_n: float
    threshold: float
    reject: bool
    alpha: float
    k: int
    mu_used: np.ndarray
    sigma_hat: float


@dataclass
class ConfidenceInterval:
    lo: float
    hi: float
    level: float
    degenerate: bool = False

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError("lo must not exceed hi")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi


@dataclass
class PipelineConfig:
    """Knobs of run_test and the CI constructors.

    split=True runs the five-step split/select/test procedure; split=False
    runs the fixed-subspace pipeline on the full data and requires U
    (supplied explicitly, or implied by a linear-functional set).
    """

    split: bool = True
    U: Subspace | None = None
    mu: float | None = None
    lam: float | None = None
    seed: RngSeed | None = None
    lasso: ScaledLassoOptions = field(default_factory=ScaledLassoOptions)
    qp: QPOptions = field(default_factory=QPOptions)


def power_F(query: PowerQuery) -> float:
    """Analytic power lower bound
    F(alpha, x, k) = 1 - k * (Phi(x + z) - Phi(x - z)), z = Phi^{-1}(1 - alpha/(2k)).

    Evaluated through upper-tail differences so it stays accurate as the
    bound approaches 1.  Vacuous (below alpha, possibly negative) for
    k >= 2 at small x.
    """
    z = float(ndtri(1.0 - query.alpha / (2.0 * query.k)))
    x = query.x
    # Phi(x+z) - Phi(x-z) == Phi(z-x) - Phi(-z-x)
    return 1.0 - query.k * float(ndtr(z - x) - ndtr(-z - x))


def m0(Sigma: np.ndarray, U: Subspace) -> float:
    """Population standard-error scale max_i sqrt(u_i' Sigma^{-1} u_i + 1e-4),
    available simulation-side where Sigma is known."""
    Sigma = np.asarray(Sigma, dtype=float)
    factor = scipy.linalg.cho_factor(Sigma)
    vals = []
    for i in range(U.k):
        u = U.U[:, i]
        vals.append(float(u @ scipy.linalg.cho_solve(factor, u)) + _M0_RIDGE)
    return math.sqrt(max(vals))


def split(data: Dataset, seed: RngSeed) -> tuple[Dataset, Dataset]:
    """Uniform random partition into disjoint halves of sizes floor(n/2)
    and ceil(n/2); truth metadata carried to both."""
    n = data.n
    if n < 4:
        raise ValueError("need n >= 4 to split")
    perm = seed.generator(DOMAIN_SPLIT).permutation(n)
    first = np.sort(perm[: n // 2])
    second = np.sort(perm[n // 2:])
    d1 = Dataset(X=data.X[first], y=data.y[first], truth=data.truth)
    d2 = Dataset(X=data.X[second], y=data.y[second], truth=data.truth)
    return d1, d2


def isotonic_projection(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the monotone cone (pool adjacent violators)."""
    return np.asarray(isotonic_regression(np.asarray(v, dtype=float)).x)


def polyhedral_projection(v: np.ndarray, A: np.ndarray, b: np.ndarray,
                          max_iter: int = 20000, tol: float = 1e-11) -> np.ndarray:
    """Euclidean projection onto {theta : A theta <= b} by accelerated
    projected gradient (FISTA) on the nonnegative dual; the primal point
    is recovered as v - A' lambda."""
    v = np.asarray(v, dtype=float)
    slack = A @ v - b
    if np.all(slack <= 0):
        return v.copy()
    M = A @ A.T
    step = 1.0 / max(float(np.linalg.eigvalsh(M)[-1]), 1e-12)
    lam = np.zeros(A.shape[0])
    y = lam
    t = 1.0
    for _ in range(max_iter):
        lam_next = np.maximum(y - step * (M @ y - slack), 0.0)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = lam_next + ((t - 1.0) / t_next) * (lam_next - lam)
        lam, t = lam_next, t_next
        # fixed-point residual of the (unaccelerated) projected-gradient map
        resid = np.abs(np.maximum(lam - step * (M @ lam - slack), 0.0) - lam).max()
        if resid <= tol:
            break
    return v - A.T @ lam


def select_subspace(hset: HypothesisSet, theta1: np.ndarray) -> Subspace:
    """Power-maximizing one-dimensional subspace from a pilot estimate.

    Convex sets use the normalized residual of the Euclidean projection
    onto the set; the beta-min family picks the coordinate axis with the
    largest distance to its admissible values (ties to the smallest
    index).  A pilot already inside the set falls back to e_1.
    """
    theta1 = np.asarray(theta1, dtype=float).ravel()
    p = theta1.shape[0]
    if not np.all(np.isfinite(theta1)):
        raise ValueError("pilot estimate must be finite")

    if hset.variant == "linear_functional":
        return Subspace.from_vector(hset.xi)

    if hset.variant == "beta_min":
        residual = np.abs(theta1 - threshold_S(theta1, hset.c))
        i_star = int(np.argmax(residual))  # argmax takes the smallest index on ties
        if residual[i_star] <= _ZERO_RESIDUAL:
            i_star = 0
        e = np.zeros(p)
        e[i_star] = 1.0
        return Subspace(U=e[:, None])

    if hset.variant == "nonneg_cone":
        perp = np.minimum(theta1, 0.0)
    elif hset.variant == "monotone_cone":
        perp = theta1 - isotonic_projection(theta1)
    elif hset.variant == "polyhedral":
        perp = theta1 - polyhedral_projection(theta1, hset.A, hset.b)
    else:
        raise ValueError(f"no subspace selection for variant {hset.variant!r}")

    nrm = float(np.linalg.norm(perp))
    if nrm <= _ZERO_RESIDUAL * max(1.0, float(np.linalg.norm(theta1))):
        e = np.zeros(p)
        e[0] = 1.0
        return Subspace(U=e[:, None])
    return Subspace(U=(perp / nrm)[:, None])


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, str(exc)) from exc


def make_outcome(T_n: float, alpha: float, k: int, mu_used: np.ndarray,
                 sigma_hat: float) -> TestOutcome:
    """Decision rule: reject exactly when T_n >= z_{alpha/(2k)}."""
    threshold = normal_quantile(1.0 - alpha / (2.0 * k))
    return TestOutcome(
        T_n=float(T_n),
        threshold=float(threshold),
        reject=bool(T_n >= threshold),
        alpha=alpha,
        k=k,
        mu_used=np.asarray(mu_used, dtype=float),
        sigma_hat=float(sigma_hat),
    )


def run_test(data: Dataset, hset: HypothesisSet, alpha: float,
             cfg: PipelineConfig | None = None) -> TestOutcome:
    """Full testing pipeline.

    Split mode: scaled Lasso on half 1 -> subspace selection -> scaled
    Lasso, decorrelation and debiasing on half 2 -> projection statistic.
    No-split mode: same steps on the full data with the caller-supplied
    fixed subspace.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    cfg = cfg or PipelineConfig()

    if cfg.split:
        if cfg.seed is None:
            raise ValueError("split pipeline needs cfg.seed")
        d1, work = _stage("split", split, data, cfg.seed)
        lam1 = cfg.lam or scaled_lasso.default_lambda(d1.n, d1.p)
        fit1 = _stage("pilot-fit", scaled_lasso.fit, d1, lam1, cfg.lasso)
        U = _stage("select-subspace", select_subspace, hset, fit1.theta_hat)
    else:
        work = data
        U = cfg.U
        if U is None:
            if hset.variant == "linear_functional":
                U = Subspace.from_vector(hset.xi)
            else:
                raise ValueError("fixed-subspace pipeline needs cfg.U")

    Sigma_hat = work.X.T @ work.X / work.n
    mu = cfg.mu if cfg.mu is not None else decorrelate.default_mu(work.n, work.p)
    G = _stage("decorrelate", decorrelate.build, Sigma_hat, U, mu, cfg.qp)
    lam = cfg.lam or scaled_lasso.default_lambda(work.n, work.p)
    fit2 = _stage("fit", scaled_lasso.fit, work, lam, cfg.lasso)
    est = _stage("debias", debias, fit2, work, U, G)
    proj: ProjectionResult = _stage("project", project, hset, est.gamma_d, est.D, U)
    return make_outcome(proj.T_n, alpha, U.k, G.mu_used, fit2.sigma_hat)


# -- confidence intervals -----------------------------------------------


def _debias_scalar(fitted, data, u, g):
    """gamma_d and the unridged variance factor g' Sigma_hat g for k = 1."""
    resid = data.y - data.X @ fitted.theta_hat
    Xg = data.X @ g
    gamma_d = float(u @ fitted.theta_hat + Xg @ resid / data.n)
    gsg = float(Xg @ Xg) / data.n
    return gamma_d, gsg


def ci_linear_from_parts(fitted, data: Dataset, xi: np.ndarray, g: np.ndarray,
                         alpha: float) -> ConfidenceInterval:
    """Interval ||xi|| * (gamma_d -/+ (sigma_hat/sqrt(n)) sqrt(g'Sg) z_{alpha/2})
    from an existing fit and decorrelation vector."""
    xi = np.asarray(xi, dtype=float).ravel()
    xi_norm = float(np.linalg.norm(xi))
    gamma_d, gsg = _debias_scalar(fitted, data, xi / xi_norm, g)
    z = normal_quantile(1.0 - alpha / 2.0)
    half = xi_norm * fitted.sigma_hat / math.sqrt(data.n) * math.sqrt(gsg) * z
    center = xi_norm * gamma_d
    return ConfidenceInterval(lo=center - half, hi=center + half, level=1.0 - alpha)


def ci_linear(data: Dataset, xi: np.ndarray, alpha: float,
              cfg: PipelineConfig | None = None) -> ConfidenceInterval:
    """Confidence interval for xi' theta0.  The subspace u = xi/||xi|| is
    data-independent, so no splitting: fit and decorrelate the full data."""
    xi = np.asarray(xi, dtype=float).ravel()
    if not np.any(xi):
        raise ValueError("xi must be nonzero")
    cfg = cfg or PipelineConfig()
    Sigma_hat = data.X.T @ data.X / data.n
    mu = cfg.mu if cfg.mu is not None else decorrelate.default_mu(data.n, data.p)
    U = Subspace.from_vector(xi)
    G = _stage("decorrelate", decorrelate.build, Sigma_hat, U, mu, cfg.qp)
    lam = cfg.lam or scaled_lasso.default_lambda(data.n, data.p)
    fitted = _stage("fit", scaled_lasso.fit, data, lam, cfg.lasso)
    return ci_linear_from_parts(fitted, data, xi, G.G[:, 0], alpha)


def sqnorm_endpoints(m: float, L: float, delta: float) -> tuple[float, float]:
    """Quadratic-inequality endpoints (sqrt((m -/+ L + delta^2)_+) + delta)^2,
    the -L root as the lower endpoint; ordering enforced."""
    lo = (math.sqrt(max(m - L + delta ** 2, 0.0)) + delta) ** 2
    hi = (math.sqrt(max(m + L + delta ** 2, 0.0)) + delta) ** 2
    return (lo, hi) if lo <= hi else (hi, lo)


def ci_sqnorm(data: Dataset, alpha: float, s0: int, A_n: float,
              cfg: PipelineConfig | None = None) -> ConfidenceInterval:
    """Confidence interval for ||theta0||^2.

    Requires splitting (u = pilot direction).  A zero pilot gives the
    degenerate interval [0, delta^2] with the flag set.
    """
    cfg = cfg or PipelineConfig()
    if cfg.seed is None:
        raise ValueError("ci_sqnorm needs cfg.seed for the data split")
    delta = A_n * math.sqrt(s0 * math.log(data.p) / data.n)
    d1, d2 = _stage("split", split, data, cfg.seed)
    lam1 = cfg.lam or scaled_lasso.default_lambda(d1.n, d1.p)
    fit1 = _stage("pilot-fit", scaled_lasso.fit, d1, lam1, cfg.lasso)
    pilot_norm = float(np.linalg.norm(fit1.theta_hat))
    if pilot_norm <= _ZERO_RESIDUAL:
        return ConfidenceInterval(lo=0.0, hi=delta ** 2, level=1.0 - alpha,
                                  degenerate=True)
    u = fit1.theta_hat / pilot_norm
    Sigma_hat = d2.X.T @ d2.X / d2.n
    mu = cfg.mu if cfg.mu is not None else decorrelate.default_mu(d2.n, d2.p)
    G = _stage("decorrelate", decorrelate.build, Sigma_hat,
               Subspace(U=u[:, None]), mu, cfg.qp)
    lam2 = cfg.lam or scaled_lasso.default_lambda(d2.n, d2.p)
    fit2 = _stage("fit", scaled_lasso.fit, d2, lam2, cfg.lasso)
    gamma_d, gsg = _debias_scalar(fit2, d2, u, G.G[:, 0])
    z = normal_quantile(1.0 - alpha / 2.0)
    m = pilot_norm * gamma_d
    L = pilot_norm * fit2.sigma_hat / math.sqrt(d2.n) * math.sqrt(gsg) * z
    lo, hi = sqnorm_endpoints(m, L, delta)
    return ConfidenceInterval(lo=lo, hi=hi, level=1.0 - alpha)


def coverage(intervals, truth: float) -> float:
    """Fraction of intervals containing the truth (closed endpoints)."""
    intervals = list(intervals)
    if not intervals:
        raise ValueError("empty interval list")
    hits = sum(1 for ci in intervals if ci.lo <= truth <= ci.hi)
    return hits / len(intervals)

"""Hypothesis sets Omega_0 and the weighted-infinity-norm projection value

    T_n = min_{theta in Omega_0} || D (gamma_d - U' theta) ||_inf.

Closed forms cover the pairings the test pipelines actually produce
(beta-min with identity or coordinate subspaces, the nonnegative cone
with the identity, linear functionals with k = 1); everything polyhedral
(including the monotone cone and the nonnegative cone under a general
subspace) goes through an epigraph LP.  Squared-norm sets have no
projection here -- their inference runs through the quadratic-form
confidence interval.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .decorrelate import Subspace
from .exceptions import ProjectionError, UnsupportedProjectionError

VARIANTS = ("beta_min", "nonneg_cone", "monotone_cone", "linear_functional",
            "sq_norm", "polyhedral")


@dataclass(frozen=True)
class HypothesisSet:
    """Tagged union over the supported null-set families."""

    variant: str
    c: float | None = None
    xi: np.ndarray | None = None
    A: np.ndarray | None = None
    b: np.ndarray | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.xi is not None:
            object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float).ravel())
        if self.A is not None:
            object.__setattr__(self, "A", np.atleast_2d(np.asarray(self.A, dtype=float)))
        if self.b is not None:
            object.__setattr__(self, "b", np.asarray(self.b, dtype=float).ravel())
        if self.variant == "beta_min":
            if self.c is None or self.c <= 0:
                raise ValueError("beta_min needs c > 0")
        elif self.variant == "linear_functional":
            if self.xi is None or not np.any(self.xi):
                raise ValueError("linear_functional needs a nonzero xi")
            if self.c is None:
                raise ValueError("linear_functional needs a target value c")
        elif self.variant == "sq_norm":
            if self.c is None or self.c < 0:
                raise ValueError("sq_norm needs c >= 0")
        elif self.variant == "polyhedral":
            if self.A is None or self.b is None:
                raise ValueError("polyhedral needs A and b")
            if self.A.shape[0] != self.b.shape[0]:
                raise ValueError("A and b disagree on the number of rows")
            _certify_nonempty(self.A, self.b)

    # -- JSON description (CLI / config files) --------------------------

    def to_dict(self) -> dict:
        out = {"variant": self.variant}
        if self.c is not None:
            out["c"] = float(self.c)
        if self.xi is not None:
            out["xi"] = self.xi.tolist()
        if self.A is not None:
            out["A"] = self.A.tolist()
        if self.b is not None:
            out["b"] = self.b.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "HypothesisSet":
        known = {"variant", "c", "xi", "A", "b"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown hypothesis-set keys: {sorted(extra)}")
        return cls(variant=d["variant"], c=d.get("c"), xi=d.get("xi"),
                   A=d.get("A"), b=d.get("b"))


def beta_min(c: float) -> HypothesisSet:
    return HypothesisSet(variant="beta_min", c=c)


def nonneg_cone() -> HypothesisSet:
    return HypothesisSet(variant="nonneg_cone")


def monotone_cone() -> HypothesisSet:
    return HypothesisSet(variant="monotone_cone")


def linear_functional(xi, c: float) -> HypothesisSet:
    return HypothesisSet(variant="linear_functional", xi=xi, c=c)


def sq_norm(c: float) -> HypothesisSet:
    return HypothesisSet(variant="sq_norm", c=c)


def polyhedral(A, b) -> HypothesisSet:
    return HypothesisSet(variant="polyhedral", A=A, b=b)


def _certify_nonempty(A, b):
    res = linprog(c=np.zeros(A.shape[1]), A_ub=A, b_ub=b,
                  bounds=[(None, None)] * A.shape[1], method="highs")
    if not res.success:
        raise ValueError("polyhedral set is empty (feasibility LP failed)")


@dataclass
class ProjectionResult:
    T_n: float
    theta_p: np.ndarray | None
    exact: bool  # closed form (True) vs LP (False)


def threshold_S(x, c: float):
    """Closest admissible value under the minimum-magnitude constraint:
    x itself when |x| >= c, the nearer of {0, +/-c} otherwise, with ties at
    |x| = c/2 resolving to 0.  Accepts scalars or arrays."""
    if c <= 0:
        raise ValueError("c must be positive")
    arr = np.asarray(x, dtype=float)
    out = np.where(np.abs(arr) >= c, arr,
                   np.where(arr > c / 2, c,
                            np.where(arr < -c / 2, -c, 0.0)))
    return float(out) if np.isscalar(x) else out


def membership(hset: HypothesisSet, theta: np.ndarray, tol: float) -> bool:
    """Variant-specific constraint check with slack tol on every
    inequality/equality."""
    theta = np.asarray(theta, dtype=float).ravel()
    if hset.variant == "beta_min":
        return bool(np.all((np.abs(theta) <= tol) | (np.abs(theta) >= hset.c - tol)))
    if hset.variant == "nonneg_cone":
        return bool(np.all(theta >= -tol))
    if hset.variant == "monotone_cone":
        return bool(np.all(np.diff(theta) >= -tol))
    if hset.variant == "linear_functional":
        if theta.shape != hset.xi.shape:
            raise ValueError("theta and xi disagree on p")
        return bool(abs(hset.xi @ theta - hset.c) <= tol)
    if hset.variant == "sq_norm":
        return bool(abs(theta @ theta - hset.c) <= tol)
    if hset.variant == "polyhedral":
        if theta.shape[0] != hset.A.shape[1]:
            raise ValueError("theta and A disagree on p")
        return bool(np.all(hset.A @ theta - hset.b <= tol))
    raise ValueError(hset.variant)


def _signed_axis(u: np.ndarray):
    """(index, sign) when u is +/- a standard basis vector, else None."""
    nz = np.nonzero(np.abs(u) > 1e-12)[0]
    if nz.size != 1:
        return None
    i = int(nz[0])
    s = u[i]
    if abs(abs(s) - 1.0) > 1e-12:
        return None
    return i, 1.0 if s > 0 else -1.0


def _cone_rows(variant: str, p: int):
    """Rows (A, b) of the polyhedral description A theta <= b."""
    if variant == "nonneg_cone":
        return -np.eye(p), np.zeros(p)
    if variant == "monotone_cone":
        A = np.zeros((p - 1, p))
        idx = np.arange(p - 1)
        A[idx, idx] = 1.0
        A[idx, idx + 1] = -1.0
        return A, np.zeros(p - 1)
    raise ValueError(variant)


def _project_lp(A, b, gamma_d, D, U: Subspace) -> ProjectionResult:
    """Epigraph LP: min t subject to -t <= D_i (gamma_d - U' theta)_i <= t
    and A theta <= b."""
    p, k = U.p, U.k
    rows_u = U.U.T * D[:, None]              # k x p, D_i * (U')_i
    dg = D * gamma_d
    A_ub = np.zeros((2 * k + A.shape[0], p + 1))
    b_ub = np.zeros(2 * k + A.shape[0])
    A_ub[:k, :p] = -rows_u
    A_ub[:k, p] = -1.0
    b_ub[:k] = -dg
    A_ub[k:2 * k, :p] = rows_u
    A_ub[k:2 * k, p] = -1.0
    b_ub[k:2 * k] = dg
    if A.shape[0]:
        A_ub[2 * k:, :p] = A
        b_ub[2 * k:] = b
    bounds = [(None, None)] * p + [(0, None)]
    cost = np.zeros(p + 1)
    cost[p] = 1.0
    res = linprog(c=cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:
        raise ProjectionError(
            f"projection LP failed: {res.message} (status {res.status})"
        )
    return ProjectionResult(T_n=float(res.fun), theta_p=res.x[:p], exact=False)


def project(hset: HypothesisSet, gamma_d: np.ndarray, D: np.ndarray,
            U: Subspace, force_lp: bool = False) -> ProjectionResult:
    """Optimal value (and a minimizer when available) of the weighted
    projection program.  ``force_lp`` routes polyhedral variants through
    the LP even when a closed form applies, for cross-checking."""
    gamma_d = np.atleast_1d(np.asarray(gamma_d, dtype=float))
    D = np.atleast_1d(np.asarray(D, dtype=float))
    if gamma_d.shape[0] != U.k or D.shape[0] != U.k:
        raise ValueError("gamma_d and D must have one entry per subspace column")
    if np.any(D <= 0):
        raise ValueError("D must be positive")
    v = hset.variant

    if v == "sq_norm":
        raise UnsupportedProjectionError(
            "sq_norm has no projection route; use inference.ci_sqnorm"
        )

    if v == "beta_min":
        if U.is_identity and not force_lp:
            theta_p = threshold_S(gamma_d, hset.c)
            T = float(np.max(D * np.abs(gamma_d - theta_p)))
            return _checked(hset, ProjectionResult(T, theta_p, True))
        axis = _signed_axis(U.U[:, 0]) if U.k == 1 else None
        if axis is not None and not force_lp:
            # u = s * e_i: the admissible values of u' theta form the same
            # symmetric set {0} | {|x| >= c}, so the scalar rule applies.
            i, s = axis
            best = threshold_S(s * float(gamma_d[0]), hset.c)
            theta_p = np.zeros(U.p)
            theta_p[i] = best
            T = float(D[0] * abs(gamma_d[0] - s * best))
            return _checked(hset, ProjectionResult(T, theta_p, True))
        raise UnsupportedProjectionError(
            "beta_min projection needs U = I or a coordinate-axis u"
        )

    if v == "nonneg_cone":
        if U.is_identity and not force_lp:
            theta_p = np.maximum(gamma_d, 0.0)
            T = float(np.max(D * np.maximum(-gamma_d, 0.0)))
            return _checked(hset, ProjectionResult(T, theta_p, True))
        A, b = _cone_rows(v, U.p)
        return _checked(hset, _project_lp(A, b, gamma_d, D, U))

    if v == "monotone_cone":
        A, b = _cone_rows(v, U.p)
        return _checked(hset, _project_lp(A, b, gamma_d, D, U))

    if v == "linear_functional":
        if U.k != 1:
            raise UnsupportedProjectionError("linear_functional needs k = 1")
        xi_norm = float(np.linalg.norm(hset.xi))
        udir = hset.xi / xi_norm
        if U.p != udir.shape[0] or np.abs(U.U[:, 0] - udir).max() > 1e-8:
            raise UnsupportedProjectionError(
                "linear_functional projection needs u = xi / ||xi||"
            )
        target = hset.c / xi_norm
        T = float(D[0] * abs(gamma_d[0] - target))
        theta_p = hset.xi * (hset.c / (xi_norm ** 2))
        return _checked(hset, ProjectionResult(T, theta_p, True))

    if v == "polyhedral":
        return _checked(hset, _project_lp(hset.A, hset.b, gamma_d, D, U))

    raise ValueError(v)


def _checked(hset: HypothesisSet, result: ProjectionResult) -> ProjectionResult:
    if result.theta_p is not None and not membership(hset, result.theta_p, 1e-6):
        raise ProjectionError(
            f"projection returned a point outside the {hset.variant} set"
        )
    return result

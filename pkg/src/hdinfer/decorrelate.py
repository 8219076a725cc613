"""Decorrelation vectors: per subspace column, solve

    minimize  g' S g   subject to  ||S g - u||_inf <= mu

with S the sample covariance.  The solver works on the equivalent
penalized form min (1/2) g' S g - u' g + mu ||g||_1 (its stationarity
condition is exactly the box constraint, and complementary slackness
ties the two optima), using cyclic coordinate descent; feasibility is
audited against the constraint afterwards.  An infeasible mu shows up
as iterate blow-up or a persistent constraint violation, and ``build``
responds by doubling mu for that column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .exceptions import DecorrelatorError

_ORTHO_TOL = 1e-8


@dataclass(frozen=True)
class Subspace:
    """Orthonormal basis of the target subspace, one column per direction."""

    U: np.ndarray
    is_identity: bool = False

    def __post_init__(self):
        U = np.ascontiguousarray(np.asarray(self.U, dtype=float))
        if U.ndim == 1:
            U = U[:, None]
        object.__setattr__(self, "U", U)
        p, k = U.shape
        if not 1 <= k <= p:
            raise ValueError("need 1 <= k <= p")
        gram_err = np.abs(U.T @ U - np.eye(k)).max()
        if gram_err > _ORTHO_TOL:
            raise ValueError(f"columns not orthonormal (residual {gram_err:.2e})")
        if not self.is_identity and p == k and np.array_equal(U, np.eye(p)):
            object.__setattr__(self, "is_identity", True)

    @classmethod
    def identity(cls, p: int) -> "Subspace":
        return cls(U=np.eye(p), is_identity=True)

    @classmethod
    def from_vector(cls, u: np.ndarray) -> "Subspace":
        u = np.asarray(u, dtype=float).ravel()
        nrm = np.linalg.norm(u)
        if nrm <= 0:
            raise ValueError("cannot normalize the zero vector")
        return cls(U=(u / nrm)[:, None])

    @property
    def p(self) -> int:
        return self.U.shape[0]

    @property
    def k(self) -> int:
        return self.U.shape[1]


@dataclass
class Decorrelator:
    G: np.ndarray                 # p x k
    mu_used: np.ndarray           # final mu per column
    objective: np.ndarray         # g_i' S g_i per column
    coherence: float              # |S G - U|_inf actually achieved

    @property
    def k(self) -> int:
        return self.G.shape[1]


@dataclass(frozen=True)
class QPOptions:
    tol_cd: float = 1e-9          # absolute coordinate update at convergence
    max_sweeps: int = 50          # sweep budget, i.e. 50*p coordinate steps
    feas_tol: float = 1e-7
    blowup: float = 1e8
    max_escalations: int = 4      # mu doublings in build()


def default_mu(n, p) -> float:
    """Constraint slack 2 * sqrt(log(p) / n)."""
    if n < 1 or p < 2:
        raise ValueError("need n >= 1 and p >= 2")
    return 2.0 * math.sqrt(math.log(p) / n)


def coherence(Sigma_hat: np.ndarray, G: np.ndarray, U: np.ndarray) -> float:
    """Max-abs entry of Sigma_hat @ G - U."""
    Sigma_hat = np.asarray(Sigma_hat, dtype=float)
    G = np.asarray(G, dtype=float)
    Uarr = U.U if isinstance(U, Subspace) else np.asarray(U, dtype=float)
    if G.ndim == 1:
        G = G[:, None]
    if Uarr.ndim == 1:
        Uarr = Uarr[:, None]
    if Sigma_hat.shape[1] != G.shape[0] or (Sigma_hat.shape[0], G.shape[1]) != Uarr.shape:
        raise ValueError("dimension mismatch between Sigma_hat, G and U")
    return float(np.abs(Sigma_hat @ G - Uarr).max())


def solve_column(Sigma_hat: np.ndarray, u: np.ndarray, mu: float,
                 opts: QPOptions | None = None,
                 g0: np.ndarray | None = None) -> np.ndarray:
    """Solve one decorrelation column.

    Raises DecorrelatorError (carrying the CD fixed-point residual and the
    constraint violation) when the iterate blows up or stays infeasible at
    the sweep budget -- the signature of mu below the minimum coherence.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    opts = opts or QPOptions()
    S = np.ascontiguousarray(np.asarray(Sigma_hat, dtype=float))
    u = np.asarray(u, dtype=float).ravel()
    p = S.shape[0]
    if S.shape != (p, p) or u.shape[0] != p:
        raise ValueError("dimension mismatch between Sigma_hat and u")

    g = np.zeros(p) if g0 is None else np.array(g0, dtype=float)
    z = S @ g if g0 is not None else np.zeros(p)
    _, maxd, status = kernels.qp_cd(S, u, g, z, mu, opts.max_sweeps,
                                    opts.tol_cd, opts.blowup)
    if status == 2:
        raise DecorrelatorError(
            f"iterate blow-up at mu={mu:.4g} (infeasible constraint level)",
            max_update=maxd, feas_violation=math.inf,
        )
    violation = float(np.abs(S @ g - u).max()) - mu
    if violation > opts.feas_tol:
        raise DecorrelatorError(
            f"column stalled: constraint violated by {violation:.3e} at "
            f"mu={mu:.4g} after {opts.max_sweeps} sweeps "
            f"(max coordinate update {maxd:.3e})",
            max_update=maxd, feas_violation=violation,
        )
    return g


def build(Sigma_hat: np.ndarray, U: Subspace, mu: float,
          opts: QPOptions | None = None) -> Decorrelator:
    """Solve all columns independently; a stalled column has its mu doubled
    (up to opts.max_escalations times) and mu_used records the final value."""
    opts = opts or QPOptions()
    S = np.ascontiguousarray(np.asarray(Sigma_hat, dtype=float))
    Uarr = U.U if isinstance(U, Subspace) else np.asarray(U, dtype=float)
    if Uarr.ndim == 1:
        Uarr = Uarr[:, None]
    p, k = Uarr.shape
    if S.shape != (p, p):
        raise ValueError("Sigma_hat and U disagree on p")

    G = np.zeros((p, k))
    mu_used = np.zeros(k)
    objective = np.zeros(k)
    for i in range(k):
        mu_i = mu
        g = None
        for attempt in range(opts.max_escalations + 1):
            try:
                g = solve_column(S, Uarr[:, i], mu_i, opts)
                break
            except DecorrelatorError:
                if attempt == opts.max_escalations:
                    raise DecorrelatorError(
                        f"column {i} infeasible after escalating mu to {mu_i:.4g}"
                    ) from None
                mu_i *= 2.0
        G[:, i] = g
        mu_used[i] = mu_i
        objective[i] = float(g @ (S @ g))
    return Decorrelator(
        G=G,
        mu_used=mu_used,
        objective=objective,
        coherence=coherence(S, G, Uarr),
    )

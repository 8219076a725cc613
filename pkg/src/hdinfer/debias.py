"""Subspace-debiased estimate of the rotated coefficients U' theta0 and,
for simulated data with known truth, its exact noise/bias decomposition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .decorrelate import Decorrelator, Subspace
from .numcore import Dataset
from .scaled_lasso import ScaledLassoFit

_RIDGE = 1e-4  # stabilizer added to G' Sigma_hat G inside Q


@dataclass
class DebiasedEstimate:
    gamma_d: np.ndarray      # k
    Q: np.ndarray            # k x k covariance proxy
    D: np.ndarray            # k, diagonal scaling Q_ii^{-1/2}
    sigma_hat: float
    k: int


@dataclass
class Decomposition:
    Z: np.ndarray
    Delta: np.ndarray


def debias(fit: ScaledLassoFit, data: Dataset, U: Subspace,
           G: Decorrelator) -> DebiasedEstimate:
    """gamma_d = U' theta_hat + G' X' (y - X theta_hat) / n, with covariance
    proxy Q = (sigma_hat^2 / n)(G' Sigma_hat G + 1e-4 I) and D = Q_ii^{-1/2}."""
    n, p = data.X.shape
    if U.p != p or G.G.shape != (p, U.k):
        raise ValueError("dimension mismatch between data, U and G")
    resid = data.y - data.X @ fit.theta_hat
    XG = data.X @ G.G                       # n x k; G'S G == (XG)'XG / n
    gamma_d = U.U.T @ fit.theta_hat + XG.T @ resid / n
    M = XG.T @ XG / n + _RIDGE * np.eye(U.k)
    Q = (fit.sigma_hat ** 2 / n) * M
    D = 1.0 / np.sqrt(np.diag(Q))
    return DebiasedEstimate(gamma_d=gamma_d, Q=Q, D=D,
                            sigma_hat=fit.sigma_hat, k=U.k)


def decompose(est: DebiasedEstimate, data: Dataset, fit: ScaledLassoFit,
              U: Subspace, G: Decorrelator) -> Decomposition:
    """Exact split sqrt(n)(gamma_d - U' theta0) = Z + Delta with
    Z = G' X' (y - X theta0) / sqrt(n) the noise part and
    Delta = sqrt(n)(G' Sigma_hat - U')(theta0 - theta_hat) the bias part.
    """
    if data.truth is None:
        raise ValueError("decompose needs a dataset with recorded truth")
    n = data.n
    sqrt_n = math.sqrt(n)
    theta0 = data.truth.theta0
    w = data.y - data.X @ theta0
    Z = G.G.T @ (data.X.T @ w) / sqrt_n
    diff = theta0 - fit.theta_hat
    GS_diff = (data.X @ G.G).T @ (data.X @ diff) / n
    Delta = sqrt_n * (GS_diff - U.U.T @ diff)
    return Decomposition(Z=Z, Delta=Delta)

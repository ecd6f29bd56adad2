"""Dense least-squares and logistic-regression kernels.

Matrices are 2-D float64 numpy arrays; nothing here knows about
mediation, instruments or trials.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch, NonConvergence, RankDeficient, Separation

RANK_TOL = 1e-10
LOGISTIC_TOL = 1e-10
LOGISTIC_MAX_ITER = 100
SEPARATION_BOUND = 30.0


def as_matrix(values, name="design") -> np.ndarray:
    """Return ``values`` as a finite 2-D float64 array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_vector(values, name="response") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class LeastSquaresSolution:
    coefficients: np.ndarray
    residuals: np.ndarray
    rss: float
    rank: int
    xtx_inverse: np.ndarray

    def fitted_values(self, design) -> np.ndarray:
        return np.asarray(design) @ self.coefficients


def solve_least_squares(design, response, rank_tol: float = RANK_TOL) -> LeastSquaresSolution:
    """Minimize ``||response - design @ b||`` through a pivoted QR factorization.

    Raises
    ------
    RankDeficient
        If some pivoted diagonal entry of R falls below ``rank_tol`` times
        the largest one.
    DimensionMismatch
        If row counts disagree or the system is underdetermined.
    """
    a = as_matrix(design)
    y = as_vector(response)
    n, k = a.shape
    if y.shape[0] != n:
        raise DimensionMismatch(f"design has {n} rows but response has {y.shape[0]}")
    if n < k:
        raise DimensionMismatch(f"design has fewer rows ({n}) than columns ({k})")

    q, r, piv = linalg.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > rank_tol * diag[0])) if k and diag[0] > 0 else 0
    if rank < k:
        raise RankDeficient(f"design column rank {rank} < {k} columns", rank=rank, cols=k)

    coef_piv = linalg.solve_triangular(r, q.T @ y)
    coef = np.empty(k)
    coef[piv] = coef_piv
    r_inv = linalg.solve_triangular(r, np.eye(k))
    inv_piv = r_inv @ r_inv.T
    xtx_inv = np.empty((k, k))
    xtx_inv[np.ix_(piv, piv)] = inv_piv

    resid = y - a @ coef
    return LeastSquaresSolution(
        coefficients=coef,
        residuals=resid,
        rss=float(resid @ resid),
        rank=rank,
        xtx_inverse=xtx_inv,
    )


@dataclass(frozen=True)
class LogisticFit:
    coefficients: np.ndarray
    covariance: np.ndarray
    iterations: int

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


def fit_logistic(design, binary_response, tol: float = LOGISTIC_TOL,
                 max_iter: int = LOGISTIC_MAX_ITER) -> LogisticFit:
    """Logistic-regression MLE by iteratively reweighted least squares.

    The covariance is the inverse observed information at the optimum.
    """
    a = as_matrix(design)
    y = as_vector(binary_response)
    n, k = a.shape
    if y.shape[0] != n:
        raise DimensionMismatch(f"design has {n} rows but response has {y.shape[0]}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("binary_response must contain only 0 and 1")
    if y.min() == y.max():
        raise Separation("response is constant; the MLE does not exist")

    beta = np.zeros(k)
    for it in range(1, max_iter + 1):
        eta = a @ beta
        mu = 1.0 / (1.0 + np.exp(-eta))
        w = mu * (1.0 - mu)
        if np.any(w < 1e-300) or not np.all(np.isfinite(w)):
            raise Separation("IRLS weights underflowed; data appear separated")
        sw = np.sqrt(w)
        working = eta + (y - mu) / w
        step = solve_least_squares(a * sw[:, None], working * sw)
        new = step.coefficients
        if np.max(np.abs(new)) > SEPARATION_BOUND:
            raise Separation("coefficient magnitude exceeded bound; data appear separated")
        delta = np.max(np.abs(new - beta))
        beta = new
        if delta < tol:
            break
    else:
        raise NonConvergence(f"IRLS did not converge in {max_iter} iterations")

    mu = 1.0 / (1.0 + np.exp(-(a @ beta)))
    info = a.T @ (a * (mu * (1.0 - mu))[:, None])
    return LogisticFit(coefficients=beta, covariance=linalg.inv(info), iterations=it)

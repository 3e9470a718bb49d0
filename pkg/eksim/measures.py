"""
Uniform empirical measures on J points and exact Wasserstein distances
between equal-size empirical measures.
"""
import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from eksim import config
from eksim.exceptions import (CapExceeded, DimMismatch, DimNotOne, NonFinite,
                              SizeMismatch)
from eksim.linalg import SymMatrix


class EmpiricalMeasure:
    """J points in R^d carrying weights 1/J. A 1-d array is read as J points
    on the real line."""

    __slots__ = ("_points",)

    def __init__(self, points):
        x = np.array(points, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise DimMismatch(f"Expected a J x d array, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NonFinite("Empirical measure has non-finite coordinates")

        x.setflags(write=False)
        self._points = x

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def size(self) -> int:
        return self._points.shape[0]

    @property
    def dim(self) -> int:
        return self._points.shape[1]

    def __repr__(self):
        return f"EmpiricalMeasure(J={self.size}, dim={self.dim})"


def mean(mu: EmpiricalMeasure) -> np.ndarray:
    return mu.points.mean(axis=0)


def covariance(mu: EmpiricalMeasure) -> SymMatrix:
    # Population form: divisor J.
    centered = mu.points - mean(mu)
    return SymMatrix(centered.T @ centered / mu.size)


def _check_pair(mu: EmpiricalMeasure, nu: EmpiricalMeasure):
    if mu.size != nu.size:
        raise SizeMismatch(
            f"Measures have different sizes: {mu.size} and {nu.size}")
    if mu.dim != nu.dim:
        raise SizeMismatch(
            f"Measures have different dimensions: {mu.dim} and {nu.dim}")


def wasserstein_assignment(mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                           p: float = 2.0,
                           cap: int = config.assignment_cap) -> float:
    """
    Exact W_p between equal-size uniform empirical measures: the optimal
    transport plan is a permutation, found by solving the assignment problem
    on the cost |x_j - y_k|^p.
    """
    _check_pair(mu, nu)
    if mu.size > cap:
        raise CapExceeded(
            f"J = {mu.size} exceeds the assignment cap {cap}. "
            "Subsample or use the identity coupling bound.")

    cost = cdist(mu.points, nu.points) ** p
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / mu.size) ** (1.0 / p)


def wasserstein_to_dirac(mu: EmpiricalMeasure, p: float = 2.0) -> float:
    norms = np.linalg.norm(mu.points, axis=1)
    return float(np.mean(norms ** p)) ** (1.0 / p)


def wasserstein_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                   p: float = 2.0) -> float:
    """W_p on the line by pairing order statistics."""
    _check_pair(mu, nu)
    if mu.dim != 1:
        raise DimNotOne(f"wasserstein_1d needs dim 1, got {mu.dim}")

    x = np.sort(mu.points[:, 0])
    y = np.sort(nu.points[:, 0])
    return float(np.mean(np.abs(x - y) ** p)) ** (1.0 / p)


def identity_coupling_bound(mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                            p: float = 2.0) -> float:
    """((1/J) sum_j |x_j - y_j|^p)^(1/p), an upper bound on W_p."""
    _check_pair(mu, nu)
    gaps = np.linalg.norm(mu.points - nu.points, axis=1)
    return float(np.mean(gaps ** p)) ** (1.0 / p)

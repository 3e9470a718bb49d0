"""
Dense symmetric / positive semidefinite matrix primitives.

Covariances, their square roots and Hessians are all carried as SymMatrix.
"""
import logging

import numpy as np
from scipy.linalg import LinAlgError, eigh, eigvalsh

from eksim import config
from eksim.exceptions import (BelowFloor, DimMismatch, NonConvergedEigen,
                              NonFinite, NotPSD)


class SymMatrix:
    """
    Immutable dense symmetric matrix, symmetrized as (M + M^T) / 2 on
    construction.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries):
        a = np.array(_as_array(entries), dtype=float)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise DimMismatch(f"Expected a square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NonFinite("Matrix has non-finite entries")

        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        self._entries = a

    @classmethod
    def identity(cls, dim: int):
        return cls(np.eye(dim))

    @classmethod
    def zeros(cls, dim: int):
        return cls(np.zeros((dim, dim)))

    @classmethod
    def diag(cls, values):
        return cls(np.diag(np.asarray(values, dtype=float)))

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def dim(self) -> int:
        return self._entries.shape[0]

    def __add__(self, other):
        return SymMatrix(self._entries + _as_array(other))

    def __sub__(self, other):
        return SymMatrix(self._entries - _as_array(other))

    def __mul__(self, scalar: float):
        return SymMatrix(self._entries * float(scalar))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return self._entries @ _as_array(other)

    def __eq__(self, other):
        return isinstance(other, SymMatrix) and np.array_equal(
            self._entries, other._entries)

    def __hash__(self):
        return hash(self._entries.tobytes())

    def __repr__(self):
        return f"SymMatrix({self._entries.tolist()})"


def _as_array(a):
    return a.entries if isinstance(a, SymMatrix) else np.asarray(a, dtype=float)


def _eigh(a: SymMatrix):
    try:
        return eigh(a.entries)
    except (LinAlgError, ValueError) as e:
        logging.debug(e)
        raise NonConvergedEigen("Symmetric eigensolver did not converge")


def _clamped_eigenvalues(a: SymMatrix, w: np.ndarray):
    eps_clamp = config.eps_clamp_rel * frobenius_norm(a)
    if w.size and w[0] < -eps_clamp:
        raise NotPSD(
            f"Matrix has eigenvalue {w[0]:.3e} below -{eps_clamp:.3e}")
    return np.clip(w, 0.0, None)


def frobenius_norm(a) -> float:
    return float(np.linalg.norm(_as_array(a), "fro"))


def min_eigenvalue(a: SymMatrix) -> float:
    try:
        return float(eigvalsh(a.entries)[0])
    except (LinAlgError, ValueError) as e:
        logging.debug(e)
        raise NonConvergedEigen("Symmetric eigensolver did not converge")


def max_eigenvalue(a: SymMatrix) -> float:
    try:
        return float(eigvalsh(a.entries)[-1])
    except (LinAlgError, ValueError) as e:
        logging.debug(e)
        raise NonConvergedEigen("Symmetric eigensolver did not converge")


def psd_sqrt(a: SymMatrix) -> SymMatrix:
    """
    Unique PSD square root through the symmetric eigendecomposition.
    Eigenvalues in [-eps_clamp, 0) are clamped to zero, where eps_clamp is
    1e-10 times the Frobenius norm; anything lower raises NotPSD.
    """
    w, v = _eigh(a)
    w = _clamped_eigenvalues(a, w)
    return SymMatrix((v * np.sqrt(w)) @ v.T)


def psd_project(a: SymMatrix) -> SymMatrix:
    """Nearest PSD matrix in Frobenius norm (negative eigenvalues zeroed)."""
    w, v = _eigh(a)
    if w.size and w[0] >= 0:
        return a
    return SymMatrix((v * np.clip(w, 0.0, None)) @ v.T)


def invert_spd(a: SymMatrix, floor: float = config.cov_floor) -> SymMatrix:
    w, v = _eigh(a)
    if w[0] < floor:
        raise BelowFloor(
            f"Minimum eigenvalue {w[0]:.3e} is below the floor {floor:.3e}")
    return SymMatrix((v / w) @ v.T)

"""
Negative log-densities phi of the growth class A(ell), with closed-form
gradients and Hessians.

Every evaluation accepts a single point of shape (d,) or a batch of shape
(J, d); batches are what the particle integrators use.
"""
import logging
from enum import Enum

import numpy as np

from eksim.config import Key
from eksim.exceptions import DimMismatch, InvalidPotential
from eksim.linalg import SymMatrix, max_eigenvalue, min_eigenvalue


class Kind(Enum):
    quadratic = 1
    even_power = 2


class Potential:
    kind: Kind
    ell: int

    def __init__(self, dim: int, center, offset: float):
        if offset < 1:
            raise InvalidPotential(
                "offset must be >= 1 so that phi is bounded below by 1",
                key=Key.potential_offset.value)

        self.dim = dim
        self.center = _vector(center, dim, Key.potential_center.value)
        self.offset = float(offset)

    def _points(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,) or x.ndim > 2:
            raise DimMismatch(
                f"Expected points of dimension {self.dim}, got shape {x.shape}")
        return x

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hess(self, x):
        raise NotImplementedError


class Quadratic(Potential):
    """phi(x) = (x - m)^T A (x - m) / 2 + offset, class A(0)."""

    kind = Kind.quadratic
    ell = 0

    def __init__(self, precision, center=None, offset: float = 1.0):
        precision = SymMatrix(precision)
        if center is None:
            center = np.zeros(precision.dim)
        super().__init__(precision.dim, center, offset)

        if min_eigenvalue(precision) <= 0:
            raise InvalidPotential(
                "precision must be positive definite",
                key=Key.potential_precision.value)
        self.precision = precision

    def value(self, x):
        y = self._points(x) - self.center
        return 0.5 * np.einsum("...i,ij,...j->...", y, self.precision.entries,
                               y) + self.offset

    def grad(self, x):
        y = self._points(x) - self.center
        return y @ self.precision.entries

    def hess(self, x):
        self._points(x)
        return self.precision

    def __repr__(self):
        return (f"Quadratic(precision={self.precision.entries.tolist()}, "
                f"center={self.center.tolist()}, offset={self.offset})")


class EvenPower(Potential):
    """phi(x) = scale |x - c|^(ell + 2) + offset, class A(ell)."""

    kind = Kind.even_power

    def __init__(self, ell: int, dim: int, scale: float = 1.0, center=None,
                 offset: float = 1.0):
        if isinstance(ell, bool) or not isinstance(ell, (int, np.integer)) \
                or ell < 2 or ell % 2:
            raise InvalidPotential(
                "ell must be an even positive integer",
                key=Key.potential_ell.value)
        if not scale > 0:
            raise InvalidPotential(
                "scale must be positive", key=Key.potential_scale.value)
        if center is None:
            center = np.zeros(dim)
        super().__init__(dim, center, offset)

        self.ell = int(ell)
        self.scale = float(scale)

    def value(self, x):
        y = self._points(x) - self.center
        r2 = np.sum(y * y, axis=-1)
        return self.scale * r2 ** ((self.ell + 2) / 2) + self.offset

    def grad(self, x):
        y = self._points(x) - self.center
        r2 = np.sum(y * y, axis=-1, keepdims=True)
        return self.scale * (self.ell + 2) * r2 ** (self.ell // 2) * y

    def hess(self, x):
        x = self._points(x)
        if x.ndim != 1:
            raise DimMismatch("Hessians are evaluated one point at a time")

        y = x - self.center
        r2 = float(y @ y)
        k = self.scale * (self.ell + 2)
        # ell is even and >= 2, so |y|^(ell - 2) is a polynomial.
        return SymMatrix(k * r2 ** (self.ell // 2) * np.eye(self.dim)
                         + k * self.ell * r2 ** (self.ell // 2 - 1)
                         * np.outer(y, y))

    def __repr__(self):
        return (f"EvenPower(ell={self.ell}, scale={self.scale}, "
                f"center={self.center.tolist()}, offset={self.offset})")


def _vector(value, dim, key):
    v = np.asarray(value, dtype=float).reshape(-1)
    if v.shape != (dim,):
        raise InvalidPotential(f"must have length {dim}", key=key)
    return v


def potential_from_config(cfg: dict, dim: int) -> Potential:
    kind = cfg.get(Key.potential_kind.value)
    offset = cfg.get(Key.potential_offset.value, 1.0)
    center = cfg.get(Key.potential_center.value)
    if center is not None:
        center = _vector(center, dim, Key.potential_center.value)

    if kind == "quadratic":
        precision = cfg.get(Key.potential_precision.value)
        if precision is None:
            precision = np.eye(dim)
        precision = np.asarray(precision, dtype=float)
        if dim == 1 and precision.size == 1:
            precision = precision.reshape(1, 1)
        if precision.shape != (dim, dim):
            raise InvalidPotential(f"must be a {dim}x{dim} matrix",
                                   key=Key.potential_precision.value)
        return Quadratic(precision, center=center, offset=offset)

    if kind == "even_power":
        return EvenPower(cfg.get(Key.potential_ell.value, 2), dim,
                         scale=cfg.get(Key.potential_scale.value, 1.0),
                         center=center, offset=offset)

    raise InvalidPotential(
        f"unknown potential kind {kind!r}; expected 'quadratic' or 'even_power'")


# Operations ################################################################
def phi_value(pot: Potential, x):
    return pot.value(x)


def phi_grad(pot: Potential, x):
    return pot.grad(x)


def phi_hess(pot: Potential, x) -> SymMatrix:
    return pot.hess(x)


def convexity_inner(pot: Potential, x, y) -> float:
    """<y - x, grad phi(y) - grad phi(x)>"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.dot(y - x, pot.grad(y) - pot.grad(x)))


class ClassReport:
    def __init__(self, ell, ratios, bounds, radius_range=None):
        self.ell = ell
        self.radius_range = radius_range
        self.ratios = ratios
        self.bounds = bounds

        lo, hi = bounds
        self.passed = all(
            np.isfinite(r_min) and np.isfinite(r_max)
            and r_min > 0 and r_min >= lo and r_max <= hi
            for r_min, r_max in ratios.values()
        )

    @property
    def l_tilde(self) -> float:
        return min(r_min for r_min, _ in self.ratios.values())

    @property
    def u_tilde(self) -> float:
        return max(r_max for _, r_max in self.ratios.values())

    def rows(self):
        return [
            {"ratio": name, "min": r_min, "max": r_max}
            for name, (r_min, r_max) in self.ratios.items()
        ]


def check_class(pot: Potential, ell: int, n_samples: int = 200,
                radius_range=(1.0, 1000.0), seed: int = 0,
                bounds=(1e-4, 1e4)) -> ClassReport:
    """
    Sample points on shells |x| in radius_range (log-uniform radii, both end
    shells always included) and record the ranges of phi / |x|^(ell+2),
    |grad phi| / |x|^(ell+1) and the Hessian eigenvalues / |x|^ell.

    The ball inside the lower radius is the excluded compact set. It is
    widened to twice the distance from the origin to the potential's center
    so that the center lies inside it; the upper radius then stays at least
    ten times the lower one.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")

    r_lo, r_hi = compact_radius(pot, radius_range)
    rng = np.random.Generator(np.random.Philox(seed))
    directions = rng.standard_normal((n_samples, pot.dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = np.exp(rng.uniform(np.log(r_lo), np.log(r_hi), n_samples))
    radii[0] = r_lo
    if n_samples > 1:
        radii[1] = r_hi
    points = directions * radii[:, None]
    norms = radii
    value_ratio = pot.value(points) / norms ** (ell + 2)
    grad_ratio = np.linalg.norm(pot.grad(points), axis=1) / norms ** (ell + 1)
    hess_lo = np.empty(n_samples)
    hess_hi = np.empty(n_samples)
    for i, x in enumerate(points):
        h = pot.hess(x)
        hess_lo[i] = min_eigenvalue(h) / norms[i] ** ell
        hess_hi[i] = max_eigenvalue(h) / norms[i] ** ell

    ratios = {
        "value": (float(value_ratio.min()), float(value_ratio.max())),
        "gradient": (float(grad_ratio.min()), float(grad_ratio.max())),
        "hessian": (float(hess_lo.min()), float(hess_hi.max())),
    }
    report = ClassReport(ell, ratios, bounds, (r_lo, r_hi))
    logging.debug(f"Class check ell={ell}: {ratios} -> {report.passed}")
    return report


def compact_radius(pot: Potential, radius_range=(1.0, 1000.0)):
    r_lo, r_hi = (float(r) for r in radius_range)
    if not 0 < r_lo <= r_hi:
        raise ValueError("radius_range must satisfy 0 < low <= high")
    around_center = 2.0 * float(np.linalg.norm(pot.center))
    if around_center <= r_lo:
        return r_lo, r_hi
    return around_center, max(r_hi, 10.0 * around_center)


def fit_convexity_constant(pot: Potential, n_pairs: int = 1000,
                           scale: float = 2.0, seed: int = 0, pairs=None):
    """
    Fit the constants of the convexity inequality with c2 = 0 over random
    pairs: returns (c1, c1_weighted) where
    c1 = min <y-x, grad(y)-grad(x)> / |y-x|^2, the smallest precision
    eigenvalue for a quadratic, and
    c1_weighted = min <y-x, grad(y)-grad(x)>
                  / ((1 + |x|^ell + |y|^ell) |y-x|^2).
    Pairs are drawn around the center unless given as (x, y) arrays.
    """
    if pairs is None:
        rng = np.random.Generator(np.random.Philox(seed))
        x = pot.center + scale * rng.standard_normal((n_pairs, pot.dim))
        y = pot.center + scale * rng.standard_normal((n_pairs, pot.dim))
    else:
        x, y = (np.asarray(a, dtype=float) for a in pairs)

    diff = y - x
    inner = np.sum(diff * (pot.grad(y) - pot.grad(x)), axis=1)
    gap2 = np.sum(diff * diff, axis=1)
    weight = (1 + np.linalg.norm(x, axis=1) ** pot.ell
              + np.linalg.norm(y, axis=1) ** pot.ell)
    keep = gap2 > 0
    c1 = float(np.min(inner[keep] / gap2[keep]))
    c1_weighted = float(np.min(inner[keep] / (weight[keep] * gap2[keep])))
    return c1, c1_weighted

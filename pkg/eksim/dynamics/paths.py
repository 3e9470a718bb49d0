"""
Mean-field mean/covariance paths t -> (M(rho_t), C(rho_t)).

Two constructions: the closed moment system for quadratic phi, integrated
with classical RK4, and a Picard iteration of the map that freezes a
covariance path, evolves independent particles under it and re-estimates
the path.
"""
import logging

import numpy as np

from eksim import config
from eksim.exceptions import (CovarianceCollapse, NoConvergence, NonFinite,
                              OdeStepRejected, PathOutOfRange)
from eksim.linalg import (SymMatrix, frobenius_norm, invert_spd,
                          min_eigenvalue, psd_project, psd_sqrt)
from .noise import NoiseStream, Purpose


class CovariancePath:
    def __init__(self, grid, mats, means):
        grid = np.array(grid, dtype=float)
        mats = np.array([_entries(c) for c in mats], dtype=float)
        means = np.array(means, dtype=float)
        if means.ndim == 1:
            means = means.reshape(-1, 1)

        if grid.ndim != 1 or grid.size < 1 or grid[0] != 0:
            raise ValueError("grid must be a 1-d array starting at 0")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if mats.shape[0] != grid.size or means.shape[0] != grid.size:
            raise ValueError("one matrix and one mean per grid node")

        mats = 0.5 * (mats + np.swapaxes(mats, 1, 2))
        for a in (grid, mats, means):
            a.setflags(write=False)
        self.grid = grid
        self.mats = mats
        self.means = means

    @classmethod
    def constant(cls, grid, mean, cov):
        grid = np.asarray(grid, dtype=float)
        n = grid.size
        return cls(grid, np.repeat(_entries(cov)[None], n, axis=0),
                   np.repeat(np.asarray(mean, dtype=float).reshape(1, -1), n,
                             axis=0))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def t_final(self) -> float:
        return float(self.grid[-1])

    def __len__(self):
        return self.grid.size

    def node(self, i: int):
        return self.means[i].copy(), SymMatrix(self.mats[i])

    def _locate(self, t: float):
        tol = 1e-9 * max(1.0, self.t_final)
        if t < -tol or t > self.t_final + tol:
            raise PathOutOfRange(
                f"t = {t} is outside the path range [0, {self.t_final}]")

        i = int(np.searchsorted(self.grid, t))
        if i < self.grid.size and abs(self.grid[i] - t) <= tol:
            return i, None
        if i > 0 and abs(self.grid[i - 1] - t) <= tol:
            return i - 1, None
        if i >= self.grid.size:
            return self.grid.size - 1, None
        weight = (t - self.grid[i - 1]) / (self.grid[i] - self.grid[i - 1])
        return i - 1, weight

    def at(self, t: float):
        """
        Mean and covariance at time t: exact at grid nodes, linear
        interpolation of entries followed by PSD clamping in between.
        """
        i, weight = self._locate(t)
        if weight is None:
            return self.node(i)

        mean = (1 - weight) * self.means[i] + weight * self.means[i + 1]
        cov = (1 - weight) * self.mats[i] + weight * self.mats[i + 1]
        return mean, psd_project(SymMatrix(cov))

    def covariance_at(self, t: float) -> SymMatrix:
        return self.at(t)[1]

    def mean_at(self, t: float) -> np.ndarray:
        return self.at(t)[0]

    def covariance_distance(self, other) -> float:
        """sup over nodes of the Frobenius distance between covariances."""
        _check_same_grid(self, other)
        return float(np.max(np.linalg.norm(self.mats - other.mats,
                                           axis=(1, 2))))

    def mean_distance(self, other) -> float:
        _check_same_grid(self, other)
        return float(np.max(np.linalg.norm(self.means - other.means, axis=1)))

    def min_eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.mats)[:, 0]

    def rows(self):
        d = self.dim
        for t, m, c in zip(self.grid, self.means, self.mats):
            row = {"time": float(t)}
            row.update({f"mean_{i}": float(m[i]) for i in range(d)})
            row.update({f"cov_{i}{j}": float(c[i, j])
                        for i in range(d) for j in range(i, d)})
            yield row


def _entries(c):
    return c.entries if isinstance(c, SymMatrix) else np.asarray(c, dtype=float)


def _check_same_grid(a: CovariancePath, b: CovariancePath):
    if a.grid.shape != b.grid.shape or not np.allclose(a.grid, b.grid):
        raise ValueError("paths live on different grids")


def uniform_grid(t_final: float, dt: float) -> np.ndarray:
    n_steps = int(round(t_final / dt))
    return np.arange(n_steps + 1) * dt


# Closed form for quadratic phi ##############################################
def _gaussian_rhs(precision, target_mean, m, c):
    ca = c @ precision
    return -ca @ (m - target_mean), 2.0 * c - 2.0 * ca @ c


def gaussian_meanfield_path(precision, target_mean, m0, c0, grid,
                            max_step: float = 1e-2) -> CovariancePath:
    """
    Mean/covariance path of the mean-field dynamics for
    phi(x) = (x - m*)^T A (x - m*) / 2 started from a Gaussian law:

        dm/dt = -C A (m - m*),    dC/dt = 2 C - 2 C A C.

    Integrated with classical RK4; grid intervals longer than max_step are
    subdivided.
    """
    a = _entries(precision)
    target = np.asarray(target_mean, dtype=float).reshape(-1)
    m = np.asarray(m0, dtype=float).reshape(-1).copy()
    c = _entries(c0).copy()
    grid = np.asarray(grid, dtype=float)

    if min_eigenvalue(SymMatrix(c)) <= 0:
        raise OdeStepRejected("initial covariance must be positive definite")

    means = [m.copy()]
    mats = [c.copy()]
    for t0, t1 in zip(grid[:-1], grid[1:]):
        n_sub = max(1, int(np.ceil((t1 - t0) / max_step - 1e-12)))
        h = (t1 - t0) / n_sub
        for _ in range(n_sub):
            k1m, k1c = _gaussian_rhs(a, target, m, c)
            k2m, k2c = _gaussian_rhs(a, target, m + 0.5 * h * k1m,
                                     c + 0.5 * h * k1c)
            k3m, k3c = _gaussian_rhs(a, target, m + 0.5 * h * k2m,
                                     c + 0.5 * h * k2c)
            k4m, k4c = _gaussian_rhs(a, target, m + h * k3m, c + h * k3c)
            m = m + h / 6.0 * (k1m + 2 * k2m + 2 * k3m + k4m)
            c = c + h / 6.0 * (k1c + 2 * k2c + 2 * k3c + k4c)
            c = 0.5 * (c + c.T)

        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(c))):
            raise OdeStepRejected(f"moment system diverged at t = {t1}")
        cov = SymMatrix(c)
        if min_eigenvalue(cov) < -config.eps_clamp_rel * frobenius_norm(cov):
            raise OdeStepRejected(
                f"covariance lost positive definiteness at t = {t1}")
        means.append(m.copy())
        mats.append(psd_project(cov).entries)

    return CovariancePath(grid, mats, means)


# Picard iteration ##########################################################
class PicardResult:
    def __init__(self, path: CovariancePath, iterations: int, gaps,
                 converged: bool, n_particles: int, tol: float):
        self.path = path
        self.iterations = iterations
        self.gaps = list(gaps)
        self.converged = converged
        self.n_particles = n_particles
        self.tol = tol

    def describe(self):
        return {
            "picard_iterations": self.iterations,
            "picard_converged": self.converged,
            "picard_gaps": self.gaps,
            "picard_n_particles": self.n_particles,
            "picard_tol": self.tol,
        }


def match_moments(x: np.ndarray, mean, cov) -> np.ndarray:
    """
    Affine map of the rows of x whose empirical mean and covariance (divisor
    n) are exactly mean and cov.
    """
    centered = x - x.mean(axis=0)
    empirical = SymMatrix(centered.T @ centered / x.shape[0])
    whiten = invert_spd(psd_sqrt(empirical)).entries
    return (np.asarray(mean, dtype=float).reshape(1, -1)
            + centered @ whiten @ psd_sqrt(SymMatrix(_entries(cov))).entries)


def _matched_noise(gauss: np.ndarray, y: np.ndarray) -> np.ndarray:
    # orthogonal to the constants and to the particle positions, identity
    # empirical covariance
    basis = np.column_stack([np.ones(y.shape[0]), y - y.mean(axis=0)])
    q, _ = np.linalg.qr(basis)
    gauss = gauss - q @ (q.T @ gauss)
    return match_moments(gauss, np.zeros(gauss.shape[1]),
                         np.eye(gauss.shape[1]))


def _picard_map(pot, path: CovariancePath, y0: np.ndarray,
                noise: NoiseStream, cov_floor: float,
                moment_matching: bool) -> CovariancePath:
    y = y0.copy()
    n = y.shape[0]
    means = [path.means[0]]
    mats = [path.mats[0]]

    for i, h in enumerate(np.diff(path.grid)):
        cov = SymMatrix(path.mats[i])
        sigma = psd_sqrt(cov * 2.0).entries
        gauss = noise.gaussian(i, y.shape)
        if moment_matching:
            gauss = _matched_noise(gauss, y)
        y = y - h * (pot.grad(y) @ cov.entries) + np.sqrt(h) * (gauss @ sigma)
        if not np.all(np.isfinite(y)):
            raise NonFinite(
                f"Picard particles blew up at t = {path.grid[i + 1]}")

        m = y.mean(axis=0)
        centered = y - m
        c = centered.T @ centered / n
        means.append(m)
        mats.append(c)

    new = CovariancePath(path.grid, mats, means)
    eigs = new.min_eigenvalues()
    if np.min(eigs) < cov_floor:
        k = int(np.argmin(eigs))
        raise CovarianceCollapse(
            f"covariance min eigenvalue {eigs[k]:.3e} below floor "
            f"{cov_floor:.3e} at t = {new.grid[k]}")
    return new


def picard_covariance_path(pot, initial_sampler, grid, n_particles: int,
                           max_iter: int, tol: float, seed: int,
                           cov_floor: float = config.cov_floor,
                           fresh_noise: bool = True,
                           moment_matching: bool = True) -> PicardResult:
    """
    Fixed point of Gamma -> t -> (M, C)(Law(Y_t)) where Y solves the SDE
    with coefficients frozen to Gamma. The law is approximated by
    n_particles independent particles started from one draw of rho_0.

    - fresh_noise: bool = True
        Re-key the noise stream every iteration. False reuses the same
        Brownian draws, which turns the iteration into a deterministic
        fixed-point problem on one finite sample.
    - moment_matching: bool = True
        Map the initial draw onto the exact moments of rho_0 and every
        step's noise onto mean 0, identity covariance and no empirical
        correlation with the particles.

    The first iterate is the constant path at the exact moments of rho_0
    when the sampler exposes them (GaussianSampler does). Iteration stops
    once the sup-over-nodes gap between successive iterates is below tol.
    """
    if n_particles < config.picard_min_particles:
        raise ValueError(
            f"n_particles must be >= {config.picard_min_particles}")
    if not tol > 0:
        raise ValueError("tol must be positive")

    grid = np.asarray(grid, dtype=float)
    y0 = np.asarray(initial_sampler(
        NoiseStream(seed, Purpose.initial, 0).gaussian(0, (n_particles, pot.dim))),
        dtype=float)
    m0, c0 = _initial_moments(initial_sampler, y0)
    if moment_matching:
        y0 = match_moments(y0, m0, c0)
    path = CovariancePath.constant(grid, m0, c0)

    gaps = []
    best, best_gap = path, np.inf
    for k in range(1, max_iter + 1):
        noise = NoiseStream(seed, Purpose.picard, k if fresh_noise else 0)
        new = _picard_map(pot, path, y0, noise, cov_floor, moment_matching)
        gap = max(new.covariance_distance(path), new.mean_distance(path))
        gaps.append(gap)
        logging.info(f"Picard iteration {k}: gap {gap:.3e}")

        path = new
        if gap < best_gap:
            best, best_gap = new, gap
        if gap < tol:
            return PicardResult(path, k, gaps, True, n_particles, tol)

    result = PicardResult(best, max_iter, gaps, False, n_particles, tol)
    raise NoConvergence(
        f"Picard iteration did not reach {tol:.3e} in {max_iter} "
        f"iterations (last gap {gaps[-1]:.3e})", result=result)


def _initial_moments(sampler, y0: np.ndarray):
    mean = getattr(sampler, "mean", None)
    cov = getattr(sampler, "cov", None)
    if mean is None or cov is None:
        centered = y0 - y0.mean(axis=0)
        return y0.mean(axis=0), centered.T @ centered / y0.shape[0]
    return np.asarray(mean, dtype=float).reshape(-1), _entries(cov)

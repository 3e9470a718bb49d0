import csv
import logging
import os
from enum import Enum
from typing import Callable, List, Optional

import numpy as np

from eksim import config
from eksim.exceptions import DimMismatch, NonFinite
from eksim.linalg import SymMatrix, min_eigenvalue, psd_sqrt
from eksim.measures import (EmpiricalMeasure, covariance,
                            identity_coupling_bound, wasserstein_to_dirac)
from .noise import CoarsenedNoise, NoiseStream, Purpose
from .paths import CovariancePath


class EnsembleState:
    __slots__ = ("time", "positions")

    def __init__(self, time: float, positions):
        positions = np.array(positions, dtype=float)
        if positions.ndim == 1:
            positions = positions.reshape(-1, 1)
        if time < 0:
            raise ValueError("time must be non-negative")
        positions.setflags(write=False)
        self.time = float(time)
        self.positions = positions

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def measure(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.positions)


class CoupledEnsembles:
    __slots__ = ("ips", "meanfield", "step_index")

    def __init__(self, ips: EnsembleState, meanfield: EnsembleState,
                 step_index: int = 0):
        if ips.time != meanfield.time:
            raise ValueError("coupled states must share their time")
        if ips.positions.shape != meanfield.positions.shape:
            raise DimMismatch("coupled states must have the same shape")
        self.ips = ips
        self.meanfield = meanfield
        self.step_index = step_index

    @classmethod
    def start(cls, positions):
        return cls(EnsembleState(0.0, positions), EnsembleState(0.0, positions))


class SdeConfig:
    """
    Euler-Maruyama settings. With noise_refinement = k the Brownian
    increments are drawn on a grid k times finer than dt and summed, so a
    run at dt / k with refinement 1 follows the same Brownian path.
    """
    __slots__ = ("dt", "t_final", "seed", "cov_floor", "noise_refinement")

    def __init__(self, dt: float, t_final: float, seed: int = 0,
                 cov_floor: float = config.cov_floor,
                 noise_refinement: int = 1):
        if not dt > 0:
            raise ValueError("dt must be positive")
        if not t_final > 0:
            raise ValueError("t_final must be positive")
        if dt > t_final * (1 + 1e-12):
            raise ValueError("dt must not exceed t_final")
        if cov_floor < 0:
            raise ValueError("cov_floor must be non-negative")
        if int(noise_refinement) < 1:
            raise ValueError("noise_refinement must be >= 1")
        self.dt = float(dt)
        self.t_final = float(t_final)
        self.seed = int(seed)
        self.cov_floor = float(cov_floor)
        self.noise_refinement = int(noise_refinement)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def halved(self):
        return SdeConfig(self.dt / 2, self.t_final, self.seed, self.cov_floor)

    def refined_noise(self, factor: int):
        return SdeConfig(self.dt, self.t_final, self.seed, self.cov_floor,
                         noise_refinement=factor)

    def noise(self, *key: int):
        stream = NoiseStream(self.seed, Purpose.dynamics, *key)
        if self.noise_refinement == 1:
            return stream
        return CoarsenedNoise(stream, self.noise_refinement)

    def describe(self):
        return {"dt": self.dt, "t_final": self.t_final, "seed": self.seed,
                "cov_floor": self.cov_floor,
                "noise_refinement": self.noise_refinement}


class GaussianSampler:
    """Maps standard normal draws z (n x d) to samples mean + sqrt(cov) z."""

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float).reshape(-1)
        self.cov = SymMatrix(cov)
        if self.cov.dim != self.mean.size:
            raise DimMismatch("mean and covariance dimensions differ")
        self._root = psd_sqrt(self.cov).entries

    @property
    def dim(self) -> int:
        return self.mean.size

    def __call__(self, gauss: np.ndarray) -> np.ndarray:
        return self.mean + np.asarray(gauss) @ self._root


# Coefficients ##############################################################
def drift(pot, x, cov: SymMatrix):
    """b(x, mu) = -C(mu) grad phi(x); x may be one point or a batch."""
    return -(pot.grad(x) @ cov.entries)


def diffusion(cov: SymMatrix) -> SymMatrix:
    """sigma(mu) = sqrt(2 C(mu))"""
    return psd_sqrt(cov * 2.0)


def _euler_step(pot, positions, cov: SymMatrix, dt: float, gauss):
    gauss = np.asarray(gauss, dtype=float)
    if gauss.shape != positions.shape:
        raise DimMismatch(
            f"noise shape {gauss.shape} does not match {positions.shape}")

    new = (positions + dt * drift(pot, positions, cov)
           + np.sqrt(dt) * (gauss @ diffusion(cov).entries))
    if not np.all(np.isfinite(new)):
        raise NonFinite("non-finite particle coordinates")
    return new


def step_ips(pot, state: EnsembleState, dt: float, gauss) -> EnsembleState:
    """
    Euler-Maruyama step of the interacting system; the empirical covariance
    is taken once from the pre-step ensemble.
    """
    cov = covariance(state.measure())
    return EnsembleState(state.time + dt,
                         _euler_step(pot, state.positions, cov, dt, gauss))


def step_meanfield(pot, state: EnsembleState, path: CovariancePath,
                   dt: float, gauss) -> EnsembleState:
    """Euler-Maruyama step of independent particles with the coefficients
    frozen to the path covariance at the left endpoint."""
    cov = path.covariance_at(state.time)
    return EnsembleState(state.time + dt,
                         _euler_step(pot, state.positions, cov, dt, gauss))


def step_coupled(pot, coupled: CoupledEnsembles, path: CovariancePath,
                 dt: float, noise: NoiseStream) -> CoupledEnsembles:
    """One draw per (step, particle, coordinate), fed to both systems."""
    gauss = noise.gaussian(coupled.step_index, coupled.ips.positions.shape)
    return CoupledEnsembles(
        step_ips(pot, coupled.ips, dt, gauss),
        step_meanfield(pot, coupled.meanfield, path, dt, gauss),
        coupled.step_index + 1,
    )


def run_ips(pot, positions, dt: float, n_steps: int,
            noise: NoiseStream) -> EnsembleState:
    state = EnsembleState(0.0, positions)
    for step in range(n_steps):
        state = step_ips(pot, state, dt,
                         noise.gaussian(step, state.positions.shape))
    return state


# Stopping times ############################################################
class MonitorKind(Enum):
    ips_excursion = 1
    meanfield_excursion = 2
    coupling_distance = 3


class StoppingRecord:
    __slots__ = ("which", "triggered", "hit_time")

    def __init__(self, which: MonitorKind, hit_time: Optional[float] = None):
        self.which = which
        self.triggered = hit_time is not None
        self.hit_time = hit_time

    def __repr__(self):
        return f"StoppingRecord({self.which.name}, hit_time={self.hit_time})"


class StoppingMonitor:
    """
    First grid time at which
      ips_excursion:        W_r(mu^J, delta_0) >= R
      meanfield_excursion:  W_r(mubar^J, delta_0) >= R
      coupling_distance:    ((1/J) sum |X^j - Xbar^j|^r)^(1/r) >= eps
    the last being the identity-coupling bound on W_r(mu^J, mubar^J).
    """

    def __init__(self, kind: MonitorKind, r: float, threshold: float):
        if r < 1:
            raise ValueError("r must be >= 1")
        if not threshold > 0:
            raise ValueError("threshold must be positive")
        self.kind = kind
        self.r = float(r)
        self.threshold = float(threshold)
        self.hit_time = None

    def distance(self, ips, meanfield) -> float:
        if self.kind == MonitorKind.ips_excursion:
            return wasserstein_to_dirac(EmpiricalMeasure(ips), self.r)
        if self.kind == MonitorKind.meanfield_excursion:
            return wasserstein_to_dirac(EmpiricalMeasure(meanfield), self.r)
        return identity_coupling_bound(EmpiricalMeasure(ips),
                                       EmpiricalMeasure(meanfield), self.r)

    def observe(self, time: float, ips, meanfield):
        if self.hit_time is None and \
                self.distance(ips, meanfield) >= self.threshold:
            self.hit_time = float(time)

    def record(self) -> StoppingRecord:
        return StoppingRecord(self.kind, self.hit_time)


def stopping_monitor(kind: MonitorKind, r: float, threshold: float,
                     states) -> StoppingRecord:
    """states: iterable of (time, ips_positions, meanfield_positions)."""
    monitor = StoppingMonitor(kind, r, threshold)
    for time, ips, meanfield in states:
        monitor.observe(time, np.asarray(ips, dtype=float),
                        np.asarray(meanfield, dtype=float))
        if monitor.hit_time is not None:
            break
    return monitor.record()


# Trajectories ##############################################################
class TrajectorySummary:
    def __init__(self, failed: bool, sup_displacement=None, gap_profile=None,
                 final_ips=None, final_meanfield=None, records=(),
                 min_cov_eigenvalue=None, sup_norm_ips=None,
                 sup_norm_meanfield=None, failed_at=None):
        self.failed = failed
        self.sup_displacement = sup_displacement
        self.gap_profile = gap_profile
        self.final_ips = final_ips
        self.final_meanfield = final_meanfield
        self.records = list(records)
        self.min_cov_eigenvalue = min_cov_eigenvalue
        self.sup_norm_ips = sup_norm_ips
        self.sup_norm_meanfield = sup_norm_meanfield
        self.failed_at = failed_at

    def record(self, kind: MonitorKind) -> Optional[StoppingRecord]:
        return next((r for r in self.records if r.which == kind), None)


Recorder = Callable[[int, float, np.ndarray, np.ndarray], None]


def run_coupled_trajectory(pot, path: CovariancePath, j_particles: int,
                           cfg: SdeConfig, initial_sampler,
                           monitors: List[StoppingMonitor] = (),
                           replicate: int = 0, profile_power: float = 2.0,
                           recorder: Optional[Recorder] = None
                           ) -> TrajectorySummary:
    """
    Evolve the interacting system and its synchronously coupled mean-field
    system from one shared initial draw with shared noise.

    The summary holds per-particle sup_t |X^j_t - Xbar^j_t|, the per-step
    mean over particles of |X^j_t - Xbar^j_t|^profile_power, per-particle
    sup norms, final measures, one StoppingRecord per monitor and the
    smallest eigenvalue of C(mu^J_t) seen. A blow-up returns a summary with
    failed=True instead of raising.
    """
    if path.t_final < cfg.t_final - 1e-9 * max(1.0, cfg.t_final):
        raise ValueError("path does not cover [0, t_final]")

    initial = NoiseStream(cfg.seed, Purpose.initial, j_particles, replicate)
    noise = cfg.noise(j_particles, replicate)
    x0 = initial_sampler(initial.gaussian(0, (j_particles, path.dim)))

    coupled = CoupledEnsembles.start(x0)
    monitors = [StoppingMonitor(m.kind, m.r, m.threshold) for m in monitors]

    n_steps = cfg.n_steps
    sup_disp = np.zeros(j_particles)
    profile = np.zeros(n_steps + 1)
    sup_ips = np.linalg.norm(x0, axis=1)
    sup_mf = sup_ips.copy()
    min_eig = np.inf

    def observe(state: CoupledEnsembles):
        nonlocal min_eig
        ips = state.ips.positions
        mf = state.meanfield.positions
        gap = np.linalg.norm(ips - mf, axis=1)
        np.maximum(sup_disp, gap, out=sup_disp)
        np.maximum(sup_ips, np.linalg.norm(ips, axis=1), out=sup_ips)
        np.maximum(sup_mf, np.linalg.norm(mf, axis=1), out=sup_mf)
        profile[state.step_index] = np.mean(gap ** profile_power)
        min_eig = min(min_eig, min_eigenvalue(covariance(state.ips.measure())))
        for m in monitors:
            m.observe(state.ips.time, ips, mf)
        if recorder is not None:
            recorder(state.step_index, state.ips.time, ips, mf)

    observe(coupled)
    try:
        for _ in range(n_steps):
            coupled = step_coupled(pot, coupled, path, cfg.dt, noise)
            observe(coupled)
    except NonFinite as e:
        logging.debug(f"Replicate {replicate} (J={j_particles}) failed at "
                      f"step {coupled.step_index + 1}: {e.message}")
        return TrajectorySummary(failed=True,
                                 failed_at=coupled.step_index + 1)

    if j_particles > path.dim and min_eig < cfg.cov_floor:
        logging.debug(f"Replicate {replicate} (J={j_particles}): ensemble "
                      f"covariance reached {min_eig:.3e}, below the floor "
                      f"{cfg.cov_floor:.3e}")

    return TrajectorySummary(
        failed=False,
        sup_displacement=sup_disp,
        gap_profile=profile,
        final_ips=coupled.ips.measure(),
        final_meanfield=coupled.meanfield.measure(),
        records=[m.record() for m in monitors],
        min_cov_eigenvalue=min_eig,
        sup_norm_ips=sup_ips,
        sup_norm_meanfield=sup_mf,
    )


class TrajectoryDump:
    """
    CSV recorder for run_coupled_trajectory. Each (J, replicate) pair goes to
    its own file, so replicates running on different threads never share a
    handle. Columns: replicate, step, time, particle, system, x_0 ... x_{d-1}.
    """

    def __init__(self, directory: str):
        self.directory = directory

    def path_for(self, j_particles: int, replicate: int) -> str:
        return os.path.join(self.directory,
                            f"trajectory_J{j_particles}_r{replicate}.csv")

    def recorder(self, j_particles: int, replicate: int) -> "ReplicateRecorder":
        os.makedirs(self.directory, exist_ok=True)
        return ReplicateRecorder(self.path_for(j_particles, replicate),
                                 replicate)


class ReplicateRecorder:
    """One open CSV file per replicate. Use as a context manager."""

    def __init__(self, path: str, replicate: int):
        self.path = path
        self.replicate = replicate
        self._file = open(path, "w", newline="")
        self._writer = csv.writer(self._file)
        self._header = False

    def __call__(self, step, time, ips, meanfield):
        if not self._header:
            self._writer.writerow(
                ["replicate", "step", "time", "particle", "system"]
                + [f"x_{i}" for i in range(ips.shape[1])])
            self._header = True
        for system, positions in (("ips", ips), ("mf", meanfield)):
            for j, x in enumerate(positions):
                self._writer.writerow([self.replicate, step, repr(time), j,
                                       system] + [repr(float(v)) for v in x])

    @property
    def closed(self) -> bool:
        return self._file.closed

    def close(self):
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *args):
        self.close()
        return False

"""
Monte-Carlo experiments: chaos-rate fits for the coupled particle systems,
Monte-Carlo rates of the empirical covariance and of the sampling error,
excursion probabilities and mean-field moment profiles.

Every experiment is a function of its arguments and seed only. Replicates
run on a thread pool, draw their noise from counter-addressed streams and
are reduced in replicate order, so reruns give identical numbers whatever
the thread count.
"""
import copy
import logging
from typing import List, Optional

import numpy as np

from eksim import config
from eksim.config import Key
from eksim.dynamics import (EnsembleState, GaussianSampler, NoiseStream,
                            Purpose, SdeConfig, StoppingMonitor, MonitorKind,
                            TrajectoryDump, gaussian_meanfield_path,
                            picard_covariance_path, run_coupled_trajectory,
                            run_ips, step_meanfield, uniform_grid)
from eksim.exceptions import (ConfigValidationException, NoConvergence,
                              TooManyFailedReplicates, UnsupportedObservable)
from eksim.linalg import frobenius_norm, min_eigenvalue, psd_sqrt
from eksim.measures import EmpiricalMeasure, covariance
from eksim.potentials import Kind, Potential, potential_from_config
from eksim.util import parallel_map
from .util import RateResult, RateRow, RunningMoments


class RateExperimentConfig:
    def __init__(self, pot: Potential, p: float, j_values: List[int],
                 replicates: int, sde: SdeConfig, rho0_mean, rho0_cov,
                 picard_n_particles: int = 100000, picard_tol: float = 1e-3,
                 picard_max_iter: int = 20, picard_fresh_noise: bool = True,
                 error_mode: str = "pathwise"):
        self.pot = pot
        self.p = float(p)
        self.j_values = list(j_values)
        self.replicates = int(replicates)
        self.sde = sde
        self.rho0_mean = np.asarray(rho0_mean, dtype=float).reshape(-1)
        self.rho0_cov = np.asarray(rho0_cov, dtype=float).reshape(
            self.rho0_mean.size, self.rho0_mean.size)
        self.picard_n_particles = int(picard_n_particles)
        self.picard_tol = float(picard_tol)
        self.picard_max_iter = int(picard_max_iter)
        self.picard_fresh_noise = bool(picard_fresh_noise)
        self.error_mode = error_mode

    @classmethod
    def from_config(cls, cfg: dict):
        """Build from a validated flat config."""
        dim = cfg[Key.dim.value]
        get = cfg.get
        return cls(
            pot=potential_from_config(cfg, dim),
            p=get(Key.p.value, 2.0),
            j_values=get(Key.j_values.value, []),
            replicates=get(Key.replicates.value,
                           config.DEFAULTS[Key.replicates.value]),
            sde=SdeConfig(cfg[Key.sde_dt.value], cfg[Key.sde_t_final.value],
                          seed=get(Key.seed.value, 0),
                          cov_floor=get(Key.sde_cov_floor.value,
                                        config.cov_floor)),
            rho0_mean=cfg[Key.rho0_mean.value],
            rho0_cov=cfg[Key.rho0_cov.value],
            picard_n_particles=get(Key.picard_n_particles.value, 100000),
            picard_tol=get(Key.picard_tol.value, 1e-3),
            picard_max_iter=get(Key.picard_max_iter.value, 20),
            picard_fresh_noise=get(Key.picard_fresh_noise.value, True),
            error_mode=get(Key.error_mode.value, "pathwise"),
        )

    @property
    def dim(self) -> int:
        return self.pot.dim

    def initial_sampler(self) -> GaussianSampler:
        return GaussianSampler(self.rho0_mean, self.rho0_cov)

    def with_sde(self, sde: SdeConfig):
        new = copy.copy(self)
        new.sde = sde
        return new


# Mean-field path ###########################################################
def build_meanfield_path(cfg: RateExperimentConfig):
    """
    Closed-form moment path for quadratic phi, Picard path otherwise.
    A Picard run that misses its tolerance falls back to its best iterate
    with a warning. Returns (path, info).
    """
    grid = uniform_grid(cfg.sde.t_final, cfg.sde.dt)
    if cfg.pot.kind == Kind.quadratic:
        path = gaussian_meanfield_path(cfg.pot.precision, cfg.pot.center,
                                       cfg.rho0_mean, cfg.rho0_cov, grid)
        return path, {"meanfield_path": "closed_form"}

    try:
        result = picard_covariance_path(
            cfg.pot, cfg.initial_sampler(), grid,
            n_particles=cfg.picard_n_particles,
            max_iter=cfg.picard_max_iter, tol=cfg.picard_tol,
            seed=cfg.sde.seed, cov_floor=cfg.sde.cov_floor,
            fresh_noise=cfg.picard_fresh_noise)
    except NoConvergence as e:
        logging.warning(f"{e.message}; continuing with the best iterate")
        result = e.result

    info = {"meanfield_path": "picard"}
    info.update(result.describe())
    return result.path, info


# Chaos rate ################################################################
def _check_failures(n_failed: int, n_total: int, j: int):
    if n_failed > config.failed_replicate_fraction * n_total:
        raise TooManyFailedReplicates(
            f"{n_failed} of {n_total} replicates at J = {j} blew up")
    if n_failed:
        logging.warning(f"{n_failed} of {n_total} replicates at J = {j} "
                        "blew up and were excluded")


def _coupled_replicates(cfg: RateExperimentConfig, path, j: int,
                        monitors=(), threads=None,
                        dump: Optional[TrajectoryDump] = None,
                        show_progress=False):
    sampler = cfg.initial_sampler()

    def replicate(r):
        if dump is None:
            return run_coupled_trajectory(cfg.pot, path, j, cfg.sde, sampler,
                                          monitors=monitors, replicate=r,
                                          profile_power=cfg.p)
        with dump.recorder(j, r) as recorder:
            return run_coupled_trajectory(cfg.pot, path, j, cfg.sde, sampler,
                                          monitors=monitors, replicate=r,
                                          profile_power=cfg.p,
                                          recorder=recorder)

    summaries = parallel_map(replicate, range(cfg.replicates), threads=threads,
                             show_progress=show_progress, label=f"J = {j}")
    ok = [s for s in summaries if not s.failed]
    _check_failures(len(summaries) - len(ok), len(summaries), j)
    return ok, len(summaries) - len(ok)


def estimate_chaos_error(cfg: RateExperimentConfig, j: int, path=None,
                         threads=None, dump: TrajectoryDump = None,
                         show_progress=False) -> RateRow:
    """
    pathwise:  mean over replicates and particles of sup_t |X^j_t - Xbar^j_t|^p
    pointwise: sup_t of the same mean taken at each step time
    with the Monte-Carlo standard error over replicates.
    """
    if j < 2:
        raise ConfigValidationException(Key.j_values.value,
                                        "chaos runs need J >= 2")
    if path is None:
        path, _ = build_meanfield_path(cfg)

    ok, n_failed = _coupled_replicates(cfg, path, j, threads=threads,
                                       dump=dump, show_progress=show_progress)

    if cfg.error_mode == "pointwise":
        profiles = np.array([s.gap_profile for s in ok])
        means = profiles.mean(axis=0)
        k = int(np.argmax(means))
        return RateRow(j, means[k], RunningMoments.of(profiles[:, k]).stderr,
                       len(ok), n_failed)

    moments = RunningMoments.of(
        [np.mean(s.sup_displacement ** cfg.p) for s in ok])
    return RateRow(j, moments.mean, moments.stderr, len(ok), n_failed)


def run_rate_chaos(cfg: RateExperimentConfig, threads=None,
                   dump: TrajectoryDump = None, show_progress=False,
                   path=None, label: str = None) -> RateResult:
    info = {}
    if path is None:
        path, info = build_meanfield_path(cfg)

    rows = []
    for j in cfg.j_values:
        row = estimate_chaos_error(cfg, j, path=path, threads=threads,
                                   dump=dump, show_progress=show_progress)
        logging.info(f"J = {j}: {row.estimate:.4e} +- {row.stderr:.1e}")
        rows.append(row)

    return RateResult(label or f"rate_chaos_{cfg.error_mode}", cfg.p, rows,
                      reference_slope=-cfg.p / 2, info=info)


def dt_sensitivity(cfg: RateExperimentConfig, threads=None,
                   show_progress=False):
    """
    The chaos-rate fit at dt and at dt / 2. Both runs follow the same
    Brownian paths: the dt run sums pairs of the dt / 2 increments.
    """
    base = run_rate_chaos(cfg.with_sde(cfg.sde.refined_noise(2)),
                          threads=threads, show_progress=show_progress)
    halved = run_rate_chaos(cfg.with_sde(cfg.sde.halved()), threads=threads,
                            show_progress=show_progress,
                            label=f"rate_chaos_{cfg.error_mode}_dt_half")
    if base.fit is not None and halved.fit is not None:
        shift = abs(base.fit.slope - halved.fit.slope)
        halved.info["slope_shift"] = shift
        logging.info(f"Halving dt moves the slope by {shift:.4f} "
                     f"(stderr {base.fit.slope_stderr:.4f})")
    return base, halved


# Covariance rate ###########################################################
def covariance_mc_rate(rho0_mean, rho0_cov, p: float, j_values, replicates: int,
                       seed: int, variant: str = "cov",
                       threads=None) -> RateResult:
    """
    E |C(mu^J) - C(rho0)|_F^p over i.i.d. draws of rho0, or with
    variant='sqrt' E |sqrt C(mu^J) - sqrt C(rho0)|_F^p, per J.
    """
    sampler = GaussianSampler(rho0_mean, rho0_cov)
    target = sampler.cov
    if variant == "sqrt":
        if min_eigenvalue(target) <= 0:
            raise ConfigValidationException(
                Key.rho0_cov.value,
                "must be positive definite for the sqrt variant")
        target = psd_sqrt(target)
    elif variant != "cov":
        raise ConfigValidationException(Key.variant.value,
                                        "must be 'cov' or 'sqrt'")

    def one_j(j):
        values = np.empty(replicates)
        for r in range(replicates):
            noise = NoiseStream(seed, Purpose.covariance, j, r)
            c = covariance(EmpiricalMeasure(
                sampler(noise.gaussian(0, (j, sampler.dim)))))
            if variant == "sqrt":
                c = psd_sqrt(c)
            values[r] = frobenius_norm(c - target) ** p
        moments = RunningMoments.of(values)
        logging.info(f"J = {j}: {moments.mean:.4e} +- {moments.stderr:.1e}")
        return RateRow(j, moments.mean, moments.stderr, replicates)

    rows = parallel_map(one_j, j_values, threads=threads)
    return RateResult(f"cov_rate_{variant}", p, rows, reference_slope=-p / 2)


# Sampling error ############################################################
class Observable:
    """f(x) = a.x (linear), |x|^2 (squared_norm) or c (constant)."""

    kinds = ("linear", "squared_norm", "constant")

    def __init__(self, kind: str, dim: int, a=None, c: float = 1.0):
        if kind not in self.kinds:
            raise ConfigValidationException(
                Key.observable_kind.value,
                "must be 'linear', 'squared_norm' or 'constant'")
        self.kind = kind
        self.a = np.ones(dim) if a is None else \
            np.asarray(a, dtype=float).reshape(-1)
        if self.a.shape != (dim,):
            raise ConfigValidationException(Key.observable_a.value,
                                            f"must have length {dim}")
        self.c = float(c)

    @classmethod
    def from_config(cls, cfg: dict, dim: int):
        return cls(cfg[Key.observable_kind.value], dim,
                   a=cfg.get(Key.observable_a.value),
                   c=cfg.get(Key.observable_c.value, 1.0))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            return x @ self.a
        if self.kind == "squared_norm":
            return np.sum(x * x, axis=1)
        return np.full(x.shape[0], self.c)

    def expected(self, mean, cov) -> float:
        """Expectation under a law with the given mean and covariance."""
        mean = np.asarray(mean, dtype=float)
        if self.kind == "linear":
            return float(self.a @ mean)
        if self.kind == "squared_norm":
            return float(np.trace(cov.entries) + mean @ mean)
        return self.c


def sampling_error_rate(pot: Potential, observable: Observable, t: float,
                        p: float, j_values, replicates: int, sde: SdeConfig,
                        rho0_mean, rho0_cov, threads=None) -> RateResult:
    """
    L^p error of (1/J) sum f(X^j_t) against the mean-field expectation of f
    at time t, per J. The reference value comes from the closed-form moment
    path, so phi must be quadratic.
    """
    if pot.kind != Kind.quadratic:
        raise UnsupportedObservable(
            "the mean-field expectation is only available in closed form "
            "for quadratic potentials")

    n_steps = int(round(t / sde.dt))
    if abs(n_steps * sde.dt - t) > 1e-9 * max(1.0, t):
        logging.debug(f"t = {t} is not a multiple of dt; using "
                      f"{n_steps} steps")
    grid = uniform_grid(n_steps * sde.dt, sde.dt) if n_steps else np.zeros(1)
    path = gaussian_meanfield_path(pot.precision, pot.center, rho0_mean,
                                   rho0_cov, grid)
    target = observable.expected(*path.node(len(path) - 1))
    sampler = GaussianSampler(rho0_mean, rho0_cov)

    def one_j(j):
        values = np.empty(replicates)
        for r in range(replicates):
            x0 = sampler(NoiseStream(sde.seed, Purpose.initial, j, r)
                         .gaussian(0, (j, pot.dim)))
            state = run_ips(pot, x0, sde.dt, n_steps,
                            NoiseStream(sde.seed, Purpose.dynamics, j, r))
            values[r] = abs(np.mean(observable(state.positions)) - target) ** p
        moments = RunningMoments.of(values)

        # (E|err|^p)^(1/p) with a delta-method standard error
        estimate = moments.mean ** (1.0 / p)
        stderr = 0.0
        if moments.mean > 0:
            stderr = moments.mean ** (1.0 / p - 1.0) * moments.stderr / p
        logging.info(f"J = {j}: {estimate:.4e} +- {stderr:.1e}")
        return RateRow(j, estimate, stderr, replicates)

    rows = parallel_map(one_j, j_values, threads=threads)
    return RateResult(f"sampling_error_{observable.kind}", p, rows,
                      reference_slope=-0.5, info={"target": target, "t": t})


# Excursions ################################################################
def abs_normal(generator: np.random.Generator, shape) -> np.ndarray:
    return np.abs(generator.standard_normal(shape))


def exponential(generator: np.random.Generator, shape) -> np.ndarray:
    return generator.standard_exponential(shape)


# name -> (sampler, E[Z])
Z_LAWS = {
    "abs_normal": (abs_normal, float(np.sqrt(2.0 / np.pi))),
    "exponential": (exponential, 1.0),
}


def excursion_probability(z_sampler, r_moment: float, R: float, j: int,
                          trials: int, seed: int = 0,
                          chunk: int = 10000) -> RateRow:
    """
    Fraction of trials in which the mean of j i.i.d. draws of Z reaches R.
    z_sampler(generator, shape) returns draws of Z. r_moment only sets
    the decay exponent -r/2 reported alongside.
    """
    if trials < config.excursion_min_trials:
        raise ValueError(
            f"trials must be >= {config.excursion_min_trials}")

    hits = 0
    z_total = RunningMoments()
    for k, start in enumerate(range(0, trials, chunk)):
        n = min(chunk, trials - start)
        generator = NoiseStream(seed, Purpose.excursion, j, k).generator(0)
        z = np.asarray(z_sampler(generator, (n, j)), dtype=float)
        hits += int(np.count_nonzero(z.mean(axis=1) >= R))
        z_total = z_total.merge(RunningMoments.of(z))

    if R <= z_total.mean:
        logging.warning(
            f"R = {R} does not exceed the estimated E[Z] = "
            f"{z_total.mean:.4g}; the excursion decay bound does not apply")

    probability = hits / trials
    stderr = float(np.sqrt(probability * (1 - probability) / trials))
    logging.debug(f"Excursion J = {j}, r = {r_moment}: {probability:.4e}")
    return RateRow(j, probability, stderr, trials)


def excursion_probability_rate(z_sampler, r_moment: float, R: float, j_values,
                               trials: int, seed: int = 0) -> RateResult:
    rows = [excursion_probability(z_sampler, r_moment, R, j, trials, seed)
            for j in j_values]
    return RateResult("excursion_probability", r_moment, rows,
                      reference_slope=-r_moment / 2, info={"R": R})


def excursion_probability_from_config(cfg: dict) -> RateResult:
    """
    excursion_probability_rate for the Z law named by excursion.z_law.
    Without excursion.R the radius is twice E[Z].
    """
    name = cfg[Key.excursion_z_law.value]
    sampler, z_mean = Z_LAWS[name]
    R = cfg.get(Key.excursion_R.value)
    if R is None:
        R = 2.0 * z_mean
    result = excursion_probability_rate(
        sampler, cfg[Key.excursion_r.value], R, cfg[Key.j_values.value],
        cfg[Key.excursion_trials.value], seed=cfg[Key.seed.value])
    result.info.update({"z_law": name, "z_mean": z_mean})
    return result


def pilot_meanfield_moment(cfg: RateExperimentConfig, path, r: float,
                           n_particles: int = 10000) -> float:
    """E[sup_t |Xbar_t|^r] from independent mean-field particles."""
    noise = NoiseStream(cfg.sde.seed, Purpose.pilot, 1)
    x0 = cfg.initial_sampler()(NoiseStream(cfg.sde.seed, Purpose.pilot, 0)
                               .gaussian(0, (n_particles, cfg.dim)))
    state = EnsembleState(0.0, x0)
    sup = np.linalg.norm(x0, axis=1)
    for step in range(cfg.sde.n_steps):
        state = step_meanfield(cfg.pot, state, path, cfg.sde.dt,
                               noise.gaussian(step, x0.shape))
        np.maximum(sup, np.linalg.norm(state.positions, axis=1), out=sup)
    return float(np.mean(sup ** r))


def calibrate_radius(moment: float, r: float, factor: float = 2.0,
                     margin: float = 0.01) -> float:
    """Smallest R, up to margin, with (R / factor)^r above the moment."""
    return factor * moment ** (1.0 / r) * (1.0 + margin)


def excursion_decay_experiment(cfg: RateExperimentConfig, r: float,
                               R: float = None, j_values=None,
                               replicates: int = None, threads=None,
                               factor: float = 2.0, margin: float = 0.01,
                               pilot_samples: int = 10000, path=None,
                               show_progress=False):
    """
    Per-J frequencies with which the interacting ensemble and its coupled
    mean-field ensemble reach W_r(mu, delta_0) >= R before t_final.
    R defaults to the pilot calibration. Returns (ips, meanfield) results.
    """
    info = {}
    if path is None:
        path, info = build_meanfield_path(cfg)
    if R is None:
        moment = pilot_meanfield_moment(cfg, path, r, pilot_samples)
        R = calibrate_radius(moment, r, factor, margin)
        info["pilot_moment"] = moment
        logging.info(f"Pilot E[sup |Xbar|^{r:g}] = {moment:.4g}, R = {R:.4g}")
    info["R"] = R

    if replicates is not None:
        cfg = _with_replicates(cfg, replicates)
    monitors = [StoppingMonitor(MonitorKind.ips_excursion, r, R),
                StoppingMonitor(MonitorKind.meanfield_excursion, r, R)]

    ips_rows, mf_rows = [], []
    for j in (j_values or cfg.j_values):
        ok, n_failed = _coupled_replicates(cfg, path, j, monitors=monitors,
                                           threads=threads,
                                           show_progress=show_progress)
        for kind, rows in ((MonitorKind.ips_excursion, ips_rows),
                           (MonitorKind.meanfield_excursion, mf_rows)):
            hits = sum(s.record(kind).triggered for s in ok)
            freq = hits / len(ok)
            rows.append(RateRow(j, freq,
                                float(np.sqrt(freq * (1 - freq) / len(ok))),
                                len(ok), n_failed))
        logging.info(f"J = {j}: P[tau <= T] = {ips_rows[-1].estimate:.4f}, "
                     f"P[tau_bar <= T] = {mf_rows[-1].estimate:.4f}")

    return (RateResult("excursion_tau", r, ips_rows,
                       reference_slope=-r / 2, info=info),
            RateResult("excursion_tau_bar", r, mf_rows,
                       reference_slope=-r / 2, info=info))


def _with_replicates(cfg: RateExperimentConfig, replicates: int):
    new = copy.copy(cfg)
    new.replicates = int(replicates)
    return new


# Mean-field moments ########################################################
def meanfield_moment_profile(cfg: RateExperimentConfig, r: float,
                             j_values=None, threads=None, path=None,
                             show_progress=False) -> RateResult:
    """E[sup_t |Xbar^j_t|^r] per J; the fitted slope should be near 0."""
    info = {}
    if path is None:
        path, info = build_meanfield_path(cfg)

    rows = []
    for j in (j_values or cfg.j_values):
        ok, n_failed = _coupled_replicates(cfg, path, j, threads=threads,
                                           show_progress=show_progress)
        moments = RunningMoments.of(
            [np.mean(s.sup_norm_meanfield ** r) for s in ok])
        logging.info(f"J = {j}: {moments.mean:.4e} +- {moments.stderr:.1e}")
        rows.append(RateRow(j, moments.mean, moments.stderr, len(ok),
                            n_failed))

    return RateResult("meanfield_moment", r, rows, reference_slope=0.0,
                      info=info)

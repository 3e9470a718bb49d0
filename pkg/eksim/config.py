import json
import logging
import os
from enum import Enum

import numpy as np

from eksim.exceptions import (ConfigReadException, ConfigValidationException,
                              ConfigWriteException)

app_name = "eksim"
version = "0.1.0"


class Key(Enum):
    potential_kind = "potential.kind"
    potential_ell = "potential.ell"
    potential_scale = "potential.scale"
    potential_center = "potential.center"
    potential_offset = "potential.offset"
    potential_precision = "potential.precision"
    dim = "dim"
    p = "p"
    j_values = "j_values"
    replicates = "replicates"
    sde_dt = "sde.dt"
    sde_t_final = "sde.t_final"
    sde_cov_floor = "sde.cov_floor"
    seed = "seed"
    rho0_mean = "rho0.mean"
    rho0_cov = "rho0.cov"
    picard_n_particles = "picard.n_particles"
    picard_tol = "picard.tol"
    picard_max_iter = "picard.max_iter"
    picard_fresh_noise = "picard.fresh_noise"
    observable_kind = "observable.kind"
    observable_a = "observable.a"
    observable_c = "observable.c"
    t = "t"
    excursion_r = "excursion.r"
    excursion_R = "excursion.R"
    excursion_factor = "excursion.factor"
    excursion_margin = "excursion.margin"
    excursion_samples = "excursion.samples"
    excursion_mode = "excursion.mode"
    excursion_z_law = "excursion.z_law"
    excursion_trials = "excursion.trials"
    error_mode = "error_mode"
    variant = "variant"


class Experiment(Enum):
    rate_chaos = 1
    cov_rate = 2
    excursion = 3
    sampling_error = 4
    picard_path = 5
    moments = 6


EKSIM_ENV = os.environ.get("EKSIM_ENV")


# Numerical defaults ########################################################
eps_clamp_rel = 1e-10
cov_floor = 1e-8
assignment_cap = 512
failed_replicate_fraction = 0.01
picard_min_particles = 1000
excursion_min_trials = 1000
excursion_modes = ("stopping", "lemma")
z_laws = ("abs_normal", "exponential")


DEFAULTS = {
    Key.potential_offset.value: 1.0,
    Key.potential_scale.value: 1.0,
    Key.replicates.value: 100,
    Key.sde_cov_floor.value: cov_floor,
    Key.seed.value: 0,
    Key.picard_n_particles.value: 100000,
    Key.picard_tol.value: 1e-3,
    Key.picard_max_iter.value: 20,
    Key.picard_fresh_noise.value: True,
    Key.excursion_factor.value: 2.0,
    Key.excursion_margin.value: 0.01,
    Key.excursion_mode.value: "stopping",
    Key.excursion_z_law.value: "abs_normal",
    Key.excursion_trials.value: 100000,
    Key.error_mode.value: "pathwise",
    Key.variant.value: "cov",
}


# Reading ###################################################################
def read_config(path: str):
    try:
        with open(path, 'r') as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigReadException(f"Config file not found: {path}")
    except json.JSONDecodeError as e:
        logging.debug(e)
        raise ConfigReadException(f"Malformed config file: {path}")
    except OSError as e:
        logging.debug(e)
        raise ConfigReadException(f"Could not read config file: {path}")

    if not isinstance(raw, dict):
        raise ConfigReadException(
            f"Config file must hold a JSON object: {path}")

    # A run manifest reproduces its run from the config echo.
    if "experiment" in raw and isinstance(raw.get("config"), dict):
        logging.debug(f"Reading the config echo of manifest {path}")
        raw = raw["config"]

    return with_defaults(raw)


def with_defaults(raw: dict):
    merged = dict(DEFAULTS)
    merged.update(raw)
    return merged


def parse_override(token: str):
    """
    Parse a '--key=value' (or 'key=value') token. The value is read as a JSON
    literal when possible, otherwise kept as a string.
    """
    body = token[2:] if token.startswith("--") else token
    if "=" not in body:
        raise ConfigValidationException(
            body, "override must have the form --key=value")

    key, value = body.split("=", 1)
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def apply_overrides(cfg: dict, tokens):
    new = dict(cfg)
    for token in tokens:
        key, value = parse_override(token)
        logging.debug(f"Override {key} = {value!r}")
        new[key] = value
    return new


# Validation ################################################################
def require(cfg: dict, key: Key):
    try:
        return cfg[key.value]
    except KeyError:
        raise ConfigValidationException(key.value, "missing required key")


def require_number(cfg: dict, key: Key, low=None, strict=True):
    value = require(cfg, key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigValidationException(key.value, "must be a number")
    if low is not None:
        if strict and not value > low:
            raise ConfigValidationException(key.value, f"must be > {low}")
        if not strict and not value >= low:
            raise ConfigValidationException(key.value, f"must be >= {low}")
    return value


def require_int(cfg: dict, key: Key, low=None):
    value = require(cfg, key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigValidationException(key.value, "must be an integer")
    if low is not None and value < low:
        raise ConfigValidationException(key.value, f"must be >= {low}")
    return value


def require_j_values(cfg: dict, min_length=3):
    values = require(cfg, Key.j_values)
    if not isinstance(values, list) or not all(
            isinstance(j, int) and not isinstance(j, bool) for j in values):
        raise ConfigValidationException(
            Key.j_values.value, "must be a list of integers")
    if len(values) < min_length:
        raise ConfigValidationException(
            Key.j_values.value, f"needs at least {min_length} values")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigValidationException(
            Key.j_values.value, "must be strictly increasing")
    if values[0] < 1:
        raise ConfigValidationException(
            Key.j_values.value, "values must be positive")
    return values


def require_vector(cfg: dict, key: Key, dim: int):
    value = require(cfg, key)
    try:
        vector = np.asarray(value, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ConfigValidationException(key.value, "must be a list of numbers")
    if vector.shape != (dim,):
        raise ConfigValidationException(
            key.value, f"must have length {dim}")
    if not np.all(np.isfinite(vector)):
        raise ConfigValidationException(key.value, "entries must be finite")
    return vector


def require_matrix(cfg: dict, key: Key, dim: int):
    value = require(cfg, key)
    try:
        matrix = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigValidationException(key.value, "must be a nested list")
    if dim == 1 and matrix.size == 1:
        matrix = matrix.reshape(1, 1)
    if matrix.shape != (dim, dim):
        raise ConfigValidationException(
            key.value, f"must be a {dim}x{dim} matrix")
    if not np.all(np.isfinite(matrix)):
        raise ConfigValidationException(key.value, "entries must be finite")
    return matrix


def validate_sde(cfg: dict):
    dt = require_number(cfg, Key.sde_dt, low=0)
    t_final = require_number(cfg, Key.sde_t_final, low=0)
    if dt >= t_final:
        raise ConfigValidationException(
            Key.sde_dt.value, f"must be smaller than sde.t_final ({t_final})")
    require_number(cfg, Key.sde_cov_floor, low=0, strict=False)
    require_int(cfg, Key.seed, low=0)


def validate_rho0(cfg: dict, dim: int):
    from eksim.linalg import SymMatrix, min_eigenvalue

    mean = require_vector(cfg, Key.rho0_mean, dim)
    cov = require_matrix(cfg, Key.rho0_cov, dim)
    if not np.allclose(cov, cov.T):
        raise ConfigValidationException(
            Key.rho0_cov.value, "must be symmetric")
    if min_eigenvalue(SymMatrix(cov)) <= 0:
        raise ConfigValidationException(
            Key.rho0_cov.value, "must be positive definite")
    return mean, cov


def validate(cfg: dict, experiment: Experiment):
    """
    Check the keys an experiment reads. Raises ConfigValidationException
    naming the first offending key.
    """
    if experiment == Experiment.excursion and _excursion_mode(cfg) == "lemma":
        require_int(cfg, Key.seed, low=0)
        require_number(cfg, Key.excursion_r, low=1, strict=False)
        require_j_values(cfg, min_length=1)
        require_int(cfg, Key.excursion_trials, low=excursion_min_trials)
        if cfg.get(Key.excursion_z_law.value) not in z_laws:
            raise ConfigValidationException(
                Key.excursion_z_law.value,
                f"must be one of {', '.join(z_laws)}")
        if cfg.get(Key.excursion_R.value) is not None:
            require_number(cfg, Key.excursion_R, low=0)
        return cfg

    dim = require_int(cfg, Key.dim, low=1)

    if experiment in (Experiment.rate_chaos, Experiment.excursion,
                      Experiment.sampling_error, Experiment.picard_path,
                      Experiment.moments):
        _validate_potential(cfg, dim)

    if experiment in (Experiment.rate_chaos, Experiment.cov_rate,
                      Experiment.sampling_error, Experiment.picard_path,
                      Experiment.moments):
        validate_rho0(cfg, dim)

    if experiment in (Experiment.rate_chaos, Experiment.excursion,
                      Experiment.sampling_error, Experiment.picard_path,
                      Experiment.moments):
        validate_sde(cfg)
    else:
        require_int(cfg, Key.seed, low=0)

    if experiment == Experiment.rate_chaos:
        require_number(cfg, Key.p, low=2, strict=False)
        require_j_values(cfg)
        require_int(cfg, Key.replicates, low=1)
        if cfg.get(Key.error_mode.value) not in ("pathwise", "pointwise"):
            raise ConfigValidationException(
                Key.error_mode.value, "must be 'pathwise' or 'pointwise'")
    elif experiment == Experiment.cov_rate:
        require_number(cfg, Key.p, low=1, strict=False)
        require_j_values(cfg)
        require_int(cfg, Key.replicates, low=1)
        if cfg.get(Key.variant.value) not in ("cov", "sqrt"):
            raise ConfigValidationException(
                Key.variant.value, "must be 'cov' or 'sqrt'")
    elif experiment == Experiment.sampling_error:
        require_number(cfg, Key.p, low=1, strict=False)
        require_j_values(cfg)
        require_int(cfg, Key.replicates, low=1)
        require_number(cfg, Key.t, low=0, strict=False)
        if require(cfg, Key.observable_kind) not in (
                "linear", "squared_norm", "constant"):
            raise ConfigValidationException(
                Key.observable_kind.value,
                "must be 'linear', 'squared_norm' or 'constant'")
    elif experiment == Experiment.excursion:
        require_number(cfg, Key.excursion_r, low=1, strict=False)
        require_j_values(cfg, min_length=1)
        require_int(cfg, Key.replicates, low=1)
        validate_rho0(cfg, dim)
        if cfg.get(Key.excursion_R.value) is not None:
            require_number(cfg, Key.excursion_R, low=0)
    elif experiment == Experiment.picard_path:
        require_int(cfg, Key.picard_n_particles, low=picard_min_particles)
        require_number(cfg, Key.picard_tol, low=0)
        require_int(cfg, Key.picard_max_iter, low=1)
    elif experiment == Experiment.moments:
        require_number(cfg, Key.p, low=1, strict=False)
        require_j_values(cfg, min_length=1)
        require_int(cfg, Key.replicates, low=1)

    return cfg


def _excursion_mode(cfg: dict) -> str:
    mode = cfg.get(Key.excursion_mode.value, "stopping")
    if mode not in excursion_modes:
        raise ConfigValidationException(
            Key.excursion_mode.value,
            f"must be one of {', '.join(excursion_modes)}")
    return mode


def _validate_potential(cfg: dict, dim: int):
    from eksim.potentials import potential_from_config
    from eksim.exceptions import InvalidPotential

    try:
        return potential_from_config(cfg, dim)
    except InvalidPotential as e:
        raise ConfigValidationException(
            e.key, e.message)


# Writing ###################################################################
def write_json_atomic(path: str, payload: dict):
    import tempfile

    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
        with os.fdopen(fd, 'w') as f:
            json.dump(payload, f, indent=2, sort_keys=True)
        os.replace(tmp_path, path)
    except OSError as e:
        logging.error(f"Error writing {path}: {e}")
        raise ConfigWriteException(f"Could not write {path}")

import csv
import logging
import os
from typing import List, Optional, Sequence

import numpy as np
from scipy.stats import linregress

from eksim import config
from eksim.exceptions import ConfigWriteException, NonPositiveEstimate
from eksim.util import timestamp


# Running moments ###########################################################
class RunningMoments:
    """(count, sum, sum of squares) with an associative merge."""

    __slots__ = ("count", "total", "total_sq")

    def __init__(self, count: int = 0, total: float = 0.0,
                 total_sq: float = 0.0):
        self.count = count
        self.total = total
        self.total_sq = total_sq

    @classmethod
    def of(cls, values):
        values = np.asarray(values, dtype=float).reshape(-1)
        return cls(values.size, float(values.sum()),
                   float((values * values).sum()))

    def add(self, value: float):
        self.count += 1
        self.total += float(value)
        self.total_sq += float(value) ** 2

    def merge(self, other):
        return RunningMoments(self.count + other.count,
                              self.total + other.total,
                              self.total_sq + other.total_sq)

    @property
    def mean(self) -> float:
        if self.count == 0:
            return float("nan")
        return self.total / self.count

    @property
    def variance(self) -> float:
        """Unbiased sample variance."""
        if self.count < 2:
            return 0.0
        centered = self.total_sq - self.total ** 2 / self.count
        return max(centered, 0.0) / (self.count - 1)

    @property
    def stderr(self) -> float:
        if self.count < 2:
            return 0.0
        return float(np.sqrt(self.variance / self.count))


def merge_all(moments: Sequence[RunningMoments]) -> RunningMoments:
    merged = RunningMoments()
    for m in moments:
        merged = merged.merge(m)
    return merged


# Rates #####################################################################
class RateRow:
    __slots__ = ("j", "estimate", "stderr", "n_ok", "n_failed")

    def __init__(self, j: int, estimate: float, stderr: float,
                 n_ok: int, n_failed: int = 0):
        self.j = int(j)
        self.estimate = float(estimate)
        self.stderr = float(stderr)
        self.n_ok = int(n_ok)
        self.n_failed = int(n_failed)

    def brackets(self, value: float, n_stderr: float = 3.0) -> bool:
        return abs(self.estimate - value) <= n_stderr * self.stderr

    def __repr__(self):
        return (f"RateRow(J={self.j}, estimate={self.estimate:.6g}, "
                f"stderr={self.stderr:.3g}, n_ok={self.n_ok}, "
                f"n_failed={self.n_failed})")


class RateFit:
    def __init__(self, per_j_error, slope: float, intercept: float,
                 slope_stderr: float):
        self.per_j_error = list(per_j_error)
        self.slope = float(slope)
        self.intercept = float(intercept)
        self.slope_stderr = float(slope_stderr)

    def describe(self):
        return {"slope": self.slope, "intercept": self.intercept,
                "slope_stderr": self.slope_stderr}

    def __repr__(self):
        return (f"RateFit(slope={self.slope:.4f} +- {self.slope_stderr:.4f}, "
                f"intercept={self.intercept:.4f})")


def fit_log_rate(points) -> RateFit:
    """
    Least squares line through (log J, log estimate).
    points: (J, estimate) or (J, estimate, stderr) tuples.
    """
    points = [tuple(pt) for pt in points]
    if len(points) < 3:
        raise ValueError("fit_log_rate needs at least 3 points")

    js = np.array([pt[0] for pt in points], dtype=float)
    estimates = np.array([pt[1] for pt in points], dtype=float)
    if np.any(js <= 0) or np.any(~(estimates > 0)):
        raise NonPositiveEstimate(
            "log-log fit needs positive J values and estimates")

    res = linregress(np.log(js), np.log(estimates))
    per_j = [(int(pt[0]), float(pt[1]),
              float(pt[2]) if len(pt) > 2 else 0.0) for pt in points]
    return RateFit(per_j, res.slope, res.intercept, res.stderr)


class RateResult:
    """Per-J rows of one experiment, the log-log fit and the slope the
    theory predicts."""

    def __init__(self, experiment: str, p: float, rows: List[RateRow],
                 reference_slope: Optional[float] = None, info: dict = None):
        self.experiment = experiment
        self.p = float(p)
        self.rows = list(rows)
        self.reference_slope = reference_slope
        self.info = dict(info or {})
        self.fit = self._fit()

    def _fit(self) -> Optional[RateFit]:
        if len(self.rows) < 3:
            return None
        try:
            return fit_log_rate((r.j, r.estimate, r.stderr) for r in self.rows)
        except NonPositiveEstimate as e:
            logging.warning(f"{self.experiment}: no rate fit ({e.message})")
            return None

    @property
    def n_failed(self) -> int:
        return sum(r.n_failed for r in self.rows)

    def table(self):
        return [
            {"J": r.j, "estimate": r.estimate, "stderr": r.stderr,
             "n_ok": r.n_ok, "n_failed": r.n_failed}
            for r in self.rows
        ]

    def summary_line(self) -> str:
        if self.fit is None:
            return f"{self.experiment}: no fit"
        line = (f"{self.experiment}: slope {self.fit.slope:.4f} "
                f"+- {self.fit.slope_stderr:.4f}")
        if self.reference_slope is not None:
            line += f" (reference {self.reference_slope:g})"
        return line


# Output ####################################################################
CSV_COLUMNS = ["experiment", "J", "p", "estimate", "stderr", "n_ok",
               "n_failed"]


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_rate_csv(path: str, results: Sequence[RateResult]):
    """
    One row per (experiment, J) followed by one '# fit' comment line per
    experiment carrying slope, intercept and slope_stderr. Floats are
    written with repr so reruns are byte-identical.
    """
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for result in results:
                for r in result.rows:
                    writer.writerow([_fmt(v) for v in (
                        result.experiment, r.j, result.p, r.estimate,
                        r.stderr, r.n_ok, r.n_failed)])
            for result in results:
                if result.fit is not None:
                    f.write(f"# fit,{result.experiment},"
                            f"slope={_fmt(result.fit.slope)},"
                            f"intercept={_fmt(result.fit.intercept)},"
                            f"slope_stderr={_fmt(result.fit.slope_stderr)}\n")
    except OSError as e:
        logging.debug(e)
        raise ConfigWriteException(f"Could not write {path}")


def write_rows_csv(path: str, rows: Sequence[dict]):
    rows = list(rows)
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', newline='') as f:
            if not rows:
                return
            writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()),
                                    lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _fmt(v) for k, v in row.items()})
    except OSError as e:
        logging.debug(e)
        raise ConfigWriteException(f"Could not write {path}")


# Manifest ##################################################################
class RunManifest:
    def __init__(self, experiment: str, cfg: dict):
        self.experiment = experiment
        self.config = dict(cfg)
        self.seed = cfg.get(config.Key.seed.value)
        self.started = timestamp()
        self.finished = None
        self.outputs = []
        self.failures = {}
        self.extra = {}

    def add_output(self, path: str):
        self.outputs.append(os.path.abspath(path))

    def finish(self, failures: dict = None, **extra):
        self.finished = timestamp()
        self.failures.update(failures or {})
        self.extra.update(extra)

    def as_dict(self):
        return {
            "experiment": self.experiment,
            "version": config.version,
            "seed": self.seed,
            "config": self.config,
            "started": self.started,
            "finished": self.finished,
            "outputs": self.outputs,
            "failures": self.failures,
            "details": self.extra,
        }

    def write(self, path: str):
        config.write_json_atomic(path, _jsonable(self.as_dict()))


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value

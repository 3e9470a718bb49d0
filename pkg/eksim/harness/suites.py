"""
Randomized property suites for the inequalities the rate proofs rest on.
Each suite returns a SuiteReport; a violation keeps the instance that
produced it so it can be replayed.
"""
import logging

import numpy as np

from eksim import config
from eksim.exceptions import CapExceeded
from eksim.linalg import SymMatrix, frobenius_norm, psd_sqrt
from eksim.measures import (EmpiricalMeasure, covariance,
                            wasserstein_assignment, wasserstein_to_dirac)
from eksim.potentials import (EvenPower, Quadratic, check_class,
                              convexity_inner, fit_convexity_constant)


class SuiteReport:
    def __init__(self, name: str, tol: float = 1e-9):
        self.name = name
        self.tol = tol
        self.checks = {}
        self.worst_slack = {}
        self.violations = []
        self.details = {}

    def check(self, inequality: str, slack: float, instance=None):
        """Record one evaluation of rhs - lhs >= -tol."""
        self.checks[inequality] = self.checks.get(inequality, 0) + 1
        self.worst_slack[inequality] = min(
            self.worst_slack.get(inequality, np.inf), float(slack))
        if not slack >= -self.tol:
            record = {"inequality": inequality, "slack": float(slack)}
            record.update(instance() if callable(instance) else
                          (instance or {}))
            self.violations.append(record)

    @property
    def passed(self) -> bool:
        return not self.violations

    def rows(self):
        return [
            {"inequality": name, "checks": count,
             "violations": sum(v["inequality"] == name
                               for v in self.violations),
             "worst_slack": self.worst_slack[name]}
            for name, count in self.checks.items()
        ]

    def as_dict(self):
        return {"suite": self.name, "tol": self.tol, "passed": self.passed,
                "checks": self.checks, "worst_slack": self.worst_slack,
                "details": self.details, "violations": self.violations}


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


# Wasserstein stability #####################################################
def stability_property_suite(n_trials: int = 10000, dim_max: int = 3,
                             j_max: int = 8, seed: int = 0,
                             tol: float = 1e-9) -> SuiteReport:
    """
    On random equal-size pairs (mu, nu) with exact assignment W2:
      |C(mu) - C(nu)|_F <= 2 (W2(mu, d0) + W2(nu, d0)) W2(mu, nu)
      |sqrt C(mu) - sqrt C(nu)|_F <= sqrt(2) W2(mu, nu)
    One trial in ten uses nu = mu and one in ten a translate of mu.
    """
    if j_max > config.assignment_cap:
        raise CapExceeded(
            f"j_max = {j_max} exceeds the assignment cap "
            f"{config.assignment_cap}")

    rng = _rng(seed)
    report = SuiteReport("stability", tol)
    for trial in range(n_trials):
        d = int(rng.integers(1, dim_max + 1))
        j = int(rng.integers(1, j_max + 1))
        x = rng.normal(size=(j, d)) * rng.uniform(0.1, 3.0)
        if trial % 10 == 0:
            y = x.copy()
        elif trial % 10 == 1:
            y = x + rng.normal(size=d)
        else:
            y = rng.normal(size=(j, d)) * rng.uniform(0.1, 3.0) \
                + rng.normal(size=d)

        mu, nu = EmpiricalMeasure(x), EmpiricalMeasure(y)
        w2 = wasserstein_assignment(mu, nu, 2.0)
        c_mu, c_nu = covariance(mu), covariance(nu)

        def instance():
            return {"mu": x.tolist(), "nu": y.tolist()}

        radius = wasserstein_to_dirac(mu) + wasserstein_to_dirac(nu)
        report.check("covariance", 2 * radius * w2
                     - frobenius_norm(c_mu - c_nu), instance)
        report.check("sqrt_covariance", np.sqrt(2.0) * w2
                     - frobenius_norm(psd_sqrt(c_mu) - psd_sqrt(c_nu)),
                     instance)
        report.check("covariance_vs_moment", wasserstein_to_dirac(mu) ** 2
                     - frobenius_norm(c_mu), instance)

    _log(report)
    return report


# PSD algebra ###############################################################
def _random_pd(rng, d: int) -> np.ndarray:
    g = rng.normal(size=(d, d + 2))
    return g @ g.T


def psd_property_suite(n_trials: int = 10000, dim_max: int = 6,
                       seed: int = 0, tol: float = 1e-9) -> SuiteReport:
    """
    For random matrices:
      sqrt(a)^2 reconstructs a to 1e-9 (1 + |a|_F), a PSD (possibly singular)
      |sqrt(A^T A) - sqrt(B^T B)|_F <= sqrt(2) |A - B|_F
      |sqrt(A) - sqrt(B)|_F <= |A - B|_F / eta for A >= eta I, B PSD, eta <= 1
      sqrt(c a) = sqrt(c) sqrt(a) to 1e-10, a positive definite
    """
    rng = _rng(seed)
    report = SuiteReport("psd", tol)
    for _ in range(n_trials):
        d = int(rng.integers(1, dim_max + 1))

        rank = int(rng.integers(1, d + 1))
        g = rng.normal(size=(d, rank))
        a = SymMatrix(g @ g.T)
        root = psd_sqrt(a)
        report.check(
            "reconstruction",
            tol * (1 + frobenius_norm(a))
            - frobenius_norm(root.entries @ root.entries - a.entries),
            lambda: {"a": a.entries.tolist()})

        m1 = rng.normal(size=(d, d))
        m2 = m1 + rng.normal(size=(d, d)) * rng.uniform(0.01, 2.0)
        lhs = frobenius_norm(psd_sqrt(SymMatrix(m1.T @ m1))
                             - psd_sqrt(SymMatrix(m2.T @ m2)))
        report.check("araki_yamagami",
                     np.sqrt(2.0) * frobenius_norm(m1 - m2) - lhs,
                     lambda: {"A": m1.tolist(), "B": m2.tolist()})

        eta = float(rng.uniform(0.05, 1.0))
        big = SymMatrix(eta * np.eye(d) + _random_pd(rng, d)
                        * rng.uniform(0.0, 1.0))
        h = rng.normal(size=(d, int(rng.integers(1, d + 1))))
        small = SymMatrix(h @ h.T)
        report.check(
            "van_hemmen_ando",
            frobenius_norm(big - small) / eta
            - frobenius_norm(psd_sqrt(big) - psd_sqrt(small)),
            lambda: {"A": big.entries.tolist(), "B": small.entries.tolist(),
                     "eta": eta})

        pd = SymMatrix(_random_pd(rng, d))
        c = float(rng.uniform(0.1, 10.0))
        gap = frobenius_norm(psd_sqrt(pd * c) - psd_sqrt(pd) * np.sqrt(c))
        report.check("scaling", 1e-10 * (1 + frobenius_norm(pd) * c) - gap,
                     lambda: {"a": pd.entries.tolist(), "c": c})

    _log(report)
    return report


# Potentials ################################################################
def default_potentials():
    return [
        Quadratic(np.diag([2.0, 1.0])),
        EvenPower(2, dim=1),
        EvenPower(2, dim=2),
    ]


def convexity_suite(potentials=None, n_pairs: int = 1000, seed: int = 0,
                    tol: float = 1e-9) -> SuiteReport:
    """
    Per potential, over one set of random pairs: the c1_weighted fitted on
    the pairs in
      <y - x, grad(y) - grad(x)> >= c1_weighted (1 + |x|^l + |y|^l) |y - x|^2
    must be positive, and
      |grad(x) - grad(y)| <= u (1 + |x|^l + |y|^l) |x - y|
    must hold with u the upper ratio reported by check_class.
    """
    rng = _rng(seed)
    report = SuiteReport("convexity", tol)
    for pot in (potentials or default_potentials()):
        name = repr(pot)
        x = pot.center + 2.0 * rng.normal(size=(n_pairs, pot.dim))
        y = pot.center + 2.0 * rng.normal(size=(n_pairs, pot.dim))
        c1, c1_weighted = fit_convexity_constant(pot, pairs=(x, y))
        report.details[name] = {"c1": c1, "c1_weighted": c1_weighted}
        report.check("convexity_constant", c1_weighted, {"potential": name})

        u = check_class(pot, pot.ell, seed=seed).u_tilde
        for xi, yi in zip(x, y):
            gap = float(np.linalg.norm(xi - yi))
            weight = 1 + np.linalg.norm(xi) ** pot.ell \
                + np.linalg.norm(yi) ** pot.ell
            report.check(
                "gradient_lipschitz",
                u * weight * gap
                - float(np.linalg.norm(pot.grad(xi) - pot.grad(yi))),
                lambda: {"potential": name, "x": xi.tolist(),
                         "y": yi.tolist(), "u": u})
            report.check(
                "convexity",
                convexity_inner(pot, xi, yi) - c1_weighted * weight * gap ** 2,
                lambda: {"potential": name, "x": xi.tolist(),
                         "y": yi.tolist(), "c1_weighted": c1_weighted})

    _log(report)
    return report


def class_check_suite(potentials=None, n_samples: int = 200,
                      seed: int = 0) -> SuiteReport:
    report = SuiteReport("class_check", 0.0)
    for pot in (potentials or default_potentials()):
        name = repr(pot)
        result = check_class(pot, pot.ell, n_samples=n_samples, seed=seed)
        report.details[name] = {"ell": pot.ell, "l_tilde": result.l_tilde,
                                "u_tilde": result.u_tilde,
                                "ratios": result.ratios}
        lo, hi = result.bounds
        report.check("class_lower", result.l_tilde - lo, {"potential": name})
        report.check("class_upper", hi - result.u_tilde, {"potential": name})

    _log(report)
    return report


def _log(report: SuiteReport):
    for row in report.rows():
        logging.debug(f"{report.name}/{row['inequality']}: "
                      f"{row['checks']} checks, {row['violations']} "
                      f"violations, worst slack {row['worst_slack']:.3e}")

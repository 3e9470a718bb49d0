import unittest

import numpy as np

from eksim.dynamics import (CovariancePath, GaussianSampler,
                            gaussian_meanfield_path, match_moments,
                            picard_covariance_path, uniform_grid)
from eksim.exceptions import (NoConvergence, OdeStepRejected,
                              PathOutOfRange)
from eksim.linalg import SymMatrix, min_eigenvalue
from eksim.potentials import EvenPower, Quadratic

from test.eksim_test_util import EksimTest, acceptance


class CovariancePathTest(EksimTest):

    def setUp(self):
        super().setUp()
        self.path = CovariancePath([0.0, 1.0],
                                   [np.eye(2), 3 * np.eye(2)],
                                   [[0.0, 0.0], [2.0, 4.0]])

    def test_exact_at_nodes(self):
        mean, cov = self.path.at(1.0)
        self.assertClose(mean, [2.0, 4.0])
        self.assertClose(cov.entries, 3 * np.eye(2))

    def test_linear_between_nodes(self):
        mean, cov = self.path.at(0.25)
        self.assertClose(mean, [0.5, 1.0])
        self.assertClose(cov.entries, 1.5 * np.eye(2))

    def test_out_of_range(self):
        with self.assertRaises(PathOutOfRange):
            self.path.at(1.5)
        with self.assertRaises(PathOutOfRange):
            self.path.at(-0.1)

    def test_rejects_bad_grid(self):
        with self.assertRaises(ValueError):
            CovariancePath([0.0, 0.0], [np.eye(1)] * 2, [[0.0]] * 2)
        with self.assertRaises(ValueError):
            CovariancePath([0.5, 1.0], [np.eye(1)] * 2, [[0.0]] * 2)

    def test_rows(self):
        rows = list(self.path.rows())
        self.assertEqual(list(rows[1].keys()),
                         ["time", "mean_0", "mean_1", "cov_00", "cov_01",
                          "cov_11"])
        self.assertEqual(rows[1]["cov_00"], 3.0)


class GaussianPathTest(EksimTest):

    def test_logistic_covariance(self):
        grid = uniform_grid(1.0, 0.01)
        path = gaussian_meanfield_path(np.eye(1), [0.0], [0.0], [[2.0]], grid)
        expected = 2 * np.exp(2.0) / (1 + 2 * (np.exp(2.0) - 1))
        self.assertClose(path.covariance_at(1.0).entries[0, 0], expected,
                         rtol=1e-6)
        self.assertAlmostEqual(path.covariance_at(1.0).entries[0, 0], 1.0726,
                               places=4)

    def test_mean_decay(self):
        grid = uniform_grid(1.0, 0.01)
        path = gaussian_meanfield_path(np.eye(1), [0.0], [5.0], [[1.0]], grid)
        for t in (0.0, 0.5, 1.0):
            self.assertClose(path.mean_at(t), [5 * np.exp(-t)], rtol=1e-8)

    def test_stationary_at_target(self):
        a = np.array([[2.0, 0.5], [0.5, 1.0]])
        target = np.array([1.0, -1.0])
        path = gaussian_meanfield_path(a, target, target, np.linalg.inv(a),
                                       uniform_grid(1.0, 0.01))
        initial = path.node(0)
        for i in range(len(path)):
            mean, cov = path.node(i)
            self.assertLessEqual(np.linalg.norm(mean - initial[0]), 1e-8)
            self.assertLessEqual(np.linalg.norm(cov.entries
                                                - initial[1].entries), 1e-8)

    def test_nodes_are_psd(self):
        path = gaussian_meanfield_path(np.diag([4.0, 0.5]), [0.0, 0.0],
                                       [3.0, -2.0], [[0.1, 0.0], [0.0, 5.0]],
                                       uniform_grid(2.0, 0.05))
        self.assertGreaterEqual(np.min(path.min_eigenvalues()), -1e-10)

    def test_rejects_singular_start(self):
        with self.assertRaises(OdeStepRejected):
            gaussian_meanfield_path(np.eye(2), [0.0, 0.0], [0.0, 0.0],
                                    np.diag([1.0, 0.0]), [0.0, 0.1])


class PicardTest(EksimTest):

    def mc_bound(self, tol, n):
        return tol + 3 / np.sqrt(n)

    def test_matches_closed_form(self):
        pot = Quadratic(np.eye(1))
        grid = uniform_grid(0.5, 0.002)
        n = 50000
        result = picard_covariance_path(
            pot, GaussianSampler([1.0], [[2.0]]), grid, n_particles=n,
            max_iter=30, tol=1e-6, seed=1)
        self.assertTrue(result.converged)
        exact = gaussian_meanfield_path(np.eye(1), [0.0], [1.0], [[2.0]],
                                        grid)
        self.assertLessEqual(result.path.covariance_distance(exact),
                             self.mc_bound(1e-6, n))
        self.assertLessEqual(result.path.mean_distance(exact),
                             self.mc_bound(1e-6, n))

    def test_starts_at_exact_moments(self):
        sampler = GaussianSampler([1.0, -2.0], [[2.0, 0.3], [0.3, 0.5]])
        result = picard_covariance_path(
            Quadratic(np.eye(2)), sampler, uniform_grid(0.1, 0.01),
            n_particles=2000, max_iter=30, tol=1e-6, seed=4)
        mean, cov = result.path.node(0)
        self.assertClose(mean, sampler.mean, rtol=1e-12)
        self.assertClose(cov.entries, sampler.cov.entries, rtol=1e-12)

    def test_common_and_fresh_noise_agree(self):
        pot = Quadratic(np.eye(1))
        grid = uniform_grid(0.3, 0.01)
        n = 5000
        paths = [picard_covariance_path(
            pot, GaussianSampler([1.0], [[2.0]]), grid, n_particles=n,
            max_iter=30, tol=1e-6, seed=5, fresh_noise=fresh).path
            for fresh in (True, False)]
        self.assertLessEqual(paths[0].covariance_distance(paths[1]),
                             self.mc_bound(1e-6, n))

    def test_stationary_start(self):
        pot = Quadratic(np.eye(1))
        n = 50000
        result = picard_covariance_path(
            pot, GaussianSampler([0.0], [[1.0]]), uniform_grid(0.5, 0.01),
            n_particles=n, max_iter=30, tol=1e-6, seed=2)
        constant = CovariancePath.constant(result.path.grid, [0.0], [[1.0]])
        self.assertLessEqual(result.path.covariance_distance(constant),
                             self.mc_bound(1e-6, n))

    def test_gaps_contract_for_quartic(self):
        pot = EvenPower(2, dim=1)
        result = picard_covariance_path(
            pot, GaussianSampler([0.5], [[1.0]]), uniform_grid(0.5, 0.01),
            n_particles=5000, max_iter=30, tol=1e-8, seed=3,
            fresh_noise=False)
        gaps = result.gaps
        for earlier, later in zip(gaps[1:], gaps[2:]):
            self.assertLessEqual(later, earlier)
        self.assertTrue(all(min_eigenvalue(SymMatrix(c)) > 0
                            for c in result.path.mats))

    def test_no_convergence_carries_best_iterate(self):
        pot = EvenPower(2, dim=1)
        with self.assertRaises(NoConvergence) as cm:
            picard_covariance_path(
                pot, GaussianSampler([0.5], [[1.0]]), uniform_grid(0.5, 0.01),
                n_particles=1000, max_iter=2, tol=1e-12, seed=0)
        result = cm.exception.result
        self.assertFalse(result.converged)
        self.assertEqual(len(result.gaps), 2)
        self.assertEqual(len(result.path), 51)

    def test_rejects_small_ensembles(self):
        with self.assertRaises(ValueError):
            picard_covariance_path(Quadratic(np.eye(1)),
                                   GaussianSampler([0.0], [[1.0]]),
                                   [0.0, 0.1], n_particles=10, max_iter=5,
                                   tol=1e-3, seed=0)

    @acceptance
    def test_acceptance_two_dimensional(self):
        a = np.array([[2.0, 0.5], [0.5, 1.0]])
        grid = uniform_grid(1.0, 0.001)
        n = 100000
        tol = 1e-3
        for fresh in (True, False):
            result = picard_covariance_path(
                Quadratic(a), GaussianSampler([1.0, -1.0],
                                              np.diag([1.0, 2.0])),
                grid, n_particles=n, max_iter=10, tol=tol, seed=0,
                fresh_noise=fresh)
            exact = gaussian_meanfield_path(a, [0.0, 0.0], [1.0, -1.0],
                                            np.diag([1.0, 2.0]), grid)
            self.assertTrue(result.converged)
            self.assertLessEqual(result.iterations, 10)
            self.assertLessEqual(result.path.covariance_distance(exact),
                                 self.mc_bound(tol, n))


class MatchMomentsTest(EksimTest):

    def test_exact_moments(self):
        x = np.random.default_rng(0).standard_normal((500, 2))
        cov = np.array([[2.0, 0.4], [0.4, 1.0]])
        y = match_moments(x, [3.0, -1.0], cov)
        centered = y - y.mean(axis=0)
        self.assertClose(y.mean(axis=0), [3.0, -1.0], atol=1e-12)
        self.assertClose(centered.T @ centered / 500, cov, atol=1e-12)


if __name__ == "__main__":
    unittest.main()

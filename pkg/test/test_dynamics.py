import csv
import unittest

import numpy as np

from eksim.dynamics import (CoupledEnsembles, CovariancePath, EnsembleState,
                            GaussianSampler, MonitorKind, NoiseStream,
                            Purpose, SdeConfig, StoppingMonitor,
                            TrajectoryDump, diffusion, drift, run_ips,
                            run_coupled_trajectory, step_coupled, step_ips,
                            step_meanfield, stopping_monitor, uniform_grid)
from eksim.exceptions import DimMismatch
from eksim.linalg import SymMatrix
from eksim.measures import (EmpiricalMeasure, covariance,
                            identity_coupling_bound)
from eksim.potentials import EvenPower, Quadratic

from test.eksim_test_util import EksimTest, random_points


def constant_path(t_final, dt, mean, cov):
    return CovariancePath.constant(uniform_grid(t_final, dt), mean, cov)


class CoefficientTest(EksimTest):

    def test_drift(self):
        pot = Quadratic(np.diag([2.0, 1.0]))
        self.assertClose(drift(pot, [1.0, 2.0], SymMatrix.identity(2)),
                         [-2.0, -2.0])
        self.assertClose(drift(Quadratic(np.eye(2)), [1.0, 1.0],
                               SymMatrix.diag([1.0, 0.0])),
                         [-1.0, 0.0])

    def test_drift_batch(self):
        pot = Quadratic(np.eye(2))
        x = np.array([[1.0, 2.0], [-1.0, 0.5]])
        self.assertClose(drift(pot, x, SymMatrix.identity(2)), -x)

    def test_diffusion(self):
        self.assertClose(diffusion(SymMatrix.diag([2.0, 8.0])).entries,
                         np.diag([2.0, 4.0]))
        self.assertEqual(diffusion(SymMatrix.zeros(2)), SymMatrix.zeros(2))


class StepTest(EksimTest):

    def setUp(self):
        super().setUp()
        self.pot = Quadratic(np.eye(1))

    def test_ips_without_noise(self):
        state = step_ips(self.pot, EnsembleState(0.0, [-1.0, 1.0]), 0.01,
                         np.zeros((2, 1)))
        self.assertClose(state.positions[:, 0], [-0.99, 0.99])
        self.assertClose(state.time, 0.01)

    def test_single_particle_is_frozen(self):
        state = step_ips(self.pot, EnsembleState(0.0, [[3.0]]), 0.1,
                         np.array([[2.5]]))
        self.assertClose(state.positions, [[3.0]])

    def test_meanfield_without_noise(self):
        path = constant_path(1.0, 0.01, [0.0], [[1.0]])
        state = step_meanfield(self.pot, EnsembleState(0.0, [[2.0]]), path,
                               0.01, np.zeros((1, 1)))
        self.assertClose(state.positions, [[1.98]])

    def test_noise_shape_mismatch(self):
        with self.assertRaises(DimMismatch):
            step_ips(self.pot, EnsembleState(0.0, [-1.0, 1.0]), 0.01,
                     np.zeros((3, 1)))

    def test_exchangeable(self):
        pot = Quadratic([[2.0, 0.5], [0.5, 1.0]])
        x = random_points(7, 4, 2)
        gauss = random_points(8, 4, 2)
        perm = np.array([2, 0, 3, 1])
        moved = step_ips(pot, EnsembleState(0.0, x), 0.05, gauss)
        permuted = step_ips(pot, EnsembleState(0.0, x[perm]), 0.05,
                            gauss[perm])
        self.assertClose(permuted.positions, moved.positions[perm],
                         atol=1e-12)


class CoupledStepTest(EksimTest):

    def setUp(self):
        super().setUp()
        self.pot = Quadratic(np.eye(2))
        self.x = random_points(11, 6, 2)

    def test_shared_noise(self):
        # A path frozen at the starting covariance makes the first step
        # identical for both systems.
        cov = covariance(CoupledEnsembles.start(self.x).ips.measure())
        path = constant_path(1.0, 0.1, [0.0, 0.0], cov.entries)
        coupled = step_coupled(self.pot, CoupledEnsembles.start(self.x),
                               path, 0.1, NoiseStream(0, Purpose.dynamics, 6))
        self.assertEqual(coupled.step_index, 1)
        self.assertClose(coupled.ips.positions, coupled.meanfield.positions,
                         atol=1e-12)
        self.assertFalse(np.allclose(coupled.ips.positions, self.x))

    def test_deterministic(self):
        path = constant_path(1.0, 0.1, [0.0, 0.0], np.eye(2))
        runs = []
        for _ in range(2):
            coupled = CoupledEnsembles.start(self.x)
            noise = NoiseStream(3, Purpose.dynamics, 6, 0)
            for _ in range(5):
                coupled = step_coupled(self.pot, coupled, path, 0.1, noise)
            runs.append(coupled.ips.positions)
        self.assertTrue(np.array_equal(runs[0], runs[1]))

    def test_run_ips_matches_steps(self):
        noise = NoiseStream(4, Purpose.dynamics, 6)
        state = EnsembleState(0.0, self.x)
        for step in range(3):
            state = step_ips(self.pot, state, 0.05,
                             noise.gaussian(step, self.x.shape))
        final = run_ips(self.pot, self.x, 0.05, 3, noise)
        self.assertTrue(np.array_equal(final.positions, state.positions))


class MonitorTest(EksimTest):

    def test_threshold_equality_triggers(self):
        record = stopping_monitor(MonitorKind.ips_excursion, 2.0, 1.0,
                                  [(0.0, [[1.0]], [[0.0]])])
        self.assertTrue(record.triggered)
        self.assertEqual(record.hit_time, 0.0)

    def test_origin_never_triggers(self):
        zeros = np.zeros((3, 2))
        states = [(0.1 * k, zeros, zeros) for k in range(10)]
        for kind in MonitorKind:
            record = stopping_monitor(kind, 2.0, 0.5, states)
            self.assertFalse(record.triggered)
            self.assertIsNone(record.hit_time)

    def test_first_hit_is_kept(self):
        monitor = StoppingMonitor(MonitorKind.coupling_distance, 1.0, 1.0)
        mf = np.zeros((2, 1))
        monitor.observe(0.0, np.array([[0.0], [1.0]]), mf)
        monitor.observe(0.1, np.array([[0.0], [2.0]]), mf)
        monitor.observe(0.2, np.array([[0.0], [5.0]]), mf)
        self.assertEqual(monitor.record().hit_time, 0.1)

    def test_meanfield_kind_reads_meanfield(self):
        record = stopping_monitor(MonitorKind.meanfield_excursion, 1.0, 1.0,
                                  [(0.0, [[10.0]], [[0.0]]),
                                   (0.5, [[10.0]], [[1.0]])])
        self.assertEqual(record.hit_time, 0.5)

    def test_distance_is_the_coupling_bound(self):
        ips = np.array([[1.0, 0.0], [0.0, 3.0]])
        mf = np.array([[0.0, 0.0], [0.0, -1.0]])
        monitor = StoppingMonitor(MonitorKind.coupling_distance, 2.0, 1.0)
        self.assertClose(monitor.distance(ips, mf),
                         identity_coupling_bound(EmpiricalMeasure(ips),
                                                 EmpiricalMeasure(mf), 2.0))
        self.assertClose(monitor.distance(ips, mf), np.sqrt(17.0 / 2))
        excursion = StoppingMonitor(MonitorKind.ips_excursion, 2.0, 1.0)
        self.assertClose(excursion.distance(ips, mf), np.sqrt(5.0))

    def test_invalid(self):
        with self.assertRaises(ValueError):
            StoppingMonitor(MonitorKind.ips_excursion, 0.5, 1.0)
        with self.assertRaises(ValueError):
            StoppingMonitor(MonitorKind.ips_excursion, 2.0, 0.0)


class TrajectoryTest(EksimTest):

    def setUp(self):
        super().setUp()
        self.pot = Quadratic(np.eye(1))
        self.sde = SdeConfig(0.01, 0.1, seed=5)
        self.path = constant_path(0.1, 0.01, [0.0], [[1.0]])
        self.sampler = GaussianSampler([0.0], [[1.0]])

    def trajectory(self, **kwargs):
        return run_coupled_trajectory(self.pot, self.path, 8, self.sde,
                                      self.sampler, **kwargs)

    def test_summary(self):
        summary = self.trajectory()
        self.assertFalse(summary.failed)
        self.assertEqual(summary.sup_displacement.shape, (8,))
        self.assertEqual(summary.gap_profile.shape, (self.sde.n_steps + 1,))
        self.assertEqual(summary.gap_profile[0], 0.0)
        self.assertTrue(np.all(summary.sup_norm_ips >= 0))
        self.assertEqual(summary.final_ips.size, 8)

    def test_deterministic_per_replicate(self):
        a = self.trajectory(replicate=2)
        b = self.trajectory(replicate=2)
        c = self.trajectory(replicate=3)
        self.assertTrue(np.array_equal(a.sup_displacement, b.sup_displacement))
        self.assertFalse(np.array_equal(a.sup_displacement, c.sup_displacement))

    def test_monitors_are_not_shared(self):
        monitor = StoppingMonitor(MonitorKind.ips_excursion, 2.0, 1e-3)
        summary = self.trajectory(monitors=[monitor])
        self.assertTrue(summary.record(MonitorKind.ips_excursion).triggered)
        self.assertIsNone(monitor.hit_time)
        self.assertIsNone(summary.record(MonitorKind.coupling_distance))

    def test_refined_noise_follows_the_same_brownian_path(self):
        coarse = run_coupled_trajectory(self.pot, self.path, 8,
                                        self.sde.refined_noise(2),
                                        self.sampler)
        fine = run_coupled_trajectory(self.pot, self.path, 8,
                                      self.sde.halved(), self.sampler)
        unrelated = self.trajectory()
        gap = np.max(np.abs(coarse.final_meanfield.points
                            - fine.final_meanfield.points))
        self.assertLess(gap, 0.02)
        self.assertGreater(np.max(np.abs(unrelated.final_meanfield.points
                                         - fine.final_meanfield.points)),
                           gap)

    def test_blow_up_is_reported(self):
        summary = run_coupled_trajectory(
            EvenPower(2, dim=1), constant_path(1.0, 0.1, [0.0], [[1.0]]), 4,
            SdeConfig(0.1, 1.0), lambda g: 1e3 + g)
        self.assertTrue(summary.failed)
        self.assertIsNotNone(summary.failed_at)
        self.assertIsNone(summary.sup_displacement)

    def test_path_must_cover_horizon(self):
        with self.assertRaises(ValueError):
            run_coupled_trajectory(self.pot, constant_path(0.05, 0.01, [0.0],
                                                           [[1.0]]),
                                   8, self.sde, self.sampler)

    def test_dump(self):
        dump = TrajectoryDump(self.tmp_path("trajectories"))
        with dump.recorder(8, 1) as recorder:
            self.trajectory(replicate=1, recorder=recorder)
        self.assertTrue(recorder.closed)
        with open(dump.path_for(8, 1)) as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], ["replicate", "step", "time", "particle",
                                   "system", "x_0"])
        self.assertEqual(len(rows) - 1, (self.sde.n_steps + 1) * 2 * 8)
        self.assertEqual({r[4] for r in rows[1:]}, {"ips", "mf"})
        self.assertEqual(rows[1][:2], ["1", "0"])


class SdeConfigTest(EksimTest):

    def test_steps(self):
        self.assertEqual(SdeConfig(0.01, 1.0).n_steps, 100)
        self.assertEqual(SdeConfig(0.01, 1.0).halved().n_steps, 200)

    def test_invalid(self):
        for dt, t_final in ((0.0, 1.0), (0.1, 0.0), (2.0, 1.0)):
            with self.assertRaises(ValueError):
                SdeConfig(dt, t_final)

    def test_noise_refinement(self):
        shape = (5, 2)
        coarse = SdeConfig(0.01, 1.0, seed=3).refined_noise(2).noise(8, 1)
        fine = NoiseStream(3, Purpose.dynamics, 8, 1)
        self.assertClose(coarse.gaussian(4, shape),
                         (fine.gaussian(8, shape) + fine.gaussian(9, shape))
                         / np.sqrt(2), atol=1e-12)
        self.assertIsInstance(SdeConfig(0.01, 1.0).noise(8, 1), NoiseStream)
        with self.assertRaises(ValueError):
            SdeConfig(0.01, 1.0, noise_refinement=0)


if __name__ == "__main__":
    unittest.main()

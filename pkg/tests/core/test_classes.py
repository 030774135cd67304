import unittest

import numpy as np

from lanefree.core.classes import (
    AccelLimits,
    EllipsoidParams,
    LateralCorridor,
    MovingBoundary,
    ObstaclePrediction,
    Plan,
    VehicleState,
)
from lanefree.core.dynamics import rollout
from lanefree.mpc.classes import PlanRecord
from lanefree.simulator.classes import DetectorRecord, RunStatistics, VehicleSpec


class TestVehicleState(unittest.TestCase):
    def test_array_roundtrip(self):
        s = VehicleState(1.0, 2.0, 3.0, 4.0)
        np.testing.assert_array_equal(s.as_array(), [1, 2, 3, 4])
        self.assertEqual(VehicleState.from_array(s.as_array()), s)

    def test_frozen(self):
        s = VehicleState(1.0, 2.0, 3.0, 4.0)
        with self.assertRaises(AttributeError):
            s.x1 = 5.0  # type: ignore


class TestPlan(unittest.TestCase):
    def test_shapes(self):
        with self.assertRaises(ValueError):
            Plan(0.0, 0.25, np.zeros((4, 3)), np.zeros((5, 4)))
        with self.assertRaises(ValueError):
            Plan(0.0, 0.25, np.zeros((4, 2)), np.zeros((4, 4)))

    def test_times(self):
        plan = Plan(10.0, 0.25, np.zeros((4, 2)), np.zeros((5, 4)))
        self.assertEqual(plan.horizon, 4)
        np.testing.assert_array_equal(plan.times(), [10.0, 10.25, 10.5, 10.75, 11.0])


class TestCorridor(unittest.TestCase):
    def test_for_road(self):
        c = LateralCorridor.for_road(10.2, 1.8)
        self.assertEqual(c.x2_right, 0.9)
        self.assertAlmostEqual(c.x2_left, 9.3, places=12)
        self.assertTrue(c.contains(5.0))
        self.assertFalse(c.contains(0.8))
        self.assertTrue(c.contains(0.8, tol=0.1 + 1e-12))

    def test_invalid(self):
        with self.assertRaises(ValueError):
            LateralCorridor(5.0, 5.0)

    def test_intersect(self):
        c = LateralCorridor(0.9, 9.3).intersect(LateralCorridor(4.85, 5.15))
        self.assertEqual(c, LateralCorridor(4.85, 5.15))


class TestSmallTypes(unittest.TestCase):
    def test_accel_limits_empty(self):
        self.assertFalse(AccelLimits(-2, 0.5, -1, 1).is_empty())
        self.assertTrue(AccelLimits(-2, -2.5, -1, 1).is_empty())

    def test_moving_boundary_errors(self):
        mb = MovingBoundary(30.0, 25.0)
        self.assertEqual(mb.errors(VehicleState(25, 5, 28, 0)), (-5.0, 3.0))

    def test_omega1_em(self):
        self.assertEqual(EllipsoidParams().omega1_em, 0.265)

    def test_obstacle_samples(self):
        obs = ObstaclePrediction(3, 4.25, 1.8, np.zeros((7, 4)))
        self.assertEqual(obs.n_samples, 7)


class TestPlanRecord(unittest.TestCase):
    def setUp(self) -> None:
        controls = np.tile([0.5, 0.0], (8, 1))
        controls[:, 1] = np.arange(8)
        self.plan = rollout(VehicleState(0, 5, 30, 0), controls, 0.25)

    def test_applied_through_range(self):
        with self.assertRaises(ValueError):
            PlanRecord(self.plan, 4, 0, applied_through=9)

    def test_progress(self):
        record = PlanRecord(self.plan, 4, 0)
        self.assertFalse(record.exhausted)
        record.applied_through = 3
        self.assertEqual(record.next_control().u2, 3.0)
        self.assertEqual(record.remaining_states().shape, (6, 4))
        self.assertEqual(record.unused_controls().shape, (5, 2))
        record.applied_through = 4
        self.assertTrue(record.exhausted)
        self.assertEqual(record.solve_times(), [])


class TestSimulatorTypes(unittest.TestCase):
    def test_vehicle_spec(self):
        spec = VehicleSpec.of_class(0, "VIII", 30.0)
        self.assertEqual((spec.length, spec.width), (5.2, 1.88))

    def test_detector_flow(self):
        self.assertEqual(DetectorRecord(0.0, 3, 100.0).flow, 108.0)
        self.assertEqual(DetectorRecord(0.0, 3, 0.0).flow, 0.0)

    def test_run_statistics(self):
        stats = RunStatistics(
            density=100,
            seed=1,
            n_vehicles=100,
            detectors=[DetectorRecord(0.0, 3, 100.0), DetectorRecord(200.0, 5, 100.0)],
            n_plans=40,
            n_emergency=2,
        )
        self.assertEqual(stats.mean_flow, 144.0)
        self.assertEqual(stats.emergency_pct, 5.0)

import math
import unittest

import numpy as np

from lanefree.core.classes import ControlInput, VehicleState
from lanefree.core.dynamics import (
    exactness_check,
    reach_envelope,
    rollout,
    rollout_array,
    step,
    step_array,
    zoh_matrices,
)
from lanefree.core.errors import NonFiniteInput

DT = 0.25


class TestStep(unittest.TestCase):
    def test_step_accelerating(self):
        s = step(VehicleState(0, 5, 30, 0), ControlInput(0.5, 0), DT)
        self.assertEqual(s, VehicleState(7.515625, 5.0, 30.125, 0.0))

    def test_step_zero_control(self):
        s = step(VehicleState(10, 2, 20, 1), ControlInput(0, 0), DT)
        self.assertEqual(s, VehicleState(15.0, 2.25, 20.0, 1.0))

    def test_step_braking(self):
        # (0.5 * 0.0625) * -2 = -0.0625
        s = step(VehicleState(0, 0, 30, 0), ControlInput(-2, 0), DT)
        self.assertEqual(s.x1, 7.4375)
        self.assertEqual(s.x3, 29.5)

    def test_step_matches_step_array(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            x = rng.uniform(-50, 50, 4)
            u = rng.uniform(-3, 3, 2)
            s = step(VehicleState.from_array(x), ControlInput.from_array(u), DT)
            np.testing.assert_array_equal(s.as_array(), step_array(x, u, DT))

    def test_non_finite(self):
        with self.assertRaises(NonFiniteInput):
            step(VehicleState(math.nan, 0, 0, 0), ControlInput(0, 0), DT)
        with self.assertRaises(NonFiniteInput):
            step(VehicleState(0, 0, 0, 0), ControlInput(math.inf, 0), DT)
        with self.assertRaises(NonFiniteInput):
            step(VehicleState(0, 0, 0, 0), ControlInput(0, 0), 0.0)


class TestRollout(unittest.TestCase):
    def test_constant_acceleration(self):
        # x1(K*T) = a*t^2/2 = 0.5, x3 = a*t = 1.0 for a = 1, t = 1
        plan = rollout(VehicleState(0, 0, 0, 0), [ControlInput(1, 0)] * 4, DT)
        self.assertEqual(plan.horizon, 4)
        self.assertEqual(plan.states.shape, (5, 4))
        self.assertAlmostEqual(plan.states[-1, 0], 0.5, places=12)
        self.assertAlmostEqual(plan.states[-1, 2], 1.0, places=12)

    def test_rollout_consistent_with_step(self):
        rng = np.random.default_rng(5)
        controls = rng.uniform(-2, 0.5, (16, 2))
        s0 = VehicleState(3, 4, 25, 0.2)
        plan = rollout(s0, controls, DT, t0=10.0)

        s = s0
        for k in range(plan.horizon):
            s = step(s, plan.control(k), DT)
            np.testing.assert_array_equal(s.as_array(), plan.states[k + 1])
        self.assertEqual(plan.times()[0], 10.0)

    def test_rollout_array_accepts_sequence_and_array(self):
        controls = [ControlInput(0.5, -0.1), ControlInput(-1, 0.2)]
        a = rollout(VehicleState(0, 5, 30, 0), controls, DT)
        b = rollout_array(
            np.array([0, 5, 30, 0.0]), np.array([[0.5, -0.1], [-1, 0.2]]), DT
        )
        np.testing.assert_array_equal(a.states, b)

    def test_empty_controls(self):
        with self.assertRaises(ValueError):
            rollout(VehicleState(0, 0, 0, 0), [], DT)

    def test_non_finite_controls(self):
        with self.assertRaises(NonFiniteInput):
            rollout(VehicleState(0, 0, 0, 0), np.array([[0.0, np.nan]]), DT)


class TestExactness(unittest.TestCase):
    def test_zoh_matrices(self):
        ad, bd = zoh_matrices(DT)
        np.testing.assert_allclose(ad[0, 2], DT, rtol=1e-14)
        np.testing.assert_allclose(bd[0, 0], 0.5 * DT * DT, rtol=1e-14)
        np.testing.assert_allclose(bd[2, 0], DT, rtol=1e-14)

    def test_exactness_random(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            s0 = VehicleState(*rng.uniform([-500, 0, 0, -3], [500, 10, 40, 3]))
            u = ControlInput(*rng.uniform(-4, 4, 2))
            self.assertTrue(exactness_check(s0, u, DT))


class TestReachEnvelope(unittest.TestCase):
    s0 = VehicleState(0, 5, 20, 0)
    horizon = 24

    def test_extreme_controls_hit_the_envelope(self):
        (x1_lo, x1_hi), (x3_lo, x3_hi) = reach_envelope(self.s0, self.horizon, DT, -4.0, 0.5)
        accel = rollout_array(self.s0.as_array(), np.tile([0.5, 0.0], (self.horizon, 1)), DT)
        np.testing.assert_allclose(x1_hi, accel[: self.horizon, 0], atol=1e-9)
        np.testing.assert_allclose(x3_hi, accel[: self.horizon, 2], atol=1e-9)

        # Braking at -4 from 20 m/s stops exactly at step 20
        x = self.s0.as_array()
        braking = [x]
        for _ in range(self.horizon - 1):
            x = step_array(x, np.array([max(-4.0, -x[2] / DT), 0.0]), DT)
            braking.append(x)
        braking = np.array(braking)
        np.testing.assert_allclose(x1_lo, braking[:, 0], atol=1e-9)
        np.testing.assert_allclose(x3_lo, np.maximum(braking[:, 2], 0.0), atol=1e-9)
        self.assertEqual(x3_lo[-1], 0.0)

    def test_random_controls_stay_inside(self):
        (x1_lo, x1_hi), (x3_lo, x3_hi) = reach_envelope(self.s0, self.horizon, DT, -2.0, 0.5)
        rng = np.random.default_rng(4)
        for _ in range(50):
            x = self.s0.as_array()
            for k in range(self.horizon):
                self.assertTrue(x1_lo[k] - 1e-9 <= x[0] <= x1_hi[k] + 1e-9)
                self.assertTrue(x3_lo[k] - 1e-9 <= x[2] <= x3_hi[k] + 1e-9)
                u1 = max(rng.uniform(-2.0, 0.5), -x[2] / DT)
                x = step_array(x, np.array([u1, rng.uniform(-1, 1)]), DT)

import math
import unittest

import numpy as np

from lanefree.core.classes import (
    EllipsoidParams,
    ObstaclePrediction,
    SpeedTargets,
    VehicleState,
    Weights,
)
from lanefree.core.dynamics import reach_envelope, rollout
from lanefree.core.errors import HorizonMismatch
from lanefree.core.gradcheck import check_gradient
from lanefree.core.objective import (
    ObstacleStack,
    axis_lengths,
    coupling_cost,
    cost_field,
    deviation_cost,
    ellipsoid_center,
    ellipsoid_terms,
    evaluate,
    obstacle_cost,
    potential_bound,
    power,
    prune_stack,
    stage_gradients,
    total_cost,
)

DT = 0.25
LENGTH = 4.25
WIDTH = 1.8


def constant_obstacle(id: int, sample, horizon: int) -> ObstaclePrediction:
    return ObstaclePrediction(id, LENGTH, WIDTH, np.tile(np.asarray(sample, float), (horizon, 1)))


class TestEllipsoid(unittest.TestCase):
    p = EllipsoidParams(omega1=0.35)

    def test_center(self):
        self.assertAlmostEqual(ellipsoid_center(30, 30, 25, 0.35), 29.125, places=12)
        self.assertAlmostEqual(ellipsoid_center(40, 30, 35, 0.35), 40.875, places=12)

    def test_axis_lengths(self):
        d1, d2 = axis_lengths(LENGTH, WIDTH, LENGTH, WIDTH, 5.5, 0.0, 2.5, 0.0, 30, 25, self.p)
        self.assertAlmostEqual(d1, 30.3, places=12)
        self.assertAlmostEqual(d2, 4.32 + 0.5 * math.sqrt(0.1), places=12)

    def test_d2_grows_when_approaching(self):
        # Obstacle on the right, ego drifting right
        _, still = axis_lengths(LENGTH, WIDTH, LENGTH, WIDTH, 5.5, 0.0, 2.5, 0.0, 30, 25, self.p)
        _, closing = axis_lengths(LENGTH, WIDTH, LENGTH, WIDTH, 5.5, -1.0, 2.5, 0.0, 30, 25, self.p)
        _, leaving = axis_lengths(LENGTH, WIDTH, LENGTH, WIDTH, 5.5, 1.0, 2.5, 0.0, 30, 25, self.p)
        self.assertGreater(closing, still)
        self.assertLess(leaving, still)
        self.assertGreater(leaving, 1.2 * 2 * WIDTH)

    def test_cost_at_center(self):
        o = (30, 2.5, 25, 0)
        x = VehicleState(29.125, 2.5, 30, 0)
        self.assertAlmostEqual(obstacle_cost(x, o, self.p, LENGTH, WIDTH, LENGTH, WIDTH), 2.0)

    def test_cost_at_unit_x(self):
        o = (30, 2.5, 25, 0)
        x = VehicleState(29.125 + 30.3 / 2, 2.5, 30, 0)
        self.assertAlmostEqual(
            obstacle_cost(x, o, self.p, LENGTH, WIDTH, LENGTH, WIDTH),
            1 - math.tanh(1) + 1 / 17,
            places=9,
        )

    def test_cost_far_away(self):
        o = (30, 2.5, 25, 0)
        far = obstacle_cost(
            VehicleState(1000, 2.5, 30, 0), o, self.p, LENGTH, WIDTH, LENGTH, WIDTH
        )
        self.assertGreaterEqual(far, 0.0)
        self.assertLess(far, 1e-6)

    def test_cost_decreases_away_from_center(self):
        o = (30, 2.5, 25, 0)
        costs = [
            obstacle_cost(
                VehicleState(29.125 + dx, 2.5, 30, 0), o, self.p, LENGTH, WIDTH, LENGTH, WIDTH
            )
            for dx in (0, 5, 10, 15, 20, 40)
        ]
        self.assertTrue(all(a > b for a, b in zip(costs, costs[1:])))


class TestCoupling(unittest.TestCase):
    def test_coupling_cost(self):
        self.assertAlmostEqual(float(coupling_cost(10, 0.9, 0.03)), 0.36)
        self.assertAlmostEqual(float(coupling_cost(10, -0.9, 0.03)), 0.36)
        self.assertEqual(float(coupling_cost(30, 0.5, 0.03)), 0.0)
        self.assertEqual(float(coupling_cost(0, 0, 0.03)), 0.0)

    def test_coupling_partial(self):
        w = Weights(0, 0, 0, 0, 0, 1, 0)
        states = np.array([[0, 5, 10, 0.9], [0, 5, 10, 0.9]])
        controls = np.zeros((1, 2))
        stack = ObstacleStack.from_predictions([], 1)
        total, dx, _ = evaluate(
            states, controls, stack, w, SpeedTargets(10), EllipsoidParams(), 0.03, 0.0, LENGTH, WIDTH
        )
        self.assertAlmostEqual(total, 0.36)
        self.assertAlmostEqual(dx[0, 3], 1.2)
        self.assertAlmostEqual(dx[0, 2], -2 * 0.03 * 0.6)

    def test_deviation_cost(self):
        self.assertAlmostEqual(deviation_cost(0.5, 0.3), 0.04)
        self.assertEqual(deviation_cost(0.5, -2.0), 6.25)


class TestTotalCost(unittest.TestCase):
    w = Weights()
    p = EllipsoidParams()

    def cost(self, plan, obstacles=(), vd1=30.0, u1_prev=0.0, w=None):
        return total_cost(
            plan,
            list(obstacles),
            w or self.w,
            SpeedTargets(vd1),
            self.p,
            0.03,
            u1_prev,
            ego_length=LENGTH,
            ego_width=WIDTH,
        )

    def test_cruise_zero(self):
        plan = rollout(VehicleState(0, 5.1, 30, 0), np.zeros((8, 2)), DT)
        self.assertEqual(self.cost(plan), 0.0)

    def test_constant_acceleration(self):
        plan = rollout(VehicleState(0, 5.1, 28, 0), np.tile([0.5, 0.0], (4, 1)), DT)
        expected = self.w.w7 * 0.25
        for k in range(4):
            expected += self.w.w1 * 0.25 + self.w.w3 * (plan.states[k, 2] - 30) ** 2
        self.assertAlmostEqual(self.cost(plan), expected, places=12)

    def test_zero_weights(self):
        plan = rollout(VehicleState(0, 5.1, 20, 0.4), np.tile([0.5, -0.3], (4, 1)), DT)
        obstacles = [constant_obstacle(1, (10, 5.1, 20, 0), 4)]
        self.assertEqual(self.cost(plan, obstacles, w=Weights.zeros()), 0.0)

    def test_obstacle_order_invariance(self):
        plan = rollout(VehicleState(0, 5.1, 30, 0.2), np.tile([0.1, 0.1], (6, 1)), DT)
        a = constant_obstacle(1, (15, 3.0, 25, 0), 6)
        b = constant_obstacle(2, (25, 7.0, 28, 0.1), 6)
        self.assertAlmostEqual(self.cost(plan, [a, b]), self.cost(plan, [b, a]), places=12)
        self.assertGreater(self.cost(plan, [a, b]), self.cost(plan, [a]))

    def test_horizon_mismatch(self):
        plan = rollout(VehicleState(0, 5.1, 30, 0), np.zeros((4, 2)), DT)
        with self.assertRaises(HorizonMismatch):
            self.cost(plan, [constant_obstacle(1, (20, 5, 30, 0), 2)])

    def test_longer_obstacle_traj_is_truncated(self):
        plan = rollout(VehicleState(0, 5.1, 30, 0), np.zeros((4, 2)), DT)
        short = constant_obstacle(1, (20, 5, 30, 0), 4)
        long = constant_obstacle(1, (20, 5, 30, 0), 10)
        self.assertEqual(self.cost(plan, [short]), self.cost(plan, [long]))


class TestStageGradients(unittest.TestCase):
    w = Weights()
    p = EllipsoidParams()
    t = SpeedTargets(30)
    beta = 0.03
    u1_prev = 0.1

    def setUp(self) -> None:
        self.plan = rollout(
            VehicleState(26, 4.0, 28, 0.3), np.tile([0.2, -0.1], (3, 1)), DT
        )
        self.obstacles = [
            constant_obstacle(1, (30, 2.5, 25, 0.1), 3),
            constant_obstacle(2, (20, 6.5, 30, -0.2), 3),
        ]
        self.stack = ObstacleStack.from_predictions(self.obstacles, 3)

    def J(self, states, controls) -> float:
        total, _, _ = evaluate(
            states,
            controls,
            self.stack,
            self.w,
            self.t,
            self.p,
            self.beta,
            self.u1_prev,
            LENGTH,
            WIDTH,
            need_grad=False,
        )
        return total

    def test_state_gradients(self):
        for k in range(3):
            dx, _ = stage_gradients(
                k,
                self.plan,
                self.obstacles,
                self.w,
                self.t,
                self.p,
                self.beta,
                self.u1_prev,
                ego_length=LENGTH,
                ego_width=WIDTH,
            )

            def func(x, k=k):
                states = self.plan.states.copy()
                states[k] = x
                return self.J(states, self.plan.controls)

            ok, err = check_gradient(func, dx, self.plan.states[k], rtol=1e-5, atol=1e-6)
            self.assertTrue(ok, f"stage {k}: relative error {err}")

    def test_control_gradients(self):
        for k in range(3):
            _, du = stage_gradients(
                k,
                self.plan,
                self.obstacles,
                self.w,
                self.t,
                self.p,
                self.beta,
                self.u1_prev,
                ego_length=LENGTH,
                ego_width=WIDTH,
            )

            def func(u, k=k):
                controls = self.plan.controls.copy()
                controls[k] = u
                return self.J(self.plan.states, controls)

            ok, err = check_gradient(func, du, self.plan.controls[k], rtol=1e-5, atol=1e-6)
            self.assertTrue(ok, f"stage {k}: relative error {err}")

    def test_random_instances(self):
        """Seeded random stage sets with obstacles inside the potential's active range"""
        for seed in range(100):
            with self.subTest(seed=seed):
                rng = np.random.default_rng(seed)
                horizon = int(rng.integers(2, 7))
                states = np.column_stack(
                    [
                        rng.uniform(0.0, 20.0, horizon + 1),
                        rng.uniform(2.0, 8.0, horizon + 1),
                        rng.uniform(15.0, 35.0, horizon + 1),
                        rng.uniform(-0.6, 0.6, horizon + 1),
                    ]
                )
                controls = rng.uniform(-1.0, 1.0, (horizon, 2))
                n = int(rng.integers(1, 4))
                traj = np.empty((n, horizon, 4))
                traj[..., 0] = states[None, :horizon, 0] + rng.uniform(-15.0, 25.0, (n, horizon))
                traj[..., 1] = states[None, :horizon, 1] + rng.uniform(-3.0, 3.0, (n, horizon))
                traj[..., 2] = rng.uniform(15.0, 35.0, (n, horizon))
                traj[..., 3] = rng.uniform(-0.3, 0.3, (n, horizon))
                # first obstacle sits inside the ellipsoid core
                traj[0, :, 0] = states[:horizon, 0] + rng.uniform(-3.0, 3.0, horizon)
                traj[0, :, 1] = states[:horizon, 1] + rng.uniform(-1.0, 1.0, horizon)
                obstacles = [ObstaclePrediction(i, LENGTH, WIDTH, traj[i]) for i in range(n)]
                stack = ObstacleStack.from_predictions(obstacles, horizon)
                t = SpeedTargets(rng.uniform(20.0, 35.0))
                u1_prev = rng.uniform(-0.5, 0.5)

                def J(x, u):
                    total, _, _ = evaluate(
                        x, u, stack, self.w, t, self.p, self.beta, u1_prev, LENGTH, WIDTH,
                        need_grad=False,
                    )
                    return total

                c, _ = ellipsoid_terms(
                    states[:horizon], traj, stack.lengths, stack.widths, LENGTH, WIDTH, self.p,
                    need_grad=False,
                )
                self.assertGreater(float(c.max()), 1e-3)

                _, dx, du = evaluate(
                    states, controls, stack, self.w, t, self.p, self.beta, u1_prev, LENGTH, WIDTH
                )

                def of_states(x):
                    full = states.copy()
                    full[:horizon] = x
                    return J(full, controls)

                ok, err = check_gradient(of_states, dx, states[:horizon], rtol=1e-4, atol=1e-5)
                self.assertTrue(ok, f"states: relative error {err}")
                ok, err = check_gradient(
                    lambda u: J(states, u), du, controls, rtol=1e-4, atol=1e-5
                )
                self.assertTrue(ok, f"controls: relative error {err}")

    def test_stage_outside_horizon(self):
        with self.assertRaises(IndexError):
            stage_gradients(
                3,
                self.plan,
                self.obstacles,
                self.w,
                self.t,
                self.p,
                self.beta,
                self.u1_prev,
                ego_length=LENGTH,
                ego_width=WIDTH,
            )


class TestCostField(unittest.TestCase):
    def test_cost_field(self):
        p = EllipsoidParams(omega1=0.35)
        obstacles = [constant_obstacle(1, (30, 2.5, 25, 0), 1)]
        grid_x1 = np.arange(0, 60.5, 0.5)
        grid_x2 = np.linspace(0, 10.2, 11)
        field, boxes = cost_field(
            grid_x1, grid_x2, VehicleState(10, 5.5, 30, 0), obstacles, p, LENGTH, WIDTH
        )
        self.assertEqual(field.shape, (11, len(grid_x1)))
        self.assertEqual(len(boxes), 1)
        self.assertEqual(boxes[0]["id"], 1)
        self.assertAlmostEqual(boxes[0]["delta"], 29.125, places=12)
        self.assertAlmostEqual(boxes[0]["d1"], 30.3, places=12)
        # Peak lies next to the ellipsoid center
        j, i = np.unravel_index(np.argmax(field), field.shape)
        self.assertLess(abs(grid_x1[i] - 29.125), 1.0)
        self.assertLess(abs(grid_x2[j] - 2.5), 1.1)

    def test_cost_field_is_longer_than_wide(self):
        p = EllipsoidParams()
        obstacles = [constant_obstacle(1, (30, 2.5, 25, 0), 1)]
        grid_x1 = np.arange(0, 60.25, 0.25)
        grid_x2 = np.arange(0, 5.025, 0.05)
        field, boxes = cost_field(
            grid_x1, grid_x2, VehicleState(10, 5.5, 30, 0), obstacles, p, LENGTH, WIDTH
        )
        row = field[np.argmin(np.abs(grid_x2 - 2.5))]
        col = field[:, np.argmin(np.abs(grid_x1 - boxes[0]["delta"]))]
        longitudinal = 0.25 * np.count_nonzero(row > 0.5)
        lateral = 0.05 * np.count_nonzero(col > 0.5)
        self.assertGreater(lateral, 0.0)
        self.assertGreater(longitudinal, 3 * lateral)


class TestPruning(unittest.TestCase):
    p = EllipsoidParams()

    def test_potential_bound(self):
        bound = potential_bound(np.array([0.0, 0.5, 1.0, 4.0, 16.0]), self.p)
        self.assertAlmostEqual(float(bound[0]), 2.0)
        self.assertTrue(np.all(np.diff(bound) < 0))

    def test_bound_covers_potential(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            x = VehicleState(0.0, rng.uniform(1, 9), rng.uniform(0, 35), rng.uniform(-1, 1))
            o = (rng.uniform(-80, 80), rng.uniform(1, 9), rng.uniform(0, 35), rng.uniform(-1, 1))
            d1, _ = axis_lengths(
                LENGTH, WIDTH, LENGTH, WIDTH, x.x2, x.x4, o[1], o[3], x.x3, o[2], self.p
            )
            big_x = 2 * abs(x.x1 - ellipsoid_center(o[0], x.x3, o[2], self.p.omega1)) / d1
            cost = obstacle_cost(x, o, self.p, LENGTH, WIDTH, LENGTH, WIDTH)
            self.assertLessEqual(cost, float(potential_bound(big_x, self.p)) + 1e-12)

    def test_prune_far_obstacle(self):
        horizon = 16
        x0 = VehicleState(0, 5.1, 25, 0)
        stack = ObstacleStack.from_predictions(
            [
                constant_obstacle(1, (30, 5.1, 25, 0), horizon),
                constant_obstacle(2, (600, 5.1, 25, 0), horizon),
            ],
            horizon,
        )
        x1_range, x3_range = reach_envelope(x0, horizon, DT, -2.0, 0.5)
        pruned = prune_stack(stack, x1_range, x3_range, LENGTH, self.p, 7.0, 1e-4)
        self.assertEqual(pruned.ids, [1])
        self.assertEqual(pruned.traj.shape, (1, horizon, 4))
        kept = prune_stack(stack, x1_range, x3_range, LENGTH, self.p, 7.0, 0.0)
        self.assertEqual(kept.ids, [1, 2])

    def test_power(self):
        x = np.array([-1.5, 0.0, 0.5, 2.0])
        for n in (0, 1, 2, 5, 6, 2.0):
            np.testing.assert_allclose(power(x, n), x**n, rtol=1e-14)
        np.testing.assert_allclose(power(np.array([4.0]), 0.5), [2.0])

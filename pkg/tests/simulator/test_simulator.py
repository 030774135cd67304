import unittest

import numpy as np

from lanefree.core.config import Config
from lanefree.core.errors import InitializationFailed
from lanefree.simulator.classes import DetectorRecord, VehicleSpec, World
from lanefree.simulator.simulator_main import (
    JERK_EDGES,
    boundary_jerk,
    collision_audit,
    comfort_histograms,
    detector_measure,
    fundamental_diagram,
    initialize,
    initialize_scripted,
    overlapping_pairs,
    run,
    solve_time_summary,
)

# Short, sparse runs: five sections 200 m apart, two virtual lanes 5.1 m apart
SMALL = dict(
    density=10,
    duration=10.0,
    warmup=0.0,
    n_virtual_lanes=2,
    jitter=0.05,
    horizon=16,
    solver_time_budget=0,
    solver_max_iter=100,
)


class TestInitialize(unittest.TestCase):
    def test_grid_centres(self):
        config = Config(density=40, jitter=0.0)
        world = initialize(config)
        self.assertEqual(world.n, 40)
        # 4 lanes x 10 sections of 100 m
        np.testing.assert_allclose(world.states[5], [150.0, 3.825, 0.0, 0.0])
        np.testing.assert_allclose(world.states[:, 2:], 0.0)
        self.assertEqual(collision_audit(world), 0)

    def test_desired_speed_zones(self):
        world = initialize(Config(density=100))
        lanes = np.arange(world.n) % 4
        for lane in range(4):
            v = world.v_des[lanes == lane]
            self.assertTrue(np.all(v >= 25 + 2.5 * lane))
            self.assertTrue(np.all(v < 25 + 2.5 * (lane + 1)))

    def test_jitter_within_cell(self):
        world = initialize(Config(density=100, jitter=0.1))
        corridor_ok = (world.states[:, 1] >= world.widths / 2) & (
            world.states[:, 1] <= 10.2 - world.widths / 2
        )
        self.assertTrue(np.all(corridor_ok))
        self.assertTrue(np.all((world.states[:, 0] >= 0) & (world.states[:, 0] < 1000)))
        self.assertEqual(collision_audit(world), 0)

    def test_seeded(self):
        a = initialize(Config(density=60, seed=4))
        b = initialize(Config(density=60, seed=4))
        np.testing.assert_array_equal(a.states, b.states)
        self.assertEqual([v.class_id for v in a.vehicles], [v.class_id for v in b.vehicles])

    def test_scripted_overlap(self):
        config = Config()
        vehicles = [VehicleSpec.of_class(0, "IV", 30), VehicleSpec.of_class(1, "IV", 30)]
        with self.assertRaises(InitializationFailed):
            initialize_scripted(config, vehicles, [[0, 5, 0, 0], [2, 5.5, 0, 0]])
        world = initialize_scripted(config, vehicles, [[0, 5, 0, 0], [1010, 2, 0, 0]])
        self.assertEqual(world.states[1, 0], 10.0)


class TestAudit(unittest.TestCase):
    def world(self, states) -> World:
        vehicles = [VehicleSpec.of_class(i, "IV", 30) for i in range(len(states))]
        return World(Config(), vehicles, np.asarray(states, dtype=float))

    def test_no_overlap(self):
        world = self.world([[0, 5, 30, 0], [10, 5, 30, 0], [3, 8, 30, 0]])
        self.assertEqual(collision_audit(world), 0)

    def test_overlap(self):
        world = self.world([[0, 5, 30, 0], [3, 5.5, 30, 0], [500, 8, 30, 0]])
        self.assertEqual(collision_audit(world), 1)
        self.assertEqual(
            overlapping_pairs(world.states, world.lengths, world.widths, 1000.0), [(0, 1)]
        )

    def test_overlap_across_wrap(self):
        world = self.world([[999, 5, 30, 0], [1, 5, 30, 0]])
        self.assertEqual(collision_audit(world), 1)

    def test_touching_is_not_overlap(self):
        world = self.world([[0, 5, 30, 0], [4.25, 5, 30, 0]])
        self.assertEqual(collision_audit(world), 0)


class TestDetector(unittest.TestCase):
    def drive(self, warmup: float) -> DetectorRecord:
        # One vehicle at 30 m/s for 100 s on a 1000 m ring
        record = DetectorRecord(0.0)
        dt = 0.25
        front = 500.0
        for n in range(400):
            travelled = np.array([30.0 * dt])
            detector_measure(record, np.array([front]), travelled, n * dt, dt, 1000.0, warmup)
            front = (front + travelled[0]) % 1000.0
        record.window = 100.0 - warmup
        return record

    def test_flow(self):
        record = self.drive(0.0)
        self.assertEqual(record.count, 3)
        self.assertEqual(record.flow, 108.0)

    def test_warmup(self):
        # Crossings at 16.7 s, 50 s and 83.3 s
        self.assertEqual(self.drive(50.0).count, 2)

    def test_stationary(self):
        record = DetectorRecord(100.0)
        detector_measure(record, np.array([100.0]), np.array([0.0]), 0.0, 0.25, 1000.0)
        self.assertEqual(record.count, 0)


class TestStatistics(unittest.TestCase):
    def test_comfort_histograms(self):
        controls = np.zeros((3, 2, 2))
        controls[:, :, 0] = 0.5
        controls[2, 1, 0] = 10.0
        plan_start = np.zeros((3, 2), dtype=bool)
        plan_start[2, 1] = True
        hist = comfort_histograms(controls, plan_start, 0.25)

        self.assertEqual(set(hist), {"u1", "u2", "jerk1", "jerk2", "boundary_jerk1"})
        edges, counts = hist["u1"]
        self.assertEqual(counts.sum(), 6)
        # 10 m/s^2 lands in the last bin
        self.assertEqual(counts[-1], 1)
        _, jerk_counts = hist["jerk1"]
        self.assertEqual(jerk_counts.sum(), 4)
        np.testing.assert_allclose(boundary_jerk(controls, plan_start, 0.25), [38.0])
        edges, counts = hist["boundary_jerk1"]
        self.assertIs(edges, JERK_EDGES)
        self.assertEqual(counts.sum(), 1)

    def test_solve_time_summary(self):
        self.assertEqual(solve_time_summary([]), {})
        summary = solve_time_summary([0.001, 0.002, 0.003])
        self.assertEqual(summary["n"], 3)
        self.assertAlmostEqual(summary["min_ms"], 1.0)
        self.assertAlmostEqual(summary["median_ms"], 2.0)
        self.assertAlmostEqual(summary["max_ms"], 3.0)
        self.assertLessEqual(summary["p99_ms"], summary["max_ms"])


class TestRun(unittest.TestCase):
    def test_small_run(self):
        config = Config(**SMALL)
        stats = run(config)

        self.assertEqual(stats.n_vehicles, 10)
        self.assertEqual(stats.collision_audit_count, 0)
        self.assertGreaterEqual(stats.n_plans, 10)
        self.assertEqual(len(stats.solve_times), stats.n_plans + stats.n_emergency)

        table = stats.log.table()
        self.assertEqual(table.shape, (40 * 10, 12))
        x3 = stats.log.column("x3")
        self.assertTrue(np.all(x3 >= -1e-9))
        u1 = stats.log.column("u1")
        self.assertTrue(np.all(u1 <= 0.5 + 1e-9))
        self.assertTrue(np.all(stats.log.column("plan_id") >= 1))
        self.assertEqual(stats.controls_history.shape, (40, 10, 2))
        self.assertTrue(np.all(stats.plan_start[0]))
        for detector in stats.detectors:
            self.assertEqual(detector.window, 10.0)

    def test_workers_do_not_change_results(self):
        a = run(Config(**SMALL, workers=1))
        b = run(Config(**SMALL, workers=2))
        np.testing.assert_array_equal(a.log.table(), b.log.table())
        self.assertEqual(a.n_plans, b.n_plans)
        self.assertEqual([d.count for d in a.detectors], [d.count for d in b.detectors])

    def test_fundamental_diagram_requires_density(self):
        with self.assertRaises(ValueError):
            fundamental_diagram(Config(**SMALL), [], [1])

    def test_fundamental_diagram(self):
        rows, replications = fundamental_diagram(Config(**SMALL), [10.0], [1, 2])
        self.assertEqual(len(rows), 1)
        self.assertEqual(rows[0].density, 10.0)
        self.assertEqual([r["status"] for r in replications], ["ok", "ok"])
        flows = [r["mean_flow"] for r in replications]
        self.assertAlmostEqual(rows[0].mean_flow, float(np.mean(flows)))
        self.assertLessEqual(rows[0].min_flow, rows[0].max_flow)

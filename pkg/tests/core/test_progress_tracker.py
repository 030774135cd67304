import unittest

from lanefree.core.progress_tracker import ProgressManager


class TestProgressManager(unittest.TestCase):
    def test_sub_progress_iterates(self):
        pm = ProgressManager(disable=True)
        tracker = pm.create_sub_progress(
            iter=range(5), scenario="density=50 seed=0", process="Simulating"
        )
        self.assertEqual(list(tracker), [0, 1, 2, 3, 4])
        self.assertEqual(tracker.process, "Simulating")
        self.assertEqual(tracker.scenario, "density=50 seed=0")

    def test_manual_update_sets_count(self):
        tracker = ProgressManager(disable=True).create_sub_progress(
            iter=range(3), scenario="s", process="p"
        )
        tracker.manual_update()
        self.assertEqual(tracker.count, 0)
        tracker.manual_update(count=12)
        self.assertEqual(tracker.count, 12)

    def test_disable_can_be_overridden(self):
        tracker = ProgressManager(disable=True).create_sub_progress(
            iter=range(3), scenario="s", process="p", disable=False, leave=False
        )
        self.assertFalse(tracker.disable)
        tracker.close()

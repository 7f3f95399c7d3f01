import os
import sys
import tempfile
import unittest

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from metrics.mcc import ConfusionCounts, evaluate_instances, largest_coverage, mcc
from metrics.overlap import dice, evaluate_semantic, iou
from metrics.report import NOT_APPLICABLE, MetricsReport
from raster.containers import InstanceMap
from taxonomy.taxonomy import UNDEFINED, UNMAPPED, ClassMap, default_taxonomy
from utility.errors import ConfigError, RasterShapeError


class TestOverlap(unittest.TestCase):
    def test_simple_masks(self):
        x = np.zeros((4, 4), dtype=bool)
        y = np.zeros((4, 4), dtype=bool)
        x[0, :] = True
        y[0, :2] = True
        y[1, 0] = True
        self.assertAlmostEqual(dice(x, y), 2 * 2 / 7)
        self.assertAlmostEqual(iou(x, y), 2 / 5)

    def test_empty_masks(self):
        empty = np.zeros((3, 3), dtype=bool)
        self.assertEqual(dice(empty, empty), 1.0)
        self.assertEqual(iou(empty, empty), 1.0)
        self.assertEqual(dice(empty, ~empty), 0.0)

    def test_dice_iou_relation(self):
        rng = np.random.default_rng(8)
        for _ in range(1000):
            x = rng.random((12, 12)) < rng.random()
            y = rng.random((12, 12)) < rng.random()
            if not (x.any() or y.any()):
                continue
            j = iou(x, y)
            self.assertAlmostEqual(dice(x, y), 2 * j / (1 + j), places=12)

    def test_shape_mismatch(self):
        with self.assertRaises(RasterShapeError):
            dice(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_evaluate_semantic(self):
        taxonomy = default_taxonomy()
        gt = np.array([[1, 1, 7], [7, 0, 0]])
        pred = np.array([[1, 7, 7], [7, 0, 1]])
        table = evaluate_semantic(gt, pred, ["stroma", "lymphocyte", "fibroblast"])
        self.assertEqual(list(table), ["stroma", "lymphocyte", "fibroblast"])
        self.assertAlmostEqual(table["stroma"]["dice"], 0.5)
        self.assertAlmostEqual(table["lymphocyte"]["iou"], 2 / 3)
        self.assertEqual(table["fibroblast"]["dice"], 1.0)
        self.assertEqual(len(evaluate_semantic(gt, pred)), len(taxonomy))

    def test_dice_ignores_added_pixels_of_other_classes(self):
        rng = np.random.default_rng(17)
        names = ["stroma", "lymphocyte", "fibroblast"]
        for _ in range(50):
            gt = rng.choice([1, 7, 13], size=(16, 16))
            pred = rng.choice([1, 7, 13], size=(16, 16))
            table = evaluate_semantic(gt, pred, names)
            extra_gt = rng.choice([0, 2, 4, 9], size=(16, 8))
            extra_pred = rng.choice([0, 2, 4, 9], size=(16, 8))
            extended = evaluate_semantic(np.hstack([gt, extra_gt]), np.hstack([pred, extra_pred]), names)
            for name in names:
                self.assertEqual(extended[name]["dice"], table[name]["dice"])


class TestMcc(unittest.TestCase):
    def test_value(self):
        self.assertAlmostEqual(mcc(ConfusionCounts(tp=4, tn=5, fp=1, fn=2)), 0.5071, places=4)

    def test_perfect_and_inverse(self):
        self.assertEqual(mcc(ConfusionCounts(tp=3, tn=7)), 1.0)
        self.assertAlmostEqual(mcc(ConfusionCounts(fp=3, fn=7)), -1.0)

    def test_zero_denominator(self):
        self.assertEqual(mcc(ConfusionCounts(tp=0, tn=5, fp=0, fn=2)), 0.0)
        self.assertEqual(mcc(ConfusionCounts()), 0.0)

    def test_negative_counts(self):
        with self.assertRaises(ValueError):
            mcc(ConfusionCounts(tp=-1))

    def test_addition(self):
        total = ConfusionCounts(1, 2, 3, 4) + ConfusionCounts(4, 3, 2, 1)
        self.assertEqual(total, ConfusionCounts(5, 5, 5, 5))
        self.assertEqual(total.total, 20)


class TestInstanceEvaluation(unittest.TestCase):
    def setUp(self):
        self.taxonomy = default_taxonomy()
        self.class_map = ClassMap.load("hierarchical")
        resolve = self.taxonomy.resolve
        ids = np.zeros((6, 6), dtype=np.int64)
        ids[0, 0:3] = 1
        ids[2, 0:5] = 2
        ids[4, 0:2] = 3
        self.gt_instances = InstanceMap.from_labels(ids)
        self.gt_classes = {1: resolve("lymphocyte"), 2: resolve("plasma_cell"), 3: resolve("fibroblast")}
        self.pred = np.full((6, 6), resolve("stroma"), dtype=np.uint8)
        self.pred[0, 0:3] = resolve("lymphocyte")
        self.pred[2, 0:3] = resolve("neutrophil")
        self.pred[2, 3:5] = resolve("lymphocyte")

    def test_largest_coverage(self):
        predicted = largest_coverage(self.gt_instances, self.pred, self.class_map)
        self.assertEqual(predicted, {1: 1, 2: 2, 3: UNMAPPED})

    def test_coverage_tie_goes_to_the_first_target(self):
        ids = np.array([[1, 1]])
        pred = np.array([[self.taxonomy.resolve("lymphocyte"), self.taxonomy.resolve("epithelial_cell_nucleus")]])
        self.assertEqual(largest_coverage(InstanceMap.from_labels(ids), pred, self.class_map), {1: 0})

    def test_confusion_counts(self):
        evaluation = evaluate_instances(self.gt_instances, self.gt_classes, self.pred, self.class_map)
        self.assertEqual(len(evaluation.units), 3)
        self.assertEqual(evaluation.counts["lymphocyte"], ConfusionCounts(tp=1, tn=2, fp=0, fn=0))
        self.assertEqual(evaluation.counts["other_leukocyte"], ConfusionCounts(tp=1, tn=2, fp=0, fn=0))
        self.assertEqual(evaluation.counts["connective"], ConfusionCounts(tp=0, tn=2, fp=0, fn=1))
        table = evaluation.mcc_table()
        self.assertEqual(table["lymphocyte"], 1.0)
        self.assertEqual(table["connective"], 0.0)
        self.assertIsNone(table["epithelial_cell_nucleus"])

    def test_pooling(self):
        evaluation = evaluate_instances(self.gt_instances, self.gt_classes, self.pred, self.class_map)
        pooled = evaluation + evaluation
        self.assertEqual(len(pooled.units), 6)
        self.assertEqual(pooled.counts["connective"], ConfusionCounts(tp=0, tn=4, fp=0, fn=2))
        identity = evaluate_instances(self.gt_instances, self.gt_classes, self.pred, ClassMap.identity())
        with self.assertRaises(ConfigError):
            evaluation + identity

    def test_invalid_ground_truth(self):
        with self.assertRaises(ConfigError):
            evaluate_instances(self.gt_instances, {**self.gt_classes, 3: UNDEFINED}, self.pred, self.class_map)
        with self.assertRaises(ConfigError):
            evaluate_instances(self.gt_instances, {**self.gt_classes, 3: self.taxonomy.resolve("stroma")},
                               self.pred, self.class_map)
        with self.assertRaises(ConfigError):
            evaluate_instances(self.gt_instances, {1: self.gt_classes[1]}, self.pred, self.class_map)
        with self.assertRaises(ConfigError):
            evaluate_instances(self.gt_instances, {**self.gt_classes, 3: len(self.taxonomy)}, self.pred,
                               self.class_map)
        with self.assertRaises(ConfigError):
            evaluate_instances(self.gt_instances, {**self.gt_classes, 3: 255}, self.pred, ClassMap.identity())

    def test_invariant_under_ground_truth_relabeling(self):
        rng = np.random.default_rng(23)
        nucleus_ids = [self.taxonomy.resolve(n) for n in ("lymphocyte", "plasma_cell", "neutrophil",
                                                           "fibroblast", "epithelial_cell_nucleus")]
        class_map = ClassMap.identity()
        for _ in range(20):
            ids = rng.integers(0, 12, size=(20, 20))
            pred = rng.integers(0, len(self.taxonomy), size=(20, 20))
            present = [i for i in np.unique(ids).tolist() if i]
            classes = {i: int(rng.choice(nucleus_ids)) for i in present}
            relabel = np.zeros(12, dtype=np.int64)
            relabel[1:] = rng.choice(np.arange(1, 1000), size=11, replace=False)
            relabeled_classes = {int(relabel[i]): c for i, c in classes.items()}
            first = evaluate_instances(InstanceMap.from_labels(ids), classes, pred, class_map)
            second = evaluate_instances(InstanceMap.from_labels(relabel[ids]), relabeled_classes, pred, class_map)
            self.assertEqual(first.counts, second.counts)
            self.assertEqual(first.mcc_table(), second.mcc_table())
            self.assertEqual(sorted((u.gt_class, u.pred_class) for u in first.units),
                             sorted((u.gt_class, u.pred_class) for u in second.units))


class TestMetricsReport(unittest.TestCase):
    def setUp(self):
        self.report = MetricsReport(kind="evaluation", provenance={"version": "1.0.0"})
        self.report.add_section("nuclei", {"lymphocyte": {"mcc": 0.5, "n": 3},
                                           "mitotic_cell": {"mcc": None, "n": 0}})

    def test_table(self):
        table = self.report.to_table()
        lines = table.splitlines()
        self.assertTrue(lines[0].startswith("nuclei"))
        self.assertIn("0.5000", table)
        self.assertIn(NOT_APPLICABLE, lines[3])

    def test_json_round_trip(self):
        with tempfile.TemporaryDirectory() as folder:
            path = self.report.save_json(os.path.join(folder, "report", "metrics.json"))
            loaded = MetricsReport.load_json(path)
        self.assertEqual(loaded.to_dict(), self.report.to_dict())
        self.assertEqual(loaded.schema_version, "1.0")


if __name__ == '__main__':
    unittest.main()

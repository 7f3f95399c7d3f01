import logging
import os
import sys
import tempfile
import unittest

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from aggregation.aggregator import (aggregate, aggregate_tiled, combine_masks, dataset_statistics, result_summary,
                                    save_result)
from aggregation.bundle import MitosisCandidate, TeacherBundle, load_bundle, save_bundle
from raster.containers import InstanceMap, LogitStack
from synthetic.fixture import render_bundle, synth_fixture
from synthetic.scene import random_scene
from taxonomy.taxonomy import UNDEFINED, default_taxonomy
from utility.run_config import RunConfig
from utility.run_logging import RunLogging
from utility.stack_container import find_record, load_stack, record_to_instances, record_to_labels
from utility.tiling import TilePlan
from utility.time_tracking import stage_timer

logger = logging.getLogger(__name__)

# halo >= 2 x roi radius + gaussian radius + nucleus extent
TILED_CONFIG = RunConfig(roi_radius=6, crop=48, stride=40, halo=32)


def assert_same_result(test, result, expected):
    test.assertTrue(np.array_equal(result.semantic, expected.semantic))
    test.assertTrue(np.array_equal(result.tissue, expected.tissue))
    test.assertTrue(np.array_equal(result.mitosis_regions, expected.mitosis_regions))
    test.assertTrue(np.array_equal(result.instances.ids, expected.instances.ids))
    test.assertEqual(result.classes, expected.classes)
    test.assertEqual(result.background_threshold, expected.background_threshold)


def tiled_bundle(bundle, repeats):
    """Bundle made of repeats x repeats copies of a bundle, nucleus ids kept unique per copy."""
    height, width = bundle.shape
    block = bundle.nuclei.ids.astype(np.int64)
    offset = int(block.max())
    ids = np.zeros((height * repeats, width * repeats), dtype=np.int64)
    teacher_types, candidates = {}, []
    for row in range(repeats):
        for col in range(repeats):
            shift = offset * (row * repeats + col)
            window = (slice(row * height, (row + 1) * height), slice(col * width, (col + 1) * width))
            ids[window] = np.where(block > 0, block + shift, 0)
            teacher_types.update({i + shift: t for i, t in bundle.nuclei.teacher_types().items()})
            candidates += [MitosisCandidate(c.x + col * width, c.y + row * height, c.score)
                           for c in bundle.mitosis_candidates]
    return TeacherBundle(he=np.tile(bundle.he, (repeats, repeats, 1)),
                         tissue_logits=LogitStack(bundle.tissue_logits.channels,
                                                  np.tile(bundle.tissue_logits.planes, (1, repeats, repeats))),
                         cell_logits=LogitStack(bundle.cell_logits.channels,
                                                np.tile(bundle.cell_logits.planes, (1, repeats, repeats))),
                         nuclei=InstanceMap.from_labels(ids, teacher_types),
                         mitosis_candidates=candidates)


class TestAggregate(unittest.TestCase):
    def setUp(self):
        self.taxonomy = default_taxonomy()

    def test_matches_pixel_reference(self):
        for seed in range(100):
            with self.subTest(seed=seed):
                bundle, truth = synth_fixture(seed)
                result = aggregate(bundle)
                assert_same_result(self, result, truth)
                result.check_invariants()

    def test_reference_with_other_parameters(self):
        config = RunConfig(roi_radius=12, dark_statistic="fraction", connectivity=4, min_contour_area=5,
                           min_score=0.5, epithelial_fraction=0.3)
        for seed in range(100, 120):
            with self.subTest(seed=seed):
                bundle, truth = synth_fixture(seed, config)
                assert_same_result(self, aggregate(bundle, config), truth)

    def test_undefined_nuclei_keep_the_tissue_label(self):
        tissue = np.full((4, 4), 1, dtype=np.uint8)
        ids = np.zeros((4, 4), dtype=np.int64)
        ids[0, 0] = 1
        ids[3, 3] = 2
        semantic = combine_masks(tissue, InstanceMap.from_labels(ids), {1: UNDEFINED, 2: 7})
        self.assertEqual(int(semantic[0, 0]), 1)
        self.assertEqual(int(semantic[3, 3]), 7)

    def test_halo_is_cropped(self):
        bundle = render_bundle(random_scene(3, 80, 80))
        full = aggregate(bundle)
        bundle.halo = 8
        result = aggregate(bundle)
        self.assertEqual(result.shape, (64, 64))
        self.assertTrue(np.array_equal(result.semantic, full.semantic[8:72, 8:72]))
        self.assertTrue(set(result.classes) <= set(full.classes))
        for instance_id, class_id in result.classes.items():
            self.assertEqual(class_id, full.classes[instance_id])

    def test_invariant_check_detects_a_wrong_pixel(self):
        bundle, _ = synth_fixture(11)
        result = aggregate(bundle)
        defined = [i for i, c in result.classes.items() if c != UNDEFINED]
        if not defined:
            self.skipTest("scene without classified nuclei")
        y, x = np.argwhere(result.instances.ids == defined[0])[0]
        result.semantic[y, x] = self.taxonomy.resolve("background")
        with self.assertRaises(AssertionError):
            result.check_invariants()

    def test_provenance(self):
        bundle, _ = synth_fixture(4)
        result = aggregate(bundle)
        self.assertEqual(set(result.provenance), set(result.classes))
        for instance_id, decision in result.provenance.items():
            self.assertEqual(decision.final_class, result.classes[instance_id])
            if decision.mitosis_region is not None:
                self.assertEqual(decision.final_class, self.taxonomy.resolve("mitotic_cell"))
        self.assertEqual(len(result.candidate_reports), len(bundle.mitosis_candidates))


class TestTiledAggregation(unittest.TestCase):
    def test_tiled_equals_whole_frame(self):
        for seed in range(5):
            with self.subTest(seed=seed):
                bundle = render_bundle(random_scene(seed, 128, 128, max_nuclei=60, max_candidates=8))
                expected = aggregate(bundle, TILED_CONFIG)
                result = aggregate_tiled(bundle, TILED_CONFIG)
                assert_same_result(self, result, expected)
                result.check_invariants()

    def test_single_window(self):
        bundle = render_bundle(random_scene(8))
        assert_same_result(self, aggregate_tiled(bundle, plan=TilePlan(crop=64, stride=64)), aggregate(bundle))

    def test_worker_count_does_not_matter(self):
        bundle = render_bundle(random_scene(21, 96, 96, max_nuclei=40))
        reference = aggregate_tiled(bundle, TILED_CONFIG, workers=1)
        for workers in (4, 8):
            with self.subTest(workers=workers):
                assert_same_result(self, aggregate_tiled(bundle, TILED_CONFIG, workers=workers), reference)


@unittest.skipUnless(os.environ.get("PAGET_THROUGHPUT"), "set PAGET_THROUGHPUT=1 to time a 4096 x 4096 bundle")
class TestThroughput(unittest.TestCase):
    def test_large_bundle_scales_with_workers(self):
        tile = render_bundle(random_scene(31, 512, 512, max_nuclei=400, max_candidates=10))
        bundle = tiled_bundle(tile, 8)
        self.assertEqual(bundle.shape, (4096, 4096))
        self.assertEqual(len(bundle.cell_logits.channels), 10)
        config = RunConfig()
        warm_up = tiled_bundle(tile, 1)
        run_logging = RunLogging()
        for workers in (1, 4):
            aggregate_tiled(warm_up, config, workers=workers)
            with stage_timer(logger, f"aggregate_tiled {workers} worker(s)", run_logging):
                result = aggregate_tiled(bundle, config, workers=workers)
            self.assertEqual(result.shape, (4096, 4096))
        timings = run_logging.run_log["time tracking"]
        single, parallel = timings["aggregate_tiled 1 worker(s)"], timings["aggregate_tiled 4 worker(s)"]
        self.assertLess(single, 30.0)
        self.assertGreaterEqual(single / parallel, 3.0)


class TestResultOutput(unittest.TestCase):
    def setUp(self):
        self.taxonomy = default_taxonomy()
        self.bundle, _ = synth_fixture(2)
        self.result = aggregate(self.bundle)
        self.folder = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.folder.cleanup()

    def test_dataset_statistics(self):
        other = aggregate(synth_fixture(5)[0])
        statistics = dataset_statistics([self.result, other])
        self.assertEqual(statistics["tiles"], 2)
        self.assertEqual(sum(statistics["nuclei"].values()), len(self.result.classes) + len(other.classes))
        self.assertEqual(sum(statistics["pixels"].values()), 2 * 64 * 64)

    def test_save_result(self):
        path = os.path.join(self.folder.name, "result.tmef")
        save_result(self.result, path, mpp=0.5)
        records = load_stack(path)
        self.assertEqual([r.name for r in records], ["semantic", "nuclei", "tissue", "mitosis_regions"])
        self.assertTrue(np.array_equal(record_to_labels(find_record(records, "semantic")), self.result.semantic))
        instances, classes = record_to_instances(find_record(records, "nuclei"))
        self.assertTrue(np.array_equal(instances.ids, self.result.instances.ids))
        self.assertEqual(classes, self.result.classes)
        self.assertEqual(find_record(records, "semantic").mpp, 0.5)

    def test_bundle_round_trip(self):
        path = os.path.join(self.folder.name, "bundle.tmef")
        save_bundle(self.bundle, path)
        loaded = load_bundle(path)
        self.assertEqual(loaded.mitosis_candidates, self.bundle.mitosis_candidates)
        assert_same_result(self, aggregate(loaded), self.result)

    def test_summary(self):
        summary = result_summary(self.result)
        self.assertEqual(summary["shape"], [64, 64])
        self.assertEqual(len(summary["nuclei"]), len(self.result.classes))
        self.assertEqual(len(summary["mitosis candidates"]), len(self.bundle.mitosis_candidates))
        for entry in summary["nuclei"].values():
            self.assertIn(entry["final class"], self.taxonomy.names + ["undefined"])


if __name__ == '__main__':
    unittest.main()

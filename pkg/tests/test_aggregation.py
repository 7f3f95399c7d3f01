import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from aggregation.bundle import CELL_CHANNELS, TISSUE_CHANNELS, MitosisCandidate, TeacherBundle, downscale_bundle
from aggregation.fallback import fallback_rules, tissue_fractions
from aggregation.hierarchy import classify_nuclei, classify_nucleus
from aggregation.mitosis import apply_mitosis, circular_roi, detect_mitosis, rank_candidates
from aggregation.tissue import tissue_segmentation
from raster.containers import InstanceMap, LogitStack
from synthetic.reference import reference_pixel_class
from taxonomy.taxonomy import UNDEFINED, default_taxonomy
from utility.errors import MissingChannelError, RasterShapeError
from utility.run_config import RunConfig

GLASS = (238, 236, 242)
STROMA = (226, 170, 205)
NUCLEUS = (60, 40, 80)


def logit_stack(channels, shape, values=None, default=-1.0):
    planes = np.full((len(channels),) + shape, default, dtype=np.float32)
    for name, value in (values or {}).items():
        planes[channels.index(name)] = value
    return LogitStack(list(channels), planes)


def make_bundle(he, tissue=None, cell=None, ids=None, teacher_types=None, candidates=()):
    shape = he.shape[:2]
    ids = np.zeros(shape, dtype=np.int64) if ids is None else ids
    return TeacherBundle(he=he,
                         tissue_logits=logit_stack(TISSUE_CHANNELS, shape, tissue),
                         cell_logits=logit_stack(CELL_CHANNELS, shape, cell),
                         nuclei=InstanceMap.from_labels(ids, teacher_types),
                         mitosis_candidates=list(candidates))


def filled(shape, colour):
    he = np.empty(shape + (3,), dtype=np.uint8)
    he[:] = colour
    return he


class TestBundle(unittest.TestCase):
    def test_validate(self):
        bundle = make_bundle(filled((8, 8), STROMA))
        bundle.validate()
        bundle.mitosis_candidates = [MitosisCandidate(x=8, y=0)]
        with self.assertRaises(RasterShapeError):
            bundle.validate()

    def test_missing_channel(self):
        bundle = make_bundle(filled((8, 8), STROMA))
        bundle.cell_logits = logit_stack(CELL_CHANNELS[:-1], (8, 8))
        with self.assertRaises(MissingChannelError):
            bundle.validate()

    def test_halo_leaves_no_core(self):
        bundle = make_bundle(filled((8, 8), STROMA))
        bundle.halo = 4
        with self.assertRaises(RasterShapeError):
            bundle.validate()

    def test_crop_shifts_candidates(self):
        bundle = make_bundle(filled((20, 20), STROMA),
                             candidates=[MitosisCandidate(x=12, y=15), MitosisCandidate(x=2, y=2)])
        sub = bundle.crop((10, 10, 20, 20))
        self.assertEqual(sub.shape, (10, 10))
        self.assertEqual(sub.mitosis_candidates, [MitosisCandidate(x=2, y=5)])

    def test_downscale(self):
        ids = np.zeros((16, 16), dtype=np.int64)
        ids[4:8, 4:8] = 1
        bundle = make_bundle(filled((16, 16), STROMA), ids=ids, candidates=[MitosisCandidate(x=9, y=15)])
        bundle.mpp = 0.25
        small = downscale_bundle(bundle, 2)
        self.assertEqual(small.shape, (8, 8))
        self.assertEqual(small.mpp, 0.5)
        self.assertEqual(small.nuclei.attrs[1].pixel_count, 4)
        self.assertEqual(small.mitosis_candidates[0], MitosisCandidate(x=4, y=7))
        self.assertIs(downscale_bundle(bundle, 1), bundle)


class TestTissueSegmentation(unittest.TestCase):
    def setUp(self):
        self.taxonomy = default_taxonomy()

    def test_background_is_bright_glass(self):
        he = filled((32, 64), STROMA)
        he[:, :32] = GLASS
        labels, threshold = tissue_segmentation(make_bundle(he))
        self.assertTrue(200 <= threshold < 239)
        self.assertEqual(int(labels[10, 5]), self.taxonomy.resolve("background"))
        self.assertEqual(int(labels[10, 50]), self.taxonomy.resolve("stroma"))

    def test_configured_threshold(self):
        labels, threshold = tissue_segmentation(make_bundle(filled((16, 16), STROMA)), RunConfig(otsu_threshold=199))
        self.assertEqual(threshold, 199)
        self.assertTrue(np.all(labels == self.taxonomy.resolve("background")))

    def test_contested_pixels(self):
        shape = (8, 8)
        smooth_muscle = np.full(shape, -1.0)
        epithelial = np.full(shape, -1.0)
        smooth_muscle[0], epithelial[0] = 1.0, 2.0             # larger logit wins
        smooth_muscle[1], epithelial[1] = 1.5, 1.5             # tie to the lower id
        smooth_muscle[2], epithelial[2] = 3.0, -1.0
        red_blood_cell = np.full(shape, -1.0)
        red_blood_cell[:, 0] = 0.5
        bundle = make_bundle(filled(shape, STROMA), tissue={"smooth_muscle": smooth_muscle,
                                                            "epithelial_tissue": epithelial,
                                                            "red_blood_cell": red_blood_cell})
        labels, _ = tissue_segmentation(bundle, RunConfig(otsu_threshold=230))
        resolve = self.taxonomy.resolve
        self.assertEqual(int(labels[0, 4]), resolve("epithelial_tissue"))
        self.assertEqual(int(labels[1, 4]), resolve("smooth_muscle"))
        self.assertEqual(int(labels[2, 4]), resolve("smooth_muscle"))
        self.assertEqual(int(labels[5, 4]), resolve("stroma"))
        self.assertTrue(np.all(labels[:, 0] == resolve("red_blood_cell")))


class TestHierarchy(unittest.TestCase):
    def setUp(self):
        self.taxonomy = default_taxonomy()

    def classify(self, values):
        stack = logit_stack(CELL_CHANNELS, (1, 1), values)
        return classify_nucleus(np.array([[0, 0]]), stack).hierarchy_class

    def test_override_walk(self):
        resolve = self.taxonomy.resolve
        self.assertEqual(self.classify({"leukocyte": 1.0}), resolve("leukocyte"))
        self.assertEqual(self.classify({"leukocyte": 1.0, "lymphocyte": 0.5}), resolve("lymphocyte"))
        self.assertEqual(self.classify({"leukocyte": 1.0, "lymphocyte": 0.5, "eosinophil": 0.1}),
                         resolve("eosinophil"))
        self.assertEqual(self.classify({"epithelial_tissue": 2.0, "endothelial": 0.2}), resolve("endothelial"))
        self.assertEqual(self.classify({"lymphocyte": 2.0, "plasma_cell": 2.0}), resolve("lymphocyte"))
        self.assertEqual(self.classify({}), UNDEFINED)

    def test_zero_is_not_positive(self):
        self.assertEqual(self.classify({"leukocyte": 0.0}), UNDEFINED)

    def test_majority_vote(self):
        shape = (1, 5)
        leukocyte = np.array([[1.0, 1.0, 1.0, -1.0, -1.0]])
        lymphocyte = np.array([[1.0, 1.0, -1.0, -1.0, -1.0]])
        stack = logit_stack(CELL_CHANNELS, shape, {"leukocyte": leukocyte, "lymphocyte": lymphocyte})
        decision = classify_nucleus(np.array([[0, c] for c in range(5)]), stack)
        # lymphocyte 2, leukocyte 1, undefined 2
        self.assertEqual(decision.hierarchy_class, self.taxonomy.resolve("lymphocyte"))
        self.assertEqual(decision.votes, {UNDEFINED: 2, 4: 1, 7: 2})
        self.assertEqual(decision.level_winners, [None, 4, 7, None])

    def test_undefined_needs_strict_plurality(self):
        shape = (1, 5)
        leukocyte = np.array([[1.0, 1.0, -1.0, -1.0, -1.0]])
        stack = logit_stack(CELL_CHANNELS, shape, {"leukocyte": leukocyte})
        decision = classify_nucleus(np.array([[0, c] for c in range(5)]), stack)
        self.assertEqual(decision.hierarchy_class, UNDEFINED)
        decision = classify_nucleus(np.array([[0, c] for c in range(4)]), stack)
        self.assertEqual(decision.hierarchy_class, self.taxonomy.resolve("leukocyte"))

    def test_defined_ties_go_to_the_lower_id(self):
        stack = logit_stack(CELL_CHANNELS, (1, 2), {"plasma_cell": np.array([[1.0, -1.0]]),
                                                    "lymphocyte": np.array([[-1.0, 1.0]])})
        decision = classify_nucleus(np.array([[0, 0], [0, 1]]), stack)
        self.assertEqual(decision.hierarchy_class, self.taxonomy.resolve("lymphocyte"))

    def test_random_pixels_against_reference(self):
        rng = np.random.default_rng(5)
        shape = (100, 100)
        planes = rng.normal(-0.5, 1.0, size=(len(CELL_CHANNELS),) + shape)
        stack = LogitStack(list(CELL_CHANNELS), planes)
        nuclei = InstanceMap.from_labels(np.arange(1, 10001).reshape(shape))
        decisions = classify_nuclei(nuclei, stack)
        self.assertEqual(len(decisions), 10000)

        scaled = classify_nuclei(nuclei, LogitStack(list(CELL_CHANNELS), stack.planes * 4.0))
        for instance_id, decision in decisions.items():
            y, x = divmod(instance_id - 1, 100)
            expected = reference_pixel_class(stack, y, x, self.taxonomy)
            self.assertEqual(decision.hierarchy_class, expected)
            self.assertEqual(scaled[instance_id].hierarchy_class, expected)
            positive_levels = [level for level, winner in enumerate(decision.level_winners, start=1)
                               if winner is not None]
            if positive_levels:
                self.assertEqual(self.taxonomy.level_of(expected), max(positive_levels))
            else:
                self.assertEqual(expected, UNDEFINED)

    def test_positive_deepest_level_overrides(self):
        rng = np.random.default_rng(11)
        shape = (100, 100)
        planes = rng.normal(-0.5, 1.0, size=(len(CELL_CHANNELS),) + shape)
        nuclei = InstanceMap.from_labels(np.arange(1, 10001).reshape(shape))
        before = classify_nuclei(nuclei, LogitStack(list(CELL_CHANNELS), planes))
        for name in ("eosinophil", "neutrophil"):
            raised = planes.copy()
            index = CELL_CHANNELS.index(name)
            raised[index] = np.abs(raised[index]) + 0.1
            after = classify_nuclei(nuclei, LogitStack(list(CELL_CHANNELS), raised))
            channel = self.taxonomy.resolve(name)
            for instance_id, decision in after.items():
                self.assertIn(decision.hierarchy_class, (before[instance_id].hierarchy_class, channel))

    def test_nonpositive_logits_leave_nuclei_undefined(self):
        rng = np.random.default_rng(12)
        shape = (100, 100)
        planes = -np.abs(rng.normal(0.0, 1.0, size=(len(CELL_CHANNELS),) + shape))
        planes[:, ::7, ::7] = 0.0
        nuclei = InstanceMap.from_labels(np.arange(1, 10001).reshape(shape))
        decisions = classify_nuclei(nuclei, LogitStack(list(CELL_CHANNELS), planes))
        self.assertEqual(len(decisions), 10000)
        self.assertTrue(all(d.hierarchy_class == UNDEFINED for d in decisions.values()))

    def test_empty_instance_map(self):
        stack = logit_stack(CELL_CHANNELS, (3, 3))
        self.assertEqual(classify_nuclei(InstanceMap.from_labels(np.zeros((3, 3))), stack), {})


class TestFallback(unittest.TestCase):
    def setUp(self):
        self.taxonomy = default_taxonomy()
        resolve = self.taxonomy.resolve
        self.tissue = np.full((4, 10), resolve("stroma"), dtype=np.uint8)
        self.tissue[:, :4] = resolve("epithelial_tissue")
        ids = np.zeros((4, 10), dtype=np.int64)
        ids[0, 0:2] = 1            # epithelium
        ids[1, 0:2] = 2            # epithelium
        ids[0, 6:8] = 3            # stroma
        ids[1, 6:8] = 4            # stroma
        ids[2, 3:5] = 5            # half on epithelium, half on stroma
        ids[3, 6:8] = 6
        self.nuclei = InstanceMap.from_labels(ids, {1: "neoplastic", 2: "neoplastic", 3: "connective",
                                                    4: "inflammatory", 5: "connective", 6: "connective"})

    def test_tissue_fractions(self):
        fractions = tissue_fractions(self.nuclei, self.tissue, len(self.taxonomy))
        self.assertEqual(fractions[5][self.taxonomy.resolve("epithelial_tissue")], 0.5)
        self.assertEqual(fractions[3][self.taxonomy.resolve("stroma")], 1.0)

    def test_rules(self):
        resolve = self.taxonomy.resolve
        classes = {1: resolve("epithelial_tissue"), 2: UNDEFINED, 3: UNDEFINED, 4: UNDEFINED, 5: UNDEFINED,
                   6: resolve("lymphocyte")}
        updated, fired = fallback_rules(self.nuclei, classes, self.tissue)
        self.assertEqual(updated[1], resolve("epithelial_cell_nucleus"))
        self.assertEqual(updated[2], resolve("epithelial_cell_nucleus"))
        self.assertEqual(updated[3], resolve("fibroblast"))
        self.assertEqual(updated[4], UNDEFINED)
        self.assertEqual(updated[5], UNDEFINED)
        self.assertEqual(updated[6], resolve("lymphocyte"))
        self.assertEqual(fired, {1: "epithelial vote", 2: "epithelial tissue", 3: "connective in stroma"})

    def test_lower_fraction(self):
        classes = {5: UNDEFINED}
        updated, _ = fallback_rules(self.nuclei, classes, self.tissue, RunConfig(stroma_fraction=0.4))
        self.assertEqual(updated[5], self.taxonomy.resolve("fibroblast"))


class TestMitosis(unittest.TestCase):
    def setUp(self):
        self.taxonomy = default_taxonomy()
        self.config = RunConfig(roi_radius=10)
        self.he = filled((40, 40), STROMA)
        self.epithelial = np.full((40, 40), self.taxonomy.resolve("epithelial_tissue"), dtype=np.uint8)

    def test_roi_is_clipped(self):
        box, roi = circular_roi((0, 0), 10, (40, 40))
        self.assertEqual(box, (0, 0, 11, 11))
        expected = sum(1 for dy in range(11) for dx in range(11) if dy * dy + dx * dx <= 100)
        self.assertEqual(int(roi.sum()), expected)
        _, roi = circular_roi((20, 20), 10, (40, 40))
        self.assertEqual(int(roi.sum()), sum(1 for dy in range(-10, 11) for dx in range(-10, 11)
                                             if dy * dy + dx * dx <= 100))

    def test_dark_blob_becomes_a_region(self):
        self.he[19:22, 19:22] = NUCLEUS
        regions, reports = detect_mitosis([MitosisCandidate(x=20, y=20)], self.he, self.epithelial, self.config)
        expected = np.zeros((40, 40), dtype=bool)
        expected[19:22, 19:22] = True
        self.assertTrue(np.array_equal(regions > 0, expected))
        self.assertEqual(reports[0].status, "kept")
        self.assertEqual(reports[0].region_id, 1)

    def test_small_contours_are_dropped(self):
        self.he[20, 20:22] = NUCLEUS
        regions, reports = detect_mitosis([MitosisCandidate(x=20, y=20)], self.he, self.epithelial, self.config)
        self.assertFalse(regions.any())
        self.assertEqual(reports[0].status, "no epithelial hull")
        self.he[20, 22] = NUCLEUS
        regions, _ = detect_mitosis([MitosisCandidate(x=20, y=20)], self.he, self.epithelial, self.config)
        self.assertEqual(int(regions.astype(bool).sum()), 3)

    def test_dark_roi_is_rejected(self):
        he = filled((40, 40), (12, 10, 12))
        he[19:22, 19:22] = NUCLEUS
        regions, reports = detect_mitosis([MitosisCandidate(x=20, y=20)], he, self.epithelial, self.config)
        self.assertFalse(regions.any())
        self.assertEqual(reports[0].status, "dark")

    def test_dark_statistics(self):
        he = filled((40, 40), STROMA)
        he[:, :20] = (12, 10, 12)
        candidate = [MitosisCandidate(x=19, y=20)]
        for statistic, dark in (("median", True), ("mean", False), ("fraction", True)):
            config = RunConfig(roi_radius=10, dark_statistic=statistic)
            _, reports = detect_mitosis(candidate, he, self.epithelial, config)
            self.assertEqual(reports[0].status == "dark", dark, statistic)

    def test_uniform_roi(self):
        _, reports = detect_mitosis([MitosisCandidate(x=20, y=20)], self.he, self.epithelial, self.config)
        self.assertEqual(reports[0].status, "uniform roi")

    def test_hull_has_to_touch_epithelium(self):
        self.he[19:22, 19:22] = NUCLEUS
        stroma = np.full((40, 40), self.taxonomy.resolve("stroma"), dtype=np.uint8)
        regions, reports = detect_mitosis([MitosisCandidate(x=20, y=20)], self.he, stroma, self.config)
        self.assertFalse(regions.any())
        self.assertEqual(reports[0].status, "no epithelial hull")
        stroma[21, 21] = self.taxonomy.resolve("epithelial_tissue")
        regions, _ = detect_mitosis([MitosisCandidate(x=20, y=20)], self.he, stroma, self.config)
        self.assertEqual(int((regions > 0).sum()), 9)

    def test_low_score(self):
        self.he[19:22, 19:22] = NUCLEUS
        _, reports = detect_mitosis([MitosisCandidate(x=20, y=20, score=0.2)], self.he, self.epithelial,
                                    RunConfig(roi_radius=10, min_score=0.5))
        self.assertEqual(reports[0].status, "score below minimum")

    def test_overlapping_regions_keep_the_lowest_id(self):
        self.he[19:22, 19:22] = NUCLEUS
        candidates = [MitosisCandidate(x=21, y=21), MitosisCandidate(x=20, y=20)]
        self.assertEqual(rank_candidates(candidates), [2, 1])
        regions, reports = detect_mitosis(candidates, self.he, self.epithelial, self.config)
        self.assertEqual(set(np.unique(regions).tolist()), {0, 1})
        reversed_regions, _ = detect_mitosis(candidates[::-1], self.he, self.epithelial, self.config)
        self.assertTrue(np.array_equal(regions, reversed_regions))
        self.assertEqual([r.region_id for r in reports], [1, 2])

    def test_apply_mitosis(self):
        regions = np.zeros((6, 6), dtype=np.int32)
        regions[2:4, 2:5] = 2
        regions[3, 3] = 1
        ids = np.zeros((6, 6), dtype=np.int64)
        ids[3:5, 3:5] = 1
        ids[0, 0] = 2
        nuclei = InstanceMap.from_labels(ids)
        lymphocyte = self.taxonomy.resolve("lymphocyte")
        updated, touched = apply_mitosis({1: lymphocyte, 2: lymphocyte}, nuclei, regions)
        self.assertEqual(updated, {1: self.taxonomy.resolve("mitotic_cell"), 2: lymphocyte})
        self.assertEqual(touched, {1: 1})


if __name__ == '__main__':
    unittest.main()

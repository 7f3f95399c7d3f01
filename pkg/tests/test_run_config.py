import os
import sys
import tempfile
import unittest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from utility.errors import ConfigError
from utility.provenance import config_hash, file_hash, provenance_record
from utility.run_config import RunConfig
from utility.run_logging import RunLogging
from utility.time_tracking import hms_string

STEERING_FOLDER = os.path.join(os.path.dirname(__file__), "..", "steering_files", "paget")


class TestRunConfig(unittest.TestCase):
    def test_defaults(self):
        config = RunConfig()
        self.assertEqual(config.roi_radius, 30)
        self.assertEqual(config.dark_sum_threshold, 40)
        self.assertEqual(config.min_contour_area, 3)
        self.assertEqual(config.margin_um, 50.0)
        self.assertEqual((config.crop, config.stride), (384, 320))

    def test_default_steering_file_matches_defaults(self):
        config = RunConfig.from_steering_file(os.path.join(STEERING_FOLDER, "default.yaml"))
        self.assertEqual(config, RunConfig())

    def test_whole_slide_steering_file(self):
        config = RunConfig.from_steering_file(os.path.join(STEERING_FOLDER, "whole_slide_40x.yaml"))
        self.assertEqual(config.otsu_threshold, 215)
        self.assertEqual(config.downscale, 2)
        self.assertEqual(config.mpp, 0.25)
        self.assertEqual(config.gaussian_sigma, 2.0)

    def test_to_dict_round_trip(self):
        config = RunConfig(roi_radius=12, mpp=0.5, workers=3)
        self.assertEqual(RunConfig.from_dict(config.to_dict()), config)

    def test_unknown_key(self):
        with self.assertRaises(ConfigError):
            RunConfig.from_dict({"mitosis": {"roi radius": 30, "roi diameter": 60}})

    def test_tie_rule_is_not_a_parameter(self):
        self.assertNotIn("tissue", RunConfig().to_dict())
        self.assertFalse(hasattr(RunConfig(), "tie_rule"))
        with self.assertRaises(ConfigError):
            RunConfig.from_dict({"tissue": {"tie rule": "ascending id"}})

    def test_invalid_value_names_the_field(self):
        with self.assertRaises(ConfigError) as context:
            RunConfig.from_dict({"mitosis": {"dark statistic": "max"}})
        self.assertIn("dark_statistic", str(context.exception))
        with self.assertRaises(ConfigError):
            RunConfig(stride=500)
        with self.assertRaises(ConfigError):
            RunConfig(downscale=4)

    def test_overlapping_class_partition(self):
        with self.assertRaises(ConfigError):
            RunConfig(nucleus_classes=("lymphocyte",), non_nucleus_classes=("stroma", "lymphocyte"))

    def test_unreadable_steering_file(self):
        with self.assertRaises(ConfigError):
            RunConfig.from_steering_file("/nonexistent/steering.yaml")

    def test_environment_override(self):
        config = RunConfig(workers=2)
        self.assertEqual(config.with_environment({"PAGET_WORKERS": "8"}).workers, 8)
        self.assertEqual(config.with_environment({}).workers, 2)
        with self.assertRaises(ConfigError):
            config.with_environment({"PAGET_WORKERS": "many"})
        with self.assertRaises(ConfigError):
            config.with_environment({"PAGET_WORKERS": "0"})


class TestProvenance(unittest.TestCase):
    def test_config_hash_changes_with_any_value(self):
        reference = config_hash(RunConfig().to_dict())
        self.assertEqual(config_hash(RunConfig().to_dict()), reference)
        self.assertNotEqual(config_hash(RunConfig(min_contour_area=4).to_dict()), reference)
        self.assertNotEqual(config_hash(RunConfig(gaussian_sigma=2.5).to_dict()), reference)

    def test_file_hash_changes_with_any_byte(self):
        with tempfile.TemporaryDirectory() as folder:
            path = os.path.join(folder, "input.bin")
            with open(path, "wb") as f:
                f.write(b"\x00" * 1000)
            first = file_hash(path)
            with open(path, "r+b") as f:
                f.seek(500)
                f.write(b"\x01")
            self.assertNotEqual(file_hash(path), first)
            record = provenance_record(RunConfig().to_dict(), [path])
        self.assertEqual(set(record), {"version", "python", "config_sha256", "inputs"})
        self.assertEqual(len(record["inputs"]), 1)


class TestRunLogging(unittest.TestCase):
    def test_entries_and_file(self):
        run_logging = RunLogging()
        run_logging.set_value("command", "aggregate")
        run_logging.add_entry("time tracking", "aggregation", 1.5)
        run_logging.increment("nuclei", 3)
        run_logging.increment("nuclei")
        self.assertEqual(run_logging.run_log["counters"]["nuclei"], 4)
        with tempfile.TemporaryDirectory() as folder:
            path = run_logging.save_results(folder)
            self.assertTrue(path.is_file())
            self.assertEqual(path.name, "run_log.json")

    def test_hms_string(self):
        self.assertEqual(hms_string(3723.5), "1:02:03.50")
        self.assertEqual(hms_string(0.25), "0:00:00.25")


if __name__ == '__main__':
    unittest.main()

# GraphicalMTPOptimizer/tests/test_storage.py

import logging
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd

from src.errors import ConfigError
from src.storage import (
    LOCK,
    digest,
    find_artifact,
    load_frame,
    load_json,
    load_manifest,
    locked_output_dir,
    record_artifact,
    save_frame,
    save_json,
    setup_output_dir,
)

# Keep stale-artifact messages out of the test output.
logging.getLogger().setLevel(logging.WARNING)


class TestOutputDirectory(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name) / "run"

    def tearDown(self):
        self.tmp.cleanup()

    def test_second_pipeline_is_refused(self):
        """
        A locked directory cannot be opened again until the lock is released.
        """
        with locked_output_dir(self.out):
            self.assertTrue((self.out / LOCK).exists(), "The lock file should exist while the run holds it.")
            with self.assertRaises(ConfigError):
                setup_output_dir(self.out)
        self.assertFalse((self.out / LOCK).exists(), "The lock file should be removed on exit.")
        with locked_output_dir(self.out):
            pass

    def test_lock_released_on_error(self):
        with self.assertRaises(RuntimeError):
            with locked_output_dir(self.out):
                raise RuntimeError("stage failed")
        self.assertFalse((self.out / LOCK).exists())


class TestManifest(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_record_and_find(self):
        path = save_json({"value": 1}, self.out / "stage.json")
        record_artifact(self.out, "stage", path, "abc123", "stage", 1.25)
        entry = find_artifact(self.out, "stage", "abc123")
        self.assertIsNotNone(entry)
        self.assertEqual(entry["path"], "stage.json")
        self.assertEqual(entry["elapsed_seconds"], 1.25)

    def test_stale_digest(self):
        path = save_json({"value": 1}, self.out / "stage.json")
        record_artifact(self.out, "stage", path, "abc123", "stage", 0.5)
        self.assertIsNone(find_artifact(self.out, "stage", "def456"), "A different digest must not be reused.")

    def test_missing_file(self):
        path = save_json({"value": 1}, self.out / "stage.json")
        record_artifact(self.out, "stage", path, "abc123", "stage", 0.5)
        path.unlink()
        self.assertIsNone(find_artifact(self.out, "stage", "abc123"))

    def test_empty_manifest(self):
        self.assertEqual(load_manifest(self.out), {"artifacts": {}})
        self.assertIsNone(find_artifact(self.out, "panel", "abc123"))

    def test_replacing_an_entry(self):
        path = save_json({}, self.out / "stage.json")
        record_artifact(self.out, "stage", path, "first", "stage", 1.0)
        record_artifact(self.out, "stage", path, "second", "stage", 2.0, rows=10)
        entry = load_manifest(self.out)["artifacts"]["stage"]
        self.assertEqual(entry["digest"], "second")
        self.assertEqual(entry["rows"], 10)


class TestSerialization(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_frames_read_back_exactly(self):
        rng = np.random.default_rng(1)
        frame = pd.DataFrame({"x": rng.uniform(size=50) / 3.0, "y": rng.normal(size=50) * 1e-7, "label": "a"})
        loaded = load_frame(save_frame(frame, self.out / "table.csv"))
        np.testing.assert_array_equal(loaded["x"].to_numpy(), frame["x"].to_numpy())
        np.testing.assert_array_equal(loaded["y"].to_numpy(), frame["y"].to_numpy())

    def test_json_numpy_values(self):
        path = save_json({"v": np.array([0.1, 0.2]), "k": np.int64(3)}, self.out / "data.json")
        self.assertEqual(load_json(path), {"v": [0.1, 0.2], "k": 3})

    def test_unreadable_json(self):
        bad = self.out / "bad.json"
        bad.write_text("{not json")
        with self.assertRaises(ConfigError):
            load_json(bad)
        with self.assertRaises(ConfigError):
            load_json(self.out / "missing.json")

    def test_digest(self):
        self.assertEqual(digest("panel", {"b": 1, "a": 2}), digest("panel", {"a": 2, "b": 1}))
        self.assertNotEqual(digest("panel", 1), digest("panel", 2))
        self.assertEqual(len(digest(np.arange(3))), 16)


if __name__ == '__main__':
    unittest.main()

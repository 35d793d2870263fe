#!/usr/bin/env python3.10
import os
import sys
import tempfile
import unittest
from pathlib import Path

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..")))

import numpy as np

from common_utilities import (
    create_logfile,
    get_paths,
    read_json,
    read_jsonl,
    set_paths,
    sha256_file,
    write_json,
    write_jsonl,
    iter_jsonl_lines,
)


class FilesHandlerTests(unittest.TestCase):
    def test_json_is_byte_stable_with_sorted_keys(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            first, second = Path(tmpdir) / "a.json", Path(tmpdir) / "nested" / "b.json"
            write_json({"b": 1, "a": [1.5, 2]}, first)
            write_json({"a": [1.5, 2], "b": 1}, second)
            self.assertEqual(first.read_bytes(), second.read_bytes())
            self.assertEqual(sha256_file(first), sha256_file(second))
            self.assertEqual(read_json(first), {"a": [1.5, 2], "b": 1})

    def test_numpy_values_serialize(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "arr.json"
            write_json({"values": np.arange(3)}, path)
            self.assertEqual(read_json(path)["values"], [0, 1, 2])

    def test_jsonl_line_numbers_skip_blank_lines(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "lines.jsonl"
            write_jsonl([{"x": 1}, {"x": 2}], path)
            with open(path, "a") as handle:
                handle.write("\n{\"x\": 3}\n")
            self.assertEqual([number for number, _ in iter_jsonl_lines(path)], [1, 2, 4])
            self.assertEqual([row["x"] for row in read_jsonl(path)], [1, 2, 3])

    def test_read_json_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            read_json("/nonexistent/definitely/missing.json")

    def test_logfile_lives_under_logs_root(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            previous = dict(get_paths())
            try:
                set_paths({"LOGS_ROOT_PATH": tmpdir})
                path = create_logfile("Unit_Logs")
                self.assertEqual(Path(path), Path(tmpdir) / "logs" / "Unit_Logs.log")
                self.assertTrue((Path(tmpdir) / "logs").is_dir())
            finally:
                get_paths().clear()
                set_paths(previous)


if __name__ == "__main__":
    unittest.main()

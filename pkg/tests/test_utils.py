import json
import logging
import os
import sys
import tempfile
import unittest

import numpy as np
import pandas as pd

# Add the project path to sys.path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from trex_nbr.utils import (IngestionError, derive_seed, file_sha256, rank_by_score, setup_logging, write_csv,
                            write_excel, write_json, write_jsonl)


class TestHelpers(unittest.TestCase):
    """Tests for seeding, ranking and error helpers."""

    def test_derive_seed_is_stable(self):
        """Test that derived seeds depend only on (seed, key)."""
        self.assertEqual(derive_seed(7, 'u1'), derive_seed(7, 'u1'))
        self.assertNotEqual(derive_seed(7, 'u1'), derive_seed(7, 'u2'))
        self.assertNotEqual(derive_seed(7, 'u1'), derive_seed(8, 'u1'))
        self.assertLess(derive_seed(7, 'u1'), 2 ** 64)

    def test_rank_by_score_breaks_ties_by_id(self):
        """Test descending score order with ascending id among ties."""
        scores = {'b': 1.0, 'a': 1.0, 'c': 2.0, 'd': 0.5}
        self.assertEqual(rank_by_score(scores), ['c', 'a', 'b', 'd'])

    def test_ingestion_error_names_file_and_line(self):
        """Test the error message carries path and line."""
        error = IngestionError('data/baskets.jsonl', 3, 'empty basket at line 3')
        self.assertEqual(str(error), 'data/baskets.jsonl:3: empty basket at line 3')
        self.assertEqual(error.line, 3)
        self.assertEqual(str(IngestionError('x.csv', reason='missing file')), 'x.csv: missing file')

    def test_setup_logging_sets_package_level(self):
        """Test that the package logger follows the configured level."""
        logger = setup_logging('warning')
        self.assertEqual(logger.name, 'trex_nbr')
        self.assertEqual(logger.level, logging.WARNING)
        setup_logging('INFO')


class TestWriters(unittest.TestCase):
    """Tests for the atomic output writers."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = self.tmp.name

    def test_write_json_sorts_keys_and_handles_numpy(self):
        """Test JSON output is canonical and accepts numpy scalars and sets."""
        path = write_json(os.path.join(self.dir, 'sub', 'out.json'), {'b': np.float64(0.5), 'a': {'y', 'x'}})
        text = open(path, encoding='utf-8').read()
        self.assertTrue(text.index('"a"') < text.index('"b"'))
        self.assertEqual(json.loads(text), {'a': ['x', 'y'], 'b': 0.5})

    def test_atomic_write_leaves_no_temp_files(self):
        """Test that only the target file remains after a write."""
        write_jsonl(os.path.join(self.dir, 'rows.jsonl'), [{'user': 'u1'}, {'user': 'u2'}])
        self.assertEqual(os.listdir(self.dir), ['rows.jsonl'])
        with open(os.path.join(self.dir, 'rows.jsonl'), encoding='utf-8') as handle:
            self.assertEqual(len(handle.readlines()), 2)

    def test_write_csv_is_byte_stable(self):
        """Test that the same frame hashes identically twice."""
        frame = pd.DataFrame({'metric': ['recall@10'], 'value': [1 / 3]})
        first = file_sha256(write_csv(os.path.join(self.dir, 'a.csv'), frame))
        second = file_sha256(write_csv(os.path.join(self.dir, 'b.csv'), frame))
        self.assertEqual(first, second)
        self.assertIn('0.3333333333', open(os.path.join(self.dir, 'a.csv')).read())

    def test_write_excel_one_sheet_per_frame(self):
        """Test the workbook holds every frame as a sheet."""
        path = write_excel(os.path.join(self.dir, 'report.xlsx'), {
            'aggregate': pd.DataFrame({'value': [1.0, 2.0]}),
            'per_user': pd.DataFrame({'user_id': ['u1']}),
        })
        sheets = pd.read_excel(path, sheet_name=None, engine='openpyxl')
        self.assertEqual(sorted(sheets), ['aggregate', 'per_user'])
        self.assertEqual(list(sheets['aggregate']['value']), [1.0, 2.0])


if __name__ == '__main__':
    unittest.main()

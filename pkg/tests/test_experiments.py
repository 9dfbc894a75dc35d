import math
import os
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
from scipy import stats

# Add the project path to sys.path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from tests.fixtures import synthetic_split
from trex_nbr.baselines import p_topfreq
from trex_nbr.config import MethodConfig
from trex_nbr.corpus import SplitDataset
from trex_nbr.experiments import (GridSpec, RunManifest, ablation_rep, accuracy_summary, compare_methods,
                                  default_v_grid, frontier_frame, grid_search, paired_ttest, sample_ratio_sweep,
                                  sweep_threshold, write_frontiers, write_report)
from trex_nbr.metrics import EvaluationSettings, group_assignment
from trex_nbr.trex import ExplorationPolicy, fit_repetition

SMALL_GRID = {'alpha': [0.0, 0.5], 'beta': [0.9, 1.0]}


class TestGridSearch(unittest.TestCase):
    """Tests for validation grid search."""

    @classmethod
    def setUpClass(cls):
        cls.split = synthetic_split()

    def test_singleton_grid(self):
        result = grid_search(GridSpec('trex_rep', {'alpha': [0.5], 'beta': [0.9]}), self.split, k=5)
        self.assertEqual(dict(result.best_params), {'alpha': 0.5, 'beta': 0.9})
        self.assertEqual(len(result.table), 1)
        self.assertTrue(result.table['selected'].iloc[0])

    def test_best_dominates_table(self):
        """Test the selected cell carries the highest validation score."""
        result = grid_search(GridSpec('trex_rep', SMALL_GRID), self.split, k=5)
        self.assertEqual(len(result.table), 4)
        self.assertAlmostEqual(result.best_score, result.table['recall@5'].max())
        selected = result.table[result.table['selected']].iloc[0]
        self.assertEqual({'alpha': selected['alpha'], 'beta': selected['beta']}, dict(result.best_params))

    def test_ties_go_to_first_configuration(self):
        result = grid_search(GridSpec('trex_rep', {'alpha': [0.3, 0.3], 'beta': [0.9]}), self.split, k=5)
        self.assertEqual(list(result.table['selected']), [True, False])

    def test_test_targets_never_read(self):
        """Test replacing every test target leaves the search unchanged."""
        targets = dict(self.split.targets)
        for user in self.split.test_users:
            targets[user] = ('not-an-item',)
        scrambled = SplitDataset(self.split.train, self.split.validation_users, self.split.test_users, targets,
                                 self.split.seed)
        spec = GridSpec('trex_rep', SMALL_GRID)
        first = grid_search(spec, self.split, k=5)
        second = grid_search(spec, scrambled, k=5)
        self.assertEqual(dict(first.best_params), dict(second.best_params))
        self.assertEqual(first.best_score, second.best_score)

    def test_grid_validation(self):
        with self.assertRaises(ValueError):
            GridSpec('trex_rep', {'alpha': []})
        with self.assertRaises(ValueError):
            GridSpec('trex_rep', SMALL_GRID, selection_metric='ild')
        self.assertEqual(len(GridSpec.default('upcf').configurations()), 6 * 6 * 5)

    def test_writes_validation_table(self):
        with tempfile.TemporaryDirectory() as directory:
            grid_search(GridSpec('trex_rep', SMALL_GRID), self.split, k=5, output_dir=directory)
            self.assertTrue((Path(directory) / 'validation_trex_rep.csv').exists())


class TestThresholdSweep(unittest.TestCase):
    """Tests for the repetition-threshold sweep."""

    @classmethod
    def setUpClass(cls):
        cls.split = synthetic_split()
        cls.model = fit_repetition(cls.split.train, 0.5, 0.9)
        cls.groups = group_assignment(cls.split.train)
        cls.policy = ExplorationPolicy.build('fairness', cls.split.train, cls.groups, seed=3)

    def test_explore_slots_grow_with_v(self):
        histories = self.split.histories(self.split.test_users)
        v_values = default_v_grid(self.model, histories, [0.0, 0.25, 0.5, 0.75, 1.0])
        self.assertGreater(v_values[-1], v_values[-2])
        points = sweep_threshold(self.model, self.policy, v_values, self.split, k=10)
        self.assertEqual([p.v for p in points], v_values)
        slots = [p.explore_slots for p in points]
        self.assertEqual(slots, sorted(slots))
        self.assertEqual(points[-1].explore_slots, 10.0)
        for point in points:
            self.assertAlmostEqual(point.repeat_slots + point.explore_slots, 10.0)
            self.assertIn('logdp@10', point.metrics)

    def test_unsorted_thresholds_rejected(self):
        with self.assertRaises(ValueError):
            sweep_threshold(self.model, self.policy, [1.0, 0.5], self.split)

    def test_write_frontiers(self):
        points = sweep_threshold(self.model, self.policy, [0.0, 1.0], self.split, k=10)
        with tempfile.TemporaryDirectory() as directory:
            written = write_frontiers(points, directory, 10, ['logdp', 'ild', 'unknown'], policy='fairness')
            names = sorted(path.name for path in written)
            self.assertEqual(names, ['frontier.csv', 'frontier_ild.csv', 'frontier_logdp.csv'])
            self.assertTrue((Path(directory) / 'frontier_logdp.html').exists())
        self.assertEqual(list(frontier_frame(points)['v']), [0.0, 1.0])


class TestAblations(unittest.TestCase):
    """Tests for the repetition-module ablation and sample-ratio sweep."""

    @classmethod
    def setUpClass(cls):
        cls.split = synthetic_split()

    def test_base_variant_is_personal_frequency(self):
        """Test the base row reproduces P-TopFreq accuracy."""
        table = ablation_rep(self.split, k=5, grid=SMALL_GRID)
        self.assertEqual(list(table['variant']), ['base', '+T', '+T+RF'])
        histories = self.split.histories(self.split.test_users)
        recs = [p_topfreq(history, 5, user) for user, history in histories.items()]
        expected = accuracy_summary(recs, self.split.test_targets(), 5)
        base = table.iloc[0]
        for key, value in expected.items():
            self.assertAlmostEqual(base[key], value)

    def test_sample_ratio_rows(self):
        table = sample_ratio_sweep(self.split, k=5, ratios=(0.5, 1.0), seed=1, grid=SMALL_GRID)
        self.assertEqual(list(table['ratio']), [0.5, 1.0])
        self.assertEqual(table['n_feature_users'].iloc[-1], self.split.train.n_users)
        self.assertLess(table['n_feature_users'].iloc[0], self.split.train.n_users)
        for _, row in table.iterrows():
            self.assertAlmostEqual(row['gain'], row['recall@5 +T+RF'] - row['recall@5 +T'])


class TestPairedTTest(unittest.TestCase):
    """Tests for the paired significance test."""

    def test_identical_runs(self):
        values = {'u1': 0.5, 'u2': 0.25, 'u3': 1.0}
        result = paired_ttest(values, dict(values))
        self.assertEqual(result.t, 0.0)
        self.assertEqual(result.p, 1.0)
        self.assertTrue(result.degenerate)
        self.assertFalse(result.significant)

    def test_constant_shift_is_degenerate(self):
        a = {'u1': 1.0, 'u2': 2.0, 'u3': 3.0}
        result = paired_ttest(a, {u: v - 1.0 for u, v in a.items()})
        self.assertEqual(result.t, math.inf)
        self.assertEqual(result.p, 0.0)

    def test_matches_textbook_formula(self):
        """Test t and p on five pairs against mean(d) / (sd(d) / sqrt(n))."""
        a = dict(zip('abcde', [1.0, 2.0, 3.0, 4.0, 5.0]))
        b = dict(zip('abcde', [0.5, 2.5, 2.0, 3.0, 4.5]))
        diff = np.array([a[u] - b[u] for u in 'abcde'])
        t = diff.mean() / (diff.std(ddof=1) / math.sqrt(5))
        p = 2 * stats.t.sf(abs(t), df=4)
        result = paired_ttest(a, b)
        self.assertAlmostEqual(result.t, t)
        self.assertAlmostEqual(result.p, p)
        self.assertAlmostEqual(result.mean_diff, 0.5)
        self.assertEqual(result.n, 5)
        swapped = paired_ttest(b, a)
        self.assertAlmostEqual(swapped.t, -t)
        self.assertAlmostEqual(swapped.p, p)

    def test_nan_pairs_dropped(self):
        a = dict(zip('abcde', [1.0, 2.0, 3.0, 4.0, 5.0]))
        b = dict(zip('abcde', [0.5, 2.5, 2.0, 3.0, 4.5]))
        full = paired_ttest(a, b)
        with_nan = paired_ttest({**a, 'f': float('nan')}, {**b, 'f': 0.3})
        self.assertEqual(with_nan.n, 5)
        self.assertAlmostEqual(with_nan.t, full.t)

    def test_invalid_inputs(self):
        with self.assertRaises(ValueError):
            paired_ttest({'u1': 1.0}, {'u1': 0.0})
        with self.assertRaises(ValueError):
            paired_ttest({'u1': 1.0, 'u2': 0.5}, {'u1': 0.0, 'u3': 0.5})


class TestComparisonAndManifest(unittest.TestCase):
    """Tests for multi-method comparison, report files and run manifests."""

    @classmethod
    def setUpClass(cls):
        cls.split = synthetic_split()
        cls.methods = [
            MethodConfig('trex_rep', {'alpha': 0.5, 'beta': 0.9}),
            MethodConfig('p_topfreq'),
            MethodConfig('gp_topfreq'),
        ]
        cls.comparison = compare_methods(cls.split, cls.methods, EvaluationSettings(k=10), seed=5)

    def test_significance_against_reference(self):
        frame = self.comparison.significance
        self.assertEqual(len(frame), 2 * 3)
        self.assertEqual(set(frame['method_b']), {'trex_rep'})
        self.assertEqual(set(frame['metric']), {'recall@10', 'ndcg@10', 'phr@10'})

    def test_aggregate_has_every_method(self):
        aggregate = self.comparison.aggregate
        self.assertEqual(set(aggregate['method']), {'trex_rep', 'p_topfreq', 'gp_topfreq'})
        recall = aggregate[(aggregate['method'] == 'trex_rep') & (aggregate['metric'] == 'recall@10')]
        self.assertEqual(len(recall), 1)

    def test_runs_echo_fitted_params(self):
        params = self.comparison.runs['trex_rep'].params
        self.assertEqual((params['alpha'], params['beta']), (0.5, 0.9))
        self.assertEqual(params['exploration'], 'none')
        self.assertEqual(params['seed'], 5)
        self.assertEqual(dict(self.comparison.runs['p_topfreq'].params), {})

    def test_write_report_and_manifest(self):
        with tempfile.TemporaryDirectory() as directory:
            write_report(self.comparison, directory, 10)
            for name in ('report.json', 'report.csv', 'significance.csv', 'explore_accuracy.csv',
                         'per_user_trex_rep.csv', 'report.xlsx'):
                self.assertTrue((Path(directory) / name).exists(), name)

            manifest = RunManifest('run', {'seed': 5}, corpus_hash='abc')
            with manifest.stage('evaluate'):
                pass
            outputs = manifest.record_outputs(directory)
            self.assertIn('report.csv', outputs)
            self.assertNotIn('report.xlsx', outputs)
            manifest.write(directory)
            self.assertNotIn('manifest.json', manifest.record_outputs(directory))
            loaded = RunManifest.read(Path(directory) / 'manifest.json')
            self.assertEqual(loaded.corpus_hash, 'abc')
            self.assertIn('evaluate', loaded.stage_seconds)

            again = tempfile.mkdtemp(dir=directory)
            write_report(self.comparison, again, 10)
            self.assertEqual(RunManifest('run', {}).record_outputs(again), outputs)


if __name__ == '__main__':
    unittest.main()

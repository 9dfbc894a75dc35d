import itertools
import math
import os
import sys
import tempfile
import unittest
from unittest import mock

import numpy as np

# Add the project path to sys.path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from tests.fixtures import toy_split
from trex_nbr.metrics import (PER_USER_METRICS, POOLED_METRICS, Cascade, EvaluationSettings, ExposureVector,
                              GroupAssignment, LogDiscount, ds, eed, eel, entropy, evaluate, exposure_vector,
                              fine_grained, group_assignment, group_exposure, ild, log_dp, log_eur, log_rur,
                              ndcg_at_k, phr_indicator, recall_at_k, target_group_exposure, user_group_exposure)
from trex_nbr.trex import EXPLORE, REPEAT, Recommendation, read_recommendations
from trex_nbr.utils import CorpusError

TOLERANCE = 1e-9


def _close(a, b):
    if math.isnan(a) or math.isnan(b):
        return math.isnan(a) and math.isnan(b)
    return abs(a - b) <= TOLERANCE


# Direct definitions used as an oracle for the batched implementation

def _brute_weights(ranked, relevant, model):
    if isinstance(model, LogDiscount):
        return [1.0 / math.log2(j + 1) for j in range(1, len(ranked) + 1)]
    weights, examine = [], 1.0
    for item in ranked:
        weights.append(examine)
        examine *= model.gamma * (1.0 - model.stop) if item in relevant else model.gamma
    return weights


def _brute_group_exposure(ranked, relevant, groups, model):
    eps = np.zeros(2)
    for weight, item in zip(_brute_weights(ranked, relevant, model), ranked):
        eps[0 if item in groups.popular else 1] += weight
    return eps


def _brute_ideal(relevant, groups, k, model):
    m = min(len(relevant), k)
    orders = list(itertools.permutations(sorted(relevant), m))
    ideal = np.zeros(2)
    weights = []
    for order in orders:
        weights = _brute_weights(list(order) + [None] * (k - m), set(order), model)
        for weight, item in zip(weights[:m], order):
            ideal[0 if item in groups.popular else 1] += weight / len(orders)
    counts = np.array([len(groups.popular - set(relevant)), len(groups.unpopular - set(relevant))], dtype=float)
    if counts.sum() > 0:
        ideal += sum(weights[m:]) * counts / counts.sum()
    return ideal


def _brute_row(ranked, target, history, categories, groups, k, cascade):
    rep_set = {item for basket in history for item in basket}
    row = {}
    if target:
        hits = set(ranked) & target
        row['recall'] = len(hits) / len(target)
        dcg = sum(1.0 / math.log2(j + 2) for j, item in enumerate(ranked) if item in target)
        idcg = sum(1.0 / math.log2(j + 2) for j in range(min(len(target), k)))
        row['ndcg'] = dcg / idcg
        row['phr'] = float(bool(hits))
    else:
        row['recall'] = row['ndcg'] = row['phr'] = math.nan
    for name, subset in (('rep', target & rep_set), ('expl', target - rep_set)):
        if subset:
            row[f'recall_{name}'] = len(set(ranked) & subset) / len(subset)
            row[f'phr_{name}'] = float(bool(set(ranked) & subset))
        else:
            row[f'recall_{name}'] = row[f'phr_{name}'] = math.nan
    labels = sorted(set(categories.values()))
    vectors = [np.array([float(categories[item] == label) for label in labels]) for item in ranked]
    pairs = list(itertools.combinations(vectors, 2))
    row['ild'] = float(np.mean([np.linalg.norm(x - y) for x, y in pairs])) if pairs else 0.0
    shares = np.array([sum(categories[item] == label for item in ranked) for label in labels], dtype=float)
    shares = shares[shares > 0] / len(ranked)
    row['entropy'] = float(-sum(p * math.log2(p) for p in shares))
    row['ds'] = len({categories[item] for item in ranked}) / len(ranked)
    eps = _brute_group_exposure(ranked, target, groups, cascade)
    row['eel'] = float(np.sum((eps - _brute_ideal(target, groups, k, cascade)) ** 2))
    row['eed'] = float(np.sum(eps ** 2))
    row['repeat_slots'] = float(sum(item in rep_set for item in ranked))
    row['explore_slots'] = float(len(ranked) - row['repeat_slots'])
    return row


def _brute_pooled(runs, targets, groups, model, delta):
    exposure, clicks, utility = np.zeros(2), np.zeros(2), np.zeros(2)
    for user, ranked in runs.items():
        relevant = targets[user]
        for weight, item in zip(_brute_weights(ranked, relevant, model), ranked):
            side = 0 if item in groups.popular else 1
            exposure[side] += weight
            if item in relevant:
                clicks[side] += weight
        for item in relevant:
            utility[0 if item in groups.popular else 1] += 1.0
    per_utility = lambda values: ((values[0] + delta) / (utility[0] + delta)) / (
        (values[1] + delta) / (utility[1] + delta))
    return {
        'logdp': math.log((exposure[0] + delta) / (exposure[1] + delta)),
        'logeur': math.log(per_utility(exposure)),
        'logrur': math.log(per_utility(clicks)),
    }


def _random_instance(rng):
    n = int(rng.integers(2, 13))
    catalog = [f'i{j}' for j in range(n)]
    shuffled = [str(item) for item in rng.permutation(catalog)]
    n_popular = int(rng.integers(1, n))
    groups = GroupAssignment(frozenset(shuffled[:n_popular]), frozenset(shuffled[n_popular:]))
    n_categories = int(rng.integers(1, 5))
    categories = {item: f'c{int(rng.integers(n_categories))}' for item in catalog}
    k = int(rng.integers(1, min(5, n) + 1))
    runs, targets, histories = {}, {}, {}
    for u in range(int(rng.integers(1, 4))):
        user = f'u{u}'
        runs[user] = [str(x) for x in rng.choice(catalog, size=k, replace=False)]
        targets[user] = {str(x) for x in rng.choice(catalog, size=int(rng.integers(0, min(4, n) + 1)),
                                                     replace=False)}
        histories[user] = (tuple(str(x) for x in rng.choice(catalog, size=int(rng.integers(1, n + 1)),
                                                            replace=False)),)
    return groups, categories, k, runs, targets, histories


class TestAccuracy(unittest.TestCase):
    """Tests for Recall, NDCG, PHR and the repeat/explore split."""

    def test_hand_values(self):
        ranked = ['a', 'b', 'c']
        self.assertAlmostEqual(recall_at_k(ranked, {'a', 'd'}, 3), 0.5)
        self.assertAlmostEqual(ndcg_at_k(ranked, {'a', 'd'}, 3), 1.0 / (1.0 + 1.0 / math.log2(3)))
        self.assertAlmostEqual(ndcg_at_k(ranked, {'b'}, 3), 1.0 / math.log2(3))
        self.assertEqual(phr_indicator(ranked, {'z', 'c'}), 1.0)
        self.assertEqual(phr_indicator(ranked, {'z'}), 0.0)
        self.assertAlmostEqual(recall_at_k(['a', 'x'], {'a', 'b', 'c', 'd'}, 2), 0.25)
        self.assertAlmostEqual(ndcg_at_k(['x', 'a', 'b'], {'a', 'b'}, 3), 0.6934, places=4)

    def test_empty_target_is_nan(self):
        """Test users with an empty held-out basket are undefined, not zero."""
        self.assertTrue(math.isnan(recall_at_k(['a'], set(), 1)))
        self.assertTrue(math.isnan(ndcg_at_k(['a'], set(), 1)))
        self.assertTrue(math.isnan(phr_indicator(['a'], set())))

    def test_fine_grained(self):
        values = fine_grained(['a', 'e'], {'a', 'e', 'f'}, {'a', 'b'})
        self.assertEqual(values['recall_rep'], 1.0)
        self.assertEqual(values['recall_expl'], 0.5)
        self.assertEqual(values['phr_expl'], 1.0)
        only_explore = fine_grained(['a'], {'e'}, {'a'})
        self.assertTrue(math.isnan(only_explore['recall_rep']))
        self.assertEqual(only_explore['phr_expl'], 0.0)


class TestFairness(unittest.TestCase):
    """Tests for exposure, pooled log ratios and expected exposure."""

    def setUp(self):
        self.groups = GroupAssignment(frozenset({'a'}), frozenset({'b', 'c'}))

    def test_cascade_weights(self):
        weights = exposure_vector(['a', 'b', 'c'], {'a'}, Cascade(0.8, 0.5)).weights
        for value, expected in zip(weights, [1.0, 0.4, 0.32]):
            self.assertAlmostEqual(value, expected)

    def test_log_dp_parity_and_skew(self):
        """Test mirrored runs reach parity and popular-only runs are positive."""
        self.assertAlmostEqual(log_dp({'u1': ['a', 'b'], 'u2': ['b', 'a']}, self.groups), 0.0)
        self.assertGreater(log_dp({'u1': ['a']}, self.groups), 10.0)
        self.assertLess(log_dp({'u1': ['b', 'c']}, self.groups), 0.0)

    def test_log_dp_normalized_by_group_size(self):
        runs = {'u1': ['a', 'b'], 'u2': ['b', 'a']}
        value = log_dp(runs, self.groups, normalize_by_group_size=True)
        exposure = 1.0 + 1.0 / math.log2(3)
        self.assertAlmostEqual(value, math.log((exposure + 1e-6) / (exposure / 2 + 1e-6)))

    def test_log_eur_and_rur_by_hand(self):
        runs = {'u1': ['a', 'b']}
        targets = {'u1': {'b'}}
        discount = 1.0 / math.log2(3)
        eur = math.log(((1.0 + 1e-6) / 1e-6) / ((discount + 1e-6) / (1.0 + 1e-6)))
        rur = math.log((1e-6 / 1e-6) / ((discount + 1e-6) / (1.0 + 1e-6)))
        self.assertAlmostEqual(log_eur(runs, targets, self.groups), eur)
        self.assertAlmostEqual(log_rur(runs, targets, self.groups), rur)

    def test_two_item_list_by_hand(self):
        """Test one popular then one unpopular item under log weights and the cascade."""
        groups = GroupAssignment(frozenset({'p'}), frozenset({'q'}))
        runs = {'u1': ['p', 'q']}
        self.assertAlmostEqual(log_dp(runs, groups), 0.4605, places=4)
        targets = {'u1': {'p', 'q'}}
        self.assertAlmostEqual(log_eur(runs, targets, groups), 0.4605, places=4)
        self.assertAlmostEqual(log_rur(runs, targets, groups), 0.4605, places=4)
        self.assertAlmostEqual(eed(runs, {'u1': {'p'}}, groups, Cascade(0.8, 0.5)), 1.16)
        weights = exposure_vector(['p', 'q'], set(), LogDiscount()).weights
        self.assertAlmostEqual(weights[1], 0.6309, places=4)

    def test_group_exposure_total(self):
        exposure = group_exposure({'u1': ['a', 'b', 'c']}, self.groups)
        self.assertAlmostEqual(exposure.eps_plus, 1.0)
        self.assertAlmostEqual(exposure.total, 1.0 + 1.0 / math.log2(3) + 0.5)

    def test_ideal_ranking_has_zero_eel(self):
        """Test relevant items of one group placed first match the ideal exactly."""
        runs = {'u1': ['b', 'c']}
        targets = {'u1': {'b', 'c'}}
        self.assertAlmostEqual(eel(runs, targets, self.groups, k=2), 0.0)
        self.assertAlmostEqual(eed({'u1': ['a']}, {'u1': set()}, self.groups, k=1), 1.0)

    def test_target_exposure_sums_to_ideal_list(self):
        cascade = Cascade()
        target = target_group_exposure({'b'}, self.groups, 3, cascade)
        self.assertAlmostEqual(target[0] + target[1], 1.0 + 0.4 + 0.8 * 0.4)
        # non-relevant tail splits by one popular and one unpopular remaining item
        self.assertAlmostEqual(target[0], (0.4 + 0.32) / 2)


class TestDiversity(unittest.TestCase):
    """Tests for ILD, entropy and DS."""

    def test_hand_values(self):
        categories = {'a': 'x', 'b': 'x', 'c': 'y', 'd': 'z', 'e': 'w'}
        self.assertEqual(ild(['a', 'b'], categories), 0.0)
        self.assertAlmostEqual(ild(['a', 'c', 'd'], categories), math.sqrt(2.0))
        self.assertAlmostEqual(ild(['a', 'b', 'c'], categories), math.sqrt(2.0) * 2 / 3)
        self.assertEqual(ild(['a'], categories), 0.0)
        self.assertAlmostEqual(entropy(['a', 'c', 'd', 'e'], categories), 2.0)
        self.assertEqual(entropy(['a', 'b'], categories), 0.0)
        self.assertAlmostEqual(ds(['a', 'b', 'c'], categories), 2 / 3)
        self.assertTrue(math.isnan(ds([], categories)))


def _scaled_exposure(factor):
    def scaled(ranked, relevant, model):
        vector = exposure_vector(ranked, relevant, model)
        return ExposureVector(tuple(factor * w for w in vector.weights), vector.model)
    return scaled


class TestMetricProperties(unittest.TestCase):
    """Tests for algebraic properties of the fairness metrics on random instances."""

    def setUp(self):
        self.rng = np.random.default_rng(7)

    def test_log_dp_antisymmetric_under_group_swap(self):
        for _ in range(200):
            groups, _, _, runs, targets, _ = _random_instance(self.rng)
            for model in (LogDiscount(), Cascade()):
                value = log_dp(runs, groups, model, targets=targets)
                swapped = log_dp(runs, groups.swapped(), model, targets=targets)
                self.assertLessEqual(abs(value + swapped), 2e-5)

    def test_log_ratios_scale_invariant_without_smoothing(self):
        """Test multiplying every exposure weight by c leaves the log ratios unchanged at delta=0."""
        groups = GroupAssignment(frozenset({'a', 'b'}), frozenset({'c', 'd', 'e'}))
        runs = {'u1': ['a', 'c', 'b'], 'u2': ['d', 'a', 'e'], 'u3': ['c', 'b', 'd']}
        targets = {'u1': {'a', 'c'}, 'u2': {'d', 'b'}, 'u3': {'b', 'e'}}
        base = (log_dp(runs, groups, delta=0.0), log_eur(runs, targets, groups, delta=0.0),
                log_rur(runs, targets, groups, delta=0.0))
        for factor in (0.01, 3.0, 250.0):
            with mock.patch('trex_nbr.metrics.exposure_vector', _scaled_exposure(factor)):
                scaled = (log_dp(runs, groups, delta=0.0), log_eur(runs, targets, groups, delta=0.0),
                          log_rur(runs, targets, groups, delta=0.0))
            for before, after in zip(base, scaled):
                self.assertAlmostEqual(before, after)

    def test_eel_decomposition(self):
        """Test the squared distance expands into norms and a cross term, and EEL is its mean."""
        cascade = Cascade()
        for _ in range(200):
            groups, _, k, runs, targets, _ = _random_instance(self.rng)
            per_user = []
            for user, ranked in runs.items():
                eps = user_group_exposure(ranked, targets[user], groups, cascade)
                ideal = target_group_exposure(targets[user], groups, k, cascade)
                distance = float(np.sum((eps - ideal) ** 2))
                expanded = float(eps @ eps - 2 * eps @ ideal + ideal @ ideal)
                self.assertAlmostEqual(distance, expanded)
                per_user.append(distance)
            self.assertAlmostEqual(eel(runs, targets, groups, cascade, k=k), float(np.mean(per_user)))

    def test_duplicated_users_leave_expected_exposure_unchanged(self):
        groups = GroupAssignment(frozenset({'a'}), frozenset({'b', 'c'}))
        runs = {'u1': ['a', 'b'], 'u2': ['c', 'a']}
        targets = {'u1': {'b'}, 'u2': {'a', 'c'}}
        doubled_runs = {**runs, **{f'{u}x': r for u, r in runs.items()}}
        doubled_targets = {**targets, **{f'{u}x': t for u, t in targets.items()}}
        self.assertAlmostEqual(eel(runs, targets, groups, k=2), eel(doubled_runs, doubled_targets, groups, k=2))
        self.assertAlmostEqual(eed(runs, targets, groups, k=2), eed(doubled_runs, doubled_targets, groups, k=2))


class TestEvaluate(unittest.TestCase):
    """Tests for the per-method metric report."""

    def setUp(self):
        self.split = toy_split()
        self.groups = group_assignment(self.split.train, 0.2)
        self.settings = EvaluationSettings(k=3)

    def test_toy_groups_use_ceiling(self):
        self.assertEqual(self.groups.popular, frozenset({'a', 'b'}))
        self.assertEqual(len(self.groups.unpopular), 6)

    def test_report_keys(self):
        recs = [Recommendation('u2', ['a', 'c', 'h'], [REPEAT, REPEAT, EXPLORE]),
                Recommendation('u4', ['d', 'g', 'b'], [REPEAT, EXPLORE, EXPLORE])]
        targets = self.split.test_targets()
        report = evaluate(recs, targets, self.split.histories(targets), self.groups, self.split.categories,
                          self.settings)
        expected = {f'{name}@3' for name in PER_USER_METRICS + POOLED_METRICS}
        self.assertEqual(set(report.aggregate), expected)
        self.assertEqual(set(report.per_user), {'u2', 'u4'})
        self.assertEqual(report.per_user['u2']['repeat_slots@3'], 2.0)
        # u2 holds out (a, c, f): two of three found
        self.assertAlmostEqual(report.per_user['u2']['recall@3'], 2 / 3)
        frame = report.aggregate_frame('trex_rep')
        self.assertEqual(list(frame.columns), ['method', 'metric', 'k', 'value'])
        self.assertEqual(len(report.per_user_frame()), 2)

    def test_missing_user_scored_as_empty(self):
        targets = self.split.test_targets()
        with self.assertLogs('trex_nbr.metrics', level='WARNING'):
            report = evaluate({'u2': ['a', 'c', 'f']}, targets, {}, self.groups, self.split.categories,
                              self.settings)
        self.assertEqual(report.per_user['u4']['recall@3'], 0.0)
        self.assertTrue(math.isnan(report.per_user['u4']['ild@3']))
        self.assertEqual(report.per_user['u2']['recall@3'], 1.0)
        self.assertAlmostEqual(report.aggregate['recall@3'], 0.5)

    def test_unlabelled_predictions_split_by_repeat_set(self):
        """Test a predictions file without provenance is split by the user's purchase history."""
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'predictions.jsonl')
            with open(path, 'w', encoding='utf-8') as handle:
                handle.write('{"user": "u2", "items": ["a", "c", "h"]}\n')
            recs = read_recommendations(path)
        self.assertIsNone(recs[0].provenance)
        targets = {'u2': self.split.targets['u2']}
        report = evaluate(recs, targets, self.split.histories(targets), self.groups, self.split.categories,
                          self.settings)
        # u2 bought a and c before
        self.assertEqual(report.per_user['u2']['repeat_slots@3'], 2.0)
        self.assertEqual(report.per_user['u2']['explore_slots@3'], 1.0)

    def test_item_outside_catalog_rejected(self):
        targets = self.split.test_targets()
        with self.assertRaises(CorpusError):
            evaluate({'u2': ['a', 'zzz']}, targets, {}, self.groups, self.split.categories, self.settings)

    def test_empty_target_skipped_in_mean(self):
        targets = {'u1': ('a',), 'u2': ()}
        report = evaluate({'u1': ['a'], 'u2': ['a']}, targets, {}, self.groups, self.split.categories,
                          EvaluationSettings(k=1))
        self.assertTrue(math.isnan(report.per_user['u2']['recall@1']))
        self.assertEqual(report.aggregate['recall@1'], 1.0)

    def test_against_direct_definitions(self):
        """Test every metric against its direct definition on 1000 seeded random instances."""
        rng = np.random.default_rng(20240611)
        for trial in range(1000):
            groups, categories, k, runs, targets, histories = _random_instance(rng)
            model = LogDiscount() if trial % 2 else Cascade()
            settings = EvaluationSettings(k=k, fairness_model=model)
            report = evaluate(runs, targets, histories, groups, categories, settings)
            for user, ranked in runs.items():
                expected = _brute_row(ranked, targets[user], histories[user], categories, groups, k, Cascade())
                for name, value in expected.items():
                    actual = report.per_user[user][f'{name}@{k}']
                    self.assertTrue(_close(actual, value), f'trial {trial} {user} {name}: {actual} != {value}')
            pooled = _brute_pooled(runs, targets, groups, model, settings.delta)
            for name, value in pooled.items():
                actual = report.aggregate[f'{name}@{k}']
                self.assertTrue(_close(actual, value), f'trial {trial} {name}: {actual} != {value}')


if __name__ == '__main__':
    unittest.main()

"""
Evaluation metrics for fixed-size recommended baskets.

Accuracy (Recall, NDCG, PHR and their repeat/explore splits), exposure-based
item fairness between a popular and an unpopular item group (logDP, logEUR,
logRUR, EEL, EED) and category diversity (ILD, Entropy, DS).
"""
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .utils import CorpusError

logger = logging.getLogger(__name__)

DELTA = 1e-6
POPULAR = "+"
UNPOPULAR = "-"

PER_USER_METRICS = (
    "recall", "ndcg", "phr",
    "recall_rep", "recall_expl", "phr_rep", "phr_expl",
    "ild", "entropy", "ds",
    "eel", "eed",
    "repeat_slots", "explore_slots",
)
POOLED_METRICS = ("logdp", "logeur", "logrur")


@dataclass(frozen=True)
class GroupAssignment:
    popular: frozenset
    unpopular: frozenset

    def __post_init__(self):
        if self.popular & self.unpopular:
            raise ValueError("item groups must be disjoint")

    def group_of(self, item) -> Optional[str]:
        if item in self.popular:
            return POPULAR
        if item in self.unpopular:
            return UNPOPULAR
        return None

    def swapped(self) -> "GroupAssignment":
        return GroupAssignment(self.unpopular, self.popular)


def group_assignment(train, top_share: float = 0.2) -> GroupAssignment:
    """
    Split the catalog into popular (top share by training basket count) and
    unpopular items.

    Args:
        train (Dataset): Training corpus; its catalog defines the groups
        top_share (float): Share of items assigned to the popular group

    Returns:
        GroupAssignment: Popular and unpopular item sets
    """
    counts = train.item_basket_counts()
    ranked = sorted(train.items, key=lambda item: (-counts.get(item, 0), item))
    n_popular = math.ceil(top_share * len(ranked))
    return GroupAssignment(frozenset(ranked[:n_popular]), frozenset(ranked[n_popular:]))


# --------------------------------------------------------------------------
# Position weighting
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LogDiscount:
    name: str = field(default="log_discount", init=False)


@dataclass(frozen=True)
class Cascade:
    gamma: float = 0.8
    stop: float = 0.5
    name: str = field(default="cascade", init=False)


@dataclass(frozen=True)
class ExposureVector:
    weights: tuple
    model: object


@dataclass(frozen=True)
class GroupExposure:
    eps_plus: float
    eps_minus: float

    @property
    def total(self) -> float:
        return self.eps_plus + self.eps_minus


def exposure_vector(ranked: Sequence, relevant, model) -> ExposureVector:
    """Attention weight of every slot of a ranked list under a browsing model."""
    n = len(ranked)
    if isinstance(model, LogDiscount):
        weights = 1.0 / np.log2(np.arange(2, n + 2))
    elif isinstance(model, Cascade):
        weights = np.empty(n)
        examine = 1.0
        for j, item in enumerate(ranked):
            weights[j] = examine
            examine *= model.gamma * (1.0 - model.stop * (item in relevant))
    else:
        raise ValueError(f"unknown exposure model {model!r}")
    return ExposureVector(tuple(float(w) for w in weights), model)


def _items(recommendation) -> tuple:
    return tuple(getattr(recommendation, "items", recommendation))


# --------------------------------------------------------------------------
# Accuracy
# --------------------------------------------------------------------------

def recall_at_k(ranked: Sequence, target, k: int) -> float:
    """Share of target items found in the top k; NaN for an empty target."""
    target = set(target)
    if not target:
        return math.nan
    return len(set(ranked[:k]) & target) / len(target)


def ndcg_at_k(ranked: Sequence, target, k: int) -> float:
    target = set(target)
    if not target:
        return math.nan
    dcg = sum(1.0 / math.log2(pos + 1) for pos, item in enumerate(ranked[:k], start=1) if item in target)
    idcg = sum(1.0 / math.log2(pos + 1) for pos in range(1, min(len(target), k) + 1))
    return dcg / idcg


def phr_indicator(ranked: Sequence, target) -> float:
    target = set(target)
    if not target:
        return math.nan
    return 1.0 if target.intersection(ranked) else 0.0


def fine_grained(ranked: Sequence, target, rep_set) -> dict:
    """
    Accuracy restricted to repeat and explore target items.

    Users with no repeat (explore) target items get NaN for the repeat
    (explore) values and drop out of the corresponding averages.
    """
    target = set(target)
    hits = target.intersection(ranked)
    target_rep = {item for item in target if item in rep_set}
    target_expl = target - target_rep
    hits_rep = hits & target_rep
    hits_expl = hits & target_expl
    result = {}
    for name, subset, subset_hits in (("rep", target_rep, hits_rep), ("expl", target_expl, hits_expl)):
        if subset:
            result[f"recall_{name}"] = len(subset_hits) / len(subset)
            result[f"phr_{name}"] = 1.0 if subset_hits else 0.0
        else:
            result[f"recall_{name}"] = math.nan
            result[f"phr_{name}"] = math.nan
    return result


# --------------------------------------------------------------------------
# Fairness
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class _Pooled:
    exposure: dict
    utility: dict
    clicks: dict


def _pool(runs: Mapping, targets: Mapping, groups: GroupAssignment, model) -> _Pooled:
    exposure = {POPULAR: 0.0, UNPOPULAR: 0.0}
    utility = {POPULAR: 0.0, UNPOPULAR: 0.0}
    clicks = {POPULAR: 0.0, UNPOPULAR: 0.0}
    for user in sorted(runs):
        ranked = _items(runs[user])
        relevant = set(targets.get(user, ()))
        weights = exposure_vector(ranked, relevant, model).weights
        for weight, item in zip(weights, ranked):
            group = groups.group_of(item)
            if group is None:
                continue
            exposure[group] += weight
            if item in relevant:
                clicks[group] += weight
        for item in relevant:
            group = groups.group_of(item)
            if group is not None:
                utility[group] += 1.0
    return _Pooled(exposure, utility, clicks)


def group_exposure(runs: Mapping, groups: GroupAssignment, targets: Optional[Mapping] = None,
                   model=LogDiscount()) -> GroupExposure:
    pooled = _pool(runs, targets or {}, groups, model)
    return GroupExposure(pooled.exposure[POPULAR], pooled.exposure[UNPOPULAR])


def log_dp(runs: Mapping, groups: GroupAssignment, model=LogDiscount(), delta: float = DELTA,
           normalize_by_group_size: bool = False, targets: Optional[Mapping] = None) -> float:
    """
    ln of popular over unpopular pooled exposure; 0 means parity.

    Targets only matter for the cascade model, where relevant slots stop the scan.
    """
    pooled = _pool(runs, targets or {}, groups, model)
    eps_plus, eps_minus = pooled.exposure[POPULAR], pooled.exposure[UNPOPULAR]
    if normalize_by_group_size:
        eps_plus /= max(1, len(groups.popular))
        eps_minus /= max(1, len(groups.unpopular))
    return math.log((eps_plus + delta) / (eps_minus + delta))


def _log_ratio_per_utility(numerator: dict, utility: dict, delta: float) -> float:
    plus = (numerator[POPULAR] + delta) / (utility[POPULAR] + delta)
    minus = (numerator[UNPOPULAR] + delta) / (utility[UNPOPULAR] + delta)
    return math.log(plus / minus)


def log_eur(runs: Mapping, targets: Mapping, groups: GroupAssignment, model=LogDiscount(),
            delta: float = DELTA) -> float:
    """Exposure-per-utility log ratio between the groups."""
    pooled = _pool(runs, targets, groups, model)
    return _log_ratio_per_utility(pooled.exposure, pooled.utility, delta)


def log_rur(runs: Mapping, targets: Mapping, groups: GroupAssignment, model=LogDiscount(),
            delta: float = DELTA) -> float:
    """Click-through-per-utility log ratio; only relevant slots earn clicks."""
    pooled = _pool(runs, targets, groups, model)
    return _log_ratio_per_utility(pooled.clicks, pooled.utility, delta)


def user_group_exposure(ranked: Sequence, relevant, groups: GroupAssignment, model) -> np.ndarray:
    eps = np.zeros(2)
    for weight, item in zip(exposure_vector(ranked, relevant, model).weights, ranked):
        group = groups.group_of(item)
        if group == POPULAR:
            eps[0] += weight
        elif group == UNPOPULAR:
            eps[1] += weight
    return eps


def target_group_exposure(relevant, groups: GroupAssignment, k: int, model: Cascade) -> np.ndarray:
    """
    Group exposure of the ideal list of length k: every relevant item first,
    sharing the relevant-prefix exposure equally, then non-relevant items
    taking the remaining exposure in proportion to each group's count of
    non-relevant catalog items.
    """
    relevant = set(relevant)
    n_rel = len(relevant)
    m = min(n_rel, k)
    decay = model.gamma * (1.0 - model.stop)
    prefix = sum(decay ** (j - 1) for j in range(1, m + 1))
    tail = sum(model.gamma ** (j - 1) * (1.0 - model.stop) ** m for j in range(m + 1, k + 1))
    target = np.zeros(2)
    if n_rel:
        rel_plus = sum(1 for item in relevant if item in groups.popular)
        rel_minus = sum(1 for item in relevant if item in groups.unpopular)
        target[0] += prefix * rel_plus / n_rel
        target[1] += prefix * rel_minus / n_rel
    else:
        rel_plus = rel_minus = 0
    non_rel = np.array([len(groups.popular) - rel_plus, len(groups.unpopular) - rel_minus], dtype=float)
    if non_rel.sum() > 0:
        target += tail * non_rel / non_rel.sum()
    return target


def _per_user_expected_exposure(runs: Mapping, targets: Mapping, groups: GroupAssignment,
                                model: Cascade, k: Optional[int]):
    for user in sorted(runs):
        ranked = _items(runs[user])
        relevant = set(targets.get(user, ()))
        eps = user_group_exposure(ranked, relevant, groups, model)
        target = target_group_exposure(relevant, groups, k if k is not None else len(ranked), model)
        yield user, eps, target


def eel(runs: Mapping, targets: Mapping, groups: GroupAssignment, model=Cascade(),
        k: Optional[int] = None) -> float:
    """Mean squared distance between system and ideal group exposure."""
    values = [float(np.sum((eps - target) ** 2))
              for _, eps, target in _per_user_expected_exposure(runs, targets, groups, model, k)]
    return float(np.mean(values)) if values else math.nan


def eed(runs: Mapping, targets: Mapping, groups: GroupAssignment, model=Cascade(),
        k: Optional[int] = None) -> float:
    """Mean squared norm of per-user group exposure."""
    values = [float(np.sum(eps ** 2))
              for _, eps, _ in _per_user_expected_exposure(runs, targets, groups, model, k)]
    return float(np.mean(values)) if values else math.nan


# --------------------------------------------------------------------------
# Diversity
# --------------------------------------------------------------------------

def ild(ranked: Sequence, categories: Mapping) -> float:
    """Mean pairwise distance of one-hot category embeddings (sqrt(2) per differing pair)."""
    if not ranked:
        return math.nan
    n = len(ranked)
    if n == 1:
        return 0.0
    counts = Counter(categories[item] for item in ranked)
    same_pairs = sum(c * (c - 1) // 2 for c in counts.values())
    all_pairs = n * (n - 1) // 2
    return math.sqrt(2.0) * (all_pairs - same_pairs) / all_pairs


def entropy(ranked: Sequence, categories: Mapping) -> float:
    if not ranked:
        return math.nan
    counts = np.array(list(Counter(categories[item] for item in ranked).values()), dtype=float)
    p = counts / counts.sum()
    return float(-np.sum(p * np.log2(p)) + 0.0)


def ds(ranked: Sequence, categories: Mapping) -> float:
    if not ranked:
        return math.nan
    return len({categories[item] for item in ranked}) / len(ranked)


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EvaluationSettings:
    k: int = 10
    fairness_model: object = LogDiscount()
    expected_exposure_model: object = Cascade()
    delta: float = DELTA
    normalize_by_group_size: bool = False

    def to_dict(self) -> dict:
        cascade = self.expected_exposure_model
        return {
            "k": self.k,
            "fairness_model": self.fairness_model.name,
            "expected_exposure_model": cascade.name,
            "cascade_gamma": getattr(cascade, "gamma", None),
            "cascade_stop": getattr(cascade, "stop", None),
            "delta": self.delta,
            "normalize_by_group_size": self.normalize_by_group_size,
        }


@dataclass(frozen=True)
class MetricReport:
    per_user: Mapping
    aggregate: Mapping
    config: Mapping

    def per_user_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame.from_dict(self.per_user, orient="index")
        frame.index.name = "user_id"
        return frame.reset_index()

    def aggregate_frame(self, method: str) -> pd.DataFrame:
        k = self.config.get("k")
        rows = [{"method": method, "metric": name, "k": k, "value": value}
                for name, value in self.aggregate.items()]
        return pd.DataFrame(rows, columns=["method", "metric", "k", "value"])

    def to_dict(self) -> dict:
        return {"config": dict(self.config), "aggregate": dict(self.aggregate)}


def _metric_key(name: str, k: int) -> str:
    return f"{name}@{k}"


def evaluate(recommendations, targets: Mapping, histories: Mapping, groups: GroupAssignment,
             categories: Mapping, settings: EvaluationSettings = EvaluationSettings()) -> MetricReport:
    """
    Score one method's baskets against held-out targets.

    Args:
        recommendations: Recommendation objects (or a {user: items} mapping)
        targets (dict): Held-out basket per evaluated user
        histories (dict): Training baskets per user, for repeat/explore splits
        groups (GroupAssignment): Popular/unpopular item groups
        categories (dict): Item to category map
        settings (EvaluationSettings): Cutoff and exposure models

    Returns:
        MetricReport: Per-user values and aggregates

    Raises:
        CorpusError: If a basket holds an item without a category
    """
    k = settings.k
    if isinstance(recommendations, Mapping):
        by_user = dict(recommendations)
    else:
        by_user = {rec.user_id: rec for rec in recommendations}
    users = sorted(targets)
    missing = [user for user in users if user not in by_user]
    if missing:
        logger.warning(f"{len(missing)} evaluated users have no recommendation; scoring them as empty baskets")
    runs = {user: _items(by_user.get(user, ()))[:k] for user in users}
    unknown = sorted({item for ranked in runs.values() for item in ranked if item not in categories})
    if unknown:
        raise CorpusError(f"recommended items outside the catalog: {unknown[:5]}")

    per_user = {}
    for user in users:
        ranked = runs[user]
        target = set(targets[user])
        rep_set = {item for basket in histories.get(user, ()) for item in basket}
        provenance = getattr(by_user.get(user), "provenance", None)
        if provenance is None:
            provenance = ["repeat" if item in rep_set else "explore" for item in ranked]
        provenance = list(provenance)[:k]
        row = {
            "recall": recall_at_k(ranked, target, k),
            "ndcg": ndcg_at_k(ranked, target, k),
            "phr": phr_indicator(ranked, target),
            **fine_grained(ranked, target, rep_set),
            "ild": ild(ranked, categories),
            "entropy": entropy(ranked, categories),
            "ds": ds(ranked, categories),
        }
        eps = user_group_exposure(ranked, target, groups, settings.expected_exposure_model)
        ideal = target_group_exposure(target, groups, k, settings.expected_exposure_model)
        row["eel"] = float(np.sum((eps - ideal) ** 2))
        row["eed"] = float(np.sum(eps ** 2))
        row["repeat_slots"] = float(sum(1 for p in provenance if p == "repeat"))
        row["explore_slots"] = float(sum(1 for p in provenance if p == "explore"))
        per_user[user] = {_metric_key(name, k): row[name] for name in PER_USER_METRICS}

    frame = pd.DataFrame.from_dict(per_user, orient="index")
    aggregate = {column: float(frame[column].mean(skipna=True)) for column in frame.columns} if len(frame) else {}
    aggregate[_metric_key("logdp", k)] = log_dp(
        runs, groups, settings.fairness_model, settings.delta, settings.normalize_by_group_size, targets)
    aggregate[_metric_key("logeur", k)] = log_eur(runs, targets, groups, settings.fairness_model, settings.delta)
    aggregate[_metric_key("logrur", k)] = log_rur(runs, targets, groups, settings.fairness_model, settings.delta)
    return MetricReport(per_user, aggregate, settings.to_dict())

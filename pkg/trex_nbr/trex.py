"""
Two-step repetition/exploration basket recommender.

Repeat candidates are scored as user interest (time-decayed purchase count)
times an item-level repurchase feature; candidates below the confidence
threshold ``v`` are dropped and the free slots go to an exploration policy
targeting either item fairness or category diversity.
"""
import json
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .corpus import Dataset
from .metrics import GroupAssignment, group_assignment
from .utils import CorpusError, IngestionError, derive_seed, rank_by_score, write_jsonl

logger = logging.getLogger(__name__)

REPEAT = "repeat"
EXPLORE = "explore"
EXPLORATION_KINDS = ("fairness", "diversity", "none")


@dataclass(frozen=True)
class Recommendation:
    """One user's basket; provenance is None for externally produced baskets that carry no labels."""

    user_id: str
    items: tuple
    provenance: Optional[tuple]
    v: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        if len(set(self.items)) != len(self.items):
            raise ValueError(f"duplicate items in the basket of user {self.user_id}")
        if self.provenance is None:
            return
        object.__setattr__(self, "provenance", tuple(self.provenance))
        if len(self.items) != len(self.provenance):
            raise ValueError("items and provenance must have the same length")
        bad = set(self.provenance) - {REPEAT, EXPLORE}
        if bad:
            raise ValueError(f"unknown provenance labels {sorted(bad)}")

    def _labels(self) -> tuple:
        if self.provenance is None:
            raise ValueError(f"the basket of user {self.user_id} has no provenance labels")
        return self.provenance

    @property
    def n_repeat(self) -> int:
        return sum(1 for p in self._labels() if p == REPEAT)

    @property
    def n_explore(self) -> int:
        return len(self._labels()) - self.n_repeat

    @property
    def is_repetition_greedy(self) -> bool:
        """True when every repeat slot precedes every explore slot."""
        labels = self._labels()
        return list(labels) == sorted(labels, key=lambda p: p != REPEAT)

    def to_json(self) -> dict:
        row = {"user": self.user_id, "items": list(self.items)}
        if self.provenance is not None:
            row["provenance"] = list(self.provenance)
        if self.v is not None:
            row["v"] = self.v if math.isfinite(self.v) else str(self.v)
        return row

    @classmethod
    def with_membership(cls, user_id: str, items: Sequence, rep_set, v=None) -> "Recommendation":
        """Recommendation whose provenance is read off repeat-set membership."""
        return cls(user_id, tuple(items), tuple(REPEAT if i in rep_set else EXPLORE for i in items), v)


def write_recommendations(path, recommendations: Iterable[Recommendation]):
    return write_jsonl(path, (rec.to_json() for rec in sorted(recommendations, key=lambda r: r.user_id)))


def read_recommendations(path, catalog=None) -> list:
    """
    Load recommendations written in the JSON-lines interchange format.

    Rows without ``provenance`` keep it as None; evaluation then labels each
    slot by membership in the user's repeat set. With a catalog, a row naming
    an item outside it is rejected.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError(path, reason="missing file")
    recommendations = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                items = [str(item) for item in row["items"]]
                provenance = row.get("provenance")
                v = row.get("v")
                recommendations.append(Recommendation(
                    str(row["user"]), items, provenance, None if v is None else float(v)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise IngestionError(path, line_no, f"malformed recommendation ({e})") from e
            if catalog is not None:
                unknown = [item for item in items if item not in catalog]
                if unknown:
                    raise IngestionError(path, line_no, f"items outside the catalog: {unknown[:5]}")
    return recommendations


class Recommender(ABC):
    """Common interface of every next-basket method."""

    name = "recommender"

    @abstractmethod
    def fit(self, train: Dataset) -> "Recommender":
        ...

    @abstractmethod
    def recommend(self, user_id: str, history: Sequence, k: int) -> Recommendation:
        ...

    def recommend_many(self, histories: Mapping, k: int) -> list:
        return [self.recommend(user_id, histories[user_id], k) for user_id in sorted(histories)]

    def params(self) -> dict:
        return {}


# --------------------------------------------------------------------------
# Repetition module
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RepetitionModel:
    rep_feature: Mapping
    alpha: float
    beta: float
    mean_rep_f: float
    n_buyers: Mapping
    rep_feature_enabled: bool = True

    def item_feature(self, item) -> float:
        if not self.rep_feature_enabled:
            return 1.0
        return self.rep_feature.get(item, self.mean_rep_f)


@dataclass(frozen=True)
class RepetitionScores:
    scores: Mapping

    @property
    def rep_set(self) -> frozenset:
        return frozenset(self.scores)

    def ranked(self) -> list:
        return rank_by_score(self.scores)


def _check_alpha_beta(alpha: float, beta: float):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must be in (0, 1], got {beta}")


def fit_repetition(train: Dataset, alpha: float, beta: float, rep_feature_enabled: bool = True) -> RepetitionModel:
    """
    Item repurchase features from training baskets.

    A user's repurchase frequency of an item is the number of their baskets
    containing it minus one. Per item, the alpha-discounted frequencies are
    summed over buyers and divided by the number of buyers N_i; the corpus
    mean of that value, shrunk by N_i, is added back as a prior.

    Args:
        train (Dataset): Training baskets
        alpha (float): Frequency discount in [0, 1]; 0**alpha counts as 0
        beta (float): Time decay in (0, 1], stored for scoring
        rep_feature_enabled (bool): When False, scoring uses a feature of 1

    Returns:
        RepetitionModel: Immutable feature table
    """
    _check_alpha_beta(alpha, beta)
    frame = train.to_frame()
    if frame.empty:
        raise CorpusError("cannot fit repetition features on an empty training corpus")
    occurrences = frame.groupby(["item_id", "user_id"]).size()
    repurchases = (occurrences - 1).astype(float)
    # 0 ** 0 would be 1; a single purchase never counts as a repurchase
    discounted = (repurchases ** alpha).where(repurchases > 0, 0.0)
    per_item = discounted.groupby(level="item_id")
    n_buyers = per_item.size()
    rep_f = per_item.sum() / n_buyers
    mean_rep_f = float(rep_f.mean())
    rep_i = rep_f + mean_rep_f / n_buyers
    logger.info(f"Fitted repetition features for {len(rep_i)} items (alpha={alpha}, beta={beta}, "
                f"mean RepF={mean_rep_f:.4f})")
    return RepetitionModel(
        rep_feature=MappingProxyType({item: float(value) for item, value in rep_i.items()}),
        alpha=alpha,
        beta=beta,
        mean_rep_f=mean_rep_f,
        n_buyers=MappingProxyType({item: int(value) for item, value in n_buyers.items()}),
        rep_feature_enabled=rep_feature_enabled,
    )


def _interest_table(history: Sequence, beta: float) -> dict:
    T = len(history)
    table = {}
    for position, basket in enumerate(history, start=1):
        weight = beta ** (T - position)
        for item in basket:
            table[item] = table.get(item, 0.0) + weight
    return table


def user_interest(history: Sequence, beta: float, item) -> float:
    """Sum of beta**(T - l) over the 1-based positions l of baskets holding the item."""
    table = _interest_table(history, beta)
    if item not in table:
        raise ValueError(f"item {item} does not occur in the history")
    return table[item]


def repetition_scores(model: RepetitionModel, history: Sequence) -> RepetitionScores:
    table = _interest_table(history, model.beta)
    return RepetitionScores(MappingProxyType(
        {item: interest * model.item_feature(item) for item, interest in table.items()}))


def score_quantiles(model: RepetitionModel, histories: Mapping, quantiles: Sequence) -> list:
    """Quantiles of the pooled repetition scores of the given users."""
    pooled = [score for user in sorted(histories)
              for score in repetition_scores(model, histories[user]).scores.values()]
    if not pooled:
        return [0.0 for _ in quantiles]
    return [float(value) for value in np.quantile(np.asarray(pooled), list(quantiles))]


# --------------------------------------------------------------------------
# Exploration module
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExplorationPolicy:
    kind: str
    item_popularity: Mapping
    groups: Optional[GroupAssignment] = None
    categories: Optional[Mapping] = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in EXPLORATION_KINDS:
            raise ValueError(f"unknown exploration policy {self.kind}")
        if self.kind == "fairness" and self.groups is None:
            raise ValueError("the fairness policy needs a group assignment")
        if self.kind == "diversity" and self.categories is None:
            raise ValueError("the diversity policy needs item categories")

    @classmethod
    def build(cls, kind: str, train: Dataset, groups: Optional[GroupAssignment] = None,
              seed: int = 0) -> "ExplorationPolicy":
        counts = train.item_basket_counts()
        popularity = {item: counts.get(item, 0) for item in train.items}
        if kind == "fairness" and groups is None:
            groups = group_assignment(train)
        return cls(kind, MappingProxyType(popularity), groups, train.categories, seed)

    @cached_property
    def ranked_items(self) -> np.ndarray:
        ranked = sorted(self.item_popularity, key=lambda item: (-self.item_popularity[item], item))
        return np.array(ranked, dtype=object)

    @cached_property
    def rank_of(self) -> dict:
        return {item: index for index, item in enumerate(self.ranked_items)}

    @cached_property
    def universe(self) -> frozenset:
        return frozenset(self.rank_of)

    @cached_property
    def ranked_popularity(self) -> np.ndarray:
        return np.array([self.item_popularity[item] for item in self.ranked_items], dtype=float)

    @cached_property
    def unpopular_mask(self) -> np.ndarray:
        unpopular = self.groups.unpopular if self.groups is not None else frozenset()
        return np.array([item in unpopular for item in self.ranked_items], dtype=bool)

    def explore_mask(self, rep_set) -> np.ndarray:
        """Mask of catalog items outside the user's repeat set."""
        mask = np.ones(len(self.ranked_items), dtype=bool)
        mask[[self.rank_of[item] for item in rep_set if item in self.rank_of]] = False
        return mask

    def candidate_mask(self, candidates) -> np.ndarray:
        """
        Boolean mask over `ranked_items`. Candidates may already be such a
        mask; items outside the policy catalog are ignored.
        """
        if isinstance(candidates, np.ndarray):
            return candidates
        n = len(self.ranked_items)
        if len(candidates) * 2 <= n:
            mask = np.zeros(n, dtype=bool)
            mask[[self.rank_of[item] for item in candidates if item in self.rank_of]] = True
        else:
            mask = np.ones(n, dtype=bool)
            mask[[self.rank_of[item] for item in self.universe.difference(candidates)]] = False
        return mask

    def most_popular(self, candidates, m_slots: int, exclude=()) -> list:
        if m_slots <= 0:
            return []
        exclude = set(exclude)
        picked = []
        for index in np.flatnonzero(self.candidate_mask(candidates)):
            item = self.ranked_items[index]
            if item not in exclude:
                picked.append(item)
                if len(picked) == m_slots:
                    break
        return picked


def explore_fairness(expl_candidates, policy: ExplorationPolicy, m_slots: int, user_id: str = "") -> list:
    """
    Sample unpopular explore items with probability proportional to their
    training purchase count, without replacement. A short pool is used up
    and the rest filled by popularity from any group.
    """
    if policy.kind != "fairness":
        raise ValueError("explore_fairness needs a fairness policy")
    if m_slots <= 0:
        return []
    mask = policy.candidate_mask(expl_candidates)
    pool = np.flatnonzero(mask & policy.unpopular_mask & (policy.ranked_popularity > 0))
    rng = np.random.default_rng(derive_seed(policy.rng_seed, user_id))
    draws = min(m_slots, len(pool))
    picked = []
    if draws:
        weights = policy.ranked_popularity[pool]
        chosen = rng.choice(pool, size=draws, replace=False, p=weights / weights.sum())
        picked = [policy.ranked_items[index] for index in chosen]
    if len(picked) < m_slots:
        logger.warning(f"fairness pool of user {user_id} holds {len(pool)} items for {m_slots} slots; "
                       f"filling the rest by popularity")
        picked += policy.most_popular(expl_candidates, m_slots - len(picked), exclude=picked)
    return picked


def explore_diversity(expl_candidates, policy: ExplorationPolicy, basket_so_far: Sequence, m_slots: int) -> list:
    """
    Walk explore candidates from most to least popular and take those whose
    category is not yet in the basket; top up by popularity if categories run out.
    """
    if policy.kind != "diversity":
        raise ValueError("explore_diversity needs a diversity policy")
    if m_slots <= 0:
        return []
    categories = policy.categories
    seen = {categories.get(item) for item in basket_so_far}
    picked = []
    for index in np.flatnonzero(policy.candidate_mask(expl_candidates)):
        item = policy.ranked_items[index]
        category = categories.get(item)
        if category not in seen:
            picked.append(item)
            seen.add(category)
            if len(picked) == m_slots:
                return picked
    return picked + policy.most_popular(expl_candidates, m_slots - len(picked), exclude=picked)


def generate_basket(scores: RepetitionScores, v: float, k: int, expl_candidates,
                    policy: ExplorationPolicy, user_id: str = "") -> Recommendation:
    """
    Repetition-greedy basket: repeat candidates scoring at least v fill the
    basket by descending score, exploration fills whatever is left.
    """
    if k < 1:
        raise ValueError("basket size k must be at least 1")
    survivors = [item for item in scores.ranked() if scores.scores[item] >= v]
    if len(survivors) >= k:
        return Recommendation(user_id, survivors[:k], (REPEAT,) * k, v)
    m_slots = k - len(survivors)
    if policy.kind == "fairness":
        explore = explore_fairness(expl_candidates, policy, m_slots, user_id)
    elif policy.kind == "diversity":
        explore = explore_diversity(expl_candidates, policy, survivors, m_slots)
    else:
        explore = policy.most_popular(expl_candidates, m_slots)
    items = survivors + list(explore)
    return Recommendation(user_id, items, (REPEAT,) * len(survivors) + (EXPLORE,) * len(explore), v)


def recommend_all(model: RepetitionModel, histories: Mapping, policy: ExplorationPolicy, v: float, k: int) -> list:
    """generate_basket for every user, in user id order."""
    recommendations = []
    for user_id in sorted(histories):
        scores = repetition_scores(model, histories[user_id])
        recommendations.append(generate_basket(scores, v, k, policy.explore_mask(scores.rep_set), policy, user_id))
    return recommendations


class TrexRecommender(Recommender):
    """Repetition module plus one exploration policy behind the Recommender interface."""

    def __init__(self, alpha: float = 0.5, beta: float = 0.9, rep_feature_enabled: bool = True,
                 v: float = 0.0, exploration: str = "none", seed: int = 0,
                 groups: Optional[GroupAssignment] = None, name: Optional[str] = None):
        _check_alpha_beta(alpha, beta)
        if exploration not in EXPLORATION_KINDS:
            raise ValueError(f"unknown exploration policy {exploration}")
        self.alpha = alpha
        self.beta = beta
        self.rep_feature_enabled = rep_feature_enabled
        self.v = v
        self.exploration = exploration
        self.seed = seed
        self.groups = groups
        self.name = name or ("trex_rep" if exploration == "none" else f"trex_{exploration}")
        self.model = None
        self.policy = None
        self.catalog = frozenset()

    def fit(self, train: Dataset, feature_corpus: Optional[Dataset] = None) -> "TrexRecommender":
        """Fit on `train`; item features may come from a different (e.g. subsampled) corpus."""
        self.model = fit_repetition(feature_corpus or train, self.alpha, self.beta, self.rep_feature_enabled)
        self.catalog = train.items
        self.policy = ExplorationPolicy.build(self.exploration, train, self.groups, self.seed)
        return self

    def user_state(self, history: Sequence):
        """Repetition scores plus the explore candidates as a mask over the policy ranking."""
        scores = repetition_scores(self.model, history)
        return scores, self.policy.explore_mask(scores.rep_set)

    def recommend(self, user_id: str, history: Sequence, k: int, v: Optional[float] = None) -> Recommendation:
        if self.model is None:
            raise RuntimeError("fit the recommender before asking for baskets")
        scores, expl = self.user_state(history)
        return generate_basket(scores, self.v if v is None else v, k, expl, self.policy, user_id)

    def params(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "rep_feature_enabled": self.rep_feature_enabled,
                "v": self.v, "exploration": self.exploration, "seed": self.seed}

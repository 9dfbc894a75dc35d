"""
Frequency and neighbourhood baselines for next-basket recommendation:
G-TopFreq, P-TopFreq, GP-TopFreq, TIFUKNN and UP-CF@r.
"""
import logging
import math
from collections import Counter
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import Dataset
from .trex import Recommendation, Recommender, TrexRecommender
from .utils import rank_by_score

logger = logging.getLogger(__name__)

BATCH_SIZE = 128


def _rep_set(history: Sequence) -> set:
    return {item for basket in history for item in basket}


def global_ranking(train: Dataset) -> list:
    """Items by descending corpus basket count, ties by item id."""
    return rank_by_score(train.item_basket_counts())


def personal_ranking(history: Sequence) -> list:
    counts = Counter(item for basket in history for item in basket)
    return rank_by_score(counts)


def g_topfreq(train: Dataset, k: int) -> dict:
    """The same k most frequent items for every training user."""
    top = global_ranking(train)[:k]
    return {record.user_id: Recommendation.with_membership(record.user_id, top, _rep_set(record.baskets))
            for record in train.users}


def p_topfreq(history: Sequence, k: int, user_id: str = "") -> Recommendation:
    top = personal_ranking(history)[:k]
    return Recommendation.with_membership(user_id, top, _rep_set(history))


def gp_topfreq(history: Sequence, train: Dataset, k: int, user_id: str = "",
               ranking: Optional[Sequence] = None) -> Recommendation:
    """P-TopFreq prefix, remaining slots from the global ranking."""
    items = personal_ranking(history)[:k]
    present = set(items)
    for item in ranking if ranking is not None else global_ranking(train):
        if len(items) >= k:
            break
        if item not in present:
            items.append(item)
            present.add(item)
    return Recommendation.with_membership(user_id, items, _rep_set(history))


class GTopFreq(Recommender):
    name = "g_topfreq"

    def __init__(self):
        self.ranking = []

    def fit(self, train: Dataset) -> "GTopFreq":
        self.ranking = global_ranking(train)
        return self

    def recommend(self, user_id: str, history: Sequence, k: int) -> Recommendation:
        return Recommendation.with_membership(user_id, self.ranking[:k], _rep_set(history))


class PTopFreq(Recommender):
    name = "p_topfreq"

    def fit(self, train: Dataset) -> "PTopFreq":
        return self

    def recommend(self, user_id: str, history: Sequence, k: int) -> Recommendation:
        return p_topfreq(history, k, user_id)


class GPTopFreq(GTopFreq):
    name = "gp_topfreq"

    def recommend(self, user_id: str, history: Sequence, k: int) -> Recommendation:
        return gp_topfreq(history, None, k, user_id, ranking=self.ranking)


def _top_k_dense(row: np.ndarray, k: int) -> np.ndarray:
    candidates = np.flatnonzero(row > 0)
    order = np.lexsort((candidates, -row[candidates]))
    return candidates[order[:k]]


def _top_k_sparse(indices: np.ndarray, data: np.ndarray, k: int) -> np.ndarray:
    positive = data > 0
    indices, data = indices[positive], data[positive]
    order = np.lexsort((indices, -data))
    return indices[order[:k]]


def _rows_to_matrix(rows: Sequence, item_index: Mapping) -> sp.csr_matrix:
    """Sparse matrix from a list of {item: weight}; items unknown to the index are dropped."""
    data, indices, indptr = [], [], [0]
    for row in rows:
        for item in sorted(row, key=lambda i: item_index.get(i, -1)):
            column = item_index.get(item)
            if column is not None:
                indices.append(column)
                data.append(row[item])
        indptr.append(len(indices))
    return sp.csr_matrix((np.asarray(data, dtype=float), np.asarray(indices, dtype=np.int64),
                          np.asarray(indptr, dtype=np.int64)), shape=(len(rows), len(item_index)))


# --------------------------------------------------------------------------
# TIFUKNN
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PifVector:
    user_id: str
    weights: Mapping


def group_sizes(n_baskets: int, m_groups: int) -> list:
    """Near-equal contiguous group sizes, oldest first; the earliest groups absorb the shortfall."""
    m = min(m_groups, n_baskets)
    if m == 0:
        return []
    base, remainder = divmod(n_baskets, m)
    return [base] * (m - remainder) + [base + 1] * remainder


def pif_vector(history: Sequence, m_groups: int, r_b: float, r_g: float, user_id: str = "") -> PifVector:
    """
    Personal item frequency with within-group and across-group time decay.

    Baskets (oldest first) are cut into contiguous groups; a group vector is
    the mean of its baskets' indicators weighted r_b**(g - p), and the PIF is
    the mean of group vectors weighted r_g**(m - j).
    """
    sizes = group_sizes(len(history), m_groups)
    m = len(sizes)
    weights = {}
    start = 0
    for j, size in enumerate(sizes, start=1):
        group_weight = r_g ** (m - j)
        for p, basket in enumerate(history[start:start + size], start=1):
            w = group_weight * r_b ** (size - p) / size / m
            for item in basket:
                weights[item] = weights.get(item, 0.0) + w
        start += size
    return PifVector(user_id, MappingProxyType(weights))


@dataclass(frozen=True)
class TifuknnModel:
    k_neighbors: int
    m_groups: int
    r_b: float
    r_g: float
    alpha: float
    user_ids: tuple
    item_ids: tuple
    item_index: Mapping
    user_index: Mapping
    pif_matrix: sp.csr_matrix

    def pif(self, user_id: str) -> PifVector:
        row = self.pif_matrix.getrow(self.user_index[user_id])
        return PifVector(user_id, MappingProxyType(
            {self.item_ids[c]: float(w) for c, w in zip(row.indices, row.data)}))


def _check_unit(name: str, value: float, lower_open: bool = True):
    low_ok = value > 0 if lower_open else value >= 0
    if not (low_ok and value <= 1):
        raise ValueError(f"{name} must be in {'(0' if lower_open else '[0'}, 1], got {value}")


def tifuknn_fit(train: Dataset, k_neighbors: int = 300, m_groups: int = 7, r_b: float = 0.9,
                r_g: float = 0.7, alpha: float = 0.7) -> TifuknnModel:
    if k_neighbors < 1 or m_groups < 1:
        raise ValueError("k_neighbors and m_groups must be positive")
    _check_unit("r_b", r_b)
    _check_unit("r_g", r_g)
    _check_unit("alpha", alpha, lower_open=False)
    user_ids = tuple(sorted(train.by_user))
    item_ids = train.sorted_items
    item_index = MappingProxyType({item: i for i, item in enumerate(item_ids)})
    rows = [pif_vector(train.history(user), m_groups, r_b, r_g).weights for user in user_ids]
    matrix = _rows_to_matrix(rows, item_index)
    logger.info(f"Fitted TIFUKNN PIF table: {matrix.shape[0]} users x {matrix.shape[1]} items, "
                f"{matrix.nnz} non-zeros")
    return TifuknnModel(k_neighbors, m_groups, r_b, r_g, alpha, user_ids, item_ids, item_index,
                        MappingProxyType({u: i for i, u in enumerate(user_ids)}), matrix)


def tifuknn_predict_many(model: TifuknnModel, histories: Mapping, k: int) -> list:
    """Fuse each user's PIF with the mean PIF of their nearest neighbours (Euclidean)."""
    users = sorted(histories)
    queries = _rows_to_matrix(
        [pif_vector(histories[u], model.m_groups, model.r_b, model.r_g).weights for u in users],
        model.item_index)
    library = model.pif_matrix
    library_sq = np.asarray(library.multiply(library).sum(axis=1)).ravel()
    n_library = library.shape[0]
    recommendations = []
    warned = False
    for start in range(0, len(users), BATCH_SIZE):
        batch_users = users[start:start + BATCH_SIZE]
        block = queries[start:start + BATCH_SIZE]
        if model.alpha < 1.0 and n_library:
            block_sq = np.asarray(block.multiply(block).sum(axis=1)).ravel()
            dist = block_sq[:, None] + library_sq[None, :] - 2.0 * (block @ library.T).toarray()
            own = [model.user_index.get(u) for u in batch_users]
            for row, column in enumerate(own):
                if column is not None:
                    dist[row, column] = np.inf
            weights_rows, weights_cols, weights_data = [], [], []
            for row, column in enumerate(own):
                available = n_library - (column is not None)
                n_neighbors = min(model.k_neighbors, available)
                if n_neighbors < model.k_neighbors and not warned:
                    logger.warning(f"only {available} neighbours available for k_neighbors={model.k_neighbors}")
                    warned = True
                if n_neighbors == 0:
                    continue
                nearest = np.argsort(dist[row], kind="stable")[:n_neighbors]
                weights_rows.extend([row] * n_neighbors)
                weights_cols.extend(nearest.tolist())
                weights_data.extend([1.0 / n_neighbors] * n_neighbors)
            selector = sp.csr_matrix((weights_data, (weights_rows, weights_cols)),
                                     shape=(len(batch_users), n_library))
            fused = (model.alpha * block + (1.0 - model.alpha) * (selector @ library)).tocsr()
        else:
            fused = block
        for row, user in enumerate(batch_users):
            lo, hi = fused.indptr[row], fused.indptr[row + 1]
            top = _top_k_sparse(fused.indices[lo:hi], fused.data[lo:hi], k)
            items = [model.item_ids[c] for c in top]
            recommendations.append(Recommendation.with_membership(user, items, _rep_set(histories[user])))
    return recommendations


def tifuknn_predict(model: TifuknnModel, user_id: str, history: Sequence, k: int) -> Recommendation:
    return tifuknn_predict_many(model, {user_id: history}, k)[0]


class Tifuknn(Recommender):
    name = "tifuknn"

    def __init__(self, k_neighbors: int = 300, m_groups: int = 7, r_b: float = 0.9, r_g: float = 0.7,
                 alpha: float = 0.7):
        self.hyperparams = {"k_neighbors": k_neighbors, "m_groups": m_groups, "r_b": r_b, "r_g": r_g,
                            "alpha": alpha}
        self.model = None

    def fit(self, train: Dataset) -> "Tifuknn":
        self.model = tifuknn_fit(train, **self.hyperparams)
        return self

    def recommend(self, user_id: str, history: Sequence, k: int) -> Recommendation:
        return tifuknn_predict_many(self.model, {user_id: history}, k)[0]

    def recommend_many(self, histories: Mapping, k: int) -> list:
        return tifuknn_predict_many(self.model, histories, k)

    def params(self) -> dict:
        return dict(self.hyperparams)


# --------------------------------------------------------------------------
# UP-CF@r
# --------------------------------------------------------------------------

def uwp_vector(history: Sequence, recency: Optional[int]) -> dict:
    """Share of the user's last min(r, T) baskets containing each item."""
    window = history[-recency:] if recency else history
    if not window:
        return {}
    counts = Counter(item for basket in window for item in basket)
    return {item: count / len(window) for item, count in counts.items()}


@dataclass(frozen=True)
class UpcfModel:
    recency: Optional[int]
    locality: float
    asymmetry: float
    user_ids: tuple
    item_ids: tuple
    item_index: Mapping
    user_index: Mapping
    binary: sp.csr_matrix
    uwp: sp.csr_matrix

    @property
    def set_sizes(self) -> np.ndarray:
        return np.asarray(self.binary.sum(axis=1)).ravel()


def similarity(set_u, set_v, asymmetry: float) -> float:
    """Asymmetric cosine |I_u & I_v| / (|I_u|**w * |I_v|**(1-w)) on distinct-item sets."""
    if not set_u or not set_v:
        return 0.0
    return len(set(set_u) & set(set_v)) / (len(set_u) ** asymmetry * len(set_v) ** (1.0 - asymmetry))


def upcf_fit(train: Dataset, recency: Optional[int] = None, locality: float = 5.0,
             asymmetry: float = 0.25) -> UpcfModel:
    if recency is not None and recency < 1:
        raise ValueError("recency must be a positive number of baskets or None for all")
    if locality <= 0:
        raise ValueError("locality must be positive")
    _check_unit("asymmetry", asymmetry, lower_open=False)
    user_ids = tuple(sorted(train.by_user))
    item_ids = train.sorted_items
    item_index = MappingProxyType({item: i for i, item in enumerate(item_ids)})
    binary = _rows_to_matrix([dict.fromkeys(_rep_set(train.history(u)), 1.0) for u in user_ids], item_index)
    uwp = _rows_to_matrix([uwp_vector(train.history(u), recency) for u in user_ids], item_index)
    logger.info(f"Fitted UP-CF@r tables for {len(user_ids)} users (r={recency}, q={locality}, "
                f"asymmetry={asymmetry})")
    return UpcfModel(recency, locality, asymmetry, user_ids, item_ids, item_index,
                     MappingProxyType({u: i for i, u in enumerate(user_ids)}), binary, uwp)


def upcf_predict_many(model: UpcfModel, histories: Mapping, k: int) -> list:
    """score(u, i) = UWP(u, i) + sum over other users v of sim(u, v)**q * UWP(v, i)."""
    users = sorted(histories)
    sizes = model.set_sizes
    uwp_t = model.uwp.T.tocsr()
    recommendations = []
    for start in range(0, len(users), BATCH_SIZE):
        batch_users = users[start:start + BATCH_SIZE]
        own_sets = [_rep_set(histories[u]) for u in batch_users]
        queries = _rows_to_matrix([dict.fromkeys(s, 1.0) for s in own_sets], model.item_index)
        own_uwp = _rows_to_matrix([uwp_vector(histories[u], model.recency) for u in batch_users],
                                  model.item_index).toarray()
        query_sizes = np.array([len(s) for s in own_sets], dtype=float)
        overlap = (queries @ model.binary.T).toarray()
        denominator = query_sizes[:, None] ** model.asymmetry * sizes[None, :] ** (1.0 - model.asymmetry)
        sim = np.divide(overlap, denominator, out=np.zeros_like(overlap), where=denominator > 0)
        weights = sim ** model.locality
        for row, user in enumerate(batch_users):
            column = model.user_index.get(user)
            if column is not None:
                weights[row, column] = 0.0
        scores = own_uwp + np.asarray((uwp_t @ weights.T).T)
        for row, user in enumerate(batch_users):
            top = _top_k_dense(scores[row], k)
            items = [model.item_ids[c] for c in top]
            recommendations.append(Recommendation.with_membership(user, items, own_sets[row]))
    return recommendations


def upcf_predict(model: UpcfModel, user_id: str, history: Sequence, k: int) -> Recommendation:
    return upcf_predict_many(model, {user_id: history}, k)[0]


class UpCf(Recommender):
    name = "upcf"

    def __init__(self, recency: Optional[int] = None, locality: float = 5.0, asymmetry: float = 0.25):
        if isinstance(recency, float) and math.isinf(recency):
            recency = None
        self.hyperparams = {"recency": recency, "locality": locality, "asymmetry": asymmetry}
        self.model = None

    def fit(self, train: Dataset) -> "UpCf":
        self.model = upcf_fit(train, **self.hyperparams)
        return self

    def recommend(self, user_id: str, history: Sequence, k: int) -> Recommendation:
        return upcf_predict(self.model, user_id, history, k)

    def recommend_many(self, histories: Mapping, k: int) -> list:
        return upcf_predict_many(self.model, histories, k)

    def params(self) -> dict:
        return dict(self.hyperparams)


METHODS = {
    "g_topfreq": GTopFreq,
    "p_topfreq": PTopFreq,
    "gp_topfreq": GPTopFreq,
    "tifuknn": Tifuknn,
    "upcf": UpCf,
    "trex_rep": lambda **kw: TrexRecommender(**{**kw, "exploration": "none"}),
    "trex_fairness": lambda **kw: TrexRecommender(**{**kw, "exploration": "fairness"}),
    "trex_diversity": lambda **kw: TrexRecommender(**{**kw, "exploration": "diversity"}),
}
TREX_METHODS = ("trex_rep", "trex_fairness", "trex_diversity")


def build_recommender(name: str, params: Optional[Mapping] = None) -> Recommender:
    """Instantiate a method from the registry with keyword hyperparameters."""
    if name not in METHODS:
        raise ValueError(f"unknown method {name}; choose from {sorted(METHODS)}")
    return METHODS[name](**dict(params or {}))

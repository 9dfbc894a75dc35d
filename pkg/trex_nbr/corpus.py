"""
Basket corpora: ingestion, preprocessing, train/validation/test splitting,
repeat/explore bookkeeping and a synthetic generator.

A corpus is a set of users, each with an oldest-first sequence of baskets.
Item and user ids are strings throughout.
"""
import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .utils import CorpusError, IngestionError, atomic_write_text, write_json, write_jsonl

logger = logging.getLogger(__name__)

Basket = tuple

BASKETS_FILE = "baskets.jsonl"
CATEGORIES_FILE = "categories.jsonl"
SPLIT_FILE = "split.json"

INSTACART_COLUMNS = {
    "orders_file": "orders.csv",
    "prior_file": "order_products__prior.csv",
    "train_file": "order_products__train.csv",
    "products_file": "products.csv",
    "order_id": "order_id",
    "user_id": "user_id",
    "order_number": "order_number",
    "product_id": "product_id",
    "category": "aisle_id",
}

DUNNHUMBY_COLUMNS = {
    "transactions_file": "transaction_data.csv",
    "products_file": "product.csv",
    "user_id": "household_key",
    "basket_id": "BASKET_ID",
    "day": "DAY",
    "time": "TRANS_TIME",
    "product_id": "PRODUCT_ID",
    "category": "COMMODITY_DESC",
}


def make_basket(items: Iterable) -> Basket:
    """Basket from an iterable of item ids, duplicates dropped, first occurrence kept."""
    return tuple(dict.fromkeys(str(item) for item in items))


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    baskets: tuple

    def __post_init__(self):
        for basket in self.baskets:
            if not basket:
                raise CorpusError(f"user {self.user_id} has an empty basket")
            if len(set(basket)) != len(basket):
                raise CorpusError(f"user {self.user_id} has a basket with duplicate items")

    @property
    def n_baskets(self) -> int:
        return len(self.baskets)


@dataclass(frozen=True)
class Dataset:
    """Users with ordered basket sequences plus the item catalog and taxonomy."""

    users: tuple
    items: frozenset
    categories: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "categories", MappingProxyType(dict(self.categories)))
        seen = set()
        for record in self.users:
            if record.user_id in seen:
                raise CorpusError(f"duplicate user id {record.user_id}")
            seen.add(record.user_id)
            for basket in record.baskets:
                for item in basket:
                    if item not in self.items:
                        raise CorpusError(f"item {item} of user {record.user_id} is not in the catalog")
        missing = [item for item in self.items if item not in self.categories]
        if missing:
            raise CorpusError(f"{len(missing)} catalog items have no category, e.g. {sorted(missing)[0]}")

    @classmethod
    def from_sequences(cls, sequences: Mapping, categories: Mapping, items: Optional[Iterable] = None):
        """Build a Dataset from {user_id: [[item, ...], ...]}; the catalog defaults to all purchased items."""
        users = tuple(
            UserRecord(str(user_id), tuple(make_basket(basket) for basket in baskets))
            for user_id, baskets in sequences.items()
        )
        if items is None:
            items = {item for record in users for basket in record.baskets for item in basket}
        catalog = frozenset(str(item) for item in items)
        return cls(users, catalog, {str(k): str(v) for k, v in categories.items() if str(k) in catalog})

    @cached_property
    def by_user(self) -> Mapping:
        return MappingProxyType({record.user_id: record for record in self.users})

    @cached_property
    def sorted_items(self) -> tuple:
        return tuple(sorted(self.items))

    @property
    def n_users(self) -> int:
        return len(self.users)

    def history(self, user_id: str) -> tuple:
        return self.by_user[user_id].baskets

    def item_basket_counts(self) -> Counter:
        """Number of baskets containing each item, over all users."""
        counts = Counter()
        for record in self.users:
            for basket in record.baskets:
                counts.update(basket)
        return counts

    def to_frame(self) -> pd.DataFrame:
        """Long table with one row per (user, basket position, item); positions are 1-based."""
        rows = [
            (record.user_id, position, item)
            for record in self.users
            for position, basket in enumerate(record.baskets, start=1)
            for item in basket
        ]
        return pd.DataFrame(rows, columns=["user_id", "position", "item_id"])


@dataclass(frozen=True)
class SplitDataset:
    """Training histories plus each user's held-out last basket."""

    train: Dataset
    validation_users: frozenset
    test_users: frozenset
    targets: Mapping
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "targets", MappingProxyType(dict(self.targets)))
        if self.validation_users & self.test_users:
            raise CorpusError("validation and test users overlap")
        everyone = set(self.train.by_user)
        if (self.validation_users | self.test_users) != everyone:
            raise CorpusError("validation and test users must cover every user")
        if set(self.targets) != everyone:
            raise CorpusError("every user needs exactly one target basket")

    @property
    def catalog(self) -> frozenset:
        return self.train.items

    @property
    def categories(self) -> Mapping:
        return self.train.categories

    def targets_for(self, users: Iterable) -> dict:
        return {user: self.targets[user] for user in sorted(users)}

    def validation_targets(self) -> dict:
        return self.targets_for(self.validation_users)

    def test_targets(self) -> dict:
        return self.targets_for(self.test_users)

    def histories(self, users: Iterable) -> dict:
        return {user: self.train.history(user) for user in sorted(users)}

    def full_dataset(self) -> Dataset:
        """Training baskets with every target appended back."""
        users = tuple(
            UserRecord(record.user_id, record.baskets + (self.targets[record.user_id],))
            for record in self.train.users
        )
        return Dataset(users, self.train.items, self.train.categories)


@dataclass(frozen=True)
class RepeatExploreSets:
    rep: frozenset
    expl: frozenset


@dataclass(frozen=True)
class DatasetStats:
    n_items: int
    n_users: int
    avg_basket_size: float
    avg_baskets_per_user: float
    repeat_ratio: float
    explore_ratio: float

    def to_dict(self) -> dict:
        return {
            "n_items": self.n_items,
            "n_users": self.n_users,
            "avg_basket_size": self.avg_basket_size,
            "avg_baskets_per_user": self.avg_baskets_per_user,
            "repeat_ratio": self.repeat_ratio,
            "explore_ratio": self.explore_ratio,
        }


# --------------------------------------------------------------------------
# Ingestion
# --------------------------------------------------------------------------

def ingest(fmt: str, path, columns: Optional[Mapping] = None,
           sample_users: Optional[int] = None, seed: int = 0) -> Dataset:
    """
    Load a raw corpus into a Dataset.

    Args:
        fmt (str): One of "instacart", "dunnhumby", "canonical"
        path: Directory holding the files the format needs
        columns (dict): Overrides for file and column names of the raw formats
        sample_users (int): Keep a seeded uniform sample of this many users
        seed (int): Seed for the user sample

    Returns:
        Dataset: Baskets ordered oldest first per user
    """
    path = Path(path)
    if not path.is_dir():
        raise IngestionError(path, reason="corpus directory does not exist")
    if fmt == "canonical":
        dataset = _ingest_canonical(path)
    elif fmt == "instacart":
        dataset = _ingest_instacart(path, {**INSTACART_COLUMNS, **(columns or {})})
    elif fmt == "dunnhumby":
        dataset = _ingest_dunnhumby(path, {**DUNNHUMBY_COLUMNS, **(columns or {})})
    else:
        raise ValueError(f"unknown corpus format: {fmt}")
    if sample_users is not None and sample_users < dataset.n_users:
        dataset = sample_dataset_users(dataset, sample_users, seed)
    logger.info(f"Ingested {fmt} corpus from {path}: {dataset.n_users} users, {len(dataset.items)} items")
    return dataset


def sample_dataset_users(dataset: Dataset, n_users: int, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    ids = sorted(dataset.by_user)
    chosen = set(rng.choice(len(ids), size=n_users, replace=False).tolist())
    users = tuple(dataset.by_user[ids[i]] for i in sorted(chosen))
    items = frozenset(item for record in users for basket in record.baskets for item in basket)
    return Dataset(users, items, {item: dataset.categories[item] for item in items})


def _read_jsonl(path: Path):
    if not path.is_file():
        raise IngestionError(path, reason="missing file")
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as e:
                raise IngestionError(path, line_no, f"malformed JSON ({e.msg})") from e


def _read_categories(path: Path) -> dict:
    categories = {}
    for line_no, row in _read_jsonl(path):
        if not isinstance(row, dict) or "item" not in row or "category" not in row:
            raise IngestionError(path, line_no, "expected {\"item\": ..., \"category\": ...}")
        categories[str(row["item"])] = str(row["category"])
    return categories


def _ingest_canonical(path: Path) -> Dataset:
    baskets_path = path / BASKETS_FILE
    categories = _read_categories(path / CATEGORIES_FILE)
    sequences = {}
    for line_no, row in _read_jsonl(baskets_path):
        if not isinstance(row, dict) or "user" not in row or not isinstance(row.get("baskets"), list):
            raise IngestionError(baskets_path, line_no, "expected {\"user\": ..., \"baskets\": [...]}")
        user_id = str(row["user"])
        if user_id in sequences:
            raise IngestionError(baskets_path, line_no, f"duplicate user {user_id}")
        baskets = []
        for basket in row["baskets"]:
            if not isinstance(basket, list) or not basket:
                raise IngestionError(baskets_path, line_no, f"empty basket at line {line_no}")
            basket = make_basket(basket)
            for item in basket:
                if item not in categories:
                    raise IngestionError(baskets_path, line_no, f"item {item} has no category")
            baskets.append(basket)
        sequences[user_id] = baskets
    return Dataset.from_sequences(sequences, categories)


def _read_csv(path: Path, required: Sequence) -> pd.DataFrame:
    if not path.is_file():
        raise IngestionError(path, reason="missing file")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, on_bad_lines="error")
    except pd.errors.ParserError as e:
        raise IngestionError(path, reason=f"malformed row ({e})") from e
    missing = [column for column in required if column not in frame.columns]
    if missing:
        raise IngestionError(path, 1, f"missing columns {missing}")
    for column in required:
        blank = frame.index[frame[column].str.strip() == ""]
        if len(blank):
            # header is line 1
            raise IngestionError(path, int(blank[0]) + 2, f"empty value in column {column}")
    return frame


def _category_map(path: Path, product_col: str, category_col: str) -> dict:
    products = _read_csv(path, [product_col, category_col])
    return dict(zip(products[product_col].str.strip(), products[category_col].str.strip()))


def _sequences_from_rows(rows: pd.DataFrame, categories: dict, source: Path) -> Dataset:
    """rows: user_id, basket_key, item_id, line; already sorted chronologically."""
    uncategorized = ~rows["item_id"].isin(categories.keys())
    if uncategorized.any():
        first = rows[uncategorized].iloc[0]
        raise IngestionError(source, int(first["line"]), f"item {first['item_id']} has no category")
    sequences = {}
    grouped = rows.groupby(["user_id", "basket_key"], sort=False)["item_id"].agg(list)
    for (user_id, _), items in grouped.items():
        sequences.setdefault(user_id, []).append(make_basket(items))
    return Dataset.from_sequences(sequences, categories)


def _ingest_instacart(path: Path, cols: Mapping) -> Dataset:
    orders = _read_csv(path / cols["orders_file"], [cols["order_id"], cols["user_id"], cols["order_number"]])
    order_number = pd.to_numeric(orders[cols["order_number"]], errors="coerce")
    if order_number.isna().any():
        bad = int(order_number.index[order_number.isna()][0]) + 2
        raise IngestionError(path / cols["orders_file"], bad, "order number is not numeric")
    orders = pd.DataFrame({
        "order_id": orders[cols["order_id"]].str.strip(),
        "user_id": orders[cols["user_id"]].str.strip(),
        "order_number": order_number.astype(int),
    })
    parts = []
    for key in ("prior_file", "train_file"):
        part_path = path / cols[key]
        if not part_path.is_file() and key == "train_file":
            continue
        part = _read_csv(part_path, [cols["order_id"], cols["product_id"]])
        parts.append(pd.DataFrame({
            "order_id": part[cols["order_id"]].str.strip(),
            "item_id": part[cols["product_id"]].str.strip(),
            "line": part.index.to_numpy() + 2,
            "source_rank": len(parts),
        }))
    lines = pd.concat(parts, ignore_index=True)
    lines["row"] = np.arange(len(lines))
    rows = lines.merge(orders, on="order_id", how="inner")
    rows = rows.sort_values(["user_id", "order_number", "row"], kind="stable")
    rows = rows.rename(columns={"order_id": "basket_key"})
    categories = _category_map(path / cols["products_file"], cols["product_id"], cols["category"])
    return _sequences_from_rows(rows, categories, path / cols["prior_file"])


def _ingest_dunnhumby(path: Path, cols: Mapping) -> Dataset:
    source = path / cols["transactions_file"]
    required = [cols["user_id"], cols["basket_id"], cols["day"], cols["product_id"]]
    frame = _read_csv(source, required)
    day = pd.to_numeric(frame[cols["day"]], errors="coerce")
    if day.isna().any():
        raise IngestionError(source, int(day.index[day.isna()][0]) + 2, "DAY is not numeric")
    if cols.get("time") and cols["time"] in frame.columns:
        time = pd.to_numeric(frame[cols["time"]], errors="coerce").fillna(0)
    else:
        time = pd.Series(0, index=frame.index)
    rows = pd.DataFrame({
        "user_id": frame[cols["user_id"]].str.strip(),
        "basket_key": frame[cols["basket_id"]].str.strip(),
        "item_id": frame[cols["product_id"]].str.strip(),
        "day": day.astype(int),
        "time": time.astype(int),
        "line": frame.index.to_numpy() + 2,
    })
    # a basket is ordered by its first row; ties fall back to source row order
    first = rows.groupby("basket_key", sort=False).agg(
        b_day=("day", "min"), b_time=("time", "min"), b_line=("line", "min"))
    rows = rows.join(first, on="basket_key")
    rows = rows.sort_values(["user_id", "b_day", "b_time", "b_line", "line"], kind="stable")
    categories = _category_map(path / cols["products_file"], cols["product_id"], cols["category"])
    return _sequences_from_rows(rows, categories, source)


# --------------------------------------------------------------------------
# Preprocessing and splitting
# --------------------------------------------------------------------------

def _preprocess_pass(dataset: Dataset, min_baskets: int, min_item_count: int, basket_cap: int) -> Dataset:
    counts = dataset.item_basket_counts()
    keep = {item for item, count in counts.items() if count >= min_item_count}
    users = []
    for record in dataset.users:
        baskets = []
        for basket in record.baskets:
            kept = tuple(item for item in basket if item in keep)
            if kept:
                baskets.append(kept)
        if len(baskets) < min_baskets:
            continue
        users.append(UserRecord(record.user_id, tuple(baskets[-basket_cap:])))
    items = frozenset(item for record in users for basket in record.baskets for item in basket)
    return Dataset(tuple(users), items, {item: dataset.categories[item] for item in items})


def preprocess(dataset: Dataset, min_baskets: int = 3, min_item_count: int = 5,
               basket_cap: int = 50, max_passes: int = 50) -> Dataset:
    """
    Drop rare items, emptied baskets and short users, then keep each user's
    most recent `basket_cap` baskets.

    The filters run in that order and the pass repeats until nothing changes,
    so the result is a fixed point of the pipeline.
    """
    if min_baskets < 1 or min_item_count < 1 or basket_cap < min_baskets:
        raise ValueError("invalid preprocessing thresholds")
    current = dataset
    for n_pass in range(1, max_passes + 1):
        result = _preprocess_pass(current, min_baskets, min_item_count, basket_cap)
        if not result.users:
            raise CorpusError("empty corpus after preprocessing")
        if result.users == current.users and result.items == current.items:
            break
        current = result
    logger.info(f"Preprocessed corpus in {n_pass} pass(es): {result.n_users} users, {len(result.items)} items")
    return result


def split(dataset: Dataset, seed: int) -> SplitDataset:
    """Hold out each user's last basket; alternate shuffled users between validation and test."""
    short = [record.user_id for record in dataset.users if record.n_baskets < 2]
    if short:
        raise CorpusError(f"{len(short)} users have fewer than 2 baskets, e.g. {short[0]}")
    rng = np.random.default_rng(seed)
    ids = sorted(dataset.by_user)
    order = rng.permutation(len(ids))
    validation = frozenset(ids[i] for i in order[0::2])
    test = frozenset(ids[i] for i in order[1::2])
    users = tuple(UserRecord(record.user_id, record.baskets[:-1]) for record in dataset.users)
    targets = {record.user_id: record.baskets[-1] for record in dataset.users}
    train = Dataset(users, dataset.items, dataset.categories)
    logger.info(f"Split {len(ids)} users into {len(validation)} validation and {len(test)} test users")
    return SplitDataset(train, validation, test, targets, seed)


def subsample_training(split_data: SplitDataset, ratio: float, seed: int) -> Dataset:
    """
    Training corpus restricted to a seeded share of users, for fitting
    item-level statistics on less data. Evaluation users and their
    histories are untouched.
    """
    if not 0 < ratio <= 1:
        raise ValueError("ratio must be in (0, 1]")
    train = split_data.train
    if ratio == 1:
        return train
    n_keep = max(1, int(round(ratio * train.n_users)))
    rng = np.random.default_rng(seed)
    ids = sorted(train.by_user)
    chosen = sorted(rng.choice(len(ids), size=n_keep, replace=False).tolist())
    users = tuple(train.by_user[ids[i]] for i in chosen)
    return Dataset(users, train.items, train.categories)


def repeat_explore_sets(history: Sequence, catalog: frozenset) -> RepeatExploreSets:
    rep = frozenset(item for basket in history for item in basket)
    return RepeatExploreSets(rep, frozenset(catalog) - rep)


def dataset_stats(split_data: SplitDataset) -> DatasetStats:
    full = split_data.full_dataset()
    n_baskets = sum(record.n_baskets for record in full.users)
    n_occurrences = sum(len(basket) for record in full.users for basket in record.baskets)
    repeat_hits = 0
    target_items = 0
    for record in split_data.train.users:
        rep = {item for basket in record.baskets for item in basket}
        target = split_data.targets[record.user_id]
        repeat_hits += sum(1 for item in target if item in rep)
        target_items += len(target)
    repeat_ratio = repeat_hits / target_items if target_items else 0.0
    return DatasetStats(
        n_items=len(full.items),
        n_users=full.n_users,
        avg_basket_size=n_occurrences / n_baskets,
        avg_baskets_per_user=n_baskets / full.n_users,
        repeat_ratio=repeat_ratio,
        explore_ratio=1.0 - repeat_ratio,
    )


def repeat_ratio_distribution(split_data: SplitDataset, bins: int = 10) -> pd.DataFrame:
    """Histogram of users by the repeat share of their target basket."""
    ratios = []
    for record in split_data.train.users:
        rep = {item for basket in record.baskets for item in basket}
        target = split_data.targets[record.user_id]
        ratios.append(sum(1 for item in target if item in rep) / len(target))
    counts, edges = np.histogram(np.asarray(ratios), bins=bins, range=(0.0, 1.0))
    return pd.DataFrame({
        "bin_low": edges[:-1],
        "bin_high": edges[1:],
        "n_users": counts,
        "share": counts / max(1, len(ratios)),
    })


# --------------------------------------------------------------------------
# Synthetic corpora
# --------------------------------------------------------------------------

def synth_generate(n_users: int, n_items: int, n_categories: int, baskets_per_user: int,
                   basket_size: int, repeat_prob: float, popularity_skew: float, seed: int) -> Dataset:
    """
    Desk-scale corpus with a controllable repeat rate.

    Each basket slot repeats a previously bought item (frequency-proportional)
    with probability `repeat_prob`, and otherwise explores an unseen item drawn
    from a Zipf(popularity_skew) catalog distribution.
    """
    if min(n_users, n_items, n_categories, baskets_per_user, basket_size) <= 0:
        raise ValueError("synthetic corpus parameters must be positive")
    if basket_size > n_items:
        raise ValueError("basket_size cannot exceed n_items")
    if not 0 <= repeat_prob <= 1 or popularity_skew <= 0:
        raise ValueError("repeat_prob must be in [0, 1] and popularity_skew positive")
    rng = np.random.default_rng(seed)
    width = len(str(n_items - 1))
    item_ids = [f"i{j:0{width}d}" for j in range(n_items)]
    categories = {item: f"c{int(c)}" for item, c in zip(item_ids, rng.integers(0, n_categories, size=n_items))}
    popularity = 1.0 / np.arange(1, n_items + 1) ** popularity_skew
    popularity = popularity[rng.permutation(n_items)]

    sequences = {}
    user_width = len(str(n_users - 1))
    for u in range(n_users):
        bought = np.zeros(n_items)
        baskets = []
        for _ in range(baskets_per_user):
            in_basket = np.zeros(n_items, dtype=bool)
            for _ in range(basket_size):
                repeat_w = np.where(in_basket, 0.0, bought)
                explore_w = np.where(in_basket | (bought > 0), 0.0, popularity)
                if rng.random() < repeat_prob and repeat_w.sum() > 0:
                    weights = repeat_w
                elif explore_w.sum() > 0:
                    weights = explore_w
                else:
                    weights = repeat_w
                choice = int(rng.choice(n_items, p=weights / weights.sum()))
                in_basket[choice] = True
            picked = np.flatnonzero(in_basket)
            bought[picked] += 1
            baskets.append([item_ids[j] for j in picked])
        sequences[f"u{u:0{user_width}d}"] = baskets
    return Dataset.from_sequences(sequences, categories, items=item_ids)


# --------------------------------------------------------------------------
# Canonical interchange files
# --------------------------------------------------------------------------

def save_canonical(dataset: Dataset, directory) -> Path:
    """Write baskets.jsonl and categories.jsonl for a dataset."""
    directory = Path(directory)
    write_jsonl(directory / BASKETS_FILE, (
        {"user": record.user_id, "baskets": [list(basket) for basket in record.baskets]}
        for record in sorted(dataset.users, key=lambda r: r.user_id)
    ))
    write_jsonl(directory / CATEGORIES_FILE, (
        {"item": item, "category": dataset.categories[item]} for item in dataset.sorted_items
    ))
    return directory


def save_split(split_data: SplitDataset, directory) -> Path:
    """Write the full processed corpus plus the user partition."""
    directory = Path(directory)
    save_canonical(split_data.full_dataset(), directory)
    write_json(directory / SPLIT_FILE, {
        "seed": split_data.seed,
        "validation_users": sorted(split_data.validation_users),
        "test_users": sorted(split_data.test_users),
    })
    return directory


def load_split(directory) -> SplitDataset:
    """Inverse of save_split: last basket of every user becomes the target."""
    directory = Path(directory)
    dataset = ingest("canonical", directory)
    split_path = directory / SPLIT_FILE
    if not split_path.is_file():
        raise IngestionError(split_path, reason="missing file")
    try:
        meta = json.loads(split_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise IngestionError(split_path, e.lineno, f"malformed JSON ({e.msg})") from e
    users = tuple(UserRecord(record.user_id, record.baskets[:-1]) for record in dataset.users)
    targets = {record.user_id: record.baskets[-1] for record in dataset.users}
    train = Dataset(users, dataset.items, dataset.categories)
    try:
        return SplitDataset(train, frozenset(meta["validation_users"]), frozenset(meta["test_users"]),
                            targets, int(meta.get("seed", 0)))
    except KeyError as e:
        raise IngestionError(split_path, reason=f"missing key {e}") from e


def corpus_hash(split_data: SplitDataset) -> str:
    """SHA-256 over the canonical serialization of the split."""
    digest = hashlib.sha256()
    full = split_data.full_dataset()
    for record in sorted(full.users, key=lambda r: r.user_id):
        digest.update(json.dumps([record.user_id, [list(b) for b in record.baskets]]).encode("utf-8"))
    for item in full.sorted_items:
        digest.update(f"{item}\t{full.categories[item]}\n".encode("utf-8"))
    digest.update(json.dumps([sorted(split_data.validation_users), sorted(split_data.test_users)]).encode("utf-8"))
    return digest.hexdigest()


def write_stats(split_data: SplitDataset, directory) -> dict:
    stats = dataset_stats(split_data).to_dict()
    directory = Path(directory)
    write_json(directory / "stats.json", stats)
    atomic_write_text(directory / "repeat_ratio_distribution.csv",
                      repeat_ratio_distribution(split_data).to_csv(index=False, float_format="%.10g"))
    return stats

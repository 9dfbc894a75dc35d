"""Small hand-built corpora shared by the test modules."""
import os
import sys

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from trex_nbr.corpus import Dataset, SplitDataset, split, synth_generate, preprocess

CATEGORIES = {
    'a': 'dairy', 'b': 'dairy', 'c': 'bakery', 'd': 'bakery',
    'e': 'fruit', 'f': 'fruit', 'g': 'snacks', 'h': 'drinks',
}


def toy_dataset():
    """Four users over eight items; item 'a' is the most bought."""
    sequences = {
        'u1': [['a', 'b'], ['a', 'c'], ['a', 'b', 'd'], ['a', 'e']],
        'u2': [['a', 'c'], ['c', 'd'], ['a', 'c', 'f']],
        'u3': [['b', 'e'], ['a', 'b'], ['b', 'g'], ['b', 'h']],
        'u4': [['d', 'f'], ['a', 'd'], ['d', 'g', 'h']],
    }
    return Dataset.from_sequences(sequences, CATEGORIES, items=CATEGORIES.keys())


def toy_split():
    """Toy corpus with the last basket held out; u1, u3 validate and u2, u4 test."""
    data = toy_dataset()
    users = tuple(type(record)(record.user_id, record.baskets[:-1]) for record in data.users)
    targets = {record.user_id: record.baskets[-1] for record in data.users}
    train = Dataset(users, data.items, data.categories)
    return SplitDataset(train, frozenset({'u1', 'u3'}), frozenset({'u2', 'u4'}), targets, 0)


def synthetic_split(n_users=60, n_items=80, seed=3, repeat_prob=0.6):
    data = synth_generate(n_users, n_items, n_categories=6, baskets_per_user=6, basket_size=5,
                          repeat_prob=repeat_prob, popularity_skew=1.0, seed=seed)
    return split(preprocess(data, min_baskets=3, min_item_count=2), seed)

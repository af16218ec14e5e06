"""Raw-data pipeline: parse, 5-core filter, remap to dense ids, split, stats.

File formats are whitespace-delimited ASCII/UTF-8, blank lines ignored.
Interactions: "user item" or "user item rating"; knowledge graph: "head
relation tail". Everything downstream works on dense contiguous ids.
"""

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, EmptyAfterFilterError, EmptyDatasetError, ParseError
from .seeding import stage_rng

log = logging.getLogger(__name__)


@dataclass
class RawDataset:
    interactions: list = field(default_factory=list)  # (user_token, item_token)
    triplets: list = field(default_factory=list)      # (head, relation, tail) tokens


@dataclass
class InteractionTable:
    num_users: int
    num_items: int
    train_pairs: np.ndarray  # (n, 2) int64, sorted by (user, item)
    test_pairs: np.ndarray
    user_train_items: list   # per user, sorted ascending
    item_train_users: list
    user_test_items: list


@dataclass
class KnowledgeGraphStore:
    num_entities: int
    num_relations: int
    num_items: int           # items occupy entity ids [0, num_items)
    triplets: np.ndarray     # (t, 3) int64, sorted by (head, relation, tail)


@dataclass
class DatasetStats:
    num_users: int
    num_items: int
    num_interactions: int
    num_entities: int
    num_relations: int
    num_triplets: int

    def as_dict(self):
        return {
            "num_users": self.num_users,
            "num_items": self.num_items,
            "num_interactions": self.num_interactions,
            "num_entities": self.num_entities,
            "num_relations": self.num_relations,
            "num_triplets": self.num_triplets,
        }


@dataclass
class IdMaps:
    users: dict
    items: dict
    entities: dict
    relations: dict


@dataclass
class ProcessedDataset:
    table: InteractionTable
    kg: KnowledgeGraphStore
    stats: DatasetStats
    id_maps: IdMaps
    items_missing_from_kg: list


def _lines(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            tokens = line.split()
            if tokens:
                yield line_no, tokens


def load_interactions(path, fmt="pairs", threshold=4.0):
    """Deduplicated (user, item) pairs in first-seen order.

    fmt="pairs" expects two tokens per line; fmt="rating" expects a numeric
    third column and keeps rows with rating >= threshold as implicit
    positives.
    """
    if fmt not in ("pairs", "rating"):
        raise ValueError(f"unknown interaction format {fmt!r}")
    pairs = []
    seen = set()
    duplicates = 0
    for line_no, tokens in _lines(path):
        if fmt == "pairs":
            if len(tokens) != 2:
                raise ParseError(path, line_no, f"expected 'user item', got {len(tokens)} tokens")
            user, item = tokens
        else:
            if len(tokens) != 3:
                raise ParseError(path, line_no, f"expected 'user item rating', got {len(tokens)} tokens")
            user, item, rating = tokens
            try:
                value = float(rating)
            except ValueError:
                raise ParseError(path, line_no, f"rating {rating!r} is not numeric") from None
            if value < threshold:
                continue
        key = (user, item)
        if key in seen:
            duplicates += 1
            continue
        seen.add(key)
        pairs.append(key)
    if not pairs:
        raise EmptyDatasetError(f"{path}: no interactions after parsing")
    if duplicates:
        log.info("dropped %d duplicate interaction(s) from %s", duplicates, path)
    return pairs


def load_kg(path):
    """Deduplicated (head, relation, tail) token triplets in first-seen order."""
    triplets = []
    seen = set()
    duplicates = 0
    for line_no, tokens in _lines(path):
        if len(tokens) != 3:
            raise ParseError(path, line_no, f"expected 'head relation tail', got {len(tokens)} tokens")
        key = tuple(tokens)
        if key in seen:
            duplicates += 1
            continue
        seen.add(key)
        triplets.append(key)
    if duplicates:
        log.info("dropped %d duplicate triplet(s) from %s", duplicates, path)
    return triplets


def apply_core_filter(pairs, k=5):
    """Keep users with at least k interactions; applied once, not iterated.

    Items left with zero interactions disappear from the pair list (the item
    vocabulary is built from the surviving pairs).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    degree = Counter(user for user, _ in pairs)
    kept = [(u, i) for u, i in pairs if degree[u] >= k]
    if not kept:
        raise EmptyAfterFilterError(f"no users with >= {k} interactions remain")
    removed_users = sum(1 for d in degree.values() if d < k)
    if removed_users:
        log.info("core filter removed %d user(s) with < %d interactions", removed_users, k)
    return kept


def remap_ids(pairs, triplets):
    """Dense contiguous ids: users and items by first appearance in the
    interactions, item entity ids equal to item ids, remaining entities
    following in triplet order, relations in triplet order.

    Returns (id pairs, id triplets, IdMaps, items_missing_from_kg).
    """
    users, items = {}, {}
    for user, item in pairs:
        if user not in users:
            users[user] = len(users)
        if item not in items:
            items[item] = len(items)

    kg_tokens = set()
    for head, _, tail in triplets:
        kg_tokens.add(head)
        kg_tokens.add(tail)
    missing = [tok for tok in items if tok not in kg_tokens]
    if missing:
        log.warning(
            "%d item(s) do not appear in the knowledge graph and keep empty attribute lists",
            len(missing),
        )

    entities = dict(items)  # items occupy the entity id prefix
    relations = {}
    id_triplets = []
    for head, rel, tail in triplets:
        for tok in (head, tail):
            if tok not in entities:
                entities[tok] = len(entities)
        if rel not in relations:
            relations[rel] = len(relations)
        id_triplets.append((entities[head], relations[rel], entities[tail]))

    id_pairs = [(users[u], items[i]) for u, i in pairs]
    maps = IdMaps(users=users, items=items, entities=entities, relations=relations)
    return id_pairs, id_triplets, maps, missing


def split_train_test(id_pairs, num_users, ratio=0.8, rng=None):
    """Per-user random split: ceil(ratio * degree) pairs to train, rest to test.

    Users whose test share would be empty contribute everything to train.
    Deterministic for a fixed rng seed: users visited in id order, items
    permuted from a sorted base order.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    if rng is None:
        rng = np.random.default_rng(0)
    by_user = defaultdict(list)
    for u, i in id_pairs:
        by_user[u].append(i)
    train, test = [], []
    for u in range(num_users):
        items = sorted(by_user[u])
        perm = rng.permutation(len(items))
        n_train = math.ceil(ratio * len(items))
        for pos, idx in enumerate(perm):
            (train if pos < n_train else test).append((u, items[idx]))
    return train, test


def build_interaction_table(train, test, num_users, num_items):
    train_arr = np.array(sorted(train), dtype=np.int64).reshape(-1, 2)
    test_arr = np.array(sorted(test), dtype=np.int64).reshape(-1, 2)
    user_train = [[] for _ in range(num_users)]
    item_train = [[] for _ in range(num_items)]
    user_test = [[] for _ in range(num_users)]
    for u, i in train_arr:
        user_train[u].append(i)
        item_train[i].append(u)
    for u, i in test_arr:
        user_test[u].append(i)
    return InteractionTable(
        num_users=num_users,
        num_items=num_items,
        train_pairs=train_arr,
        test_pairs=test_arr,
        user_train_items=[np.array(sorted(x), dtype=np.int64) for x in user_train],
        item_train_users=[np.array(sorted(x), dtype=np.int64) for x in item_train],
        user_test_items=[np.array(sorted(x), dtype=np.int64) for x in user_test],
    )


def build_kg_store(id_triplets, num_items, num_entities, num_relations):
    arr = np.array(sorted(id_triplets), dtype=np.int64).reshape(-1, 3)
    return KnowledgeGraphStore(
        num_entities=num_entities,
        num_relations=num_relations,
        num_items=num_items,
        triplets=arr,
    )


def compute_stats(table, kg):
    return DatasetStats(
        num_users=table.num_users,
        num_items=table.num_items,
        num_interactions=len(table.train_pairs) + len(table.test_pairs),
        num_entities=kg.num_entities,
        num_relations=kg.num_relations,
        num_triplets=len(kg.triplets),
    )


def prepare(interactions_path, kg_path, fmt="pairs", threshold=4.0, core=5,
            split_ratio=0.8, seed=2024):
    """Full pipeline from raw files to a ProcessedDataset."""
    pairs = load_interactions(interactions_path, fmt=fmt, threshold=threshold)
    log.info("parsed %d interactions", len(pairs))
    triplets = load_kg(kg_path)
    log.info("parsed %d triplets", len(triplets))
    pairs = apply_core_filter(pairs, k=core)
    log.info("after %d-core filter: %d interactions, %d users, %d items",
             core, len(pairs), len({u for u, _ in pairs}), len({i for _, i in pairs}))
    id_pairs, id_triplets, maps, missing = remap_ids(pairs, triplets)
    train, test = split_train_test(id_pairs, len(maps.users), ratio=split_ratio,
                                   rng=stage_rng(seed, "split"))
    log.info("split: %d train / %d test", len(train), len(test))
    table = build_interaction_table(train, test, len(maps.users), len(maps.items))
    kg = build_kg_store(id_triplets, len(maps.items), len(maps.entities), len(maps.relations))
    stats = compute_stats(table, kg)
    return ProcessedDataset(table=table, kg=kg, stats=stats, id_maps=maps,
                            items_missing_from_kg=missing)


# ---------------------------------------------------------------------------
# processed-dataset directory


def write_processed(out_dir, processed):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_pairs(out / "train.txt", processed.table.train_pairs)
    _write_pairs(out / "test.txt", processed.table.test_pairs)
    with open(out / "kg.txt", "w", encoding="utf-8") as fh:
        for h, r, t in processed.kg.triplets:
            fh.write(f"{h} {r} {t}\n")
    with open(out / "stats.txt", "w", encoding="utf-8") as fh:
        for key, value in processed.stats.as_dict().items():
            fh.write(f"{key}={value}\n")
    maps_dir = out / "id_maps"
    maps_dir.mkdir(exist_ok=True)
    for name, mapping in (("users", processed.id_maps.users),
                          ("items", processed.id_maps.items),
                          ("entities", processed.id_maps.entities),
                          ("relations", processed.id_maps.relations)):
        with open(maps_dir / f"{name}.txt", "w", encoding="utf-8") as fh:
            for token, idx in sorted(mapping.items(), key=lambda kv: kv[1]):
                fh.write(f"{token}\t{idx}\n")


def _write_pairs(path, pairs):
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in pairs:
            fh.write(f"{u} {i}\n")


def read_stats(path):
    values = {}
    for line_no, tokens in _lines(path):
        if len(tokens) != 1 or "=" not in tokens[0]:
            raise ParseError(path, line_no, "expected key=value")
        key, _, value = tokens[0].partition("=")
        try:
            values[key] = int(value)
        except ValueError:
            raise ParseError(path, line_no, f"non-integer value for {key}") from None
    try:
        return DatasetStats(**values)
    except TypeError:
        raise DataError(f"{path}: incomplete stats file") from None


def load_processed(data_dir):
    """Load a directory written by write_processed back into stores."""
    data_dir = Path(data_dir)
    stats = read_stats(data_dir / "stats.txt")
    train = _read_id_pairs(data_dir / "train.txt")
    test = _read_id_pairs(data_dir / "test.txt")
    table = build_interaction_table(train, test, stats.num_users, stats.num_items)
    triplets = []
    for line_no, tokens in _lines(data_dir / "kg.txt"):
        if len(tokens) != 3:
            raise ParseError(data_dir / "kg.txt", line_no, "expected 'head relation tail'")
        try:
            triplets.append(tuple(int(x) for x in tokens))
        except ValueError:
            raise ParseError(data_dir / "kg.txt", line_no, "non-integer id") from None
    kg = build_kg_store(triplets, stats.num_items, stats.num_entities, stats.num_relations)
    return table, kg, stats


def _read_id_pairs(path):
    pairs = []
    for line_no, tokens in _lines(path):
        if len(tokens) != 2:
            raise ParseError(path, line_no, "expected 'user_id item_id'")
        try:
            pairs.append((int(tokens[0]), int(tokens[1])))
        except ValueError:
            raise ParseError(path, line_no, "non-integer id") from None
    return pairs

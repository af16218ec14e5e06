"""Shared fixtures: tiny hand-built stores, a gradient-check fixture, and a
planted-structure synthetic dataset small enough to train in seconds."""

import numpy as np
import pytest

from kdar import ingest
from kdar.seeding import stage_rng
from kdar.train import TripletBatch


def build_table(train, test, num_users, num_items):
    return ingest.build_interaction_table(train, test, num_users, num_items)


def build_kg(triplets, num_items, num_entities, num_relations):
    return ingest.build_kg_store(triplets, num_items, num_entities, num_relations)


@pytest.fixture
def tiny_table():
    """3 users, 4 items, hand-picked split."""
    train = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 3), (2, 0)]
    test = [(0, 2), (1, 0), (2, 1)]
    return build_table(train, test, 3, 4)


@pytest.fixture
def tiny_kg():
    """4 items, attribute entities 4..6; item 3 has no attributes."""
    triplets = [(0, 0, 4), (0, 1, 5), (1, 0, 4), (2, 1, 6), (5, 0, 6)]
    return build_kg(triplets, 4, 7, 2)


def gradcheck_fixture():
    """6 users, 6 items, 10 triplets, plus a 12-row training batch.

    Sized so that a full-coordinate finite-difference sweep of every
    parameter finishes in seconds at d=4, L=2.
    """
    train = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 3), (2, 2), (2, 4),
             (3, 0), (3, 5), (4, 3), (4, 4), (5, 1), (5, 5)]
    test = [(0, 3), (1, 4), (2, 0), (3, 2), (4, 5), (5, 0)]
    table = build_table(train, test, 6, 6)
    triplets = [(0, 0, 6), (0, 1, 7), (1, 0, 6), (1, 1, 8), (2, 0, 7),
                (2, 1, 8), (3, 0, 7), (4, 1, 6), (5, 0, 8), (6, 1, 8)]
    kg = build_kg(triplets, 6, 9, 2)
    batch = TripletBatch(
        users=np.array([0, 0, 1, 2, 3, 4, 5, 0, 1, 2, 3, 4], dtype=np.int64),
        pos_items=np.array([0, 1, 3, 4, 5, 3, 1, 2, 1, 2, 0, 4], dtype=np.int64),
        neg_items=np.array([3, 4, 0, 5, 1, 0, 2, 5, 2, 3, 4, 2], dtype=np.int64))
    return table, kg, batch


def planted_dataset(num_users=40, block_items=12, seed=7):
    """Two user communities, each preferring one item block; items share
    block-level attribute entities. Trainable signal at desk scale."""
    rng = np.random.default_rng(seed)
    num_items = 2 * block_items
    pairs = []
    seen = set()
    for u in range(num_users):
        block = 0 if u < num_users // 2 else 1
        own = rng.choice(block_items, size=8, replace=False) + block * block_items
        cross = rng.choice(block_items, size=1) + (1 - block) * block_items
        for i in list(own) + list(cross):
            key = (u, int(i))
            if key not in seen:
                seen.add(key)
                pairs.append(key)
    train, test = ingest.split_train_test(pairs, num_users, ratio=0.8,
                                          rng=stage_rng(seed, "split"))
    table = ingest.build_interaction_table(train, test, num_users, num_items)
    triplets = []
    for i in range(num_items):
        triplets.append((i, 0, num_items + (0 if i < block_items else 1)))
        if i % 2 == 0:
            triplets.append((i, 1, num_items + 2))
    triplets.append((num_items, 1, num_items + 3))
    triplets.append((num_items + 1, 1, num_items + 3))
    kg = ingest.build_kg_store(triplets, num_items, num_items + 4, 2)
    return table, kg


@pytest.fixture(scope="session")
def planted():
    return planted_dataset()


def write_raw_files(dir_path, num_users=12, num_items=15, seed=3):
    """Token-level raw files: every user gets 6..8 items so the 5-core
    filter keeps everyone. Returns (interactions_path, kg_path)."""
    rng = np.random.default_rng(seed)
    inter = dir_path / "interactions.txt"
    kg = dir_path / "kg.txt"
    with open(inter, "w", encoding="utf-8") as fh:
        for u in range(num_users):
            count = int(rng.integers(6, 9))
            items = rng.choice(num_items, size=count, replace=False)
            for i in items:
                fh.write(f"user{u} item{i}\n")
    with open(kg, "w", encoding="utf-8") as fh:
        for i in range(num_items):
            fh.write(f"item{i} rel_category cat{i % 3}\n")
            if i % 2 == 0:
                fh.write(f"item{i} rel_tag tag0\n")
        fh.write("cat0 rel_related cat1\n")
    return inter, kg

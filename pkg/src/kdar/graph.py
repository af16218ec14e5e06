"""Edge-list index structures driving propagation and attention.

Both graphs are stored as flat edge arrays plus precomputed normalization
coefficients so that one propagation layer is a gather, a per-edge scale and
a scatter-add. Edge order is fixed at build time; accumulation follows it.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class CollabAdjacency:
    """Bipartite training-interaction graph.

    sym_coef[e] = 1 / sqrt(deg(u_e) * deg(i_e)) for symmetric propagation,
    user_mean_coef[e] = 1 / deg(u_e) for user-side attribute averaging.
    Degrees come from the training split only.
    """

    num_users: int
    num_items: int
    user_ids: np.ndarray
    item_ids: np.ndarray
    sym_coef: np.ndarray
    user_mean_coef: np.ndarray
    user_deg: np.ndarray
    item_deg: np.ndarray


def build_collab_graph(table):
    pairs = table.train_pairs
    user_ids = pairs[:, 0].copy()
    item_ids = pairs[:, 1].copy()
    user_deg = np.bincount(user_ids, minlength=table.num_users).astype(np.int64)
    item_deg = np.bincount(item_ids, minlength=table.num_items).astype(np.int64)
    du = user_deg[user_ids].astype(np.float64)
    di = item_deg[item_ids].astype(np.float64)
    return CollabAdjacency(
        num_users=table.num_users,
        num_items=table.num_items,
        user_ids=user_ids,
        item_ids=item_ids,
        sym_coef=1.0 / np.sqrt(du * di),
        user_mean_coef=1.0 / du,
        user_deg=user_deg,
        item_deg=item_deg,
    )


@dataclass
class KGAdjacency:
    """Directed attribute graph over entities, optionally augmented with an
    inverse edge (t, r + R, h) per original triplet.

    head_mean_coef[e] = 1 / deg(head_e) where deg counts outgoing edges in
    the augmented graph. item_edge_ids indexes the edges whose head is an
    item (entity id < num_items); those edges feed attention and fusion.
    """

    num_entities: int
    num_relations: int
    num_items: int
    head: np.ndarray
    rel: np.ndarray
    tail: np.ndarray
    head_mean_coef: np.ndarray
    head_deg: np.ndarray
    item_edge_ids: np.ndarray
    items_with_attributes: np.ndarray  # bool, (num_items,)


def build_kg_graph(kg, add_inverse=True):
    triplets = kg.triplets
    head = triplets[:, 0]
    rel = triplets[:, 1]
    tail = triplets[:, 2]
    num_relations = kg.num_relations
    if add_inverse:
        head = np.concatenate([head, triplets[:, 2]])
        rel = np.concatenate([rel, triplets[:, 1] + kg.num_relations])
        tail = np.concatenate([tail, triplets[:, 0]])
        num_relations = 2 * kg.num_relations
    head = head.astype(np.int64)
    rel = rel.astype(np.int64)
    tail = tail.astype(np.int64)
    head_deg = np.bincount(head, minlength=kg.num_entities).astype(np.int64)
    coef = np.zeros(len(head), dtype=np.float64)
    nonzero = head_deg[head] > 0
    coef[nonzero] = 1.0 / head_deg[head[nonzero]]
    item_edge_ids = np.flatnonzero(head < kg.num_items).astype(np.int64)
    items_with_attributes = np.zeros(kg.num_items, dtype=bool)
    items_with_attributes[head[item_edge_ids]] = True
    return KGAdjacency(
        num_entities=kg.num_entities,
        num_relations=num_relations,
        num_items=kg.num_items,
        head=head,
        rel=rel,
        tail=tail,
        head_mean_coef=coef,
        head_deg=head_deg,
        item_edge_ids=item_edge_ids,
        items_with_attributes=items_with_attributes,
    )


def degree_histogram(adj):
    """Exact degree counts {degree: node count}, zero-degree nodes omitted.

    For the bipartite graph both sides contribute; for the KG the outgoing
    (head) degrees are counted.
    """
    if isinstance(adj, CollabAdjacency):
        degrees = np.concatenate([adj.user_deg, adj.item_deg])
    else:
        degrees = adj.head_deg
    values, counts = np.unique(degrees[degrees > 0], return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}

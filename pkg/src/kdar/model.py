"""Dual-side attribute-enhanced recommender: propagation, attention, losses.

Representation plan per forward pass:
  user/item CF reps    layer-summed symmetric-normalized bipartite propagation
  entity KG reps       layer-summed relation-gated neighbor averaging
  user KG reps         mean over history of entity layers 0..L-1
  user preference      sum over history of per-item attended attribute sums
  item attribute rep   entity embedding plus attended attribute sum
  enhanced             (CF + attribute-based) / 2
  final                [enhanced || KG], inner-product scoring

All forward math runs on an autodiff tape; evaluation reuses the same code
with the gradients simply never requested.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError
from .graph import build_collab_graph, build_kg_graph
from .params import ParameterStore
from .seeding import stage_rng


@dataclass
class Hyperparameters:
    embed_dim: int = 64
    num_layers: int = 3
    tau: float = 1.0
    lambda_bpr_c: float = 1.0
    lambda_cl: float = 0.1
    lambda_reg: float = 1e-5
    learning_rate: float = 1e-4
    batch_size: int = 2048
    add_inverse: bool = True

    def validate(self):
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1")
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")
        for name in ("lambda_bpr_c", "lambda_cl", "lambda_reg"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class AblationFlags:
    no_enhancement: bool = False
    no_attention: bool = False
    no_cl: bool = False
    no_cg: bool = False


@dataclass
class RepresentationBundle:
    user_cf: object = None       # e_u^C
    item_cf: object = None       # e_i^C
    entity_kg: object = None     # e_h^K over all entities
    item_kg: object = None       # e_i^K, the item prefix of entity_kg
    user_kg: object = None       # e_u^K
    user_pref: object = None     # e_u^P, None when not computed
    item_attr: object = None     # e_i^A, None when not computed
    user_enh: object = None      # e_u^E
    item_enh: object = None      # e_i^E
    user_final: object = None    # e_u*
    item_final: object = None    # e_i*


@dataclass
class LossBreakdown:
    l_bpr: float = 0.0
    l_bpr_c: float = 0.0
    l_gac: float = 0.0
    l_pac: float = 0.0
    l_reg: float = 0.0
    total: float = 0.0


# ---------------------------------------------------------------------------
# representation operators


def propagate_cg(user0, item0, adj, num_layers, coef=None):
    """Layer-summed bipartite propagation; layer 0 included in the sums."""
    if coef is None:
        coef = adj.sym_coef.astype(user0.data.dtype)
    u_cur, i_cur = user0, item0
    u_sum, i_sum = user0, item0
    for _ in range(num_layers):
        u_next = ad.weighted_segment_sum(
            ad.gather_rows(i_cur, adj.item_ids), coef, adj.user_ids, adj.num_users)
        i_next = ad.weighted_segment_sum(
            ad.gather_rows(u_cur, adj.user_ids), coef, adj.item_ids, adj.num_items)
        u_sum = ad.add(u_sum, u_next)
        i_sum = ad.add(i_sum, i_next)
        u_cur, i_cur = u_next, i_next
    return u_sum, i_sum


def propagate_kg(entity0, relation0, adj, num_layers, coef=None):
    """Relation-gated neighbor averaging over entities.

    Returns (layer-summed representation incl. layer 0, list of per-layer
    outputs). Entities with no outgoing edges stay zero at layers >= 1.
    """
    if coef is None:
        coef = adj.head_mean_coef.astype(entity0.data.dtype)
    rel_rows = ad.gather_rows(relation0, adj.rel)
    layers = [entity0]
    total = entity0
    for _ in range(num_layers):
        msg = ad.mul(rel_rows, ad.gather_rows(layers[-1], adj.tail))
        nxt = ad.weighted_segment_sum(msg, coef, adj.head, adj.num_entities)
        layers.append(nxt)
        total = ad.add(total, nxt)
    return total, layers


def propagate_user_kg(entity_layers, collab, num_layers, coef=None):
    """User KG reps: sum over l=1..L of history means of entity layer l-1.

    By linearity this equals one history mean of the summed entity layers
    0..L-1. Users with no training items stay zero.
    """
    partial = entity_layers[0]
    for layer in entity_layers[1:num_layers]:
        partial = ad.add(partial, layer)
    if coef is None:
        coef = collab.user_mean_coef.astype(partial.data.dtype)
    rows = ad.gather_rows(partial, collab.item_ids)
    return ad.weighted_segment_sum(rows, coef, collab.user_ids, collab.num_users)


def attention_weights(entity0, relation0, w_key, w_query, adj, uniform=False):
    """Per-triplet attribute weights for item-headed edges.

    Returns (alpha, message rows e_r*e_t over item edges, head item ids).
    alpha is a softmax within each item's edge group, or the constant
    1/|neighbors| array when uniform=True.
    """
    ie = adj.item_edge_ids
    heads = adj.head[ie]
    msg = ad.mul(ad.gather_rows(relation0, adj.rel[ie]),
                 ad.gather_rows(entity0, adj.tail[ie]))
    if uniform:
        alpha = adj.head_mean_coef[ie].astype(entity0.data.dtype)
        return alpha, msg, heads
    dim = entity0.data.shape[1]
    keys = ad.matmul_rows(ad.gather_rows(entity0, heads), w_key)
    queries = ad.matmul_rows(msg, w_query)
    logits = ad.scale(ad.rowwise_dot(keys, queries), 1.0 / math.sqrt(dim))
    alpha = ad.grouped_softmax(logits, heads, adj.num_items)
    return alpha, msg, heads


def attribute_fusion(entity0, alpha, msg, heads, num_items):
    """e_i^A = entity embedding + attended attribute sum; also returns the
    bare attribute sum, which the user-preference rep reuses."""
    fused = ad.weighted_segment_sum(msg, alpha, heads, num_items)
    items0 = ad.gather_rows(entity0, np.arange(num_items, dtype=np.int64))
    return ad.add(items0, fused), fused


def user_preference(attr_sum, collab, ones=None):
    """e_u^P: unnormalized sum of per-item attribute sums over the history."""
    if ones is None:
        ones = np.ones(len(collab.item_ids), dtype=attr_sum.data.dtype)
    rows = ad.gather_rows(attr_sum, collab.item_ids)
    return ad.weighted_segment_sum(rows, ones, collab.user_ids, collab.num_users)


def enhance(e_cf, e_attr, no_enhancement=False):
    if no_enhancement or e_attr is None:
        return e_cf
    return ad.scale(ad.add(e_cf, e_attr), 0.5)


def final_representations(e_enh, e_kg, no_cg=False):
    if no_cg:
        return e_kg
    return ad.concat_cols(e_enh, e_kg)


def predict(e_u_star, e_i_star):
    """Inner-product score for a single user/item representation pair."""
    u = np.asarray(e_u_star)
    i = np.asarray(e_i_star)
    if u.shape != i.shape:
        raise ValueError(f"predict: width mismatch {u.shape} vs {i.shape}")
    return float(np.dot(u, i))


# ---------------------------------------------------------------------------
# loss operators


def _contrast(anchor, positive, negative, tau):
    """Mean over rows of -ln sigmoid((s(a,p) - s(a,n)) / tau), the two-term
    softmax contrast with cosine similarities."""
    s_pos = ad.cosine_similarity(anchor, positive)
    s_neg = ad.cosine_similarity(anchor, negative)
    diff = ad.scale(ad.sub(s_pos, s_neg), 1.0 / tau)
    return ad.scale(ad.mean(ad.log_sigmoid(diff)), -1.0)


def loss_gac(item_attr, item_cf, item_kg, tau, items):
    """Item-side alignment: attribute-fused rep vs CF rep, KG rep negative."""
    items = np.asarray(items, dtype=np.int64)
    return _contrast(ad.gather_rows(item_attr, items),
                     ad.gather_rows(item_cf, items),
                     ad.gather_rows(item_kg, items), tau)


def loss_pac(user_pref, user_cf, user_kg, tau, users):
    """User-side alignment: preference rep vs CF rep, KG rep negative."""
    users = np.asarray(users, dtype=np.int64)
    return _contrast(ad.gather_rows(user_pref, users),
                     ad.gather_rows(user_cf, users),
                     ad.gather_rows(user_kg, users), tau)


def loss_bpr(user_reps, item_reps, users, pos_items, neg_items):
    """Mean pairwise ranking loss -ln sigmoid(score_pos - score_neg)."""
    u = ad.gather_rows(user_reps, users)
    diff = ad.sub(ad.rowwise_dot(u, ad.gather_rows(item_reps, pos_items)),
                  ad.rowwise_dot(u, ad.gather_rows(item_reps, neg_items)))
    return ad.scale(ad.mean(ad.log_sigmoid(diff)), -1.0)


def l2_penalty(leaves, users, pos_items, neg_items):
    """Squared norms of the embedding rows the batch touches plus the two
    attention transforms, divided by the batch size."""
    terms = [
        ad.sum_squares(ad.gather_rows(leaves["user_cf_emb"], users)),
        ad.sum_squares(ad.gather_rows(leaves["item_cf_emb"], pos_items)),
        ad.sum_squares(ad.gather_rows(leaves["item_cf_emb"], neg_items)),
        ad.sum_squares(ad.gather_rows(leaves["entity_emb"], pos_items)),
        ad.sum_squares(ad.gather_rows(leaves["entity_emb"], neg_items)),
        ad.sum_squares(leaves["attn_key"]),
        ad.sum_squares(leaves["attn_query"]),
    ]
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.scale(total, 1.0 / len(users))


# ---------------------------------------------------------------------------


def build_model(table, kg_store, hp, flags=None, seed=2024, dtype=np.float32):
    """Adjacencies, freshly initialized parameters, and the wired model."""
    collab = build_collab_graph(table)
    kg_adj = build_kg_graph(kg_store, add_inverse=hp.add_inverse)
    store = ParameterStore.for_model(
        num_users=table.num_users, num_items=table.num_items,
        num_entities=kg_adj.num_entities, num_relations=kg_adj.num_relations,
        embed_dim=hp.embed_dim, rng=stage_rng(seed, "init"), dtype=dtype)
    return KdarModel(store, collab, kg_adj, hp, flags)


class KdarModel:
    """Ties parameters, adjacency structures and hyperparameters together."""

    def __init__(self, store, collab, kg_adj, hp, flags=None):
        hp.validate()
        self.store = store
        self.collab = collab
        self.kg_adj = kg_adj
        self.hp = hp
        self.flags = flags or AblationFlags()
        dtype = store.dtype
        self._cf_coef = collab.sym_coef.astype(dtype)
        self._user_mean_coef = collab.user_mean_coef.astype(dtype)
        self._kg_coef = kg_adj.head_mean_coef.astype(dtype)
        self._ones_edges = np.ones(len(collab.item_ids), dtype=dtype)

    @property
    def use_cl(self):
        return not self.flags.no_cl and self.hp.lambda_cl > 0

    def _needs_attr_reps(self):
        return not self.flags.no_enhancement or self.use_cl

    def leaves(self, tape):
        return {name: tape.leaf(self.store[name]) for name in
                ("user_cf_emb", "item_cf_emb", "entity_emb", "relation_emb",
                 "attn_key", "attn_query")}

    def compute_representations(self, tape, leaves=None):
        if leaves is None:
            leaves = self.leaves(tape)
        hp, flags = self.hp, self.flags
        b = RepresentationBundle()
        b.user_cf, b.item_cf = propagate_cg(
            leaves["user_cf_emb"], leaves["item_cf_emb"], self.collab,
            hp.num_layers, self._cf_coef)
        b.entity_kg, ent_layers = propagate_kg(
            leaves["entity_emb"], leaves["relation_emb"], self.kg_adj,
            hp.num_layers, self._kg_coef)
        b.item_kg = ad.gather_rows(
            b.entity_kg, np.arange(self.kg_adj.num_items, dtype=np.int64))
        b.user_kg = propagate_user_kg(
            ent_layers, self.collab, hp.num_layers, self._user_mean_coef)
        if self._needs_attr_reps():
            alpha, msg, heads = attention_weights(
                leaves["entity_emb"], leaves["relation_emb"],
                leaves["attn_key"], leaves["attn_query"], self.kg_adj,
                uniform=flags.no_attention)
            b.item_attr, attr_sum = attribute_fusion(
                leaves["entity_emb"], alpha, msg, heads, self.kg_adj.num_items)
            b.user_pref = user_preference(attr_sum, self.collab, self._ones_edges)
        b.user_enh = enhance(b.user_cf, b.user_pref, flags.no_enhancement)
        b.item_enh = enhance(b.item_cf, b.item_attr, flags.no_enhancement)
        b.user_final = final_representations(b.user_enh, b.user_kg, flags.no_cg)
        b.item_final = final_representations(b.item_enh, b.item_kg, flags.no_cg)
        return b, leaves

    def batch_loss(self, tape, batch):
        """Total training objective for one triplet batch, plus the parts."""
        hp = self.hp
        users = np.asarray(batch.users, dtype=np.int64)
        pos = np.asarray(batch.pos_items, dtype=np.int64)
        neg = np.asarray(batch.neg_items, dtype=np.int64)
        bundle, leaves = self.compute_representations(tape)

        total = loss_bpr(bundle.user_final, bundle.item_final, users, pos, neg)
        parts = LossBreakdown(l_bpr=float(total.data))
        l_bpr_c = loss_bpr(bundle.user_cf, bundle.item_cf, users, pos, neg)
        parts.l_bpr_c = float(l_bpr_c.data)
        if hp.lambda_bpr_c > 0:
            total = ad.add(total, ad.scale(l_bpr_c, hp.lambda_bpr_c))
        if self.use_cl:
            cl_items = np.unique(pos)
            cl_items = cl_items[self.kg_adj.items_with_attributes[cl_items]]
            if cl_items.size:
                l_gac = loss_gac(bundle.item_attr, bundle.item_cf,
                                 bundle.item_kg, hp.tau, cl_items)
                parts.l_gac = float(l_gac.data)
                total = ad.add(total, ad.scale(l_gac, hp.lambda_cl))
            l_pac = loss_pac(bundle.user_pref, bundle.user_cf, bundle.user_kg,
                             hp.tau, np.unique(users))
            parts.l_pac = float(l_pac.data)
            total = ad.add(total, ad.scale(l_pac, hp.lambda_cl))
        if hp.lambda_reg > 0:
            l_reg = l2_penalty(leaves, users, pos, neg)
            parts.l_reg = float(l_reg.data)
            total = ad.add(total, ad.scale(l_reg, hp.lambda_reg))
        parts.total = float(total.data)
        return total, parts

    def frozen_representations(self):
        """Forward pass with plain arrays out, for evaluation and inspection."""
        tape = ad.Tape()
        bundle, _ = self.compute_representations(tape)
        out = RepresentationBundle()
        for name in vars(bundle):
            var = getattr(bundle, name)
            if var is not None:
                setattr(out, name, var.data.copy())
        return out

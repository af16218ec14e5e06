"""All-ranking evaluation: Recall@K, NDCG@K, AUC, and user-group reports.

Every item a user never interacted with in training is a candidate; test
items are the positives. Metrics are averaged over users with at least one
test item. Ranking ties break by ascending item id so reports reproduce.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

DEFAULT_KS = (5, 10, 20, 50, 100)

GROUP_MODES = ("interaction-count", "item-popularity")


@dataclass
class RankingReport:
    k_list: tuple
    recall: dict
    ndcg: dict
    auc: float
    num_users: int
    per_user: dict  # parallel arrays keyed by metric name


@dataclass
class GroupReport:
    mode: str
    boundaries: tuple
    groups: list  # one dict per group: label, count, recall, ndcg, auc


def rank_candidates(scores, exclude):
    """Candidate items sorted by descending score, ties by ascending id."""
    mask = np.ones(scores.shape[0], dtype=bool)
    mask[np.asarray(exclude, dtype=np.int64)] = False
    cand = np.flatnonzero(mask)
    order = np.lexsort((cand, -scores[cand]))
    return cand[order]


def recall_at_k(ranked, test_items, k):
    test = set(int(t) for t in test_items)
    hits = sum(1 for i in ranked[:k] if int(i) in test)
    return hits / len(test)


def ndcg_at_k(ranked, test_items, k):
    test = set(int(t) for t in test_items)
    dcg = sum(1.0 / np.log2(p + 2) for p, i in enumerate(ranked[:k]) if int(i) in test)
    ideal = sum(1.0 / np.log2(p + 2) for p in range(min(len(test), k)))
    return dcg / ideal


def auc_from_scores(cand_scores, pos_mask):
    """Pairwise AUC with ties counted half, via tie-averaged rank sums.

    Returns None when the user has no positives or no negatives.
    """
    p = int(pos_mask.sum())
    n = cand_scores.shape[0] - p
    if p == 0 or n == 0:
        return None
    ranks = rankdata(cand_scores)
    return (ranks[pos_mask].sum() - p * (p + 1) / 2.0) / (p * n)


def evaluate_reps(user_final, item_final, table, k_list=DEFAULT_KS, shard_size=512):
    """Score every user against all items, shard by shard, and aggregate."""
    ks = tuple(sorted(set(int(k) for k in k_list)))
    num_items = item_final.shape[0]
    eval_users = np.array(
        [u for u in range(table.num_users) if len(table.user_test_items[u]) > 0],
        dtype=np.int64)
    n = len(eval_users)
    disc = 1.0 / np.log2(np.arange(2, num_items + 2, dtype=np.float64))
    idcg_cum = np.concatenate([[0.0], np.cumsum(disc)])
    item_pop = np.array([len(x) for x in table.item_train_users], dtype=np.float64)

    per_user = {"user": eval_users.astype(np.float64),
                "train_degree": np.zeros(n), "item_popularity": np.zeros(n),
                "auc": np.zeros(n), "auc_valid": np.zeros(n, dtype=bool)}
    for k in ks:
        per_user[f"recall@{k}"] = np.zeros(n)
        per_user[f"ndcg@{k}"] = np.zeros(n)

    is_test = np.zeros(num_items, dtype=bool)
    for start in range(0, n, shard_size):
        shard = eval_users[start:start + shard_size]
        blocks = user_final[shard] @ item_final.T
        for row, u in enumerate(shard):
            pos = start + row
            scores = blocks[row].astype(np.float64)
            train_items = table.user_train_items[u]
            test_items = table.user_test_items[u]
            ranked = rank_candidates(scores, train_items)
            is_test[test_items] = True
            hit_positions = np.flatnonzero(is_test[ranked]) + 1
            n_test = len(test_items)
            for k in ks:
                in_top = hit_positions[hit_positions <= k]
                per_user[f"recall@{k}"][pos] = len(in_top) / n_test
                dcg = disc[in_top - 1].sum()
                per_user[f"ndcg@{k}"][pos] = dcg / idcg_cum[min(n_test, k)]
            cand_scores = scores[ranked]
            auc = auc_from_scores(cand_scores, is_test[ranked])
            if auc is not None:
                per_user["auc"][pos] = auc
                per_user["auc_valid"][pos] = True
            per_user["train_degree"][pos] = len(train_items)
            if len(train_items):
                per_user["item_popularity"][pos] = item_pop[train_items].mean()
            is_test[test_items] = False

    valid = per_user["auc_valid"]
    return RankingReport(
        k_list=ks,
        recall={k: float(per_user[f"recall@{k}"].mean()) for k in ks},
        ndcg={k: float(per_user[f"ndcg@{k}"].mean()) for k in ks},
        auc=float(per_user["auc"][valid].mean()) if valid.any() else 0.0,
        num_users=n,
        per_user=per_user)


def group_report(report, mode, n_groups=3):
    """Tercile breakdown by train degree or by mean historical-item
    popularity; group 1 holds the lowest values."""
    if mode not in GROUP_MODES:
        raise ValueError(f"unknown group mode {mode!r}")
    key = "train_degree" if mode == "interaction-count" else "item_popularity"
    values = report.per_user[key]
    qs = np.quantile(values, [i / n_groups for i in range(1, n_groups)])
    groups = []
    lower = -np.inf
    for g in range(n_groups):
        upper = qs[g] if g < n_groups - 1 else np.inf
        member = (values > lower) & (values <= upper)
        lower = upper
        count = int(member.sum())
        entry = {"label": f"group{g + 1}", "count": count,
                 "recall": {}, "ndcg": {}, "auc": 0.0}
        for k in report.k_list:
            entry["recall"][k] = float(report.per_user[f"recall@{k}"][member].mean()) if count else 0.0
            entry["ndcg"][k] = float(report.per_user[f"ndcg@{k}"][member].mean()) if count else 0.0
        v = member & report.per_user["auc_valid"]
        entry["auc"] = float(report.per_user["auc"][v].mean()) if v.any() else 0.0
        groups.append(entry)
    return GroupReport(mode=mode, boundaries=tuple(float(q) for q in qs), groups=groups)


# ---------------------------------------------------------------------------
# report formatting


def report_lines(report):
    """Machine-readable metric lines, one `name<TAB>value` per line."""
    lines = [f"num_users\t{report.num_users}", f"auc\t{report.auc:.6f}"]
    for k in report.k_list:
        lines.append(f"recall@{k}\t{report.recall[k]:.6f}")
    for k in report.k_list:
        lines.append(f"ndcg@{k}\t{report.ndcg[k]:.6f}")
    return lines


def group_report_lines(grp):
    lines = [f"group_mode\t{grp.mode}",
             "boundaries\t" + ",".join(f"{b:.6f}" for b in grp.boundaries)]
    for entry in grp.groups:
        prefix = entry["label"]
        lines.append(f"{prefix}.count\t{entry['count']}")
        lines.append(f"{prefix}.auc\t{entry['auc']:.6f}")
        for k in entry["recall"]:
            lines.append(f"{prefix}.recall@{k}\t{entry['recall'][k]:.6f}")
        for k in entry["ndcg"]:
            lines.append(f"{prefix}.ndcg@{k}\t{entry['ndcg'][k]:.6f}")
    return lines


def format_report(report):
    """Aligned human-readable summary table."""
    rows = [("K", "Recall", "NDCG")]
    for k in report.k_list:
        rows.append((str(k), f"{report.recall[k]:.4f}", f"{report.ndcg[k]:.4f}"))
    widths = [max(len(r[c]) for r in rows) for c in range(3)]
    out = [f"users evaluated: {report.num_users}    AUC: {report.auc:.4f}"]
    for r in rows:
        out.append("  ".join(r[c].rjust(widths[c]) for c in range(3)))
    return "\n".join(out)

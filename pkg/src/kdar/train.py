"""Mini-batch sampling, the epoch loop, fitting with early stopping.

Every train pair appears exactly once per epoch, in an order drawn from the
sampling stream; each pair gets one uniformly drawn negative by rejection
against the user's training items. The metric history is fully determined
by (seed, config, data).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError
from .evaluate import DEFAULT_KS, evaluate_reps
from .model import LossBreakdown
from .params import Adam, save_checkpoint
from .seeding import stage_rng

log = logging.getLogger(__name__)

HISTORY_HEADER = "epoch\trecall@20\tndcg@20\tauc\tl_bpr\tl_bpr_c\tl_gac\tl_pac"


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 2048
    eval_every: int = 5
    patience: int = 10
    seed: int = 2024

    def validate(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")


@dataclass
class TripletBatch:
    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __len__(self):
        return len(self.users)


def sample_epoch_batches(table, batch_size, rng, max_tries=100):
    """Yield shuffled TripletBatch covers of the train pairs, one negative
    per positive. Rows whose negative cannot be found within max_tries
    redraw rounds are dropped with a warning."""
    train_sets = [set(items.tolist()) for items in table.user_train_items]
    pairs = table.train_pairs
    order = rng.permutation(len(pairs))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        users = pairs[idx, 0]
        pos = pairs[idx, 1]
        neg = rng.integers(0, table.num_items, size=len(idx))
        keep = np.ones(len(idx), dtype=bool)
        saturated = np.array([len(train_sets[u]) >= table.num_items for u in users])
        if saturated.any():
            log.warning("dropping %d pair(s): user(s) interacted with every item",
                        int(saturated.sum()))
            keep &= ~saturated
        active = np.flatnonzero(keep & np.array(
            [neg[k] in train_sets[users[k]] for k in range(len(idx))]))
        tries = 0
        while active.size:
            tries += 1
            if tries > max_tries:
                log.warning("dropping %d pair(s): no negative found in %d tries",
                            active.size, max_tries)
                keep[active] = False
                break
            neg[active] = rng.integers(0, table.num_items, size=active.size)
            active = active[[neg[k] in train_sets[users[k]] for k in active]]
        yield TripletBatch(users=users[keep].astype(np.int64),
                           pos_items=pos[keep].astype(np.int64),
                           neg_items=neg[keep].astype(np.int64))


def train_epoch(model, optimizer, batches):
    """One optimization pass; returns per-batch averages of the loss parts."""
    agg = LossBreakdown()
    count = 0
    for batch in batches:
        if len(batch) == 0:
            continue
        tape = ad.Tape()
        total, parts = model.batch_loss(tape, batch)
        tape.backward(total)
        optimizer.step()
        for name in vars(agg):
            setattr(agg, name, getattr(agg, name) + getattr(parts, name))
        count += 1
    if count:
        for name in vars(agg):
            setattr(agg, name, getattr(agg, name) / count)
    return agg


@dataclass
class FitResult:
    history: list
    best_epoch: int
    best_recall: float


def fit(model, table, cfg, k_list=DEFAULT_KS, out_dir=None):
    """Train with periodic evaluation and early stopping on Recall@20.

    Writes checkpoint.bin (best parameters so far) and history.txt under
    out_dir when given. Numerical failures propagate after the last good
    checkpoint has already been written.
    """
    cfg.validate()
    ks = tuple(sorted(set(k_list) | {20}))
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    optimizer = Adam(model.store, lr=model.hp.learning_rate)
    rng = stage_rng(cfg.seed, "sample")
    history = [HISTORY_HEADER]

    def checkpoint():
        if out_dir is not None:
            save_checkpoint(out_dir / "checkpoint.bin", model.store)

    def flush_history():
        if out_dir is not None:
            with open(out_dir / "history.txt", "w", encoding="utf-8") as fh:
                fh.write("\n".join(history) + "\n")

    def run_eval(epoch, parts):
        reps = model.frozen_representations()
        report = evaluate_reps(reps.user_final, reps.item_final, table, ks)
        history.append(
            f"{epoch}\t{report.recall[20]:.6f}\t{report.ndcg[20]:.6f}\t"
            f"{report.auc:.6f}\t{parts.l_bpr:.6f}\t{parts.l_bpr_c:.6f}\t"
            f"{parts.l_gac:.6f}\t{parts.l_pac:.6f}")
        return report

    report = run_eval(0, LossBreakdown())
    best_recall = report.recall[20]
    best_epoch = 0
    checkpoint()
    flush_history()
    bad_evals = 0
    for epoch in range(1, cfg.epochs + 1):
        parts = train_epoch(model, optimizer,
                            sample_epoch_batches(table, cfg.batch_size, rng))
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            report = run_eval(epoch, parts)
            log.info("epoch %d: recall@20 %.4f ndcg@20 %.4f auc %.4f",
                     epoch, report.recall[20], report.ndcg[20], report.auc)
            if report.recall[20] > best_recall:
                best_recall = report.recall[20]
                best_epoch = epoch
                bad_evals = 0
                checkpoint()
            else:
                bad_evals += 1
            flush_history()
            if bad_evals > cfg.patience:
                log.info("stopping early at epoch %d (best %.4f at epoch %d)",
                         epoch, best_recall, best_epoch)
                break
    flush_history()
    return FitResult(history=history, best_epoch=best_epoch, best_recall=best_recall)

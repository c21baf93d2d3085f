"""Top-K ranking metrics on held-out positives and the validation AUC reward.

Every held-out interaction is scored as its own query with a single relevant
item, so ``recall@K == K * precision@K`` by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .recmodel import MFParams, sample_negatives

DEFAULT_KS = (10, 20, 50)


def interaction_mask(train_items, m: int, n: int) -> np.ndarray:
    """Dense boolean ``m x n`` mask from per-user item lists (or pass a mask through)."""
    if isinstance(train_items, np.ndarray) and train_items.dtype == bool and train_items.ndim == 2:
        return train_items
    mask = np.zeros((m, n), dtype=bool)
    for u, items in enumerate(train_items):
        mask[u, np.asarray(items, dtype=np.int64)] = True
    return mask


@dataclass
class MetricsReport:
    ks: tuple[int, ...]
    precision: dict[int, float] = field(default_factory=dict)
    recall: dict[int, float] = field(default_factory=dict)
    f1: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)
    n_targets: int = 0
    n_skipped: int = 0
    auc: float | None = None

    def rows(self):
        for k in self.ks:
            yield {"k": k, "precision": self.precision[k], "recall": self.recall[k],
                   "f1": self.f1[k], "ndcg": self.ndcg[k]}


def target_ranks(params: MFParams, users, targets, mask: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """1-based rank of each target among the user's candidates.

    Candidates are items outside ``mask[u]``; ties are ordered by item index.
    Returns ``inf`` where the target itself is excluded and ``0`` where the
    user has no candidates at all.
    """
    users = np.asarray(users, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    ranks = np.empty(len(users))
    idx = np.arange(params.n)
    for s in range(0, len(users), chunk):
        u, t = users[s:s + chunk], targets[s:s + chunk]
        S = params.U[u] @ params.V.T
        cand = ~mask[u]
        ts = S[np.arange(len(u)), t][:, None]
        ahead = (S > ts) | ((S == ts) & (idx[None, :] < t[:, None]))
        r = 1.0 + np.sum(ahead & cand, axis=1)
        r[~cand[np.arange(len(u)), t]] = np.inf
        r[~cand.any(axis=1)] = 0.0
        ranks[s:s + chunk] = r
    return ranks


def rank_metrics(params: MFParams, test, train_items, ks=DEFAULT_KS) -> MetricsReport:
    """Precision, recall, F1 and NDCG at each K over single-target queries.

    Parameters
    ----------
    test : InteractionTable
        Held-out positives; one query per row.
    train_items : list of arrays or bool matrix
        Items excluded from each user's candidate set.
    """
    if len(test) == 0:
        raise ValueError("no test interactions to evaluate")
    mask = interaction_mask(train_items, params.m, params.n)
    ranks = target_ranks(params, test.user, test.item, mask)
    valid = ranks > 0
    n = int(valid.sum())
    report = MetricsReport(tuple(ks), n_targets=n, n_skipped=int(len(ranks) - n))
    r = ranks[valid]
    for k in ks:
        hit = r <= k
        hits = int(hit.sum())
        p = hits / (n * k) if n else 0.0
        rec = hits / n if n else 0.0
        gains = np.where(hit, 1.0 / np.log2(np.where(hit, r, 1.0) + 1.0), 0.0)
        report.precision[k] = p
        report.recall[k] = rec
        report.f1[k] = 2 * p * rec / (p + rec) if p + rec > 0 else 0.0
        report.ndcg[k] = float(gains.sum() / n) if n else 0.0
    return report


def pairwise_auc(pos_scores, neg_scores) -> float:
    """Mean over all (pos, neg) rows of ``[pos > neg] + 0.5 [pos == neg]``.

    ``pos_scores`` has shape ``(P,)`` and ``neg_scores`` shape ``(P, N)``.
    """
    pos = np.asarray(pos_scores)[:, None]
    neg = np.asarray(neg_scores)
    wins = np.count_nonzero(pos > neg)
    ties = np.count_nonzero(pos == neg)
    return (wins + 0.5 * ties) / neg.size


class AUCReward:
    """Validation AUC with negatives sampled once, at construction.

    Negatives for each validation positive are drawn uniformly from items the
    user has neither trained on nor holds in validation, so successive
    rewards differ only because the model changed.
    """

    def __init__(self, validation, train_items, m: int, n: int, n_neg_eval: int = 100, seed: int = 0):
        if len(validation) == 0:
            raise ValueError("validation set is empty")
        if n_neg_eval < 1:
            raise ValueError("n_neg_eval must be >= 1")
        known = interaction_mask(train_items, m, n).copy()
        known[validation.user, validation.item] = True
        keep = ~known.all(axis=1)[validation.user]
        self.users = validation.user[keep]
        self.items = validation.item[keep]
        self.negatives = sample_negatives(np.random.default_rng(seed), self.users, known, n_neg_eval)

    def __call__(self, params: MFParams) -> float:
        Ue = params.U[self.users]
        pos = np.einsum("bd,bd->b", Ue, params.V[self.items])
        neg = np.einsum("bd,bkd->bk", Ue, params.V[self.negatives])
        return pairwise_auc(pos, neg)


def auc_reward(params: MFParams, validation, train_items, n_neg_eval: int = 100, seed: int = 0) -> float:
    return AUCReward(validation, train_items, params.m, params.n, n_neg_eval, seed)(params)

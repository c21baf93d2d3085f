"""Matrix-factorization ranker trained with a weighted sampled-softmax loss.

Gradients are derived by hand and applied with a row-sparse Adam: only the
embedding rows touched by a minibatch have their moments and values updated.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_VERSION = "recdenoise-mf/1"


def adam_update(param, grad, m, v, step, lr, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update, in place on ``param``, ``m`` and ``v``.

    ``step`` is the 1-based step index used for the bias correction.
    """
    b1, b2 = betas
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * (grad * grad)
    m_hat = m / (1.0 - b1 ** step)
    v_hat = v / (1.0 - b2 ** step)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass(eq=False)
class MFParams:
    """User/item embedding tables plus row-sparse Adam state."""

    U: np.ndarray
    V: np.ndarray
    l2: float = 1e-5
    m_U: np.ndarray = field(default=None)
    v_U: np.ndarray = field(default=None)
    m_V: np.ndarray = field(default=None)
    v_V: np.ndarray = field(default=None)
    step: int = 0

    def __post_init__(self):
        if self.U.ndim != 2 or self.V.ndim != 2 or self.U.shape[1] != self.V.shape[1]:
            raise ValueError(f"incompatible embedding shapes {self.U.shape}, {self.V.shape}")
        if self.U.shape[1] < 1:
            raise ValueError("embedding dimension must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")
        for name, like in (("m_U", self.U), ("v_U", self.U), ("m_V", self.V), ("v_V", self.V)):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros_like(like))

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def n(self) -> int:
        return self.V.shape[0]

    @property
    def d(self) -> int:
        return self.U.shape[1]

    def copy(self) -> "MFParams":
        return MFParams(self.U.copy(), self.V.copy(), self.l2, self.m_U.copy(),
                        self.v_U.copy(), self.m_V.copy(), self.v_V.copy(), self.step)

    def equals(self, other: "MFParams") -> bool:
        return self.step == other.step and self.l2 == other.l2 and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("U", "V", "m_U", "v_U", "m_V", "v_V")
        )


@dataclass
class ScoredBatch:
    """Forward pass of a minibatch: column 0 of ``items`` is the positive."""

    users: np.ndarray
    items: np.ndarray
    scores: np.ndarray
    probs: np.ndarray
    losses: np.ndarray

    def __len__(self):
        return len(self.users)

    @property
    def pos_prob(self) -> np.ndarray:
        return self.probs[:, 0]


@dataclass
class SparseGrad:
    """Gradient restricted to the unique embedding rows a batch touched."""

    user_rows: np.ndarray
    user_grad: np.ndarray
    item_rows: np.ndarray
    item_grad: np.ndarray


def init_params(m: int, n: int, d: int = 64, seed: int = 0, init_scale: float = 0.1,
                l2: float = 1e-5) -> MFParams:
    if min(m, n, d) < 1:
        raise ValueError("m, n and d must be >= 1")
    rng = np.random.default_rng(seed)
    U = rng.normal(0.0, 1.0, size=(m, d)) * init_scale
    V = rng.normal(0.0, 1.0, size=(n, d)) * init_scale
    return MFParams(U, V, l2=l2)


def score(params: MFParams, u: int, v: int) -> float:
    if not (0 <= u < params.m and 0 <= v < params.n):
        raise IndexError(f"(user={u}, item={v}) out of range for {params.m} users, {params.n} items")
    return float(params.U[u] @ params.V[v])


def _log_softmax_rows(scores):
    top = scores.max(axis=-1, keepdims=True)
    log_z = top + np.log(np.exp(scores - top).sum(axis=-1, keepdims=True))
    return scores - log_z


def softmax_loss(params: MFParams, u: int, v_pos: int, v_negs) -> tuple[float, np.ndarray]:
    """Sampled-softmax loss of one positive against its negatives.

    Returns the loss and the softmax probabilities over ``[v_pos, *v_negs]``.
    """
    v_negs = np.asarray(v_negs, dtype=np.int64)
    if len(v_negs) < 1:
        raise ValueError("need at least one negative")
    if np.any(v_negs == v_pos):
        raise ValueError("positive item appears among the negatives")
    items = np.concatenate([[v_pos], v_negs])
    scores = params.V[items] @ params.U[u]
    logp = _log_softmax_rows(scores)
    return float(-logp[0]), np.exp(logp)


def batch_forward(params: MFParams, users, pos_items, neg_items) -> ScoredBatch:
    """Vectorized :func:`softmax_loss` over a minibatch.

    ``neg_items`` has shape ``(B, N_neg)``.
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.concatenate([np.asarray(pos_items, dtype=np.int64)[:, None],
                            np.asarray(neg_items, dtype=np.int64)], axis=1)
    scores = np.einsum("bd,bkd->bk", params.U[users], params.V[items])
    logp = _log_softmax_rows(scores)
    return ScoredBatch(users, items, scores, np.exp(logp), -logp[:, 0])


def _scatter_rows(index, rows, n_cols):
    uniq, inv = np.unique(index, return_inverse=True)
    out = np.zeros((len(uniq), n_cols))
    np.add.at(out, inv, rows)
    return uniq, out


def weighted_batch_loss(params: MFParams, batch: ScoredBatch, weights) -> tuple[float, SparseGrad]:
    """Weighted mean loss plus L2 on the touched rows, and its gradient.

    ``L = (1/B) sum_i w_i * loss_i + l2 * (||U_rows||^2 + ||V_rows||^2)`` where the
    rows are the unique users/items of the batch.  Weights are constants.
    """
    w = np.asarray(weights, dtype=np.float64)
    B = len(batch)
    if w.shape != (B,):
        raise ValueError(f"expected {B} weights, got shape {w.shape}")
    if np.any(w < 0):
        raise ValueError("sample weights must be non-negative")
    if B == 0:
        raise ValueError("empty batch")

    Ue = params.U[batch.users]
    Ve = params.V[batch.items]
    # d loss_i / d score_ij = p_ij - [j == 0]
    g = batch.probs.copy()
    g[:, 0] -= 1.0
    g *= (w / B)[:, None]
    grad_u = np.einsum("bk,bkd->bd", g, Ve)
    grad_v = g[:, :, None] * Ue[:, None, :]

    d = params.d
    u_rows, u_grad = _scatter_rows(batch.users, grad_u, d)
    v_rows, v_grad = _scatter_rows(batch.items.ravel(), grad_v.reshape(-1, d), d)

    loss = float(np.dot(w, batch.losses) / B)
    if params.l2 > 0:
        U_t, V_t = params.U[u_rows], params.V[v_rows]
        loss += params.l2 * (float(np.sum(U_t * U_t)) + float(np.sum(V_t * V_t)))
        u_grad += 2.0 * params.l2 * U_t
        v_grad += 2.0 * params.l2 * V_t
    return loss, SparseGrad(u_rows, u_grad, v_rows, v_grad)


def adam_step(params: MFParams, grads: SparseGrad, lr: float, betas=(0.9, 0.999),
              eps: float = 1e-8) -> MFParams:
    """Row-sparse Adam: moments and values change only on the gradient's rows.

    Mutates and returns ``params``.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    for label, rows, g in (("user", grads.user_rows, grads.user_grad),
                           ("item", grads.item_rows, grads.item_grad)):
        if g.shape != (len(rows), params.d):
            raise ValueError(f"{label} gradient shape {g.shape} does not match {len(rows)} rows")
        bad = ~np.isfinite(g).all(axis=1)
        if bad.any():
            raise FloatingPointError(f"non-finite gradient in {label} row {int(rows[bad][0])}")
    params.step += 1
    t = params.step
    for P, M, S, rows, g in ((params.U, params.m_U, params.v_U, grads.user_rows, grads.user_grad),
                             (params.V, params.m_V, params.v_V, grads.item_rows, grads.item_grad)):
        p_r, m_r, s_r = P[rows], M[rows], S[rows]
        adam_update(p_r, g, m_r, s_r, t, lr, betas, eps)
        P[rows], M[rows], S[rows] = p_r, m_r, s_r
    return params


def sample_negatives(rng: np.random.Generator, users, interacted: np.ndarray, n_neg: int) -> np.ndarray:
    """Uniform negatives per row from items the user has not interacted with.

    ``interacted`` is the dense ``m x n`` boolean train mask.  Collisions are
    redrawn until every entry is a non-interacted item.
    """
    users = np.asarray(users, dtype=np.int64)
    n = interacted.shape[1]
    negs = rng.integers(0, n, size=(len(users), n_neg))
    bad = interacted[users[:, None], negs]
    while bad.any():
        rows = np.nonzero(bad)
        negs[rows] = rng.integers(0, n, size=len(rows[0]))
        bad[rows] = interacted[users[rows[0]], negs[rows]]
    return negs


def recommend_topk(params: MFParams, u: int, K: int, exclude=()) -> np.ndarray:
    """Top-``K`` items by score outside ``exclude``; ties go to the lower index."""
    if not 0 <= u < params.m:
        raise IndexError(f"user {u} out of range")
    mask = np.ones(params.n, dtype=bool)
    mask[np.asarray(list(exclude) if not isinstance(exclude, np.ndarray) else exclude, dtype=np.int64)] = False
    candidates = np.flatnonzero(mask)
    if K > len(candidates):
        raise ValueError(f"K={K} exceeds the {len(candidates)} available items")
    s = params.V[candidates] @ params.U[u]
    order = np.lexsort((candidates, -s))
    return candidates[order[:K]]


def save_params(path: str | os.PathLike, params: MFParams) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, version=np.array(CHECKPOINT_VERSION), U=params.U, V=params.V,
                 m_U=params.m_U, v_U=params.v_U, m_V=params.m_V, v_V=params.v_V,
                 l2=np.array(params.l2), step=np.array(params.step))


def load_params(path: str | os.PathLike) -> MFParams:
    with np.load(path) as z:
        version = str(z["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported recommender checkpoint version {version!r}")
        return MFParams(z["U"], z["V"], float(z["l2"]), z["m_U"], z["v_U"],
                        z["m_V"], z["v_V"], int(z["step"]))

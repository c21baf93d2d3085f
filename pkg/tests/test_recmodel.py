import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from recdenoise.recmodel import (
    MFParams,
    SparseGrad,
    adam_step,
    batch_forward,
    init_params,
    load_params,
    recommend_topk,
    sample_negatives,
    save_params,
    score,
    softmax_loss,
    weighted_batch_loss,
)


def random_params(m=6, n=9, d=3, seed=0, l2=0.0):
    rng = np.random.default_rng(seed)
    return MFParams(rng.normal(size=(m, d)), rng.normal(size=(n, d)), l2=l2)


def random_batch(params, B=5, n_neg=3, seed=0):
    rng = np.random.default_rng(seed)
    users = rng.integers(0, params.m, B)
    pos = rng.integers(0, params.n, B)
    negs = np.array([rng.choice(np.setdiff1d(np.arange(params.n), [p]), n_neg, replace=False) for p in pos])
    return users, pos, negs


def dense_grad(params, grads):
    gU = np.zeros_like(params.U)
    gV = np.zeros_like(params.V)
    gU[grads.user_rows] = grads.user_grad
    gV[grads.item_rows] = grads.item_grad
    return gU, gV


def fd_grad(params, users, pos, negs, w, h=1e-5):
    def L():
        return weighted_batch_loss(params, batch_forward(params, users, pos, negs), w)[0]
    out = []
    for P in (params.U, params.V):
        g = np.zeros_like(P)
        for idx in np.ndindex(P.shape):
            old = P[idx]
            P[idx] = old + h
            lp = L()
            P[idx] = old - h
            lm = L()
            P[idx] = old
            g[idx] = (lp - lm) / (2 * h)
        out.append(g)
    return out


def max_rel_err(a, b, floor=1e-8):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


# -- init and score ------------------------------------------------------------

def test_init_zero_scale():
    p = init_params(4, 5, d=3, init_scale=0.0)
    assert not p.U.any() and not p.V.any()
    assert score(p, 1, 2) == 0.0


def test_init_seeded_and_std():
    a = init_params(2000, 100, d=64, seed=3)
    b = init_params(2000, 100, d=64, seed=3)
    assert a.equals(b)
    assert abs(a.U.std() - 0.1) / 0.1 < 0.02
    assert a.step == 0 and not a.m_U.any()


def test_init_rejects_bad_sizes():
    with pytest.raises(ValueError):
        init_params(0, 3)


def test_score_examples():
    p = MFParams(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert score(p, 0, 0) == 0.0
    assert score(p, 0, 1) == 1.0
    with pytest.raises(IndexError):
        score(p, 1, 0)


def test_score_matches_naive_loop():
    p = random_params(seed=4)
    for u in range(p.m):
        for v in range(p.n):
            naive = 0.0
            for k in range(p.d):
                naive += p.U[u, k] * p.V[v, k]
            assert score(p, u, v) == pytest.approx(naive, rel=0, abs=1e-14)


# -- loss --------------------------------------------------------------------

def test_softmax_loss_uniform():
    p = MFParams(np.zeros((1, 2)), np.zeros((3, 2)))
    loss, probs = softmax_loss(p, 0, 0, [1])
    assert loss == pytest.approx(math.log(2), abs=1e-15)
    np.testing.assert_allclose(probs, [0.5, 0.5])


def test_softmax_loss_limit():
    p = MFParams(np.array([[1.0]]), np.array([[200.0], [0.0], [-1.0]]))
    loss, _ = softmax_loss(p, 0, 0, [1, 2])
    assert 0 <= loss < 1e-80


def test_softmax_loss_matches_high_precision():
    mpmath.mp.dps = 50
    rng = np.random.default_rng(11)
    for trial in range(20):
        p = random_params(m=1, n=4, d=2, seed=trial)
        p.U *= 3
        loss, _ = softmax_loss(p, 0, 0, [1, 2, 3])
        s = [mpmath.fsum(mpmath.mpf(float(p.U[0, k])) * mpmath.mpf(float(p.V[v, k])) for k in range(2))
             for v in range(4)]
        ref = mpmath.log(mpmath.fsum(mpmath.exp(x) for x in s)) - s[0]
        assert abs(loss - float(ref)) < 1e-12


def test_softmax_loss_stable_at_large_scores():
    p = MFParams(np.array([[1.0]]), np.array([[1000.0], [-1000.0], [999.0]]))
    for pos, negs in ((0, [1, 2]), (1, [0, 2])):
        loss, probs = softmax_loss(p, 0, pos, negs)
        assert np.isfinite(loss) and np.all(np.isfinite(probs))
    assert softmax_loss(p, 0, 1, [0])[0] == pytest.approx(2000.0)


def test_softmax_loss_rejects_bad_negatives():
    p = random_params()
    with pytest.raises(ValueError):
        softmax_loss(p, 0, 1, [])
    with pytest.raises(ValueError):
        softmax_loss(p, 0, 1, [1, 2])


def test_batch_forward_matches_scalar_loss():
    p = random_params(seed=2)
    users, pos, negs = random_batch(p, B=7)
    batch = batch_forward(p, users, pos, negs)
    for i in range(7):
        loss, probs = softmax_loss(p, users[i], pos[i], negs[i])
        assert batch.losses[i] == pytest.approx(loss, abs=1e-13)
        np.testing.assert_allclose(batch.probs[i], probs, atol=1e-15)


def test_weighted_loss_zero_weights():
    p = random_params()
    users, pos, negs = random_batch(p)
    loss, g = weighted_batch_loss(p, batch_forward(p, users, pos, negs), np.zeros(5))
    assert loss == 0.0
    assert not g.user_grad.any() and not g.item_grad.any()


def test_weighted_loss_unit_weights_is_mean():
    p = random_params()
    users, pos, negs = random_batch(p)
    batch = batch_forward(p, users, pos, negs)
    loss, _ = weighted_batch_loss(p, batch, np.ones(5))
    assert loss == pytest.approx(batch.losses.mean(), abs=1e-15)


def test_weighted_loss_l2_on_touched_rows():
    p = random_params(l2=0.01)
    users, pos, negs = random_batch(p)
    batch = batch_forward(p, users, pos, negs)
    loss, _ = weighted_batch_loss(p, batch, np.zeros(5))
    touched_u, touched_v = np.unique(users), np.unique(np.concatenate([pos, negs.ravel()]))
    expected = 0.01 * (np.sum(p.U[touched_u] ** 2) + np.sum(p.V[touched_v] ** 2))
    assert loss == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("l2", [0.0, 0.05])
def test_weighted_loss_gradient_matches_fd(seed, l2):
    p = random_params(seed=seed, l2=l2)
    users, pos, negs = random_batch(p, B=6, seed=seed)
    w = np.random.default_rng(seed).uniform(0, 2, 6)
    _, g = weighted_batch_loss(p, batch_forward(p, users, pos, negs), w)
    gU, gV = dense_grad(p, g)
    fU, fV = fd_grad(p, users, pos, negs, w)
    assert max_rel_err(gU, fU, 1e-6) < 1e-4
    assert max_rel_err(gV, fV, 1e-6) < 1e-4


def test_weighted_loss_monotone_in_weight():
    p = random_params()
    users, pos, negs = random_batch(p)
    batch = batch_forward(p, users, pos, negs)
    w = np.ones(5)
    base = weighted_batch_loss(p, batch, w)[0]
    for i in range(5):
        w2 = w.copy()
        w2[i] += 0.5
        assert weighted_batch_loss(p, batch, w2)[0] > base


def test_weighted_loss_rejects_negative_weights():
    p = random_params()
    users, pos, negs = random_batch(p)
    with pytest.raises(ValueError):
        weighted_batch_loss(p, batch_forward(p, users, pos, negs), -np.ones(5))


# -- Adam --------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    p = random_params()
    before = p.copy()
    adam_step(p, SparseGrad(np.array([0, 2]), np.zeros((2, 3)), np.array([1]), np.zeros((1, 3))), 0.1)
    np.testing.assert_array_equal(p.U, before.U)
    np.testing.assert_array_equal(p.V, before.V)
    assert p.step == 1


def test_adam_first_step_moves_by_lr():
    p = MFParams(np.zeros((1, 1)), np.zeros((1, 1)))
    adam_step(p, SparseGrad(np.array([0]), np.ones((1, 1)), np.array([0]), np.ones((1, 1))), 0.1)
    assert p.U[0, 0] == pytest.approx(-0.1, abs=1e-8)


def reference_adam(x0, grad_fn, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    x, m, v = x0.copy(), np.zeros_like(x0), np.zeros_like(x0)
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return x


def test_adam_matches_reference_on_quadratic():
    A = np.array([[3.0, 0.5], [0.5, 1.0]])
    grad = lambda x: x @ (A + A.T)
    p = MFParams(np.array([[1.0, -2.0], [0.3, 0.7]]), np.array([[0.5, 0.5]]))
    x0 = p.U.copy()
    for _ in range(10):
        adam_step(p, SparseGrad(np.arange(2), grad(p.U), np.array([], dtype=np.int64), np.zeros((0, 2))), 0.05)
    np.testing.assert_allclose(p.U, reference_adam(x0, grad, 10, 0.05), atol=1e-10, rtol=0)


def test_adam_is_row_sparse():
    p = random_params()
    before = p.copy()
    adam_step(p, SparseGrad(np.array([1]), np.ones((1, 3)), np.array([4]), np.ones((1, 3))), 0.1)
    changed_u = np.flatnonzero(np.any(p.U != before.U, axis=1))
    changed_v = np.flatnonzero(np.any(p.V != before.V, axis=1))
    assert changed_u.tolist() == [1] and changed_v.tolist() == [4]
    assert not p.m_U[0].any()


def test_adam_reports_nonfinite_row():
    p = random_params()
    g = np.ones((2, 3))
    g[1, 0] = np.nan
    with pytest.raises(FloatingPointError, match="user row 5"):
        adam_step(p, SparseGrad(np.array([2, 5]), g, np.array([0]), np.ones((1, 3))), 0.1)


# -- top-K and negatives ---------------------------------------------------------

def test_topk_zero_embeddings_tie_break():
    p = MFParams(np.zeros((1, 2)), np.zeros((8, 2)))
    assert recommend_topk(p, 0, 3).tolist() == [0, 1, 2]


def test_topk_exclude_all_but_k():
    p = random_params(n=9, seed=3)
    keep = [2, 5, 7]
    out = recommend_topk(p, 0, 3, exclude=[i for i in range(9) if i not in keep])
    s = p.V[keep] @ p.U[0]
    assert out.tolist() == [keep[i] for i in np.argsort(-s)]
    with pytest.raises(ValueError):
        recommend_topk(p, 0, 4, exclude=[i for i in range(9) if i not in keep])


def test_topk_matches_sort_oracle():
    rng = np.random.default_rng(0)
    for trial in range(50):
        p = random_params(m=3, n=50, d=4, seed=trial)
        p.V[rng.integers(0, 50, 5)] = p.V[0]  # force some ties
        excl = rng.choice(50, 8, replace=False)
        out = recommend_topk(p, 1, 10, exclude=excl)
        cands = [v for v in range(50) if v not in set(excl.tolist())]
        oracle = sorted(cands, key=lambda v: (-float(p.U[1] @ p.V[v]), v))[:10]
        assert out.tolist() == oracle


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 100.0))
def test_topk_scale_free_and_consistent(seed, c):
    p = random_params(m=2, n=20, d=3, seed=seed)
    out = recommend_topk(p, 0, 5)
    scaled = MFParams(p.U * c, p.V * c)
    assert recommend_topk(scaled, 0, 5).tolist() == out.tolist()
    s = p.V @ p.U[0]
    rest = np.setdiff1d(np.arange(20), out)
    assert s[out].min() >= s[rest].max()


def test_sample_negatives_avoid_interactions():
    rng = np.random.default_rng(0)
    mask = rng.random((20, 15)) < 0.6
    mask[:, 0] = False
    users = np.repeat(np.arange(20), 5)
    negs = sample_negatives(rng, users, mask, 7)
    assert negs.shape == (100, 7)
    assert not mask[users[:, None], negs].any()


# -- checkpoints -------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    p = random_params(l2=1e-4)
    users, pos, negs = random_batch(p)
    _, g = weighted_batch_loss(p, batch_forward(p, users, pos, negs), np.ones(5))
    adam_step(p, g, 0.01)
    save_params(tmp_path / "p.npz", p)
    q = load_params(tmp_path / "p.npz")
    assert q.equals(p) and q.l2 == p.l2

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from recdenoise.dataio import InteractionTable
from recdenoise.evaluation import (
    AUCReward,
    auc_reward,
    interaction_mask,
    pairwise_auc,
    rank_metrics,
    target_ranks,
)
from recdenoise.recmodel import MFParams

from oracles import brute_force_auc, brute_force_metrics, random_metric_instance


def table(users, items):
    n = len(users)
    return InteractionTable(np.asarray(users), np.asarray(items), np.ones(n), np.full(n, 5.0),
                            np.arange(n), np.ones(n, dtype=int))


def test_perfect_ranker():
    V = np.eye(12)
    U = np.stack([V[3], V[7]])
    r = rank_metrics(MFParams(U, V), table([0, 1], [3, 7]), [[], []], ks=(10,))
    assert r.precision[10] == 0.1 and r.recall[10] == 1.0 and r.ndcg[10] == 1.0
    assert r.f1[10] == pytest.approx(2 * 0.1 / 1.1)


def test_target_never_in_top_k():
    V = np.arange(30.0)[:, None]
    r = rank_metrics(MFParams(np.ones((1, 1)), V), table([0], [0]), [[]], ks=(5, 10))
    assert all(v == 0 for d in (r.precision, r.recall, r.f1, r.ndcg) for v in d.values())


def test_recall_is_k_times_precision():
    rng = np.random.default_rng(0)
    p = MFParams(rng.normal(size=(5, 3)), rng.normal(size=(40, 3)))
    r = rank_metrics(p, table(rng.integers(0, 5, 30), rng.integers(0, 40, 30)), [[]] * 5, ks=(10, 20))
    for k in (10, 20):
        assert r.recall[k] == pytest.approx(k * r.precision[k], rel=1e-12)


def test_f1_fraction_matches_published_row():
    # Precision 0.9688 % and recall 9.688 % give an F1 column of 0.0176
    p, r = 0.009688, 0.09688
    assert round(2 * p * r / (p + r), 4) == 0.0176


@pytest.mark.parametrize("seed", range(40))
def test_metrics_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    params, test, excluded = random_metric_instance(rng, n_max=20)
    ks = (1, 3, 5)
    rep = rank_metrics(params, test, [sorted(e) for e in excluded], ks=ks)
    ref, n_eval = brute_force_metrics(params.U @ params.V.T, test.user, test.item, excluded, ks)
    assert rep.n_targets == n_eval
    for k in ks:
        assert (rep.precision[k], rep.recall[k], rep.f1[k]) == ref[k][:3]
        assert abs(rep.ndcg[k] - ref[k][3]) < 1e-12


def test_excluded_target_counts_as_miss_and_empty_user_is_skipped():
    p = MFParams(np.ones((2, 1)), np.arange(4.0)[:, None])
    mask = np.array([[True, False, False, False], [True, True, True, True]])
    ranks = target_ranks(p, [0, 1], [0, 2], mask)
    assert ranks[0] == np.inf and ranks[1] == 0
    r = rank_metrics(p, table([0, 1], [0, 2]), mask, ks=(3,))
    assert r.n_targets == 1 and r.n_skipped == 1 and r.recall[3] == 0.0


def test_rank_metrics_rejects_empty_test():
    with pytest.raises(ValueError):
        rank_metrics(MFParams(np.ones((1, 1)), np.ones((2, 1))), InteractionTable.empty(), [[]])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_metric_ranges_and_ndcg_monotone(seed):
    rng = np.random.default_rng(seed)
    params, test, excluded = random_metric_instance(rng)
    rep = rank_metrics(params, test, [sorted(e) for e in excluded], ks=(1, 5, 10))
    for d in (rep.precision, rep.recall, rep.f1, rep.ndcg):
        assert all(0.0 <= v <= 1.0 for v in d.values())
    # moving a target item to the top score never lowers NDCG
    u, t = test.user[0], test.item[0]
    better = MFParams(params.U.copy(), params.V.copy())
    better.V[t] = better.U[u] * 100.0
    if not np.any(better.U[u]):
        return
    rep2 = rank_metrics(better, test.take([0]), [sorted(e) for e in excluded], ks=(10,))
    rep1 = rank_metrics(params, test.take([0]), [sorted(e) for e in excluded], ks=(10,))
    assert rep2.ndcg[10] >= rep1.ndcg[10]


# -- AUC -----------------------------------------------------------------------

def test_pairwise_auc_examples():
    assert pairwise_auc(np.array([3.0, 2.0]), np.array([[1.0, 0.0], [1.5, -1.0]])) == 1.0
    assert pairwise_auc(np.zeros(3), np.zeros((3, 4))) == 0.5


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6))
def test_pairwise_auc_brute_force_and_rank_invariance(seed):
    rng = np.random.default_rng(seed)
    pos = rng.integers(-3, 4, 6).astype(float)
    neg = rng.integers(-3, 4, (6, 5)).astype(float)
    assert pairwise_auc(pos, neg) == brute_force_auc(pos, neg)
    f = lambda x: np.exp(x) * 3 + x ** 3
    assert pairwise_auc(f(pos), f(neg)) == pairwise_auc(pos, neg)


def test_auc_swap_changes_by_one_pair():
    pos = np.array([2.0, 1.0])
    neg = np.array([[0.0, 0.5], [-1.0, 3.0]])
    before = pairwise_auc(pos, neg)
    neg2 = neg.copy()
    pos2 = pos.copy()
    pos2[0], neg2[0, 1] = neg[0, 1], pos[0]
    assert before - pairwise_auc(pos2, neg2) == pytest.approx(1 / neg.size, abs=0)


def _reward_setup(seed=0, m=8, n=60):
    rng = np.random.default_rng(seed)
    params = MFParams(rng.normal(size=(m, 4)), rng.normal(size=(n, 4)))
    train = [rng.choice(n, 10, replace=False) for _ in range(m)]
    val_u, val_i = [], []
    for u in range(m):
        for v in rng.choice(np.setdiff1d(np.arange(n), train[u]), 3, replace=False):
            val_u.append(u)
            val_i.append(v)
    return params, train, table(val_u, val_i)


def test_auc_reward_perfect_and_ties():
    params, train, val = _reward_setup()
    zero = MFParams(np.zeros_like(params.U), np.zeros_like(params.V))
    assert auc_reward(zero, val, train, 20) == 0.5
    perfect = MFParams(np.eye(params.m), np.zeros((params.n, params.m)))
    perfect.V[val.item, val.user] = 1.0
    assert auc_reward(perfect, val, train, 20) == 1.0


def test_auc_reward_negatives_fixed_and_valid():
    params, train, val = _reward_setup()
    r = AUCReward(val, train, params.m, params.n, n_neg_eval=30, seed=5)
    mask = interaction_mask(train, params.m, params.n)
    mask[val.user, val.item] = True
    assert not mask[r.users[:, None], r.negatives].any()
    assert r(params) == r(params)
    assert np.array_equal(r.negatives, AUCReward(val, train, params.m, params.n, 30, seed=5).negatives)


def test_auc_reward_close_to_exhaustive_pairs():
    params, train, val = _reward_setup(seed=3, m=10, n=150)
    mask = interaction_mask(train, params.m, params.n)
    mask[val.user, val.item] = True
    S = params.U @ params.V.T
    pos, negs = [], []
    for u, v in zip(val.user, val.item):
        pos.append(S[u, v])
        negs.append(S[u, ~mask[u]])
    exhaustive = np.mean([np.mean((p > ns) + 0.5 * (p == ns)) for p, ns in zip(pos, negs)])
    assert abs(auc_reward(params, val, train, 100, seed=1) - exhaustive) < 0.02


def test_auc_reward_validation():
    params, train, val = _reward_setup()
    with pytest.raises(ValueError):
        AUCReward(InteractionTable.empty(), train, params.m, params.n)
    with pytest.raises(ValueError):
        AUCReward(val, train, params.m, params.n, n_neg_eval=0)

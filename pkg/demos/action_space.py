"""
Size of the hard action space
=============================

The hard controller picks one of ``A`` weights per training row: with
``A = 1`` it can only keep rows (and reproduces plain training exactly), with
``A = 3`` it can delete, keep or double them, and so on.  This sweeps ``A``
and reports NDCG@20 on the test split.
"""

from recdenoise import TrainConfig, make_synthetic_split, train
from recdenoise.trainer import action_space_sweep

split = make_synthetic_split(n_users=300, n_items=200, seed=1)
config = TrainConfig(scheme="autodenoise_h", d=16, lr=5e-3, lr_c=1e-2, seed=1)

rows = action_space_sweep(config, split, [1, 2, 3, 4, 5])
default = train(config.replace(scheme="default"), split).metrics.ndcg[20]
print(f"default          ndcg@20 {default:.4f}")
for r in rows:
    print(f"A = {r['n_actions']}            ndcg@20 {r['ndcg@20']:.4f}")

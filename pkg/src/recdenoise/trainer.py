"""Training loops: fixed-weight schemes and the alternating controller scheme.

One epoch of the controller scheme has two phases.  With the policy frozen,
every minibatch gets sampled weights and the recommender takes an Adam step on
the weighted loss.  Then, with the recommender frozen, the validation AUC is
the reward for a single REINFORCE step on the policy, after which the reward
baseline is updated.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import baselines as bl
from .config import TrainConfig, dump_config
from .controller import (
    HARD,
    SOFT,
    ControllerParams,
    EpisodeLog,
    build_state,
    expected_weights,
    init_controller,
    reinforce_update,
    sample_actions,
    save_controller,
    update_baseline,
)
from .dataio import NoiseLabel, SplitDataset
from .evaluation import AUCReward, MetricsReport, rank_metrics
from .recmodel import (
    MFParams,
    adam_step,
    batch_forward,
    init_params,
    sample_negatives,
    save_params,
    weighted_batch_loss,
)

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "reward", "baseline", "val_auc", "wall_ms")
METRIC_COLUMNS = ("scheme", "dataset", "seed", "k", "precision", "recall", "f1", "ndcg",
                  "auc", "n_targets", "n_skipped")


class TrainingError(RuntimeError):
    pass


@dataclass
class RunArtifacts:
    config: TrainConfig
    params: MFParams
    controller: ControllerParams | None
    baseline: float
    best_epoch: int
    best_reward: float
    history: list[dict] = field(default_factory=list)
    metrics: MetricsReport | None = None
    weight_table: list[dict] | None = None

    @property
    def epochs_run(self) -> int:
        return len(self.history)


class Trainer:
    """Stateful epoch loop shared by every scheme.

    ``reward_fn`` replaces the validation AUC, which is mainly useful for
    exercising the early-stopping contract.
    """

    def __init__(self, config: TrainConfig, split: SplitDataset,
                 reward_fn: Callable[[MFParams], float] | None = None):
        self.config = config
        self.split = split
        self.scheme = config.scheme_config
        seeds = np.random.SeedSequence(config.seed).spawn(4)
        self.params = init_params(split.m, split.n, config.d, seed=seeds[0],
                                  init_scale=config.init_scale, l2=config.l2)
        self.data_rng = np.random.default_rng(seeds[2])
        self.action_rng = np.random.default_rng(seeds[3])
        self.controller = None
        if config.scheme in bl.CONTROLLER_SCHEMES:
            self.controller = init_controller(
                2 * config.d + 2, mode=HARD if config.scheme == "autodenoise_h" else SOFT,
                n_actions=config.n_actions, hidden=tuple(config.hidden), seed=seeds[1],
                l2=config.l2_c, init_weight=config.init_weight, init_var=config.init_var,
            )
        self.mask = split.train_mask()
        self.item_freq = split.item_frequencies() if config.scheme == "heuristic" else None
        if reward_fn is None:
            eval_seed = int(np.random.SeedSequence(config.seed).generate_state(1)[0])
            reward_fn = AUCReward(split.validation, self.mask, split.m, split.n,
                                  config.n_neg_eval, seed=eval_seed)
        self.reward_fn = reward_fn
        self.baseline = 0.0
        self.epoch = 0
        self.history: list[dict] = []
        self.episode: EpisodeLog | None = None

    # -- phases ---------------------------------------------------------------

    def _weights(self, batch, epoch: int) -> np.ndarray:
        name = self.scheme.scheme
        if name == "default":
            return bl.default_weights(len(batch))
        if name == "heuristic":
            return bl.heuristic_weights(self.item_freq, batch.items[:, 0])
        if name == "adt_tl":
            return bl.adt_tl_weights(batch.losses, epoch, self.scheme.adt_alpha, self.scheme.adt_delta_max)
        if name == "adt_rl":
            return bl.adt_rl_weights(batch.pos_prob, self.scheme.adt_beta)
        X = build_state(self.params.U, self.params.V, batch.users, batch.items[:, 0],
                        batch.losses, epoch, self.config.max_epochs)
        sample = sample_actions(self.controller, X, self.action_rng)
        self.episode.record(self.controller, sample)
        return sample.weight

    def train_recommender_epoch(self) -> float:
        """Recommender phase with the policy frozen. Returns the mean batch loss."""
        cfg, train = self.config, self.split.train
        N = len(train)
        if N == 0:
            raise TrainingError("training set is empty")
        epoch = self.epoch
        order = self.data_rng.permutation(N)
        negatives = sample_negatives(self.data_rng, train.user[order], self.mask, cfg.n_neg)
        if self.controller is not None:
            self.episode = EpisodeLog(epoch)
        total = 0.0
        for b, s in enumerate(range(0, N, cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            batch = batch_forward(self.params, train.user[idx], train.item[idx],
                                  negatives[s:s + cfg.batch_size])
            w = self._weights(batch, epoch)
            loss, grads = weighted_batch_loss(self.params, batch, w)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, batch {b}")
            adam_step(self.params, grads, cfg.lr)
            total += loss * len(idx)
        return total / N

    def evaluate_reward(self) -> float:
        reward = float(self.reward_fn(self.params))
        if not np.isfinite(reward):
            raise TrainingError(f"non-finite reward at epoch {self.epoch + 1}")
        return reward

    def update_controller(self, reward: float) -> float:
        """Policy phase: REINFORCE with the pre-update baseline, then move the baseline.

        Returns the baseline that was used in the advantage.
        """
        used = self.baseline
        if self.controller is not None:
            self.episode.reward = reward
            self.episode.baseline = used
            reinforce_update(self.controller, self.episode, self.config.lr_c,
                             betas=(0.9, self.config.beta2_c))
        self.baseline = update_baseline(self.baseline, reward, self.config.gamma)
        return used

    def run_epoch(self) -> dict:
        start = time.perf_counter()
        train_loss = self.train_recommender_epoch()
        reward = self.evaluate_reward()
        used = self.update_controller(reward)
        self.epoch += 1
        row = {"epoch": self.epoch, "train_loss": train_loss, "reward": reward,
               "baseline": used, "val_auc": reward,
               "wall_ms": (time.perf_counter() - start) * 1e3}
        self.history.append(row)
        log.debug("epoch %d loss %.5f reward %.5f", self.epoch, train_loss, reward)
        return row

    # -- full run ------------------------------------------------------------

    def fit(self) -> RunArtifacts:
        cfg = self.config
        best = -np.inf
        best_state = None
        stale = 0
        while self.epoch < cfg.max_epochs:
            row = self.run_epoch()
            if row["reward"] > best + cfg.min_delta:
                best = row["reward"]
                best_state = (self.params.copy(),
                              self.controller.copy() if self.controller is not None else None,
                              self.baseline, self.epoch)
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        params, ctrl, baseline, best_epoch = best_state
        metrics = rank_metrics(params, self.split.test, self.mask, cfg.ks)
        metrics.auc = best
        art = RunArtifacts(cfg, params, ctrl, baseline, best_epoch, best, self.history, metrics)
        if ctrl is not None:
            art.weight_table = weight_report(ctrl, params, self.split, best_epoch, cfg)
        return art


def train_autodenoise(config: TrainConfig, split: SplitDataset, reward_fn=None) -> RunArtifacts:
    if config.scheme not in bl.CONTROLLER_SCHEMES:
        raise ValueError(f"train_autodenoise needs a controller scheme, got {config.scheme!r}")
    return Trainer(config, split, reward_fn).fit()


def train_baseline(config: TrainConfig, split: SplitDataset, reward_fn=None) -> RunArtifacts:
    if config.scheme not in bl.BASELINE_SCHEMES:
        raise ValueError(f"train_baseline needs a fixed-weight scheme, got {config.scheme!r}")
    return Trainer(config, split, reward_fn).fit()


def train(config: TrainConfig, split: SplitDataset, reward_fn=None) -> RunArtifacts:
    return Trainer(config, split, reward_fn).fit()


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------

def training_states(params: MFParams, split: SplitDataset, epoch: int, max_epochs: int,
                    n_neg: int = 4, seed: int = 0) -> np.ndarray:
    """Controller states for every training row, with seeded negatives for the loss feature."""
    train = split.train
    negs = sample_negatives(np.random.default_rng(seed), train.user, split.train_mask(), n_neg)
    losses = batch_forward(params, train.user, train.item, negs).losses
    return build_state(params.U, params.V, train.user, train.item, losses,
                       min(epoch, max_epochs), max_epochs)


def weight_report(controller: ControllerParams, params: MFParams, split: SplitDataset,
                  epoch: int, config: TrainConfig, seed: int = 0) -> list[dict]:
    """Mean expected weight of true- and false-positive training rows.

    Rows with unknown labels are left out; a group with no rows is omitted.
    """
    X = training_states(params, split, epoch, config.max_epochs, config.n_neg, seed)
    w = expected_weights(controller, X, n_draws=128, seed=seed)
    table = []
    for label, name in ((NoiseLabel.TRUE_POSITIVE, "TP"), (NoiseLabel.FALSE_POSITIVE, "FP")):
        sel = split.train.noise == label
        if sel.any():
            table.append({"group": name, "mean_weight": float(w[sel].mean()), "count": int(sel.sum())})
    return table


def action_space_sweep(config: TrainConfig, split: SplitDataset, action_counts) -> list[dict]:
    """NDCG@20 on test after a full hard-controller run for each action count."""
    if config.scheme != "autodenoise_h":
        raise ValueError("the action-space sweep uses the hard controller scheme")
    ks = tuple(sorted(set(config.ks) | {20}))
    rows = []
    for a in action_counts:
        art = train(config.replace(n_actions=int(a), ks=ks), split)
        rows.append({"n_actions": int(a), "ndcg@20": art.metrics.ndcg[20]})
    return rows


# ---------------------------------------------------------------------------
# run directory
# ---------------------------------------------------------------------------

def _sig4(x: float) -> str:
    return f"{x:.4g}"


def history_csv(history: list[dict], with_wall_time: bool) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for r in history:
        wall = f"{r['wall_ms']:.1f}" if with_wall_time else ""
        w.writerow([r["epoch"], repr(r["train_loss"]), repr(r["reward"]),
                    repr(r["baseline"]), repr(r["val_auc"]), wall])
    return buf.getvalue()


def metrics_csv(report: MetricsReport, scheme: str, dataset: str, seed: int) -> str:
    """Precision, recall and NDCG in percent, F1 as a fraction, 4 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    auc = "" if report.auc is None else f"{report.auc:.6f}"
    for row in report.rows():
        w.writerow([scheme, dataset, seed, row["k"], _sig4(100 * row["precision"]),
                    _sig4(100 * row["recall"]), _sig4(row["f1"]), _sig4(100 * row["ndcg"]),
                    auc, report.n_targets, report.n_skipped])
    return buf.getvalue()


def weights_csv(table: list[dict], scheme: str = "") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("scheme", "group", "mean_weight", "count"))
    for r in table:
        w.writerow([scheme, r["group"], f"{r['mean_weight']:.6f}", r["count"]])
    return buf.getvalue()


def dataset_name(config: TrainConfig) -> str:
    return config.dataset or (Path(config.split_dir).name if config.split_dir else "unnamed")


def save_run(art: RunArtifacts, out_dir: str | os.PathLike) -> Path:
    """Serialize a run: config, history, metrics, checkpoints and the weight table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = art.config
    (out / "config.txt").write_text(dump_config(cfg), encoding="utf-8")
    (out / "history.csv").write_text(history_csv(art.history, cfg.log_wall_time), encoding="utf-8")
    (out / "metrics.csv").write_text(
        metrics_csv(art.metrics, cfg.scheme, dataset_name(cfg), cfg.seed), encoding="utf-8")
    save_params(out / "recommender.npz", art.params)
    if art.controller is not None:
        save_controller(out / "controller.npz", art.controller, art.baseline)
    if art.weight_table:
        (out / "weights.csv").write_text(weights_csv(art.weight_table, cfg.scheme), encoding="utf-8")
    (out / "best.txt").write_text(
        f"best_epoch = {art.best_epoch}\nbest_val_auc = {art.best_reward!r}\n", encoding="utf-8")
    return out

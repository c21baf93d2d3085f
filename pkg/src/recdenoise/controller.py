"""Per-sample weighting policy trained by REINFORCE on a validation reward.

The policy is a two-hidden-layer MLP over ``[e_u, e_v, loss, epoch / max_epochs]``
followed by either a categorical head (hard actions delete/keep/duplicate/...)
or a Gaussian head whose sample is squashed by softplus (soft weights).

All functions are vectorized over a batch of states; a "sample" is a row.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .recmodel import adam_update

CHECKPOINT_VERSION = "recdenoise-controller/1"
VAR_FLOOR = 1e-8
HARD, SOFT = "hard", "soft"
_LOG_2PI = math.log(2.0 * math.pi)


def action_values(n_actions: int) -> np.ndarray:
    """Weight carried by each hard action.

    A single action means "keep" (weight 1); otherwise actions ``0..A-1`` are
    delete, keep, duplicate, and so on.
    """
    if n_actions < 1:
        raise ValueError("n_actions must be >= 1")
    return np.ones(1) if n_actions == 1 else np.arange(n_actions, dtype=np.float64)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def inverse_softplus(y: float) -> float:
    return float(y + math.log(-math.expm1(-y)))


@dataclass(eq=False)
class ControllerParams:
    """Weights of the policy network, keyed by layer name, plus Adam state.

    Hidden layers are ``W1, b1, W2, b2``.  The hard head is ``Wa, ba``
    (``A`` logits); the soft head is ``wm, bm`` (mean) and ``wv, bv``
    (pre-softplus variance).
    """

    mode: str
    weights: dict[str, np.ndarray]
    l2: float = 1e-5
    adam_m: dict[str, np.ndarray] = field(default=None)
    adam_v: dict[str, np.ndarray] = field(default=None)
    step: int = 0
    var_clamps: int = 0

    def __post_init__(self):
        if self.mode not in (HARD, SOFT):
            raise ValueError(f"mode must be {HARD!r} or {SOFT!r}")
        if self.adam_m is None:
            self.adam_m = {k: np.zeros_like(w) for k, w in self.weights.items()}
        if self.adam_v is None:
            self.adam_v = {k: np.zeros_like(w) for k, w in self.weights.items()}
        W1, W2 = self.weights["W1"], self.weights["W2"]
        if W2.shape[1] != W1.shape[0]:
            raise ValueError("hidden layer shapes do not chain")
        if self.mode == HARD and self.weights["Wa"].shape[1] != W2.shape[0]:
            raise ValueError("hard head does not match the hidden size")

    @property
    def input_dim(self) -> int:
        return self.weights["W1"].shape[1]

    @property
    def n_actions(self) -> int:
        return self.weights["Wa"].shape[0] if self.mode == HARD else 0

    def copy(self) -> "ControllerParams":
        dup = lambda d: {k: v.copy() for k, v in d.items()}
        return ControllerParams(self.mode, dup(self.weights), self.l2, dup(self.adam_m),
                                dup(self.adam_v), self.step, self.var_clamps)

    def equals(self, other: "ControllerParams") -> bool:
        return (
            self.mode == other.mode and self.step == other.step
            and self.weights.keys() == other.weights.keys()
            and all(np.array_equal(self.weights[k], other.weights[k]) for k in self.weights)
            and all(np.array_equal(self.adam_m[k], other.adam_m[k]) for k in self.weights)
            and all(np.array_equal(self.adam_v[k], other.adam_v[k]) for k in self.weights)
        )


def init_controller(input_dim: int, mode: str = HARD, n_actions: int = 3,
                    hidden: tuple[int, int] = (64, 32), seed: int = 0, l2: float = 1e-5,
                    init_weight: float = 1.0, init_var: float = 0.25,
                    head_scale: float = 0.01) -> ControllerParams:
    """Randomly initialized policy.

    Hidden layers use the ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))`` convention.
    Heads start with ``head_scale``-sized weights so the initial policy is
    nearly state independent: uniform over actions for the hard head, and
    ``N(mu, init_var)`` with ``softplus(mu) = init_weight`` for the soft head.
    """
    if mode == HARD and n_actions < 1:
        raise ValueError("n_actions must be >= 1")
    rng = np.random.default_rng(seed)

    def dense(fan_out, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(fan_out, fan_in)), rng.uniform(-bound, bound, size=fan_out)

    h1, h2 = hidden
    W1, b1 = dense(h1, input_dim)
    W2, b2 = dense(h2, h1)
    weights = {"W1": W1, "b1": b1, "W2": W2, "b2": b2}
    if mode == HARD:
        weights["Wa"] = rng.normal(0.0, head_scale, size=(n_actions, h2))
        weights["ba"] = np.zeros(n_actions)
    else:
        weights["wm"] = rng.normal(0.0, head_scale, size=h2)
        weights["bm"] = np.array(inverse_softplus(init_weight))
        weights["wv"] = rng.normal(0.0, head_scale, size=h2)
        weights["bv"] = np.array(inverse_softplus(init_var))
    return ControllerParams(mode, weights, l2=l2)


def build_state(U, V, users, items, losses, epoch: int, max_epochs: int) -> np.ndarray:
    """Stack ``[e_u, e_v, loss, epoch / max_epochs]`` for each (user, item) row.

    Embeddings are copied, so later updates to ``U``/``V`` never alias the state.
    """
    if max_epochs < 1 or not 0 <= epoch <= max_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {max_epochs}]")
    losses = np.asarray(losses, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(losses)):
        raise ValueError("non-finite loss in controller state")
    users = np.asarray(users, dtype=np.int64).reshape(-1)
    items = np.asarray(items, dtype=np.int64).reshape(-1)
    n = len(users)
    return np.concatenate(
        [U[users], V[items], losses[:, None], np.full((n, 1), epoch / max_epochs)], axis=1
    )


@dataclass
class HiddenTrace:
    x: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    h: np.ndarray


def forward_hidden(params: ControllerParams, X) -> HiddenTrace:
    """``h = W2 relu(W1 x + b1) + b2`` for every row of ``X``."""
    w = params.weights
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != params.input_dim:
        raise ValueError(f"state has {X.shape[1]} features, controller expects {params.input_dim}")
    z1 = X @ w["W1"].T + w["b1"]
    a1 = np.maximum(z1, 0.0)
    h = a1 @ w["W2"].T + w["b2"]
    if not np.all(np.isfinite(h)):
        raise FloatingPointError("non-finite controller hidden activation")
    return HiddenTrace(X, z1, a1, h)


@dataclass
class ActionSample:
    """Sampled actions for a batch of states.

    ``raw`` holds the integer action (hard) or the pre-softplus Gaussian draw
    (soft); ``weight`` is what multiplies the recommender loss.
    """

    mode: str
    raw: np.ndarray
    weight: np.ndarray
    log_prob: np.ndarray
    trace: HiddenTrace
    probs: np.ndarray | None = None
    mean: np.ndarray | None = None
    var: np.ndarray | None = None
    var_pre: np.ndarray | None = None


def hard_logits(params: ControllerParams, h) -> np.ndarray:
    return h @ params.weights["Wa"].T + params.weights["ba"]


def action_probs(params: ControllerParams, h) -> np.ndarray:
    logits = hard_logits(params, h)
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def gaussian_head(params: ControllerParams, h) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean, clamped variance and pre-softplus variance activation per row."""
    w = params.weights
    mu = h @ w["wm"] + w["bm"]
    pre = h @ w["wv"] + w["bv"]
    return mu, np.maximum(softplus(pre), VAR_FLOOR), pre


def sample_hard(params: ControllerParams, trace: HiddenTrace, rng: np.random.Generator) -> ActionSample:
    """Categorical draw over ``softmax(logits)``; see :func:`action_values` for weights."""
    logits = hard_logits(params, trace.h)
    logits = logits - logits.max(axis=1, keepdims=True)
    log_p = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    p = np.exp(log_p)
    cdf = np.cumsum(p, axis=1)
    u = rng.random(len(p))
    actions = np.minimum((u[:, None] >= cdf).sum(axis=1), p.shape[1] - 1)
    rows = np.arange(len(p))
    weight = action_values(p.shape[1])[actions]
    return ActionSample(HARD, actions, weight, log_p[rows, actions], trace, probs=p)


def sample_soft(params: ControllerParams, trace: HiddenTrace, rng: np.random.Generator) -> ActionSample:
    """Gaussian draw ``w ~ N(mu, var)``, weight ``softplus(w)``.

    The log-probability is the Gaussian density of ``w``; the softplus is a
    post-sampling transform and contributes no Jacobian term.
    """
    mu, var, pre = gaussian_head(params, trace.h)
    params.var_clamps += int(np.sum(softplus(pre) < VAR_FLOOR))
    w = mu + np.sqrt(var) * rng.standard_normal(len(mu))
    log_prob = -0.5 * (_LOG_2PI + np.log(var)) - (w - mu) ** 2 / (2.0 * var)
    return ActionSample(SOFT, w, softplus(w), log_prob, trace, mean=mu, var=var, var_pre=pre)


def sample_actions(params: ControllerParams, X, rng: np.random.Generator) -> ActionSample:
    trace = forward_hidden(params, X)
    return sample_hard(params, trace, rng) if params.mode == HARD else sample_soft(params, trace, rng)


def log_prob(params: ControllerParams, X, raw) -> np.ndarray:
    """Log-probability of given raw actions under the current policy."""
    trace = forward_hidden(params, X)
    if params.mode == HARD:
        logits = hard_logits(params, trace.h)
        logits = logits - logits.max(axis=1, keepdims=True)
        log_p = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        return log_p[np.arange(len(log_p)), np.asarray(raw, dtype=np.int64)]
    mu, var, _ = gaussian_head(params, trace.h)
    return -0.5 * (_LOG_2PI + np.log(var)) - (np.asarray(raw) - mu) ** 2 / (2.0 * var)


def logprob_backward(params: ControllerParams, sample: ActionSample, coef=None) -> dict[str, np.ndarray]:
    """``sum_i coef_i * d log_prob_i / d Phi`` by manual backpropagation.

    ``coef`` defaults to all ones, which gives the summed score function.
    """
    w, tr = params.weights, sample.trace
    n = len(sample.raw)
    c = np.ones(n) if coef is None else np.asarray(coef, dtype=np.float64)
    grads = {}
    if sample.mode == HARD:
        g_logits = -sample.probs * c[:, None]
        g_logits[np.arange(n), sample.raw] += c
        grads["Wa"] = g_logits.T @ tr.h
        grads["ba"] = g_logits.sum(axis=0)
        g_h = g_logits @ w["Wa"]
    else:
        diff = sample.raw - sample.mean
        var = sample.var
        g_mu = c * diff / var
        g_var = c * (diff * diff - var) / (2.0 * var * var)
        # the variance floor makes the clamped rows flat in the pre-activation
        g_pre = np.where(softplus(sample.var_pre) < VAR_FLOOR, 0.0, g_var * sigmoid(sample.var_pre))
        grads["wm"] = g_mu @ tr.h
        grads["bm"] = np.array(g_mu.sum())
        grads["wv"] = g_pre @ tr.h
        grads["bv"] = np.array(g_pre.sum())
        g_h = np.outer(g_mu, w["wm"]) + np.outer(g_pre, w["wv"])
    grads["W2"] = g_h.T @ tr.a1
    grads["b2"] = g_h.sum(axis=0)
    g_z1 = (g_h @ w["W2"]) * (tr.z1 > 0)
    grads["W1"] = g_z1.T @ tr.x
    grads["b1"] = g_z1.sum(axis=0)
    return grads


@dataclass
class EpisodeLog:
    """One epoch of controller decisions.

    Because the policy is frozen for the whole epoch and the advantage
    ``R - b`` is a single scalar, the REINFORCE estimate factorizes into
    ``(R - b) / N * sum_i grad log p_i``; the sum is accumulated as batches
    arrive so no per-sample state needs to be kept or recomputed.
    """

    epoch: int
    log_probs: list[np.ndarray] = field(default_factory=list)
    grad_sum: dict[str, np.ndarray] | None = None
    reward: float | None = None
    baseline: float = 0.0

    @property
    def n_samples(self) -> int:
        return int(sum(len(lp) for lp in self.log_probs))

    def record(self, params: ControllerParams, sample: ActionSample) -> None:
        self.log_probs.append(sample.log_prob)
        g = logprob_backward(params, sample)
        if self.grad_sum is None:
            self.grad_sum = g
        else:
            for k, v in g.items():
                self.grad_sum[k] += v


def policy_gradient(params: ControllerParams, log: EpisodeLog) -> dict[str, np.ndarray]:
    """Ascent direction ``(R - b)/N * sum grad log p - 2 * l2 * Phi``."""
    if log.reward is None:
        raise ValueError("episode has no reward yet")
    n = log.n_samples
    scale = (log.reward - log.baseline) / n if n else 0.0
    out = {}
    for k, w in params.weights.items():
        g = scale * log.grad_sum[k] if log.grad_sum is not None else np.zeros_like(w)
        if params.l2:
            g = g - 2.0 * params.l2 * w
        out[k] = g
    return out


def reinforce_update(params: ControllerParams, log: EpisodeLog, lr_c: float,
                     betas=(0.9, 0.999), eps: float = 1e-8) -> ControllerParams:
    """Adam ascent step on the baseline-corrected policy gradient. Mutates ``params``."""
    if lr_c <= 0:
        raise ValueError("lr_c must be positive")
    ascent = policy_gradient(params, log)
    params.step += 1
    for k, w in params.weights.items():
        adam_update(w, -ascent[k], params.adam_m[k], params.adam_v[k], params.step, lr_c, betas, eps)
    return params


def update_baseline(b: float, reward: float, gamma: float = 0.9) -> float:
    """Exponential moving average of rewards."""
    return gamma * b + (1.0 - gamma) * reward


def expected_weights(params: ControllerParams, X, n_draws: int = 128, seed: int = 0) -> np.ndarray:
    """Policy-mean weight per state.

    Hard: ``sum_a value(a) * p_a``.  Soft: Monte-Carlo mean of ``softplus(w)`` over
    ``n_draws`` seeded draws per state.
    """
    trace = forward_hidden(params, X)
    if params.mode == HARD:
        p = action_probs(params, trace.h)
        return p @ action_values(p.shape[1])
    mu, var, _ = gaussian_head(params, trace.h)
    z = np.random.default_rng(seed).standard_normal((len(mu), n_draws))
    return softplus(mu[:, None] + np.sqrt(var)[:, None] * z).mean(axis=1)


def save_controller(path: str | os.PathLike, params: ControllerParams, baseline: float = 0.0) -> None:
    arrays = {"version": np.array(CHECKPOINT_VERSION), "mode": np.array(params.mode),
              "l2": np.array(params.l2), "step": np.array(params.step),
              "var_clamps": np.array(params.var_clamps), "baseline": np.array(baseline)}
    for k in params.weights:
        arrays[f"w_{k}"] = params.weights[k]
        arrays[f"m_{k}"] = params.adam_m[k]
        arrays[f"v_{k}"] = params.adam_v[k]
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_controller(path: str | os.PathLike) -> tuple[ControllerParams, float]:
    """Returns the controller and the stored reward baseline."""
    with np.load(path) as z:
        if str(z["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported controller checkpoint version {str(z['version'])!r}")
        names = [k[2:] for k in z.files if k.startswith("w_")]
        params = ControllerParams(
            str(z["mode"]), {k: z[f"w_{k}"] for k in names}, float(z["l2"]),
            {k: z[f"m_{k}"] for k in names}, {k: z[f"v_{k}"] for k in names},
            int(z["step"]), int(z["var_clamps"]),
        )
        return params, float(z["baseline"])

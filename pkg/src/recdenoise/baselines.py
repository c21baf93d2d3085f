"""Fixed (non-learned) sample-weighting schemes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SCHEMES = ("default", "heuristic", "adt_tl", "adt_rl", "autodenoise_h", "autodenoise_s")
BASELINE_SCHEMES = SCHEMES[:4]
CONTROLLER_SCHEMES = SCHEMES[4:]

_P_CLAMP = 1e-6


@dataclass(frozen=True)
class SchemeConfig:
    """Scheme name and the constants of the ADT variants.

    ``adt_alpha`` is the per-epoch drop-rate slope and ``adt_delta_max`` its
    ceiling for truncated loss; ``adt_beta`` is the focal exponent for the
    reweighted loss.
    """

    scheme: str = "default"
    adt_alpha: float = 0.05
    adt_delta_max: float = 0.2
    adt_beta: float = 0.25

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.adt_alpha < 0:
            raise ValueError("adt_alpha must be >= 0")
        if not 0.0 <= self.adt_delta_max < 1.0:
            raise ValueError("adt_delta_max must lie in [0, 1)")
        if self.adt_beta < 0:
            raise ValueError("adt_beta must be >= 0")


def default_weights(batch_size: int) -> np.ndarray:
    return np.ones(batch_size)


def heuristic_weights(item_frequencies, items) -> np.ndarray:
    """Inverse item frequency, rescaled so the batch mean is 1."""
    freq = np.asarray(item_frequencies)[np.asarray(items, dtype=np.int64)]
    if np.any(freq <= 0):
        raise ValueError("every batch item needs a positive training frequency")
    raw = 1.0 / freq
    return raw / raw.mean() if len(raw) else raw


def drop_rate(epoch: int, alpha: float, delta_max: float) -> float:
    return min(alpha * epoch, delta_max)


def adt_tl_weights(losses, epoch: int, alpha: float = 0.05, delta_max: float = 0.2) -> np.ndarray:
    """Zero out the ``ceil(drop_rate * B)`` largest losses.

    Among equal losses at the cut the lower batch index is dropped first.
    """
    losses = np.asarray(losses, dtype=np.float64)
    if np.any(losses < 0):
        raise ValueError("losses must be non-negative")
    B = len(losses)
    # guard float noise so e.g. 0.1 * 30 does not round up to 4
    n_drop = math.ceil(drop_rate(epoch, alpha, delta_max) * B - 1e-9)
    w = np.ones(B)
    if n_drop:
        order = np.lexsort((np.arange(B), -losses))
        w[order[:n_drop]] = 0.0
    return w


def adt_rl_weights(pos_prob, beta: float = 0.25) -> np.ndarray:
    """Focal-style weight ``p ** beta`` from the model's positive probability."""
    p = np.clip(np.asarray(pos_prob, dtype=np.float64), _P_CLAMP, 1.0)
    return p ** beta

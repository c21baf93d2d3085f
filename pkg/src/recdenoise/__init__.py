"""Learned per-sample loss weighting for implicit-feedback recommenders."""

from .baselines import SchemeConfig
from .config import TrainConfig, load_config
from .controller import ControllerParams, init_controller
from .dataio import (
    InteractionTable,
    NoiseLabel,
    RatingRecord,
    SplitDataset,
    build_split,
    filter_min_interactions,
    inject_synthetic_noise,
    load_split,
    make_synthetic_split,
    parse_ratings,
    read_ratings,
    save_split,
)
from .evaluation import MetricsReport, auc_reward, rank_metrics
from .recmodel import MFParams, init_params, recommend_topk
from .trainer import RunArtifacts, Trainer, action_space_sweep, train, weight_report

__version__ = "0.1.0"

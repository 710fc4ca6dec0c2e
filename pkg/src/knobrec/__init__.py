"""Controllable collaborative-filtering recommender with disentangled latent
knobs: Mult-beta-VAE / Mult-TCVAE training, knob-based control, and the
controllability and disentanglement evaluation suite."""

from .control import KnobMapping, KnobSetting, RankedList, infer_representation, \
    knob_to_latent, manipulate, recommend
from .data import InteractionDataset, SyntheticSpec, UserSplit, binarize_and_filter, \
    generate_synthetic, load_ratings, preference_distribution, split_users
from .metrics import EvalReport, MIGReport, correlation_sweep, delta_ctrl, \
    delta_irrel, evaluate_controllability, evaluate_recommender, mig, ndcg_at_k
from .model import Checkpoint, LossConfig, ModelParams, TrainConfig, TrainReport, \
    fit, load_checkpoint, save_checkpoint

__all__ = [
    "KnobMapping", "KnobSetting", "RankedList", "infer_representation",
    "knob_to_latent", "manipulate", "recommend",
    "InteractionDataset", "SyntheticSpec", "UserSplit", "binarize_and_filter",
    "generate_synthetic", "load_ratings", "preference_distribution", "split_users",
    "EvalReport", "MIGReport", "correlation_sweep", "delta_ctrl", "delta_irrel",
    "evaluate_controllability", "evaluate_recommender", "mig", "ndcg_at_k",
    "Checkpoint", "LossConfig", "ModelParams", "TrainConfig", "TrainReport",
    "fit", "load_checkpoint", "save_checkpoint",
]

__version__ = "0.1.0"

"""Scale-regularized denoising score matching on analytic targets."""

from .objective import LossBreakdown, dsm_grad, dsm_loss
from .sampler import SampleRun, langevin_sample, oracle_score, reverse_mean
from .schedule import DiscreteSchedule, VESchedule, alpha_bar_at, make_discrete, ve_sigma
from .scorenet import (
    GradientBundle,
    ScoreModel,
    fourier_features,
    init_model,
    load_checkpoint,
    project_l1,
    save_checkpoint,
)
from .targets import (
    Gaussian,
    GaussianMixture,
    GaussianUniformProduct,
    TargetDensity,
    conditional_score,
    kl_gaussian_moments,
    scale_pushforward,
)
from .trainer import ArchConfig, TrainConfig, TrainHistory, TrainingDiverged, adam_step, train

__all__ = [
    "ArchConfig",
    "DiscreteSchedule",
    "Gaussian",
    "GaussianMixture",
    "GaussianUniformProduct",
    "GradientBundle",
    "LossBreakdown",
    "SampleRun",
    "ScoreModel",
    "TargetDensity",
    "TrainConfig",
    "TrainHistory",
    "TrainingDiverged",
    "VESchedule",
    "adam_step",
    "alpha_bar_at",
    "conditional_score",
    "dsm_grad",
    "dsm_loss",
    "fourier_features",
    "init_model",
    "kl_gaussian_moments",
    "langevin_sample",
    "load_checkpoint",
    "make_discrete",
    "oracle_score",
    "project_l1",
    "reverse_mean",
    "save_checkpoint",
    "scale_pushforward",
    "train",
    "ve_sigma",
]

"""Uncertainty-guided diffusion super-resolution on synthetic images.

Per-pixel aleatoric uncertainty of an SR task is learned with a
generalized-Gaussian heteroscedastic model, refined into a noise
modulation mask, and used to steer a small residual-space diffusion
super-resolver.  See README.md for the pipeline walkthrough.
"""

from .data import DatasetSpec, bicubic_resize, crop_patches, degrade, gen_dataset
from .diffusion import (
    DiffusionSchedule,
    make_schedule,
    posterior_step,
    q_marginal_variance,
    q_sample,
    residual,
    sample_sr,
    train_diffusion,
)
from .gg import GGFieldParams, GGParams, gg_nll, gg_sample, gg_variance, log_gamma
from .bayes import TrainConfig, init_uncertainty_net, predict_mask, train_uncertainty
from .mask import RefineConfig, adjustment_factor, modulate_noise, refine_mask
from .metrics import ause, psnr, sparsification, ssim

__all__ = [
    "DatasetSpec",
    "DiffusionSchedule",
    "GGFieldParams",
    "GGParams",
    "RefineConfig",
    "TrainConfig",
    "adjustment_factor",
    "ause",
    "bicubic_resize",
    "crop_patches",
    "degrade",
    "gen_dataset",
    "gg_nll",
    "gg_sample",
    "gg_variance",
    "init_uncertainty_net",
    "log_gamma",
    "make_schedule",
    "modulate_noise",
    "posterior_step",
    "predict_mask",
    "psnr",
    "q_marginal_variance",
    "q_sample",
    "refine_mask",
    "residual",
    "sample_sr",
    "sparsification",
    "ssim",
    "train_uncertainty",
    "train_diffusion",
]

__version__ = "0.1.0"

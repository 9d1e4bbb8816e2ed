"""Per-pixel uncertainty predictor.

A small convolutional network maps a bicubic-upscaled LR image to three
co-registered grids: predicted mean, scale and shape of a generalized
Gaussian per pixel.  It is trained from scratch with the GG negative
log-likelihood; the predicted variance grid is the raw uncertainty mask.
"""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from . import gg
from .data import bicubic_resize
from .errors import ConfigError
from .nets import Adam, TrainConfig, batch_schedule, conv_init, grads_to_numpy, learning_rate_at, to_torch

__all__ = [
    "TrainConfig",
    "init_uncertainty_net",
    "forward_uncertainty",
    "nll_loss_and_grads",
    "train_uncertainty",
    "predict_mask",
]

_SCALE_FLOOR = 1e-3
_SHAPE_OFFSET = 0.2
_MIN_INPUT = 7  # receptive field of trunk + head


def init_uncertainty_net(seed: int, channels: int = 16) -> dict:
    """Two 3x3 trunk convolutions plus three 3x3 heads (mean/scale/shape)."""
    if channels < 4:
        raise ConfigError(f"channels must be >= 4, got {channels}")
    rng = np.random.default_rng(seed)
    params = {}
    for name, c_in, c_out in (
        ("trunk1", 1, channels),
        ("trunk2", channels, channels),
        ("head_mean", channels, 1),
        ("head_scale", channels, 1),
        ("head_shape", channels, 1),
    ):
        w, b = conv_init(rng, c_in, c_out)
        params[f"{name}.w"] = w
        params[f"{name}.b"] = b
    return params


def _forward_torch(p, x):
    """x: (B,1,H,W) -> (mean, scale, shape) tensors of the same spatial size."""
    h = F.silu(F.conv2d(x, p["trunk1.w"], p["trunk1.b"], padding=1))
    h = F.silu(F.conv2d(h, p["trunk2.w"], p["trunk2.b"], padding=1))
    mean = F.conv2d(h, p["head_mean.w"], p["head_mean.b"], padding=1)
    scale = F.softplus(F.conv2d(h, p["head_scale.w"], p["head_scale.b"], padding=1)) + _SCALE_FLOOR
    shape = (
        F.softplus(F.conv2d(h, p["head_shape.w"], p["head_shape.b"], padding=1))
        + _SCALE_FLOOR
        + _SHAPE_OFFSET
    )
    return mean, scale, shape


def _check_input(img: np.ndarray):
    if img.ndim != 2 or min(img.shape) < _MIN_INPUT:
        raise ValueError(
            f"input must be a 2-d grid of at least {_MIN_INPUT}x{_MIN_INPUT}, got {img.shape}"
        )


def forward_uncertainty(net: dict, lr_upscaled: np.ndarray) -> gg.GGFieldParams:
    """Predict per-pixel GG parameter grids for an HR-sized input image."""
    _check_input(lr_upscaled)
    x = torch.from_numpy(lr_upscaled.astype(np.float32))[None, None]
    with torch.no_grad():
        mean, scale, shape = _forward_torch(to_torch(net), x)
    return gg.GGFieldParams(
        mean=mean[0, 0].numpy().astype(np.float64),
        scale=scale[0, 0].numpy().astype(np.float64),
        shape=shape[0, 0].numpy().astype(np.float64),
    )


def nll_loss_and_grads(net: dict, lr_up_batch, hr_batch, dtype=torch.float32):
    """GG negative log-likelihood of a batch and its parameter gradients.

    Batch arrays are (B,H,W).  The loss is the mean over batch and pixels,
    matching the per-image reduction of gg_nll.  Convolutions run in
    ``dtype``; the likelihood itself always runs in float64 because its
    |residual/scale|**shape term overflows float32 once the scale head
    approaches its floor.
    """
    params_t = to_torch(net, dtype=dtype, requires_grad=True)
    x = torch.from_numpy(np.ascontiguousarray(lr_up_batch)).to(dtype)[:, None]
    y = torch.from_numpy(np.ascontiguousarray(hr_batch)).to(dtype)[:, None]
    mean, scale, shape = _forward_torch(params_t, x)
    loss = gg.gg_nll_torch(
        mean.double(), scale.double(), shape.double(), y.double()
    )
    loss.backward()
    return float(loss.detach()), grads_to_numpy(params_t)


def train_uncertainty(net: dict, dataset, cfg: TrainConfig, batch_indices=None):
    """Adam-train the predictor on (lr_upscaled, hr) pairs.

    Batches are formed by indexing into ``dataset`` with a schedule drawn
    up front from cfg.seed (or the injected ``batch_indices``), so results
    depend on the data only through what the indices select.  Returns the
    updated parameters and one loss value per iteration.
    """
    if not dataset:
        raise ConfigError("dataset must be nonempty")
    shapes = {pair[0].shape for pair in dataset} | {pair[1].shape for pair in dataset}
    if len(shapes) != 1:
        raise ConfigError(f"dataset pairs must share one shape, got {shapes}")
    lr_up = np.stack([p[0] for p in dataset]).astype(np.float32)
    hr = np.stack([p[1] for p in dataset]).astype(np.float32)
    if batch_indices is None:
        batch_indices = batch_schedule(cfg.seed, cfg.iterations, cfg.batch_size, len(dataset))
    params = dict(net)
    opt = Adam(params)
    history = []
    for i in range(cfg.iterations):
        idx = batch_indices[i]
        loss, grads = nll_loss_and_grads(params, lr_up[idx], hr[idx])
        params = opt.update(
            params, grads, learning_rate_at(cfg, i), cfg.adam_beta1, cfg.adam_beta2
        )
        history.append(loss)
    return params, history


def predict_mask(net: dict, lr: np.ndarray, scale_factor: int) -> np.ndarray:
    """Raw uncertainty mask: predicted per-pixel GG variance at HR size."""
    if scale_factor not in (2, 4):
        raise ValueError(f"scale_factor must be 2 or 4, got {scale_factor}")
    lr_up = bicubic_resize(lr, lr.shape[0] * scale_factor, lr.shape[1] * scale_factor)
    field = forward_uncertainty(net, lr_up)
    return gg.gg_variance(field.scale, field.shape)

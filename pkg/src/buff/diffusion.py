"""Mask-modulated diffusion in residual space.

The forward chain adds scheduled Gaussian noise whose per-pixel standard
deviation is multiplied by a modulation mask b, so the closed-form
marginal of x_t is N(sqrt(abar_t) x0, (1 - abar_t) b^2).  The reverse
chain applies the usual DDPM posterior mean with the predicted noise in
the modulated-noise slot and transition variance pbeta_t * b^2.  The
chain models the residual between the bicubic-upscaled LR image and the
HR target; the SR output adds the sampled residual back.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .bayes import predict_mask
from .data import bicubic_resize
from .errors import ConfigError
from .mask import RefineConfig, refine_mask
from .nets import (
    Adam,
    TrainConfig,
    conv_init,
    grads_to_numpy,
    learning_rate_at,
    linear_init,
    time_embedding,
    to_torch,
)


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step noise levels and the derived cumulative quantities."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    posterior_betas: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.betas)


@dataclass
class ConditionBundle:
    """Everything the sampler conditions on, computed once per image."""

    lr: np.ndarray
    lr_up: np.ndarray
    b: np.ndarray
    encoded: np.ndarray | None


def make_schedule(steps: int, beta_start: float, beta_end: float) -> DiffusionSchedule:
    """Linear beta schedule with cumulative products and posterior variances."""
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    betas = np.linspace(beta_start, beta_end, steps, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    prev = np.concatenate(([1.0], alpha_bars[:-1]))
    posterior_betas = (1.0 - prev) / (1.0 - alpha_bars) * betas
    return DiffusionSchedule(betas, alphas, alpha_bars, posterior_betas)


def _check_t(t: int, sched: DiffusionSchedule):
    if not 1 <= t <= sched.steps:
        raise ValueError(f"t must lie in [1, {sched.steps}], got {t}")


def residual(hr: np.ndarray, lr_up: np.ndarray) -> np.ndarray:
    """Elementwise difference hr - lr_up (the quantity the chain models)."""
    if hr.shape != lr_up.shape:
        raise ValueError(f"shape mismatch {hr.shape} vs {lr_up.shape}")
    return hr - lr_up


def q_sample(x0, t: int, b, eps, sched: DiffusionSchedule):
    """Closed-form forward sample sqrt(abar_t) x0 + sqrt(1-abar_t) (eps*b)."""
    _check_t(t, sched)
    if not (x0.shape == b.shape == eps.shape):
        raise ValueError(f"shape mismatch {x0.shape}, {b.shape}, {eps.shape}")
    ab = sched.alpha_bars[t - 1]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * (eps * b)


def q_marginal_variance(t: int, b, sched: DiffusionSchedule):
    """Per-pixel forward-marginal variance (1 - abar_t) * b^2."""
    _check_t(t, sched)
    return (1.0 - sched.alpha_bars[t - 1]) * b**2


def posterior_step(x_t, t: int, eps_hat, b, z, sched: DiffusionSchedule):
    """One reverse transition: posterior mean plus mask-modulated noise.

    z must be a unit Gaussian draw, or the zero grid at t = 1 where the
    transition is deterministic.
    """
    _check_t(t, sched)
    i = t - 1
    mu = (x_t - sched.betas[i] / np.sqrt(1.0 - sched.alpha_bars[i]) * eps_hat) / np.sqrt(
        sched.alphas[i]
    )
    return mu + np.sqrt(sched.posterior_betas[i]) * (z * b)


# ---------------------------------------------------------------------------
# Conditional noise predictor (small U-shaped net) and LR encoder


def init_noise_predictor(
    seed: int, base_channels: int = 16, cond_channels: int = 8, time_dim: int = 32
) -> dict:
    """U-shaped predictor: two stride-2 stages down, bottleneck, two up.

    The input is x_t concatenated with the condition features; a sinusoidal
    embedding of t passes through a learned linear map and is added after
    the first convolution of every stage.
    """
    if base_channels < 8:
        raise ConfigError(f"base_channels must be >= 8, got {base_channels}")
    c = base_channels
    rng = np.random.default_rng(seed)
    params = {}

    def conv(name, c_in, c_out):
        w, b = conv_init(rng, c_in, c_out)
        params[f"{name}.w"] = w
        params[f"{name}.b"] = b

    def temb(name, c_out):
        w, b = linear_init(rng, time_dim, c_out)
        params[f"{name}.temb.w"] = w
        params[f"{name}.temb.b"] = b

    conv("stem", 1 + cond_channels, c)
    conv("down1.conv1", c, 2 * c)
    temb("down1", 2 * c)
    conv("down1.conv2", 2 * c, 2 * c)
    conv("down2.conv1", 2 * c, 4 * c)
    temb("down2", 4 * c)
    conv("down2.conv2", 4 * c, 4 * c)
    conv("mid.conv1", 4 * c, 4 * c)
    temb("mid", 4 * c)
    conv("mid.conv2", 4 * c, 4 * c)
    conv("up1.conv1", 4 * c + 2 * c, 2 * c)
    temb("up1", 2 * c)
    conv("up1.conv2", 2 * c, 2 * c)
    conv("up2.conv1", 2 * c + c, c)
    temb("up2", c)
    conv("up2.conv2", c, c)
    conv("out", c, 1)
    return params


def _stage(p, name, h, temb, stride=1):
    h = F.conv2d(h, p[f"{name}.conv1.w"], p[f"{name}.conv1.b"], stride=stride, padding=1)
    h = h + (temb @ p[f"{name}.temb.w"].T + p[f"{name}.temb.b"])[:, :, None, None]
    h = F.silu(h)
    return F.silu(F.conv2d(h, p[f"{name}.conv2.w"], p[f"{name}.conv2.b"], padding=1))


def _predictor_forward(p, x, t_vec, cond):
    if x.shape[-1] % 4 or x.shape[-2] % 4:
        raise ValueError(f"spatial dims must be divisible by 4, got {tuple(x.shape[-2:])}")
    temb = time_embedding(t_vec, p["down1.temb.w"].shape[1])
    h0 = F.silu(F.conv2d(torch.cat([x, cond], dim=1), p["stem.w"], p["stem.b"], padding=1))
    d1 = _stage(p, "down1", h0, temb, stride=2)
    d2 = _stage(p, "down2", d1, temb, stride=2)
    m = _stage(p, "mid", d2, temb)
    u1 = _stage(p, "up1", torch.cat([F.interpolate(m, scale_factor=2), d1], dim=1), temb)
    u2 = _stage(p, "up2", torch.cat([F.interpolate(u1, scale_factor=2), h0], dim=1), temb)
    return F.conv2d(u2, p["out.w"], p["out.b"], padding=1)


def forward_noise_predictor(predictor: dict, x_t: np.ndarray, t: int, encoded: np.ndarray):
    """Predicted (modulated) noise for one image at step t."""
    x = torch.from_numpy(x_t.astype(np.float32))[None, None]
    cond = torch.from_numpy(np.ascontiguousarray(encoded, dtype=np.float32))[None]
    t_vec = torch.full((1,), float(t), dtype=torch.float32)
    with torch.no_grad():
        out = _predictor_forward(to_torch(predictor), x, t_vec, cond)
    return out[0, 0].numpy().astype(np.float64)


def init_encoder(seed: int, channels: int = 8, use_be: bool = True) -> dict:
    """Three-convolution residual encoder of the conditioning image stack.

    The first output planes pass the inputs through unchanged; the conv
    stack fills the remaining ``channels - inputs`` planes, so downstream
    consumers always see the raw conditioning alongside learned features.
    """
    in_planes = 2 if use_be else 1
    if channels < in_planes + 1:
        raise ConfigError(
            f"channels must be >= {in_planes + 1} (inputs + 1), got {channels}"
        )
    inner = channels - in_planes
    rng = np.random.default_rng(seed)
    params = {}
    for name, c_in, c_out in (
        ("conv1", in_planes, inner),
        ("conv2", inner, inner),
        ("conv3", inner, inner),
    ):
        w, b = conv_init(rng, c_in, c_out)
        params[f"{name}.w"] = w
        params[f"{name}.b"] = b
    return params


def _encoder_forward(p, x):
    h1 = F.silu(F.conv2d(x, p["conv1.w"], p["conv1.b"], padding=1))
    h2 = F.silu(F.conv2d(h1, p["conv2.w"], p["conv2.b"], padding=1))
    stack = F.conv2d(h2, p["conv3.w"], p["conv3.b"], padding=1) + h1
    return torch.cat([x, stack], dim=1)


def encode_lr(encoder: dict, lr_up: np.ndarray, b: np.ndarray, use_be: bool) -> np.ndarray:
    """Feature grid for conditioning; the mask is a second input channel
    only when use_be is set."""
    if lr_up.shape != b.shape:
        raise ValueError(f"shape mismatch {lr_up.shape} vs {b.shape}")
    planes = [lr_up, b] if use_be else [lr_up]
    expected = encoder["conv1.w"].shape[1]
    if len(planes) != expected:
        raise ValueError(
            f"encoder expects {expected} input channel(s), got {len(planes)} (use_be={use_be})"
        )
    x = torch.from_numpy(np.stack(planes).astype(np.float32))[None]
    with torch.no_grad():
        out = _encoder_forward(to_torch(encoder), x)
    return out[0].numpy()


def pretrain_encoder(encoder: dict, dataset, cfg: TrainConfig, use_be: bool = True):
    """Optional warm-up: mean-absolute-error reconstruction of HR.

    The readout is the upscaled-LR passthrough plus the first learned
    feature plane (no extra head), so after pretraining that plane carries
    the encoder's estimate of the HR residual and downstream consumers
    receive it directly.
    """
    if not dataset:
        raise ConfigError("dataset must be nonempty")
    lr_up, hr, b = _prepare_arrays(dataset)
    x = np.concatenate([lr_up, b], axis=1) if use_be else lr_up
    rng = np.random.default_rng(cfg.seed)
    recon_plane = encoder["conv1.w"].shape[1]  # first plane after the passthrough
    params = dict(encoder)
    opt = Adam(params)
    history = []
    for i in range(cfg.iterations):
        idx = rng.integers(0, len(dataset), size=cfg.batch_size)
        params_t = to_torch(params, requires_grad=True)
        feats = _encoder_forward(params_t, torch.from_numpy(x[idx]))
        recon = feats[:, :1] + feats[:, recon_plane : recon_plane + 1]
        loss = torch.mean(torch.abs(recon - torch.from_numpy(hr[idx])))
        loss.backward()
        params = opt.update(
            params, grads_to_numpy(params_t), learning_rate_at(cfg, i),
            cfg.adam_beta1, cfg.adam_beta2,
        )
        history.append(float(loss.detach()))
    return params, history


def _prepare_arrays(dataset):
    """dataset triples (lr, hr, mask) -> float32 stacks (lr_up, hr, mask),
    each (N,1,H,W), with lr_up recomputed by bicubic upscaling."""
    h, w = dataset[0][1].shape
    lr_up = np.stack(
        [bicubic_resize(lr, h, w) for lr, _, _ in dataset]
    ).astype(np.float32)[:, None]
    hr = np.stack([p[1] for p in dataset]).astype(np.float32)[:, None]
    b = np.stack([p[2] for p in dataset]).astype(np.float32)[:, None]
    return lr_up, hr, b


def diffusion_loss_and_grads(predictor, x_t, t_vec, cond, target, dtype=torch.float32):
    """Mean absolute error of the predicted noise and its gradients."""
    params_t = to_torch(predictor, dtype=dtype, requires_grad=True)
    out = _predictor_forward(
        params_t,
        torch.from_numpy(x_t).to(dtype),
        torch.from_numpy(t_vec).to(dtype),
        torch.from_numpy(cond).to(dtype),
    )
    loss = torch.mean(torch.abs(out - torch.from_numpy(target).to(dtype)))
    loss.backward()
    return float(loss.detach()), grads_to_numpy(params_t)


def train_diffusion(
    predictor: dict,
    encoder: dict,
    dataset,
    sched: DiffusionSchedule,
    cfg: TrainConfig,
    use_bg: bool = True,
    use_be: bool = True,
    residual_scale: float = 1.0,
    batch_indices=None,
):
    """Adam-train the noise predictor on (lr, hr, mask) triples.

    Per iteration: draw a batch of images and per-image steps t, draw unit
    Gaussian noise, build the noise target (mask-modulated when use_bg),
    form x_t from the closed-form forward marginal of the scaled residual,
    and minimize the mean absolute prediction error.  The encoder is
    frozen here; its features are precomputed once per image.  Index draws
    and noise draws come from independent streams of cfg.seed, so an
    injected index schedule leaves the noise sequence unchanged.
    """
    if not dataset:
        raise ConfigError("dataset must be nonempty")
    lr_up, hr, b = _prepare_arrays(dataset)
    x_r = (hr - lr_up) * residual_scale
    cond = np.stack(
        [
            encode_lr(encoder, lr_up[i, 0].astype(np.float64), b[i, 0].astype(np.float64), use_be)
            for i in range(len(dataset))
        ]
    ).astype(np.float32)

    ss = np.random.SeedSequence(cfg.seed)
    idx_child, noise_child = ss.spawn(2)
    idx_rng = np.random.Generator(np.random.PCG64(idx_child))
    noise_rng = np.random.Generator(np.random.PCG64(noise_child))
    if batch_indices is None:
        batch_indices = [
            idx_rng.integers(0, len(dataset), size=cfg.batch_size)
            for _ in range(cfg.iterations)
        ]

    params = dict(predictor)
    opt = Adam(params)
    history = []
    for i in range(cfg.iterations):
        idx = batch_indices[i]
        t = noise_rng.integers(1, sched.steps + 1, size=cfg.batch_size)
        eps = noise_rng.standard_normal((cfg.batch_size, 1) + hr.shape[2:]).astype(np.float32)
        target = eps * b[idx] if use_bg else eps
        ab = sched.alpha_bars[t - 1].astype(np.float32)[:, None, None, None]
        x_t = np.sqrt(ab) * x_r[idx] + np.sqrt(1.0 - ab) * target
        loss, grads = diffusion_loss_and_grads(
            params, x_t, t.astype(np.float32), cond[idx], target
        )
        params = opt.update(
            params, grads, learning_rate_at(cfg, i), cfg.adam_beta1, cfg.adam_beta2
        )
        history.append(loss)
    return params, history


def prepare_condition(
    lr: np.ndarray,
    scale_factor: int,
    bayes_net,
    refine_cfg: RefineConfig | None,
    encoder,
    use_be: bool = True,
    unit_mask: bool = False,
) -> ConditionBundle:
    """Upscale, build the modulation mask, and encode the conditioning."""
    if scale_factor not in (2, 4):
        raise ValueError(f"scale_factor must be 2 or 4, got {scale_factor}")
    h, w = lr.shape[0] * scale_factor, lr.shape[1] * scale_factor
    lr_up = bicubic_resize(lr, h, w)
    if unit_mask or bayes_net is None:
        b = np.ones((h, w))
    else:
        b = refine_mask(predict_mask(bayes_net, lr, scale_factor), refine_cfg)
    encoded = encode_lr(encoder, lr_up, b, use_be) if encoder is not None else None
    return ConditionBundle(lr=lr, lr_up=lr_up, b=b, encoded=encoded)


def sample_sr(
    lr: np.ndarray,
    predictor,
    encoder,
    bayes_net,
    sched: DiffusionSchedule,
    refine_cfg: RefineConfig | None,
    scale_factor: int,
    seed: int,
    use_be: bool = True,
    unit_mask: bool = False,
    residual_scale: float = 1.0,
    zero_noise: bool = False,
) -> np.ndarray:
    """Full reverse chain from unit Gaussian noise to an SR image in [0,1].

    ``predictor`` is either a parameter dict or a callable
    ``(x_t, t, encoded) -> eps_hat`` (used by tests to drive the chain with
    a known-noise stand-in).  ``zero_noise`` suppresses all per-step draws,
    collapsing the chain onto the posterior means.
    """
    cond = prepare_condition(lr, scale_factor, bayes_net, refine_cfg, encoder, use_be, unit_mask)
    predict = (
        predictor
        if callable(predictor)
        else (lambda x, t, enc: forward_noise_predictor(predictor, x, t, enc))
    )
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(cond.lr_up.shape)
    for t in range(sched.steps, 0, -1):
        eps_hat = predict(x, t, cond.encoded)
        if t == 1 or zero_noise:
            z = np.zeros_like(x)
        else:
            z = rng.standard_normal(x.shape)
        x = posterior_step(x, t, eps_hat, cond.b, z, sched)
    return np.clip(cond.lr_up + x / residual_scale, 0.0, 1.0)

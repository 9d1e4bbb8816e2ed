"""Shared network plumbing: parameter containers, init, Adam, schedules.

Network parameters live as ordered dicts of named float32 numpy arrays
(the checkpoint unit).  Torch is used purely as the forward/backward
evaluator; every random draw comes from caller-supplied numpy generators
so runs are reproducible bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings shared by the training loops."""

    iterations: int
    batch_size: int = 16
    learning_rate: float = 1e-4
    lr_decay_factor: float = 1.0
    lr_decay_every: int = 1000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    seed: int = 0
    lr_schedule: str = "step"  # "step" or "cosine"

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (self.learning_rate > 0):
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigError("adam betas must lie in (0, 1)")
        if self.lr_decay_every < 1:
            raise ConfigError("lr_decay_every must be >= 1")
        if self.lr_schedule not in ("step", "cosine"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")


def learning_rate_at(cfg: TrainConfig, iteration: int) -> float:
    if cfg.lr_schedule == "cosine":
        return cfg.learning_rate * 0.5 * (1.0 + np.cos(np.pi * iteration / cfg.iterations))
    return cfg.learning_rate * cfg.lr_decay_factor ** (iteration // cfg.lr_decay_every)


def conv_init(rng: np.random.Generator, c_in: int, c_out: int, k: int = 3):
    """Fan-in-scaled uniform init for a conv weight/bias pair."""
    bound = 1.0 / np.sqrt(c_in * k * k)
    w = rng.uniform(-bound, bound, size=(c_out, c_in, k, k)).astype(np.float32)
    b = rng.uniform(-bound, bound, size=(c_out,)).astype(np.float32)
    return w, b


def linear_init(rng: np.random.Generator, f_in: int, f_out: int):
    bound = 1.0 / np.sqrt(f_in)
    w = rng.uniform(-bound, bound, size=(f_out, f_in)).astype(np.float32)
    b = rng.uniform(-bound, bound, size=(f_out,)).astype(np.float32)
    return w, b


def to_torch(params, dtype=torch.float32, requires_grad=False) -> dict:
    out = {}
    for name, arr in params.items():
        t = torch.from_numpy(np.ascontiguousarray(arr)).to(dtype)
        if requires_grad:
            t.requires_grad_(True)
        out[name] = t
    return out


def grads_to_numpy(params_t) -> dict:
    return {
        name: (
            t.grad.to(torch.float32).numpy().copy()
            if t.grad is not None
            else np.zeros(t.shape, dtype=np.float32)
        )
        for name, t in params_t.items()
    }


def param_count(params) -> int:
    return int(sum(v.size for v in params.values()))


def time_embedding(t, dim: int):
    """Sinusoidal embedding of (integer) steps t with geometric frequencies."""
    half = dim // 2
    freqs = torch.exp(
        -np.log(10000.0) * torch.arange(half, dtype=t.dtype) / (half - 1)
    )
    ang = t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class Adam:
    """Plain Adam over a dict of float32 numpy arrays (eps = 1e-8)."""

    def __init__(self, params):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0

    def update(self, params, grads, lr: float, beta1: float, beta2: float) -> dict:
        self.step += 1
        c1 = 1.0 - beta1**self.step
        c2 = 1.0 - beta2**self.step
        new = {}
        for k, p in params.items():
            g = grads[k]
            self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * g
            self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * g * g
            step = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + 1e-8)
            new[k] = (p - lr * step).astype(np.float32)
        return new


def batch_schedule(seed: int, iterations: int, batch_size: int, n: int) -> list:
    """The index schedule used when none is injected: uniform draws per step."""
    rng = np.random.default_rng(seed)
    return [rng.integers(0, n, size=batch_size) for _ in range(iterations)]

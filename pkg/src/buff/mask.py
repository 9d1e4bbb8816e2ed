"""Refinement of raw uncertainty (variance) masks into noise modulation masks.

A logistic adjustment factor compares each pixel's predicted variance to a
threshold; pixels above the threshold get an amplification factor built on
``amp_base``, pixels at or below it a reduction factor built on
``red_base``.  The resulting strictly positive grid multiplies diffusion
noise elementwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

THRESHOLD_MODES = ("fixed", "per_image_median")


@dataclass(frozen=True)
class RefineConfig:
    """Parameters of the mask refinement transform."""

    threshold: float = 0.01
    steepness: float = 10.0
    amp_base: float = 1.2
    red_base: float = 0.85
    intensity: float = 0.4
    threshold_mode: str = "per_image_median"

    def __post_init__(self):
        if not (self.steepness > 0):
            raise ConfigError(f"steepness must be > 0, got {self.steepness}")
        if not (self.amp_base >= 1.0 >= self.red_base > 0.0):
            raise ConfigError(
                f"need amp_base >= 1 >= red_base > 0, got {self.amp_base}, {self.red_base}"
            )
        if self.intensity < 0:
            raise ConfigError(f"intensity must be >= 0, got {self.intensity}")
        if self.red_base - 0.5 * self.intensity <= 0:
            raise ConfigError(
                "mask positivity violated: red_base - intensity/2 = "
                f"{self.red_base - 0.5 * self.intensity} <= 0"
            )
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ConfigError(f"threshold_mode must be one of {THRESHOLD_MODES}")

    @property
    def lower_bound(self) -> float:
        return self.red_base - 0.5 * self.intensity

    @property
    def upper_bound(self) -> float:
        return self.amp_base + 0.5 * self.intensity


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # numerically stable logistic
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def adjustment_factor(mask: np.ndarray, threshold: float, steepness: float) -> np.ndarray:
    """Logistic response sigma((mask - threshold) * steepness), in (0, 1)."""
    if not (steepness > 0):
        raise ConfigError(f"steepness must be > 0, got {steepness}")
    return _sigmoid((np.asarray(mask, np.float64) - threshold) * steepness)


def refine_mask(mask: np.ndarray, cfg: RefineConfig) -> np.ndarray:
    """Map a variance mask to per-pixel noise modulation factors.

    Above the threshold the factor is amp_base + (A - 0.5)*intensity, at or
    below it red_base - (0.5 - A)*intensity, with A the logistic adjustment
    factor.  Every output lies in [cfg.lower_bound, cfg.upper_bound].
    """
    m = np.asarray(mask, np.float64)
    thr = float(np.median(m)) if cfg.threshold_mode == "per_image_median" else cfg.threshold
    a = adjustment_factor(m, thr, cfg.steepness)
    amplified = cfg.amp_base + (a - 0.5) * cfg.intensity
    reduced = cfg.red_base - (0.5 - a) * cfg.intensity
    return np.where(m > thr, amplified, reduced)


def modulate_noise(noise: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product of a noise grid with a modulation mask."""
    if noise.shape != b.shape:
        raise ValueError(f"shape mismatch {noise.shape} vs {b.shape}")
    return noise * b

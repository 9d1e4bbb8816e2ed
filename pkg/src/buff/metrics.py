"""Image quality metrics and uncertainty sparsification analysis."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

# Report tiers for the uncertainty-mask quality label, keyed by the
# sparsification-error area; lower is better.
AUSE_QUALITY_TIERS = ((0.121, "high"), (0.217, "medium"), (0.308, "low"))


@dataclass
class SparsificationCurve:
    """Remaining error as the most uncertain (resp. worst) pixels are removed."""

    fractions: np.ndarray
    error_by_uncertainty: np.ndarray
    error_by_oracle: np.ndarray


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE) in dB; +inf when the grids are identical."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be > 0")
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_mean(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    k = window.shape[0]
    views = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.tensordot(views, window, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean local structural similarity.

    11x11 Gaussian window (sigma=1.5), stabilizers C1=(0.01*peak)^2 and
    C2=(0.03*peak)^2, local statistics taken over valid window positions.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < 11:
        raise ValueError(f"ssim needs at least 11x11 input, got {a.shape}")
    x = np.asarray(a, np.float64)
    y = np.asarray(b, np.float64)
    w = _gaussian_window()
    mu_x = _windowed_mean(x, w)
    mu_y = _windowed_mean(y, w)
    var_x = _windowed_mean(x * x, w) - mu_x**2
    var_y = _windowed_mean(y * y, w) - mu_y**2
    cov = _windowed_mean(x * y, w) - mu_x * mu_y
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def sparsification(
    uncertainty: np.ndarray, abs_error: np.ndarray, steps: int
) -> SparsificationCurve:
    """Sparsification curves for an uncertainty map against true errors.

    For each removal fraction f in {0, 1/steps, ..., (steps-1)/steps} the
    floor(f*n) pixels with the highest uncertainty (highest true error for
    the oracle curve) are dropped, ties broken by flat pixel index, and
    the mean absolute error of the remainder is recorded.
    """
    if uncertainty.shape != abs_error.shape:
        raise ValueError(f"shape mismatch {uncertainty.shape} vs {abs_error.shape}")
    if steps < 2:
        raise ValueError("steps must be >= 2")
    u = np.asarray(uncertainty, np.float64).ravel()
    e = np.asarray(abs_error, np.float64).ravel()
    n = u.size
    fractions = np.arange(steps, dtype=np.float64) / steps

    def remaining_means(keys):
        order = np.argsort(-keys, kind="stable")  # descending, index tie-break
        tail = np.cumsum(e[order][::-1])[::-1]  # tail[k] = sum of e from rank k on
        out = np.empty(steps)
        for i, f in enumerate(fractions):
            k = int(np.floor(f * n))
            out[i] = tail[k] / (n - k)
        return out

    return SparsificationCurve(
        fractions=fractions,
        error_by_uncertainty=remaining_means(u),
        error_by_oracle=remaining_means(e),
    )


def ause(curve: SparsificationCurve) -> float:
    """Area between the two sparsification curves, full-set-error normalized.

    Returns 0.0 (with a warning) when the full-set error is zero, where
    the normalization is undefined.
    """
    full = curve.error_by_oracle[0]
    if full == 0.0:
        warnings.warn("ause undefined for zero full-set error; returning 0.0")
        return 0.0
    gap = (curve.error_by_uncertainty - curve.error_by_oracle) / full
    return float(np.trapezoid(gap, curve.fractions))


def mask_quality_label(ause_value: float) -> str:
    """Nearest report tier (high/medium/low) for a sparsification area."""
    return min(AUSE_QUALITY_TIERS, key=lambda t: abs(t[0] - ause_value))[1]

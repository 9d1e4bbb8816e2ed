"""Synthetic single-channel datasets, bicubic resampling and patch cropping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

GENERATOR_NAMES = ("smooth", "grating", "blobs", "checker")


@dataclass(frozen=True)
class DatasetSpec:
    """Recipe for a deterministic synthetic image set."""

    count: int
    size: int
    scale: int
    mix: tuple = (1.0, 1.0, 1.0, 1.0)  # weights over GENERATOR_NAMES
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError(f"count must be >= 1, got {self.count}")
        if self.size < 16 or self.size % self.scale != 0:
            raise ConfigError(
                f"size must be >= 16 and divisible by scale, got size={self.size} scale={self.scale}"
            )
        w = np.asarray(self.mix, dtype=np.float64)
        if len(w) != 4 or np.any(w < 0) or not np.any(w > 0):
            raise ConfigError(f"mix must be 4 nonnegative weights, not all zero: {self.mix}")


@dataclass
class PatchSet:
    """Co-registered (lr, hr, mask) training windows."""

    triples: list
    patch_size: int
    stride: int


def _cubic_kernel(d):
    # Keys cubic convolution kernel, a = -0.5 (Catmull-Rom).
    a = -0.5
    ad = np.abs(d)
    w = np.where(
        ad <= 1.0,
        (a + 2.0) * ad**3 - (a + 3.0) * ad**2 + 1.0,
        np.where(ad < 2.0, a * ad**3 - 5.0 * a * ad**2 + 8.0 * a * ad - 4.0 * a, 0.0),
    )
    return w


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    # Output sample j reads input coordinate (j + 0.5) * n_in / n_out - 0.5
    # through the 4-tap cubic kernel; taps are clamped to the edges.
    x = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(x).astype(np.int64)
    taps = base[:, None] + np.arange(-1, 3)[None, :]
    weights = _cubic_kernel(x[:, None] - taps)
    taps = np.clip(taps, 0, n_in - 1)
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.repeat(np.arange(n_out), 4)
    np.add.at(m, (rows, taps.ravel()), weights.ravel())
    return m


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable cubic-convolution resize (kernel a=-0.5, edges replicated).

    Weights at every output pixel sum to one, so constants are preserved
    exactly and resizing commutes with affine intensity maps.  Resizing to
    the input size is the identity.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("output dimensions must be >= 1")
    arr = np.asarray(img, dtype=np.float64)
    wr = _resize_matrix(arr.shape[0], out_h)
    wc = _resize_matrix(arr.shape[1], out_w)
    return wr @ arr @ wc.T


def degrade(hr: np.ndarray, scale_factor: int) -> np.ndarray:
    """Bicubic downscale by an integer factor."""
    h, w = hr.shape
    if h % scale_factor or w % scale_factor:
        raise ValueError(
            f"image dims {hr.shape} not divisible by scale factor {scale_factor}"
        )
    return bicubic_resize(hr, h // scale_factor, w // scale_factor)


def _coords(n: int):
    # normalized [-0.5, 0.5] row/col grids plus pixel-unit grids
    u = (np.arange(n) + 0.5) / n - 0.5
    cc, rr = np.meshgrid(u, u, indexing="xy")
    c_px, r_px = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    return rr, cc, r_px.astype(np.float64), c_px.astype(np.float64)


def _gradient_background(rng, rr, cc, amp=0.35):
    phi = rng.uniform(0, 2 * np.pi)
    a = rng.uniform(0.4, 1.0) * amp
    return 0.5 + a * (np.cos(phi) * cc + np.sin(phi) * rr) / 0.5


def _gen_smooth(rng, n):
    rr, cc, _, _ = _coords(n)
    img = _gradient_background(rng, rr, cc, amp=0.25)
    for _ in range(2):
        cx, cy = rng.uniform(-0.3, 0.3, size=2)
        sig = rng.uniform(0.3, 0.45)
        amp = rng.uniform(-0.15, 0.15)
        img = img + amp * np.exp(-((cc - cx) ** 2 + (rr - cy) ** 2) / (2 * sig**2))
    return img


def _gen_grating(rng, n):
    rr, cc, r_px, c_px = _coords(n)
    img = _gradient_background(rng, rr, cc, amp=0.18)
    lam = rng.uniform(8.0, 16.0)
    theta = rng.uniform(0, np.pi)
    phase = rng.uniform(0, 2 * np.pi)
    amp = rng.uniform(0.2, 0.32)
    ex, ey = rng.uniform(-0.2, 0.2, size=2)
    sig = rng.uniform(0.25, 0.35)
    envelope = np.exp(-((cc - ex) ** 2 + (rr - ey) ** 2) / (2 * sig**2))
    wave = np.sin(2 * np.pi * (c_px * np.cos(theta) + r_px * np.sin(theta)) / lam + phase)
    return img + amp * wave * envelope


def _gen_blobs(rng, n):
    rr, cc, _, _ = _coords(n)
    img = _gradient_background(rng, rr, cc, amp=0.18)
    for _ in range(int(rng.integers(6, 12))):
        cx, cy = rng.uniform(-0.45, 0.45, size=2)
        sig = rng.uniform(1.5, 3.5) / n
        amp = rng.uniform(0.25, 0.45) * (1 if rng.random() < 0.5 else -1)
        img = img + amp * np.exp(-((cc - cx) ** 2 + (rr - cy) ** 2) / (2 * sig**2))
    return img


def _gen_checker(rng, n):
    rr, cc, r_px, c_px = _coords(n)
    img = _gradient_background(rng, rr, cc, amp=0.18)
    cell = int(rng.choice([4, 8]))
    ro, co = rng.integers(0, cell, size=2)
    checker = ((np.floor((r_px + ro) / cell) + np.floor((c_px + co) / cell)) % 2) * 2.0 - 1.0
    psi = rng.uniform(0, 2 * np.pi)
    bx, by = rng.uniform(-0.2, 0.2, size=2)
    region = ((cc - bx) * np.cos(psi) + (rr - by) * np.sin(psi)) > 0
    amp = rng.uniform(0.2, 0.32)
    return img + amp * checker * region


_GENERATORS = (_gen_smooth, _gen_grating, _gen_blobs, _gen_checker)


def gen_dataset(spec: DatasetSpec) -> list:
    """Generate ``spec.count`` images in [0,1], one rng stream per image."""
    weights = np.asarray(spec.mix, dtype=np.float64)
    weights = weights / weights.sum()
    images = []
    for i in range(spec.count):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=spec.seed, spawn_key=(i,)))
        )
        gen = _GENERATORS[int(rng.choice(4, p=weights))]
        images.append(np.clip(gen(rng, spec.size), 0.0, 1.0))
    return images


def total_variation(img: np.ndarray) -> float:
    """Mean absolute difference between 4-neighbour pixels."""
    dv = np.abs(np.diff(img, axis=0)).sum()
    dh = np.abs(np.diff(img, axis=1)).sum()
    return float((dv + dh) / img.size)


def crop_patches(
    hr: np.ndarray, lr: np.ndarray, mask: np.ndarray, patch: int, stride: int
) -> PatchSet:
    """Sliding-window (lr, hr, mask) triples with co-registered positions."""
    h, w = hr.shape
    if hr.shape != mask.shape:
        raise ValueError(f"mask shape {mask.shape} != hr shape {hr.shape}")
    if h % lr.shape[0] or w % lr.shape[1] or h // lr.shape[0] != w // lr.shape[1]:
        raise ValueError(f"lr shape {lr.shape} does not evenly divide hr shape {hr.shape}")
    scale = h // lr.shape[0]
    if patch % scale or stride % scale:
        raise ValueError(
            f"patch ({patch}) and stride ({stride}) must be divisible by scale ({scale})"
        )
    if patch > min(h, w):
        raise ValueError(f"patch {patch} exceeds image side {min(h, w)}")
    triples = []
    for r in range(0, h - patch + 1, stride):
        for c in range(0, w - patch + 1, stride):
            rl, cl, pl = r // scale, c // scale, patch // scale
            triples.append(
                (
                    lr[rl : rl + pl, cl : cl + pl].copy(),
                    hr[r : r + patch, c : c + patch].copy(),
                    mask[r : r + patch, c : c + patch].copy(),
                )
            )
    return PatchSet(triples=triples, patch_size=patch, stride=stride)

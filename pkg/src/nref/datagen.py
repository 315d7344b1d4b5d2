"""Synthetic saliency domains and the SALD dataset file format.

A domain draws a smooth "true" saliency map per image, samples fixations
from it, blurs the fixations into the ground-truth map, and renders input
features as a domain-specific linear mix of the true map plus noise.  Two
domains that differ in layout (``natural_like`` vs ``webpage_like``) and
in mixing coefficients give a controllable domain shift.

SALD layout (all little-endian)::

    b"SALD" | version u32 | count u32 | C u32 | H u32 | W u32
    then per sample:
        features   C*H*W f32
        saliency   H*W   f32
        fixations  H*W   u8
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .data import Dataset

KINDS = ("natural_like", "webpage_like")

DATASET_MAGIC = b"SALD"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


@dataclass(frozen=True)
class DomainSpec:
    kind: str = "natural_like"
    height: int = 32
    width: int = 32
    channels: int = 3
    blob_count: tuple = (2, 5)
    blob_scale: tuple = (0.06, 0.14)  # blob sigma as a fraction of min(H, W)
    mixing_seed: int = 0
    n_fix: int = 20
    sigma: float = 1.5
    noise: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}; expected one of {KINDS}")
        if min(self.height, self.width, self.channels, self.n_fix) < 1:
            raise ValueError("height, width, channels and n_fix must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        lo, hi = self.blob_count
        if not 1 <= lo <= hi:
            raise ValueError("blob_count must be a range (lo, hi) with 1 <= lo <= hi")
        if not 0 < self.blob_scale[0] <= self.blob_scale[1]:
            raise ValueError("blob_scale must be a positive range")


def mixing_coefficients(spec):
    """Per-channel mixing weights of a domain, fixed by its mixing seed.

    Magnitudes are in [0.3, 1]; each channel's sign is negative with
    probability 1/4, so two domains usually agree on most channels but not
    on all of them.
    """
    rng = np.random.default_rng([spec.mixing_seed, 0x5A1])
    mag = rng.uniform(0.3, 1.0, spec.channels)
    sign = np.where(rng.random(spec.channels) < 0.25, -1.0, 1.0)
    return mag * sign


def _gauss2d(yy, xx, cy, cx, s):
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))


def gen_true_saliency(spec, rng):
    """Draw one smooth saliency map with maximum 1."""
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    size = min(h, w)
    sal = np.zeros((h, w))

    def blob(cy, cx, lo, hi, amp=None):
        s = rng.uniform(lo, hi) * size
        a = rng.uniform(0.5, 1.0) if amp is None else amp
        return a * _gauss2d(yy, xx, cy, cx, s)

    lo, hi = spec.blob_scale
    if spec.kind == "natural_like":
        for _ in range(rng.integers(spec.blob_count[0], spec.blob_count[1] + 1)):
            cy = np.clip(rng.normal(0.5, 0.12), 0.1, 0.9) * (h - 1)
            cx = np.clip(rng.normal(0.5, 0.12), 0.1, 0.9) * (w - 1)
            sal += blob(cy, cx, lo, hi)
    else:
        # F-pattern: a band across the top, a column down the left edge
        band_y = rng.uniform(0.04, 0.12) * (h - 1)
        band_s = rng.uniform(0.04, 0.08) * h
        reach = rng.uniform(0.6, 1.0) * (w - 1)
        band = np.exp(-((yy - band_y) ** 2) / (2 * band_s**2)) / (1 + np.exp((xx - reach) / 2))
        col_x = rng.uniform(0.04, 0.12) * (w - 1)
        col_s = rng.uniform(0.04, 0.08) * w
        col = np.exp(-((xx - col_x) ** 2) / (2 * col_s**2)) * np.exp(-yy / (0.8 * h))
        sal += rng.uniform(0.8, 1.0) * band + rng.uniform(0.5, 0.8) * col
        for _ in range(rng.integers(1, 3)):
            cy = rng.uniform(0.2, 0.8) * (h - 1)
            cx = rng.uniform(0.2, 0.9) * (w - 1)
            sal += blob(cy, cx, 0.5 * lo, 0.5 * hi)
    return sal / sal.max()


def render_fixations(true_sal, n_fix, rng):
    """Sample up to ``n_fix`` distinct pixels with probability proportional to saliency."""
    sal = np.asarray(true_sal, dtype=np.float64)
    total = sal.sum()
    if not total > 0:
        raise ValueError("cannot sample fixations from a map with zero total mass")
    p = (sal / total).ravel()
    k = min(int(n_fix), int(np.count_nonzero(p)))
    idx = rng.choice(p.size, size=k, replace=False, p=p)
    fix = np.zeros(p.size, dtype=np.uint8)
    fix[idx] = 1
    return fix.reshape(sal.shape)


def blur_to_gt(fix, sigma):
    """Gaussian-blur a fixation map (radius ceil(3 sigma), zero border), max-normalised."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    out = gaussian_filter(
        np.asarray(fix, dtype=np.float64), sigma, mode="constant", radius=math.ceil(3 * sigma)
    )
    peak = out.max()
    return out / peak if peak > 0 else out


def gen_features(true_sal, spec, rng, mixing=None):
    """``C x H x W`` features: each channel a scaled copy of the map plus Gaussian noise."""
    if mixing is None:
        mixing = mixing_coefficients(spec)
    mixing = np.asarray(mixing, dtype=np.float64)
    sal = np.asarray(true_sal, dtype=np.float64)
    feats = mixing[:, None, None] * sal[None]
    if spec.noise > 0:
        feats = feats + spec.noise * rng.standard_normal(feats.shape)
    return feats


def generate_dataset(spec, count, seed, domain="source"):
    """Generate ``count`` samples; a pure function of ``(spec, count, seed)``."""
    rng = np.random.default_rng(seed)
    mixing = mixing_coefficients(spec)
    c, h, w = spec.channels, spec.height, spec.width
    feats = np.empty((count, c, h, w), np.float32)
    sal = np.empty((count, h, w), np.float32)
    fix = np.empty((count, h, w), np.uint8)
    for i in range(count):
        true = gen_true_saliency(spec, rng)
        fix[i] = render_fixations(true, spec.n_fix, rng)
        sal[i] = blur_to_gt(fix[i], spec.sigma)
        feats[i] = gen_features(true, spec, rng, mixing)
    return Dataset(feats, sal, fix, domain=domain)


# -- SALD files ------------------------------------------------------------------


def dump_dataset(ds):
    n, c, h, w = ds.features.shape
    parts = [_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n, c, h, w)]
    feats = ds.features.astype("<f4")
    sal = ds.saliency.astype("<f4")
    fix = ds.fixations.astype(np.uint8)
    for i in range(n):
        parts += [feats[i].tobytes(), sal[i].tobytes(), fix[i].tobytes()]
    return b"".join(parts)


def parse_dataset(data, domain="source"):
    if len(data) < 4 or data[:4] != DATASET_MAGIC:
        raise ValueError("bad magic: not a SALD dataset")
    if len(data) < _HEADER.size:
        raise ValueError(f"truncated dataset: expected at least {_HEADER.size} header bytes, got {len(data)}")
    _, version, n, c, h, w = _HEADER.unpack_from(data)
    if version != DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    per = 4 * c * h * w + 4 * h * w + h * w
    expected = _HEADER.size + n * per
    if len(data) != expected:
        raise ValueError(f"truncated or oversized dataset: expected {expected} bytes, got {len(data)}")
    body = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size).reshape(n, per)
    nf, ns = 4 * c * h * w, 4 * h * w
    feats = body[:, :nf].copy().view("<f4").reshape(n, c, h, w).astype(np.float32)
    sal = body[:, nf:nf + ns].copy().view("<f4").reshape(n, h, w).astype(np.float32)
    fix = body[:, nf + ns:].reshape(n, h, w).copy()
    return Dataset(feats, sal, fix, domain=domain)


def save_dataset(ds, path):
    Path(path).write_bytes(dump_dataset(ds))


def load_dataset(path, domain="source"):
    return parse_dataset(Path(path).read_bytes(), domain=domain)

"""In-memory datasets and reference pools."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Dataset:
    """Stacked samples: features ``(N, C, H, W)``, saliency and fixations ``(N, H, W)``."""

    features: np.ndarray
    saliency: np.ndarray
    fixations: np.ndarray
    domain: str = "source"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.saliency = np.asarray(self.saliency, dtype=np.float32)
        self.fixations = np.asarray(self.fixations, dtype=np.uint8)
        if self.features.ndim != 4:
            raise ValueError(f"features must be (N, C, H, W), got {self.features.shape}")
        n, _, h, w = self.features.shape
        if n == 0:
            raise ValueError("a dataset needs at least one sample")
        for name in ("saliency", "fixations"):
            if getattr(self, name).shape != (n, h, w):
                raise ValueError(f"{name} must have shape {(n, h, w)}, got {getattr(self, name).shape}")
        if not np.isfinite(self.features).all() or not np.isfinite(self.saliency).all():
            raise ValueError("dataset contains non-finite values")

    def __len__(self):
        return self.features.shape[0]

    @property
    def shape(self):
        """``(C, H, W)`` shared by every sample."""
        return self.features.shape[1:]

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.features[idx], self.saliency[idx], self.fixations[idx], self.domain)

    def equals(self, other):
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.saliency, other.saliency)
            and np.array_equal(self.fixations, other.fixations)
        )


@dataclass(frozen=True)
class ReferenceSet:
    """Distinct indices of the reference samples within a target pool."""

    pool: Dataset
    indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(set(idx)) != len(idx):
            raise ValueError("reference indices must be distinct")
        if any(not 0 <= i < len(self.pool) for i in idx):
            raise ValueError("reference index out of range")
        object.__setattr__(self, "indices", idx)

    @property
    def n(self):
        return len(self.indices)

    def dataset(self):
        return self.pool.subset(self.indices)

    @classmethod
    def choose(cls, pool, n, rng):
        """Pick ``n`` distinct references from ``pool`` at random."""
        if n > len(pool):
            raise ValueError(f"cannot pick {n} references from a pool of {len(pool)}")
        return cls(pool, tuple(sorted(rng.choice(len(pool), size=n, replace=False).tolist())))

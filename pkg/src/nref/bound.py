"""Generalization gap bound for saliency predictors with an L^p loss."""

from __future__ import annotations

import math
from dataclasses import dataclass
from numbers import Integral, Real


@dataclass(frozen=True)
class BoundInputs:
    """Inputs to :func:`generalization_bound`.

    m : map dimensionality (pixels per map)
    p : loss exponent, p >= 1
    hypothesis_count : size of the (finite) hypothesis set
    delta : confidence parameter in (0, 2]
    dataset_size : number of training samples
    """

    m: int
    p: float
    hypothesis_count: int
    delta: float
    dataset_size: int

    def __post_init__(self):
        for name in ("m", "hypothesis_count", "dataset_size"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, Integral) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        for name in ("p", "delta"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, Real) or not math.isfinite(v):
                raise ValueError(f"{name} must be a finite real, got {v!r}")
        if self.p < 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if not 0 < self.delta <= 2:
            raise ValueError(f"delta must be in (0, 2], got {self.delta}")


def generalization_bound(m, p=None, hypothesis_count=None, delta=None, dataset_size=None):
    """``m**(1/p) * sqrt((ln|H| + ln(2/delta)) / (2|D|))`` in double precision.

    Accepts either a :class:`BoundInputs` or the five values positionally.
    With probability at least ``1 - delta`` the true risk of every hypothesis
    exceeds its empirical risk by at most this amount.
    """
    args = m if isinstance(m, BoundInputs) else BoundInputs(m, p, hypothesis_count, delta, dataset_size)
    logs = math.log(args.hypothesis_count) + math.log(2.0 / args.delta)
    # delta = 2 and |H| = 1 give an exact zero; clamp the rounding at that corner
    logs = max(logs, 0.0)
    return float(args.m) ** (1.0 / args.p) * math.sqrt(logs / (2.0 * args.dataset_size))

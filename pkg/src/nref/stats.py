"""Aggregation of repeated runs and paired significance tests."""

from __future__ import annotations

from collections import defaultdict
from typing import NamedTuple

import numpy as np
from scipy.special import stdtr

from .objective import MetricTriple


class Summary(NamedTuple):
    count: int
    mean: MetricTriple
    std: MetricTriple


def aggregate(records):
    """Group run records by ``(procedure, n)`` and summarize each metric.

    The standard deviation is the sample (n - 1) one; a group with a single
    record has std 0.  Group order follows first appearance.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to aggregate")
    groups = defaultdict(list)
    for r in records:
        groups[(r.procedure, r.n)].append(tuple(r.metrics))
    out = {}
    for key, rows in groups.items():
        arr = np.asarray(rows, dtype=np.float64)
        # sort so the result does not depend on record order
        arr = arr[np.lexsort(arr.T[::-1])]
        mean = arr.mean(axis=0)
        std = arr.std(axis=0, ddof=1) if len(arr) > 1 else np.zeros(arr.shape[1])
        out[key] = Summary(len(arr), MetricTriple(*mean.tolist()), MetricTriple(*std.tolist()))
    return out


def format_mean_std(mean, std, digits=4):
    return f"{mean:.{digits}f}±{std:.{digits}f}"


def _paired(a, b, min_len):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"paired samples differ in length: {a.size} vs {b.size}")
    if a.size < min_len:
        raise ValueError(f"need at least {min_len} pairs, got {a.size}")
    d = a - b
    if not np.all(np.isfinite(d)):
        raise ValueError("paired samples must be finite")
    return d


def paired_t_test(a, b):
    """Two-sided p-value of the paired t statistic, Student t with len - 1 dof.

    Raises ValueError when the differences have (numerically) zero variance,
    where the statistic is undefined.
    """
    d = _paired(a, b, 2)
    n = d.size
    mean = d.mean()
    sd = d.std(ddof=1)
    scale = max(np.abs(d).max(), np.finfo(float).tiny)
    if sd <= 1e-12 * scale:
        raise ValueError("paired differences have zero variance; t statistic undefined")
    t = mean / (sd / np.sqrt(n))
    return float(min(1.0, 2.0 * stdtr(n - 1, -abs(t))))


def permutation_test(a, b, iterations=10000, rng=None, chunk=4096):
    """Sign-flip permutation test on paired differences.

    ``p = (1 + hits) / (iterations + 1)`` where a hit is a random sign
    assignment whose |mean| reaches the observed |mean|.
    """
    d = _paired(a, b, 1)
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    observed = abs(d.mean())
    # ties up to rounding count as hits
    tol = 1e-12 * np.abs(d).mean()
    hits = 0
    left = int(iterations)
    while left:
        k = min(chunk, left)
        signs = rng.choice(np.array([-1.0, 1.0]), size=(k, d.size))
        hits += int(np.count_nonzero(np.abs(signs @ d) / d.size >= observed - tol))
        left -= k
    return (1 + hits) / (iterations + 1)


def significance(scores_a, scores_b, iterations=10000, rng=None):
    """Both paired tests on two per-image (or per-run) score vectors.

    The t-test entry is None when it is undefined for the inputs.
    """
    try:
        t_p = paired_t_test(scores_a, scores_b)
    except ValueError:
        t_p = None
    return {"t_test": t_p, "permutation": permutation_test(scores_a, scores_b, iterations, rng)}

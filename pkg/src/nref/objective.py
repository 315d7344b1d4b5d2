"""Training loss and saliency evaluation metrics (NSS, AUC-Judd, CC)."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class MetricTriple(NamedTuple):
    nss: float
    auc: float
    cc: float


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"map shapes differ: {a.shape} vs {b.shape}")
    return a, b


def normalized_l1(pred, target, through_max=False):
    """Mean absolute difference between max-normalised maps.

    Each map is divided by its own maximum (a map whose maximum is 0 is
    taken as all zeros).  By default the returned gradient is with respect
    to ``pred`` with both normalisers held constant.  With ``through_max``
    the prediction normaliser is differentiated too (via the first argmax
    pixel), which makes the gradient orthogonal to ``pred`` like the loss's
    scale invariance demands; the frozen gradient instead always has a
    component that shrinks the whole map when most target pixels are near
    zero.  Works on single maps or on a leading batch axis, in which case
    the loss is averaged over the batch.

    Returns
    -------
    loss : float
    grad : ndarray, same shape and dtype as ``pred``
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"map shapes differ: {pred.shape} vs {target.shape}")
    single = pred.ndim == 2
    p = pred[None] if single else pred
    t = target[None] if single else target
    dt = p.dtype if np.issubdtype(p.dtype, np.floating) else np.float64
    p = p.astype(dt, copy=False)
    t = t.astype(dt, copy=False)
    axes = (1, 2)
    pmax = p.max(axis=axes, keepdims=True)
    tmax = t.max(axis=axes, keepdims=True)
    pscale = np.where(pmax > 0, pmax, 1).astype(dt)
    pn = np.where(pmax > 0, p / pscale, 0)
    tn = np.where(tmax > 0, t / np.where(tmax > 0, tmax, 1), 0)
    diff = pn - tn
    n, m = p.shape[0], p.shape[1] * p.shape[2]
    loss = float(np.abs(diff).sum(dtype=np.float64) / (n * m))
    sgn = np.sign(diff)
    grad = sgn / (pscale * dt.type(n * m))
    if through_max:
        # d(p_i / pmax) / d pmax = -p_i / pmax^2, routed to the argmax pixel
        flat = grad.reshape(n, m)
        arg = p.reshape(n, m).argmax(axis=1)
        live = pmax.reshape(n) > 0
        rows = np.arange(n)[live]
        pull = (sgn * pn).reshape(n, m).sum(axis=1, dtype=np.float64)
        flat[rows, arg[live]] -= (pull[live] / (pscale.reshape(n)[live] * (n * m))).astype(dt)
        grad = flat.reshape(p.shape)
    grad = grad.astype(dt)
    return loss, grad[0] if single else grad


def _fixation_mask(fix, shape):
    fix = np.asarray(fix)
    if fix.shape != shape:
        raise ValueError(f"map shapes differ: {shape} vs {fix.shape}")
    return fix.astype(bool)


def nss(pred, fix):
    """Mean z-scored saliency at fixated pixels (population std; 0 for a flat map)."""
    pred = np.asarray(pred, dtype=np.float64)
    mask = _fixation_mask(fix, pred.shape)
    if not mask.any():
        raise ValueError("NSS needs at least one fixation")
    std = pred.std()
    if std == 0:
        return 0.0
    return float(((pred - pred.mean()) / std)[mask].mean())


def auc_judd(pred, fix):
    """Judd ROC area with thresholds at the fixated saliency values."""
    pred = np.asarray(pred, dtype=np.float64)
    mask = _fixation_mask(fix, pred.shape)
    n_fix = int(mask.sum())
    n_other = mask.size - n_fix
    if n_fix == 0 or n_other == 0:
        raise ValueError("AUC needs both fixated and non-fixated pixels")
    flat = np.sort(pred.ravel())
    fixed = np.sort(pred[mask])
    thresholds = fixed[::-1]
    # counts of values >= threshold, ties counted as above
    above_all = flat.size - np.searchsorted(flat, thresholds, side="left")
    above_fix = fixed.size - np.searchsorted(fixed, thresholds, side="left")
    tp = np.concatenate(([0.0], above_fix / n_fix, [1.0]))
    fp = np.concatenate(([0.0], (above_all - above_fix) / n_other, [1.0]))
    return float(np.trapezoid(tp, fp))


def cc(pred, gt):
    """Pearson correlation over pixels."""
    a, b = _pair(pred, gt)
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    if na == 0 or nb == 0:
        raise ValueError("CC is undefined for a constant map")
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def evaluate_maps(preds, fixations, saliency):
    """Per-image metric arrays for a batch of predictions.

    A constant prediction has no defined correlation; it is scored 0 there
    so that degenerate models still produce a finite report.
    """
    out = {"nss": [], "auc": [], "cc": []}
    for p, f, s in zip(preds, fixations, saliency):
        out["nss"].append(nss(p, f))
        out["auc"].append(auc_judd(p, f))
        try:
            out["cc"].append(cc(p, s))
        except ValueError:
            out["cc"].append(0.0)
    return {k: np.array(v) for k, v in out.items()}

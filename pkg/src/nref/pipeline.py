"""Training and fine-tuning stages, batch/reference sampling, and the EUB protocol.

Each stage draws its randomness from independent streams keyed on the run
seed, so drawing references never perturbs the order of source batches.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .data import Dataset, ReferenceSet
from .nn import AdamState, adam_step, lr_schedule
from .objective import MetricTriple, evaluate_maps, normalized_l1
from .reference import CorrectionConfig, correct_gradient

log = logging.getLogger(__name__)

# reference count n -> references drawn per iteration
N_R_TABLE = {1: 1, 5: 3, 10: 5}

# rng stream ids
_INIT, _BATCH, _REFDRAW, _SPLIT, _FT_BATCH, _REFPICK, _FOLDS = range(7)


def rng_for(seed, stream, *extra):
    key = list(seed) if isinstance(seed, (tuple, list)) else [seed]
    return np.random.default_rng([*key, stream, *extra])


def default_n_r(n):
    """References drawn per iteration for a pool of ``n``.

    Outside the tabulated sizes this is ``ceil(n / 2)`` capped at 5, which
    agrees with the table on its entries.
    """
    if n < 1:
        raise ValueError("need at least one reference")
    return N_R_TABLE.get(n, min(5, math.ceil(n / 2)))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    ft_epochs: int | None = None
    batch_size: int = 10
    lr: float = 5e-5
    weight_decay: float = 1e-4
    lr_decay: float = 0.2
    decay_every: int = 3
    n_r: int | None = None
    correction: CorrectionConfig = field(default_factory=CorrectionConfig)
    val_fraction: float = 0.1
    selection_metric: str = "nss"
    # "through_max" differentiates the prediction normaliser, "frozen" holds it fixed
    loss_gradient: str = "through_max"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.selection_metric not in MetricTriple._fields:
            raise ValueError(f"unknown selection metric {self.selection_metric!r}")
        if self.loss_gradient not in ("through_max", "frozen"):
            raise ValueError(f"unknown loss_gradient {self.loss_gradient!r}")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must be in [0, 1)")


class CorrectionRecord(NamedTuple):
    epoch: int
    iteration: int
    gate_triggered: bool
    cos_before: float
    cos_after: float
    inner_steps: int


@dataclass
class StageResult:
    checkpoint: object
    epoch_metrics: list
    best_epoch: int
    epoch_losses: list
    corrections: list = field(default_factory=list)
    trajectory: list | None = None

    @property
    def gate_rate(self):
        if not self.corrections:
            return 0.0
        return float(np.mean([c.gate_triggered for c in self.corrections]))

    @property
    def mean_cos(self):
        """Average source/reference cosine before correction (nan without references)."""
        if not self.corrections:
            return float("nan")
        return float(np.mean([c.cos_before for c in self.corrections]))


def epoch_batches(n, batch_size, rng):
    """One shuffled pass over ``n`` items in batches; the last one may be short."""
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def sample_refs(refs, n_r, rng):
    """``n_r`` reference samples drawn with replacement, as a Dataset."""
    if refs.n == 0:
        raise ValueError("reference set is empty")
    picks = rng.integers(0, refs.n, size=n_r)
    return refs.pool.subset([refs.indices[i] for i in picks])


def select_best_epoch(values, criterion="nss"):
    """Index of the best epoch; the earliest one wins ties."""
    if len(values) == 0:
        raise ValueError("no epochs to select from")
    scores = [getattr(v, criterion) if isinstance(v, MetricTriple) else v for v in values]
    return int(np.argmax(scores))


def evaluate(model, ds, per_image=False):
    """Mean NSS/AUC/CC of ``model`` on ``ds``; the model is not modified."""
    preds = model.forward(ds.features)
    scores = evaluate_maps(preds, ds.fixations, ds.saliency)
    triple = MetricTriple(*(float(scores[k].mean()) for k in MetricTriple._fields))
    return (triple, scores) if per_image else triple


def source_split(n, fraction, rng):
    """``(train_idx, val_idx)`` with ``round(fraction * n)`` validation items."""
    n_val = int(round(fraction * n))
    if n_val == 0 or n_val >= n:
        idx = np.arange(n)
        return idx, idx[:0]
    perm = rng.permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _batch_loss(model, x, target, cfg):
    pred = model.forward(x, cache=True)
    return normalized_l1(pred, target, through_max=cfg.loss_gradient == "through_max")


def _run(model, train, select, cfg, epochs, batch_size, batch_rng, stage,
         refs=None, ref_rng=None, n_r=1, record_trajectory=False):
    model = model.copy()
    state = AdamState.zeros(model.n_params, model.dtype)
    segments = model.segments()
    params = model.get_flat()
    n_body = model.n_body_params
    use_refs = refs is not None
    best, best_score, best_epoch = None, -np.inf, 0
    metrics, losses, log_rows = [], [], []
    traj = [] if record_trajectory else None
    it = 0
    for epoch in range(epochs):
        lr = lr_schedule(cfg.lr, epoch, cfg.lr_decay, cfg.decay_every)
        ep_loss, ep_gate = [], []
        for batch in epoch_batches(len(train), batch_size, batch_rng):
            x = train.features[batch]
            loss, grad = _batch_loss(model, x, train.saliency[batch], cfg)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"{stage}: non-finite loss at epoch {epoch}, iteration {it}, "
                    f"batch indices {batch.tolist()}"
                )
            g_body, g_head = model.backward(x, grad)
            if use_refs:
                rb = sample_refs(refs, n_r, ref_rng)
                _, rgrad = _batch_loss(model, rb.features, rb.saliency, cfg)
                _, r_head = model.backward(rb.features, rgrad, head_only=True)
                out = correct_gradient(g_head, r_head, cfg.correction)
                g_head = out.corrected
                log_rows.append(CorrectionRecord(
                    epoch, it, out.gate_triggered, out.cos_before, out.cos_after,
                    out.inner_steps_taken,
                ))
                ep_gate.append(out.gate_triggered)
            full = np.concatenate([g_body, g_head]) if n_body else g_head
            params, state = adam_step(params, full, state, lr, cfg.weight_decay, segments)
            model.set_flat(params)
            if traj is not None:
                traj.append(params.copy())
            ep_loss.append(loss)
            it += 1
        triple = evaluate(model, select)
        metrics.append(triple)
        losses.append(float(np.mean(ep_loss)))
        score = getattr(triple, cfg.selection_metric)
        if score > best_score:
            best, best_score, best_epoch = model.copy(), score, epoch
        log.info("%s %d %.6g %.6g %.6g", stage, epoch, losses[-1], score,
                 float(np.mean(ep_gate)) if ep_gate else 0.0)
    assert best_epoch == select_best_epoch(metrics, cfg.selection_metric)
    return StageResult(best, metrics, best_epoch, losses, log_rows, traj)


def train_stage(model, source, refs=None, cfg=TrainConfig(), seed=0, record_trajectory=False):
    """Train on ``source``; with ``refs`` the head gradient is reference-corrected.

    A ``round(val_fraction * |source|)`` split of the source is held out in
    both cases so that the two procedures see the same batches.  The best
    epoch is chosen on that split without references and on the reference
    samples with them.  An empty head leaves nothing to correct, so the stage
    then behaves exactly like plain training.
    """
    if source.shape[0] != model.layers[0].in_channels:
        raise ValueError(f"dataset channels {source.shape[0]} do not match the model input")
    tr_idx, val_idx = source_split(len(source), cfg.val_fraction, rng_for(seed, _SPLIT))
    train = source.subset(tr_idx)
    val = source.subset(val_idx) if len(val_idx) else train
    if refs is not None and model.n_head_params == 0:
        refs = None
    if refs is None:
        return _run(model, train, val, cfg, cfg.epochs, cfg.batch_size,
                    rng_for(seed, _BATCH), "tr", record_trajectory=record_trajectory)
    n_r = cfg.n_r or default_n_r(refs.n)
    return _run(model, train, refs.dataset(), cfg, cfg.epochs, cfg.batch_size,
                rng_for(seed, _BATCH), "tr_ref", refs=refs, ref_rng=rng_for(seed, _REFDRAW),
                n_r=n_r, record_trajectory=record_trajectory)


def finetune_stage(checkpoint, refs, cfg=TrainConfig(), seed=0, stage="ft", record_trajectory=False):
    """Standard full-model training on the reference samples only, fresh optimizer."""
    if refs.n == 0:
        raise ValueError("fine-tuning needs at least one reference sample")
    data = refs.dataset()
    epochs = cfg.ft_epochs or cfg.epochs
    return _run(checkpoint, data, data, cfg, epochs, min(cfg.batch_size, refs.n),
                rng_for(seed, _FT_BATCH), stage, record_trajectory=record_trajectory)


def eub_folds(n, rng):
    """Three shuffled folds whose sizes differ by at most one."""
    if n < 3:
        raise ValueError(f"EUB needs at least 3 target samples, got {n}")
    return [np.sort(f) for f in np.array_split(rng.permutation(n), 3)]


def eub_protocol(source, target, init_model, cfg=TrainConfig(), seed=0,
                 procedures=("tr_ref", "ft", "ft_ref")):
    """Three-fold cross-validation on the target domain.

    For each fold, the other two folds are the references (for both the
    referenced training stage and fine-tuning) and the fold itself is
    evaluated.  Returns ``{procedure: MetricTriple}`` averaged over folds.
    """
    folds = eub_folds(len(target), rng_for(seed, _FOLDS))
    scores = {p: [] for p in procedures}
    tr = None
    if "ft" in procedures:
        tr = train_stage(init_model, source, None, cfg, seed).checkpoint
    for k, held in enumerate(folds):
        ref_idx = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != k]))
        refs = ReferenceSet(target, tuple(ref_idx.tolist()))
        test = target.subset(held)
        fold_seed = (*(seed if isinstance(seed, tuple) else (seed,)), 100 + k)
        if "ft" in procedures:
            ft = finetune_stage(tr, refs, cfg, fold_seed).checkpoint
            scores["ft"].append(evaluate(ft, test))
        if "tr_ref" in procedures or "ft_ref" in procedures:
            tr_ref = train_stage(init_model, source, refs, cfg, fold_seed).checkpoint
            if "tr_ref" in procedures:
                scores["tr_ref"].append(evaluate(tr_ref, test))
            if "ft_ref" in procedures:
                ft_ref = finetune_stage(tr_ref, refs, cfg, fold_seed, stage="ft_ref").checkpoint
                scores["ft_ref"].append(evaluate(ft_ref, test))
    return {p: MetricTriple(*np.mean(np.array(v), axis=0).tolist()) for p, v in scores.items()}

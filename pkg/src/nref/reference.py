"""Cosine-gated correction of a source-domain gradient toward a reference gradient.

When the source gradient ``g_s`` and the reference gradient ``r`` disagree
(``cos(g_s, r) < epsilon``), ``g_s`` is replaced by the result of a few
gradient-ascent steps on

    J(g) = cos(g, r) - lam * ||g||^2

started at ``g_s``.  Otherwise ``g_s`` is used as is.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CorrectionConfig:
    """Gate threshold and inner-ascent settings.

    ``inner_step_size`` is relative: the absolute ascent step is
    ``inner_step_size * ||g_source||`` so the procedure behaves the same at
    any gradient scale.
    """

    epsilon: float = 0.0
    lam: float = 1e-3
    inner_steps: int = 5
    inner_step_size: float = 0.1
    backtracking_halvings: int = 20

    def __post_init__(self):
        vals = (self.epsilon, self.lam, self.inner_step_size)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("correction settings must be finite")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.inner_step_size <= 0:
            raise ValueError("inner_step_size must be positive")
        if self.inner_steps < 1 or self.backtracking_halvings < 0:
            raise ValueError("inner_steps must be >= 1 and backtracking_halvings >= 0")


@dataclass(frozen=True)
class CorrectionOutcome:
    corrected: np.ndarray
    gate_triggered: bool
    cos_before: float
    cos_after: float
    inner_steps_taken: int


def cosine(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"vector lengths differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def inner_objective(g, r, lam):
    g = np.asarray(g, dtype=np.float64)
    return cosine(g, r) - lam * float(g @ g)


def inner_objective_grad(g, r, lam):
    """Gradient of ``cos(g, r) - lam * ||g||^2`` with respect to ``g``."""
    g = np.asarray(g, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    ng2 = float(g @ g)
    if ng2 == 0:
        raise ValueError("objective gradient is undefined at g = 0")
    ng, nr = np.sqrt(ng2), np.linalg.norm(r)
    c = float(g @ r) / (ng * nr)
    return r / (ng * nr) - (c / ng2) * g - 2.0 * lam * g


def correct_gradient(g_source, g_ref, cfg=CorrectionConfig()):
    """Apply the gated correction to ``g_source``.

    Zero-norm inputs leave ``g_source`` untouched (cosine is undefined).
    The passthrough branch returns the very same array object.  Ascent steps
    are accepted only when they strictly increase the objective; each step
    starts from the full step size and halves it at most
    ``cfg.backtracking_halvings`` times, and the ascent stops at the first
    step for which no halving is accepted.
    """
    gs = np.asarray(g_source)
    gr = np.asarray(g_ref)
    if gs.shape != gr.shape:
        raise ValueError(f"gradient lengths differ: {gs.shape} vs {gr.shape}")
    if not (np.isfinite(gs).all() and np.isfinite(gr).all()):
        raise FloatingPointError("non-finite gradient passed to correct_gradient")
    ns = np.linalg.norm(gs.astype(np.float64))
    nr = np.linalg.norm(gr.astype(np.float64))
    if ns == 0 or nr == 0:
        log.debug("degenerate gradient (|g_source|=%g, |g_ref|=%g): passthrough", ns, nr)
        return CorrectionOutcome(g_source, False, 0.0, 0.0, 0)

    c0 = cosine(gs, gr)
    if not c0 < cfg.epsilon:
        return CorrectionOutcome(g_source, False, c0, c0, 0)

    g = gs.astype(np.float64)
    r = gr.astype(np.float64)
    j = inner_objective(g, r, cfg.lam)
    base = cfg.inner_step_size * ns
    taken = 0
    for _ in range(cfg.inner_steps):
        d = inner_objective_grad(g, r, cfg.lam)
        step = base
        for _ in range(cfg.backtracking_halvings + 1):
            cand = g + step * d
            if np.any(cand):
                jc = inner_objective(cand, r, cfg.lam)
                if jc > j:
                    break
            step *= 0.5
        else:
            break
        g, j = cand, jc
        taken += 1
    corrected = g.astype(gs.dtype) if taken else g_source
    c1 = cosine(g, r)
    return CorrectionOutcome(corrected, True, c0, c1, taken)


def referenced_update(head_params, g_source, g_ref, cfg, lr):
    """Plain gradient step ``theta - lr * g_tilde`` on a flat head vector.

    The training pipeline feeds the corrected gradient to Adam instead; this
    is the bare update rule, useful for toy checks.
    """
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    out = correct_gradient(g_source, g_ref, cfg)
    theta = np.asarray(head_params)
    return theta - theta.dtype.type(lr) * out.corrected.astype(theta.dtype), out

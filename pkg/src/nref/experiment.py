"""Repeated seeded runs of the procedure chain, CSV records and ablation sweeps."""

from __future__ import annotations

import csv
import io
import logging
import math
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .data import ReferenceSet
from .datagen import generate_dataset, load_dataset
from .nn import ConvNet, save_checkpoint
from .objective import MetricTriple
from .pipeline import _INIT, _REFPICK, eub_protocol, evaluate, finetune_stage, rng_for, train_stage
from .stats import aggregate

log = logging.getLogger(__name__)

CSV_HEADER = ("setting", "procedure", "n", "seed", "nss", "auc", "cc")
SWEEP_HEADER = ("kind", "value", "procedure", "n", "runs", "nss_mean", "nss_std",
                "auc_mean", "auc_std", "cc_mean", "cc_std", "gate_rate", "mean_cos")


class RunRecord(NamedTuple):
    setting: str
    procedure: str
    n: object  # int, or "eub"
    seed: int
    metrics: MetricTriple
    gate_rate: float = math.nan
    mean_cos: float = math.nan


def build_data(cfg):
    """``(source, eval_split, reference_pool)`` for a config.

    Synthetic data is a pure function of the config's data seed; a user
    supplied SALD file replaces the corresponding synthetic set.
    """
    seed = cfg.seed_of_data
    if cfg.source_data:
        source = load_dataset(cfg.source_data, "source")
    else:
        source = generate_dataset(cfg.domain_spec("source"), cfg.source_size, [seed, 1], "source")
    if cfg.target_data:
        target = load_dataset(cfg.target_data, "target")
    else:
        target = generate_dataset(cfg.domain_spec("target"), cfg.target_size, [seed, 2], "target")
    if not 0 < cfg.eval_size < len(target):
        raise ValueError(f"eval_size {cfg.eval_size} must leave references out of {len(target)} target samples")
    idx = np.arange(len(target))
    pool = target.subset(idx[cfg.eval_size:])
    return source, target.subset(idx[:cfg.eval_size]), pool, target


def init_model(cfg, seed):
    layers = cfg.architecture()
    if cfg.head_layers > len(layers):
        raise ValueError(f"head_layers {cfg.head_layers} exceeds the {len(layers)} model layers")
    return ConvNet.initialized(layers, rng_for(seed, _INIT), head_boundary=len(layers) - cfg.head_layers)


def _tags(cfg, model):
    """Requested procedures, with referenced ones renamed when references cannot act."""
    degenerate = cfg.n == 0 or model.n_head_params == 0
    tags = []
    for p in cfg.procedures:
        if p == "eub":
            continue
        if degenerate:
            if p == "ft_wo_tr" and cfg.n == 0:
                continue
            p = {"tr_ref": "tr", "ft_ref": "ft"}.get(p, p)
        if p not in tags:
            tags.append(p)
    return tags


def run_once(cfg, seed, data=None):
    """All requested procedures for one seed; returns ``(records, checkpoints)``."""
    source, ev, pool, target = data or build_data(cfg)
    tcfg = cfg.train_config()
    init = init_model(cfg, seed)
    tags = _tags(cfg, init)
    label, n = cfg.label, cfg.n
    if n > len(pool):
        raise ValueError(f"n = {n} exceeds the reference pool of {len(pool)}")
    models, stats = {}, {}
    refs = ReferenceSet.choose(pool, n, rng_for(seed, _REFPICK)) if n > 0 else None
    if {"tr", "ft"} & set(tags) or ("tr_ref" in tags and refs is None):
        models["tr"] = train_stage(init, source, None, tcfg, seed).checkpoint
    if "ft" in tags:
        models["ft"] = (finetune_stage(models["tr"], refs, tcfg, seed).checkpoint
                        if refs is not None else models["tr"])
    if {"tr_ref", "ft_ref"} & set(tags):
        res = train_stage(init, source, refs, tcfg, seed)
        models["tr_ref"] = res.checkpoint
        stats["tr_ref"] = stats["ft_ref"] = (res.gate_rate, res.mean_cos)
        if "ft_ref" in tags:
            models["ft_ref"] = finetune_stage(res.checkpoint, refs, tcfg, seed, stage="ft_ref").checkpoint
    if "ft_wo_tr" in tags:
        models["ft_wo_tr"] = finetune_stage(init, refs, tcfg, seed, stage="ft_wo_tr").checkpoint
    records = [RunRecord(label, p, n, seed, evaluate(models[p], ev), *stats.get(p, (math.nan, math.nan)))
               for p in tags]
    if "eub" in cfg.procedures:
        eub = eub_protocol(source, target, init, tcfg, seed)
        records += [RunRecord(label, p, "eub", seed, m) for p, m in eub.items()]
    return records, models


def run_experiment(cfg, data=None):
    """``cfg.repeats`` runs with seeds ``base_seed + r``; returns the run records."""
    data = data or build_data(cfg)
    records = []
    for r in range(cfg.repeats):
        seed = cfg.base_seed + r
        recs, models = run_once(cfg, seed, data)
        for rec in recs:
            log.info("run seed=%d %s n=%s nss=%.4f gate_rate=%.4g mean_cos=%.4g",
                     seed, rec.procedure, rec.n, rec.metrics.nss, rec.gate_rate, rec.mean_cos)
        if cfg.checkpoint_dir:
            out = Path(cfg.checkpoint_dir)
            out.mkdir(parents=True, exist_ok=True)
            for p, m in models.items():
                save_checkpoint(m, out / f"{p}_n{cfg.n}_seed{seed}.salc")
        records += recs
    return records


def _g(x):
    return format(float(x), ".6g")


def records_to_csv(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow([r.setting, r.procedure, r.n, r.seed, *map(_g, r.metrics)])
    return buf.getvalue()


def read_records(text):
    """Parse experiment CSV text back into run records (gate statistics are not stored)."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"not an experiment CSV: header must be {','.join(CSV_HEADER)}")
    out = []
    for i, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise ValueError(f"row {i}: expected {len(CSV_HEADER)} fields, got {len(row)}")
        setting, proc, n, seed, *vals = row
        n = n if n == "eub" else int(n)
        out.append(RunRecord(setting, proc, n, int(seed), MetricTriple(*map(float, vals))))
    return out


def ablation_sweep(kind, grid, cfg):
    """Run the experiment at every grid value; returns CSV text of per-procedure summaries."""
    grid = list(grid)
    if not grid:
        raise ValueError("ablation grid is empty")
    field = {"n": "n", "epsilon": "epsilon", "layers": "head_layers"}.get(kind)
    if field is None:
        raise ValueError(f"unknown ablation kind {kind!r}; expected n, epsilon or layers")
    base_data = build_data(cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for value in grid:
        value = int(value) if field != "epsilon" else float(value)
        sub = cfg.replace(**{field: value})
        records = run_experiment(sub, base_data)
        for (proc, n), s in aggregate(records).items():
            group = [r for r in records if r.procedure == proc and r.n == n]
            gates = [r.gate_rate for r in group if not math.isnan(r.gate_rate)]
            coss = [r.mean_cos for r in group if not math.isnan(r.mean_cos)]
            w.writerow([kind, _g(value), proc, n, s.count,
                        *(_g(x) for pair in zip(s.mean, s.std) for x in pair),
                        _g(np.mean(gates)) if gates else "", _g(np.mean(coss)) if coss else ""])
    return buf.getvalue()

import math

import numpy as np
import pytest

from nref.config import parse_config
from nref.experiment import (
    CSV_HEADER,
    SWEEP_HEADER,
    ablation_sweep,
    build_data,
    init_model,
    read_records,
    records_to_csv,
    run_experiment,
)
from nref.data import ReferenceSet
from nref.nn import load_checkpoint
from nref.pipeline import _REFPICK, evaluate, finetune_stage, rng_for

TINY = """
source_size = 16
target_size = 8
eval_size = 4
height = 8
width = 8
hidden = 3
epochs = 2
lr = 3e-3
repeats = 2
n = 2
"""


@pytest.fixture(scope="module")
def cfg():
    return parse_config(TINY)


def test_records_and_csv_are_reproducible(cfg):
    a = run_experiment(cfg)
    b = run_experiment(cfg)
    assert records_to_csv(a) == records_to_csv(b)
    assert [r.seed for r in a] == [0] * 5 + [1] * 5
    assert [r.procedure for r in a[:5]] == ["tr", "tr_ref", "ft", "ft_ref", "ft_wo_tr"]
    text = records_to_csv(a)
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    back = read_records(text)
    assert [(r.procedure, r.n, r.seed) for r in back] == [(r.procedure, r.n, r.seed) for r in a]
    for r, s in zip(back, a):
        np.testing.assert_allclose(r.metrics, s.metrics, rtol=1e-5)
    assert all(math.isnan(r.gate_rate) == (r.procedure not in ("tr_ref", "ft_ref")) for r in a)
    # six significant digits
    assert all(len(f.replace("-", "").replace(".", "").lstrip("0")) <= 6
               for line in text.splitlines()[1:] for f in line.split(",")[4:])


def test_seeds_follow_base_seed(cfg):
    recs = run_experiment(cfg.replace(base_seed=7, procedures=("tr",)))
    assert [r.seed for r in recs] == [7, 8]


def test_zero_references_renames_procedures(cfg):
    recs = run_experiment(cfg.replace(n=0, repeats=1))
    assert [r.procedure for r in recs] == ["tr", "ft"]
    assert recs[0].metrics == recs[1].metrics


def test_zero_head_layers_degenerate(cfg):
    recs = run_experiment(cfg.replace(head_layers=0, repeats=1))
    assert [r.procedure for r in recs] == ["tr", "ft", "ft_wo_tr"]


def test_chain_equals_saved_checkpoint_replay(cfg, tmp_path):
    c = cfg.replace(repeats=1, procedures=("tr", "ft"), checkpoint_dir=str(tmp_path))
    recs = run_experiment(c)
    _, ev, pool, _ = build_data(c)
    tr = load_checkpoint(tmp_path / "tr_n2_seed0.salc")
    refs = ReferenceSet.choose(pool, 2, rng_for(0, _REFPICK))
    ft = finetune_stage(tr, refs, c.train_config(), 0).checkpoint
    assert evaluate(ft, ev) == recs[1].metrics
    assert load_checkpoint(tmp_path / "ft_n2_seed0.salc").get_flat().tobytes() == ft.get_flat().tobytes()


def test_eub_records(cfg):
    recs = run_experiment(cfg.replace(repeats=1, procedures=("eub",), epochs=1))
    assert [(r.procedure, r.n) for r in recs] == [("tr_ref", "eub"), ("ft", "eub"), ("ft_ref", "eub")]
    assert "eub" in records_to_csv(recs)


def test_too_many_references(cfg):
    with pytest.raises(ValueError, match="exceeds"):
        parse_config(TINY + "n_r = 3\n").replace(n=5)


def test_it_uses_supplied_datasets(cfg, tmp_path):
    from nref.datagen import DomainSpec, generate_dataset, save_dataset

    src = generate_dataset(DomainSpec(height=8, width=8), 10, 0)
    tgt = generate_dataset(DomainSpec("webpage_like", 8, 8), 7, 0)
    save_dataset(src, tmp_path / "s.sald")
    save_dataset(tgt, tmp_path / "t.sald")
    c = cfg.replace(source_data=str(tmp_path / "s.sald"), target_data=str(tmp_path / "t.sald"))
    source, ev, pool, _ = build_data(c)
    assert len(source) == 10 and len(ev) == 4 and len(pool) == 3


def test_init_respects_head_layers(cfg):
    assert init_model(cfg, 0).n_head_params == 4
    assert init_model(cfg.replace(head_layers=3), 0).n_body_params == 0
    with pytest.raises(ValueError):
        init_model(cfg.replace(head_layers=4), 0)


def test_ablation_sweeps(cfg):
    text = ablation_sweep("n", [0, 1], cfg.replace(repeats=1, procedures=("tr_ref", "ft_ref")))
    rows = [l.split(",") for l in text.splitlines()]
    assert tuple(rows[0]) == SWEEP_HEADER
    assert [(r[1], r[2]) for r in rows[1:]] == [("0", "tr"), ("0", "ft"), ("1", "tr_ref"), ("1", "ft_ref")]
    assert rows[1][11] == "" and rows[3][11] != ""
    text = ablation_sweep("epsilon", [1.0], cfg.replace(repeats=1, procedures=("tr_ref",)))
    assert text.splitlines()[1].split(",")[11] == "1"
    text = ablation_sweep("layers", [0], cfg.replace(repeats=1, procedures=("tr_ref", "ft_ref")))
    assert [l.split(",")[2] for l in text.splitlines()[1:]] == ["tr", "ft"]
    with pytest.raises(ValueError):
        ablation_sweep("width", [1], cfg)
    with pytest.raises(ValueError):
        ablation_sweep("n", [], cfg)

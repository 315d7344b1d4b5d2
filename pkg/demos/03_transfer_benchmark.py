"""
Few-reference transfer on the synthetic benchmark
=================================================

Runs the five procedures (plain source training, referenced source
training, fine-tuning from each, and fine-tuning from scratch) over a few
seeds and prints mean +- std NSS/AUC/CC.  A second run with epsilon = -1
keeps the reference-based epoch selection but never corrects a gradient,
which separates the two effects.

Usage: python3 03_transfer_benchmark.py [repeats]
"""

import sys
from pathlib import Path

from nref.config import load_config
from nref.experiment import build_data, run_experiment
from nref.stats import aggregate, format_mean_std

repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 3
cfg = load_config(Path(__file__).with_name("benchmark.cfg")).replace(repeats=repeats)
data = build_data(cfg)

for label, c in (("epsilon = 0", cfg), ("epsilon = -1 (gate never fires)", cfg.replace(epsilon=-1.0))):
    records = run_experiment(c, data)
    print(f"\n{label}, {repeats} seeds, n = {c.n}")
    for (proc, n), s in aggregate(records).items():
        cells = "  ".join(format_mean_std(m, d) for m, d in zip(s.mean, s.std))
        gates = [r.gate_rate for r in records if r.procedure == proc and r.gate_rate == r.gate_rate]
        gate = f"  gate rate {sum(gates) / len(gates):.3f}" if gates else ""
        print(f"  {proc:9s} {cells}{gate}")

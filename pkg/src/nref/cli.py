"""Command-line interface.

Exit status is 0 on success, 1 for usage errors (bad arguments) and 2 for
errors raised while running (unreadable files, invalid configs, numerical
failures).  Progress goes to standard error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .bound import generalization_bound
from .config import ABLATION_KINDS, DEFAULT_GRIDS, KINDS, ConfigError, load_config, parse_domain_spec
from .datagen import DomainSpec, generate_dataset, load_dataset, save_dataset
from .experiment import ablation_sweep, build_data, init_model, read_records, records_to_csv, run_experiment
from .nn import load_checkpoint, save_checkpoint
from .objective import MetricTriple
from .pipeline import _REFPICK, evaluate, finetune_stage, rng_for, train_stage
from .data import ReferenceSet
from .stats import aggregate, format_mean_std, significance

log = logging.getLogger("nref")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _g(x):
    return format(float(x), ".6g")


def _emit(text, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(base_seed=args.seed)
    return cfg


def cmd_gen_data(args):
    if Path(args.spec).is_file():
        spec, count = parse_domain_spec(Path(args.spec).read_text(encoding="utf-8"))
    elif args.spec in KINDS:
        spec, count = DomainSpec(args.spec), 200
    else:
        raise UsageError(f"gen-data: {args.spec!r} is neither a spec file nor one of {KINDS}")
    if args.count is not None:
        count = args.count
    ds = generate_dataset(spec, count, args.seed or 0, args.domain)
    save_dataset(ds, args.out)
    log.info("wrote %d samples to %s", count, args.out)


def cmd_train(args):
    cfg = _config(args)
    seed = cfg.base_seed
    source, _, pool, _ = build_data(cfg)
    tcfg = cfg.train_config()
    init = init_model(cfg, seed)
    proc = cfg.train_procedure
    refs = ReferenceSet.choose(pool, cfg.n, rng_for(seed, _REFPICK)) if cfg.n > 0 else None
    if refs is None and proc in ("tr_ref", "ft_ref", "ft_wo_tr"):
        raise ValueError(f"{proc} needs n > 0 references")
    if proc == "ft_wo_tr":
        res = finetune_stage(init, refs, tcfg, seed, stage=proc)
    else:
        res = train_stage(init, source, refs if proc in ("tr_ref", "ft_ref") else None, tcfg, seed)
        if proc in ("ft", "ft_ref") and refs is not None:
            res = finetune_stage(res.checkpoint, refs, tcfg, seed, stage=proc)
    save_checkpoint(res.checkpoint, args.out)
    print(f"{proc} best_epoch {res.best_epoch} {tcfg.selection_metric} "
          f"{_g(getattr(res.epoch_metrics[res.best_epoch], tcfg.selection_metric))}")


def cmd_eval(args):
    model = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset, "target")
    triple, scores = evaluate(model, ds, per_image=True)
    print(" ".join(f"{k} {_g(v)}" for k, v in zip(MetricTriple._fields, triple)))
    if args.against:
        other = load_checkpoint(args.against)
        _, other_scores = evaluate(other, ds, per_image=True)
        res = significance(scores[args.metric], other_scores[args.metric], args.iterations,
                           np.random.default_rng(args.seed or 0))
        t = "n/a" if res["t_test"] is None else _g(res["t_test"])
        print(f"per-image {args.metric}: paired t-test p {t} permutation p {_g(res['permutation'])}")


def cmd_experiment(args):
    cfg = _config(args)
    text = records_to_csv(run_experiment(cfg))
    _emit(text, args.out or cfg.output)


def cmd_ablate(args):
    cfg = _config(args)
    if args.grid:
        try:
            grid = [float(v) for v in args.grid.split(",")]
        except ValueError:
            raise UsageError(f"ablate: bad --grid {args.grid!r}") from None
    else:
        grid = list(cfg.grid or DEFAULT_GRIDS[args.kind])
    _emit(ablation_sweep(args.kind, grid, cfg), args.out)


def cmd_bound(args):
    try:
        value = generalization_bound(args.m, args.p, args.H, args.delta, args.D)
    except ValueError as exc:
        raise UsageError(f"bound: {exc}") from None
    print(_g(value))


def cmd_report(args):
    records = []
    for path in args.csv:
        records += read_records(Path(path).read_text(encoding="utf-8"))
    if not records:
        raise ValueError("no records in the given files")
    rng = np.random.default_rng(args.seed or 0)
    lines = ["setting\tprocedure\tn\truns\tnss\tauc\tcc"]
    settings = list(dict.fromkeys(r.setting for r in records))
    for setting in settings:
        group = [r for r in records if r.setting == setting]
        for (proc, n), s in aggregate(group).items():
            cells = [format_mean_std(m, d) for m, d in zip(s.mean, s.std)]
            lines.append("\t".join([setting, proc, str(n), str(s.count), *cells]))
    # paired tests between procedures that share seeds
    for setting in settings:
        for n in dict.fromkeys(r.n for r in records if r.setting == setting):
            by = {}
            for r in records:
                if r.setting == setting and r.n == n:
                    by.setdefault(r.procedure, {})[r.seed] = getattr(r.metrics, args.metric)
            for a, b in (("ft_ref", "ft"), ("tr_ref", "tr"), ("ft", "tr"), ("tr", "ft_wo_tr")):
                if a in by and b in by:
                    seeds = sorted(set(by[a]) & set(by[b]))
                    if not seeds:
                        continue
                    res = significance([by[a][s] for s in seeds], [by[b][s] for s in seeds],
                                       args.iterations, rng)
                    t = "n/a" if res["t_test"] is None else _g(res["t_test"])
                    lines.append(f"{setting} n={n} {a} vs {b} ({args.metric}, {len(seeds)} paired runs): "
                                 f"t-test p {t}, permutation p {_g(res['permutation'])}")
    print("\n".join(lines))


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="seed for every random choice the command makes")
    p = _Parser(prog="nref", description="Reference-guided transfer learning for saliency prediction.",
                parents=[common])
    p.add_argument("-q", "--quiet", action="store_true", help="suppress progress output")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="command")
    sub.required = True

    s = sub.add_parser("gen-data", parents=[common], help="generate a synthetic SALD dataset")
    s.add_argument("spec", help="domain spec file (key = value) or a domain kind name")
    s.add_argument("out")
    s.add_argument("--count", type=int)
    s.add_argument("--domain", choices=("source", "target"), default="source")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", parents=[common], help="train one model and save its checkpoint")
    s.add_argument("config")
    s.add_argument("-o", "--out", required=True, help="checkpoint path")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="score a checkpoint on a dataset")
    s.add_argument("checkpoint")
    s.add_argument("dataset")
    s.add_argument("--against", help="second checkpoint for per-image significance tests")
    s.add_argument("--metric", choices=MetricTriple._fields, default="nss")
    s.add_argument("--iterations", type=int, default=10000)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("experiment", parents=[common], help="run repeated seeded experiments to CSV")
    s.add_argument("config")
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("ablate", parents=[common], help="sweep n, epsilon or head layers")
    s.add_argument("kind", choices=ABLATION_KINDS)
    s.add_argument("config")
    s.add_argument("--grid", help="comma-separated grid values")
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("bound", parents=[common], help="evaluate the generalization gap bound")
    s.add_argument("m", type=int)
    s.add_argument("p", type=float)
    s.add_argument("H", type=int)
    s.add_argument("delta", type=float)
    s.add_argument("D", type=int)
    s.set_defaults(func=cmd_bound)

    s = sub.add_parser("report", parents=[common], help="summarize experiment CSVs")
    s.add_argument("csv", nargs="+")
    s.add_argument("--metric", choices=MetricTriple._fields, default="nss")
    s.add_argument("--iterations", type=int, default=10000)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    if not hasattr(args, "seed"):
        args.seed = None
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(logging.WARNING if args.quiet else logging.INFO)
    log.propagate = False
    try:
        args.func(args)
    except UsageError as exc:
        print(f"nref: error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError, OSError, FloatingPointError, RuntimeError) as exc:
        print(f"nref: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

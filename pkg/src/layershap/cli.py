"""Command-line front end.

Every stage reads and writes files, so the stages can be chained or rerun
independently::

    layershap train --out model.bin
    layershap shapley --model model.bin --window 3 --out report.json
    layershap allocate --report report.json --rho 0.6 --out plan.json
    layershap prune --model model.bin --plan plan.json --out pruned.bin
    layershap eval --model pruned.bin

Exit codes: 0 success, 2 usage, 3 bad input file, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import warnings
from pathlib import Path

from . import checkpoint, data
from .allocation import DEFAULT_LAMBDA, SparsityPlan, allocate_ratios
from .coalition import LayerSet, ShapleyReport
from .errors import LayershapError
from .evaluation import activation_cosine, perplexity, value_of
from .model import ModelConfig
from .pipeline import compare, layer_contributions
from .pruning import PruneMethod, apply_plan
from .stats import magnitude_stats
from .training import TrainConfig, train

log = logging.getLogger("layershap")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _corpus(args, parser) -> bytes:
    if args.corpus is not None and not Path(args.corpus).is_file():
        parser.error(f"corpus not found: {args.corpus}")
    return data.load_corpus(args.corpus)


def _calibration(args, parser):
    train_part, _ = data.split_corpus(_corpus(args, parser))
    return data.make_calibration(train_part, args.calib_count, args.calib_len, args.seed)


def _heldout(args, parser):
    _, held = data.split_corpus(_corpus(args, parser))
    return data.contiguous_batch(held, args.calib_len)


def _model(args, parser, attr="model"):
    path = getattr(args, attr)
    if not Path(path).is_file():
        parser.error(f"checkpoint not found: {path}")
    return checkpoint.load_checkpoint(path)


def cmd_train(args, parser):
    corpus = _corpus(args, parser)
    train_part, _ = data.split_corpus(corpus)
    cfg = ModelConfig(n_layers=args.layers, seed=args.seed)
    model = train(train_part, cfg, TrainConfig(steps=args.steps))
    checkpoint.save_checkpoint(model, args.out)
    ppl = perplexity(model, _heldout(args, parser)).ppl
    print(f"held-out ppl: {ppl:.6f}")


def cmd_shapley(args, parser):
    if args.window is not None and args.window % 2 == 0:
        parser.error("--window must be odd")
    model = _model(args, parser)
    batch = _calibration(args, parser)
    T = model.config.n_layers
    if args.window is not None and args.window > T:
        parser.error(f"--window {args.window} exceeds the model's {T} layers")
    window = None if args.exact else args.window
    report = layer_contributions(model, batch, window, args.threads)
    _emit(report.to_json(), args.out)
    print(f"oracle evaluations: {report.oracle_evaluations}", file=sys.stderr)
    if args.exact:
        full = value_of(model, LayerSet.full(T), batch)
        total = math.fsum(report.contributions)
        ok = abs(total - full) <= 1e-9 * max(1.0, abs(full))
        print(f"efficiency: sum={total!r} v(full)={full!r} {'PASS' if ok else 'FAIL'}", file=sys.stderr)


def cmd_allocate(args, parser):
    try:
        report = ShapleyReport.from_json(Path(args.report).read_text())
    except OSError as exc:
        parser.error(f"cannot read report: {exc}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        plan = allocate_ratios(report.contributions, args.rho, args.lam, source=report.digest())
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    _emit(plan.to_json(), args.out)


def cmd_prune(args, parser):
    model = _model(args, parser)
    try:
        plan = SparsityPlan.from_json(Path(args.plan).read_text())
    except OSError as exc:
        parser.error(f"cannot read plan: {exc}")
    batch = _calibration(args, parser) if args.method == "wanda" else None
    pruned, report = apply_plan(model, plan, args.method, batch, args.threads)
    checkpoint.save_checkpoint(pruned, args.out)
    csv_path = args.sparsity_csv or str(Path(args.out).with_suffix(".sparsity.csv"))
    Path(csv_path).write_text(report.to_csv())


def cmd_eval(args, parser):
    model = _model(args, parser)
    _emit(perplexity(model, _heldout(args, parser)).to_json(), args.out)


def cmd_stats(args, parser):
    _emit(magnitude_stats(_model(args, parser)).to_csv(), args.out)


def cmd_similarity(args, parser):
    dense = _model(args, parser)
    pruned = _model(args, parser, "pruned")
    profile = activation_cosine(dense, pruned, _calibration(args, parser))
    if profile.zero_vectors:
        print(f"warning: {profile.zero_vectors} zero activation vectors", file=sys.stderr)
    _emit(profile.to_csv(), args.out)


def cmd_pipeline(args, parser):
    if args.window is not None and args.window % 2 == 0:
        parser.error("--window must be odd")
    if args.model:
        model = _model(args, parser)
    else:
        train_part, _ = data.split_corpus(_corpus(args, parser))
        model = train(train_part, ModelConfig(n_layers=args.layers, seed=args.seed),
                      TrainConfig(steps=args.steps))
    result = compare(model, _calibration(args, parser), _heldout(args, parser),
                     args.rho, args.lam, None if args.exact else args.window,
                     args.method, args.threads)
    _emit(result.table(), args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layershap", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(fn=fn, parser=p)
        return p

    def corpus_opts(p):
        p.add_argument("--corpus", help="raw byte corpus (default: bundled text)")
        p.add_argument("--calib-count", type=int, default=32)
        p.add_argument("--calib-len", type=int, default=256)
        p.add_argument("--seed", type=int, default=0)

    def window_opts(p):
        g = p.add_mutually_exclusive_group()
        g.add_argument("--window", type=int, default=5)
        g.add_argument("--exact", action="store_true")

    p = add("train", cmd_train, "train the toy transformer")
    corpus_opts(p)
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--steps", type=int, default=TrainConfig.steps)
    p.add_argument("--out", required=True)

    p = add("shapley", cmd_shapley, "per-layer Shapley contributions")
    p.add_argument("--model", required=True)
    corpus_opts(p)
    window_opts(p)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out")

    p = add("allocate", cmd_allocate, "per-layer pruning ratios from a Shapley report")
    p.add_argument("--report", required=True)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    p.add_argument("--out")

    p = add("prune", cmd_prune, "prune a checkpoint according to a plan")
    p.add_argument("--model", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--method", choices=[m.value for m in PruneMethod], default="magnitude")
    corpus_opts(p)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--sparsity-csv")

    p = add("eval", cmd_eval, "held-out perplexity")
    p.add_argument("--model", required=True)
    corpus_opts(p)
    p.add_argument("--out")

    p = add("stats", cmd_stats, "weight magnitude statistics")
    p.add_argument("--model", required=True)
    p.add_argument("--out")

    p = add("similarity", cmd_similarity, "per-layer activation cosine similarity")
    p.add_argument("--model", required=True, help="dense checkpoint")
    p.add_argument("--pruned", required=True)
    corpus_opts(p)
    p.add_argument("--out")

    p = add("pipeline", cmd_pipeline, "uniform vs Shapley-guided pruning comparison")
    p.add_argument("--model", help="checkpoint (default: train one)")
    corpus_opts(p)
    window_opts(p)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    p.add_argument("--method", choices=[m.value for m in PruneMethod], default="magnitude")
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--steps", type=int, default=TrainConfig.steps)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        args.parser.error("--threads must be at least 1")
    if hasattr(args, "exact") and args.exact:
        args.window = None
    try:
        args.fn(args, args.parser)
    except LayershapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

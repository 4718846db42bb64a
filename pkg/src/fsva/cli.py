"""Command-line entry point: ``fsva <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import NscModel, accuracy, choose_shrinkage, nsc_predict, nsc_train
from .core import (ExpressionMatrix, OutcomeLabels, encode_design, read_labels, read_matrix,
                   write_matrix, write_sample_table)
from .correct import compare_variants, fsva_exact, fsva_fast
from .harness import ExperimentConfig, METHODS, desk_scenario, full_scenario, run_simulation_sweep, run_split_study
from .simulate import simulate_study
from .sva import FrozenModel, clean_training, estimate_num_sv, freeze, sva_fit

log = logging.getLogger("fsva")

DELIMS = {"tsv": "\t", "csv": ","}


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _methods(text: str) -> tuple:
    items = tuple(v.strip() for v in text.split(",") if v.strip())
    bad = [v for v in items if v not in METHODS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
    return items


def _ext(args) -> str:
    return args.format


def _out(args, name: str) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _scenario(args):
    make = full_scenario if args.profile == "full" else desk_scenario
    overrides = {"seed": args.seed, "convention": args.convention}
    for key in ("m", "n_db", "n_new", "sd_gamma"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    return make(args.scenario, **overrides)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    spec = _scenario(args).with_(confounding_rho=args.rho)
    study = simulate_study(spec)
    d = DELIMS[args.format]
    ext = _ext(args)
    write_matrix(study.database.expr, _out(args, f"database.{ext}"), d)
    write_matrix(study.new_samples.expr, _out(args, f"new_samples.{ext}"), d)
    ids = study.database.expr.sample_ids + study.new_samples.expr.sample_ids
    write_sample_table(ids, study.database.outcomes.labels + study.new_samples.outcomes.labels,
                       _out(args, f"labels.{ext}"), "label", d)
    write_sample_table(ids, study.database.batch + study.new_samples.batch,
                       _out(args, f"batch.{ext}"), "batch", d)
    with open(_out(args, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(study.manifest(), fh, indent=1, sort_keys=True)
    print(f"wrote {spec.m} features x {spec.n_db}+{spec.n_new} samples to {args.out_dir} "
          f"(database rho={study.truth['achieved_rho_database']:.3f})")
    return 0


def cmd_train(args) -> int:
    expr = read_matrix(args.matrix)
    outcomes = read_labels(args.labels, expr.sample_ids)
    S = encode_design(outcomes)
    p2 = args.num_sv
    if p2 is None:
        p2 = estimate_num_sv(expr, S, args.n_perm, args.alpha, seed=args.seed)
        p2 = min(p2, expr.n - S.p1 - 1)
    fit = sva_fit(expr, S, p2, max_iter=args.max_iter, tol=args.tol, center=args.center)
    model = freeze(fit, expr, seed=args.seed, n_perm=args.n_perm, alpha=args.alpha)
    cleaned = clean_training(expr, fit)
    delta = args.shrinkage
    if delta is None:
        delta = choose_shrinkage(cleaned, outcomes, args.folds, seed=args.seed)
    clf = nsc_train(cleaned, outcomes, delta)
    model.save(_out(args, "fsva_model.npz"))
    clf.save(_out(args, "classifier.npz"))
    write_matrix(cleaned, _out(args, f"cleaned_training.{_ext(args)}"), DELIMS[args.format])
    print(f"num_sv\t{p2}\niterations\t{fit.n_iter}\nconverged\t{fit.converged}\n"
          f"dropped_components\t{model.dropped_components}\nshrinkage\t{delta}")
    return 0


def _correct(args, model, expr):
    fn = fsva_exact if args.method == "exact" else fsva_fast
    return fn(model, expr)


def cmd_correct(args) -> int:
    model = FrozenModel.load(args.model)
    result = _correct(args, model, read_matrix(args.matrix))
    write_matrix(result.cleaned, _out(args, f"corrected.{_ext(args)}"), DELIMS[args.format])
    text = "\n".join(result.report_lines()) + "\n"
    _out(args, "diagnostics.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_predict(args) -> int:
    model = FrozenModel.load(args.model)
    clf = NscModel.load(args.classifier)
    expr = read_matrix(args.matrix)
    if args.method == "none":
        cleaned = expr
    else:
        cleaned = _correct(args, model, expr).cleaned
    pred, _ = nsc_predict(clf, cleaned)
    write_sample_table(cleaned.sample_ids, pred, _out(args, f"predictions.{_ext(args)}"),
                       "predicted", DELIMS[args.format])
    print(f"predicted\t{len(pred)}")
    if args.labels:
        truth = read_labels(args.labels, cleaned.sample_ids).labels
        print(f"accuracy\t{accuracy([str(p) for p in pred], truth):.6f}")
    return 0


def _config(args, **extra) -> ExperimentConfig:
    return ExperimentConfig(
        correction_methods=args.methods,
        n_iterations=args.iterations,
        seed=args.seed,
        n_perm=args.n_perm,
        alpha=args.alpha,
        shrinkage=args.shrinkage,
        n_boot=args.n_boot,
        threads=args.threads,
        center=args.center,
        **extra,
    )


def cmd_sweep(args) -> int:
    cfg = _config(args, rho_grid=args.rho, scenario=_scenario(args))
    report = run_simulation_sweep(cfg)
    summary, _ = report.write(args.out_dir, "sweep", DELIMS[args.format])
    sys.stdout.write(summary.read_text(encoding="utf-8"))
    return 0


def cmd_split_eval(args) -> int:
    expr = read_matrix(args.matrix)
    outcomes = read_labels(args.labels, expr.sample_ids)
    cfg = _config(args, split_fraction=args.split_fraction)
    report = run_split_study(expr, outcomes, cfg)
    summary, _ = report.write(args.out_dir, "split_eval", DELIMS[args.format])
    sys.stdout.write(summary.read_text(encoding="utf-8"))
    return 0


def cmd_bench(args) -> int:
    spec = _scenario(args).with_(confounding_rho=args.rho)
    study = simulate_study(spec)
    db = study.database
    S = encode_design(db.outcomes)
    p2 = args.num_sv
    if p2 is None:
        p2 = max(1, estimate_num_sv(db.expr, S, seed=args.seed))
    model = freeze(sva_fit(db.expr, S, p2, center=args.center), db.expr, seed=args.seed)
    rep = compare_variants(model, study.new_samples.expr)
    lines = [f"# bench seed={args.seed} scenario={args.scenario} profile={args.profile}"]
    for key in ("m", "n_train", "n_new", "p2", "exact_ms", "fast_ms", "speedup",
                "median_surrogate_discrepancy", "median_cleaned_discrepancy"):
        val = rep[key]
        lines.append(f"{key}\t{val:.3f}" if isinstance(val, float) else f"{key}\t{val}")
    text = "\n".join(lines) + "\n"
    _out(args, "bench.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    g.add_argument("--threads", type=int, default=1, help="worker threads for replicates")
    g.add_argument("--format", choices=sorted(DELIMS), default="tsv", help="output delimiter")
    g.add_argument("--out-dir", default=".", help="directory for output files")
    g.add_argument("-v", "--verbose", action="store_true")

    sva_opts = argparse.ArgumentParser(add_help=False)
    sva_opts.add_argument("--n-perm", type=int, default=20)
    sva_opts.add_argument("--alpha", type=float, default=0.10)
    sva_opts.add_argument("--center", action="store_true",
                          help="subtract training row means before the weighted SVD")

    sim_opts = argparse.ArgumentParser(add_help=False)
    sim_opts.add_argument("--scenario", type=int, choices=(1, 2, 3), default=1)
    sim_opts.add_argument("--profile", choices=("desk", "full"), default="desk",
                          help="desk: 1000 features; full: 10000 features")
    sim_opts.add_argument("--m", type=int, help="override number of features")
    sim_opts.add_argument("--n-db", type=int, help="override database size")
    sim_opts.add_argument("--n-new", type=int, help="override number of new samples")
    sim_opts.add_argument("--sd-gamma", type=float, help="override batch coefficient scale")
    sim_opts.add_argument("--convention", choices=("variance", "sd"), default="variance",
                          help="read scenario scales as variances or standard deviations")

    eval_opts = argparse.ArgumentParser(add_help=False)
    eval_opts.add_argument("--iterations", type=int, default=25)
    eval_opts.add_argument("--methods", type=_methods, default=METHODS)
    eval_opts.add_argument("--shrinkage", type=float, default=None,
                           help="fixed classifier shrinkage (default: cross-validated)")
    eval_opts.add_argument("--n-boot", type=int, default=2000)

    p = argparse.ArgumentParser(prog="fsva", description="Frozen surrogate variable analysis")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common, sim_opts], help="write a simulated study")
    s.add_argument("--rho", type=float, default=0.0, help="database batch/outcome correlation")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", parents=[common, sva_opts], help="fit SVA and the classifier")
    s.add_argument("--matrix", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--num-sv", type=int, default=None, help="skip permutation estimate")
    s.add_argument("--max-iter", type=int, default=5)
    s.add_argument("--tol", type=float, default=1e-3)
    s.add_argument("--shrinkage", type=float, default=None)
    s.add_argument("--folds", type=int, default=5)
    s.set_defaults(func=cmd_train)

    for name, func, hlp in (("correct", cmd_correct, "batch-correct new samples"),
                            ("predict", cmd_predict, "correct and classify new samples")):
        s = sub.add_parser(name, parents=[common], help=hlp)
        s.add_argument("--model", required=True, help="frozen model from `train`")
        s.add_argument("--matrix", required=True)
        choices = ("exact", "fast") if name == "correct" else ("exact", "fast", "none")
        s.add_argument("--method", choices=choices, default="exact")
        if name == "predict":
            s.add_argument("--classifier", required=True)
            s.add_argument("--labels", help="optional truth labels; prints accuracy")
        s.set_defaults(func=func)

    s = sub.add_parser("sweep", parents=[common, sva_opts, sim_opts, eval_opts],
                       help="simulation sweep over confounding levels")
    s.add_argument("--rho", type=_floats, default=(0.0, 0.3, 0.6, 0.9))
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("split-eval", parents=[common, sva_opts, eval_opts],
                       help="repeated half-split evaluation of a labelled dataset")
    s.add_argument("--matrix", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--split-fraction", type=float, default=0.5)
    s.set_defaults(func=cmd_split_eval)

    s = sub.add_parser("bench", parents=[common, sva_opts, sim_opts],
                       help="time exact against fast correction")
    s.add_argument("--rho", type=float, default=0.6)
    s.add_argument("--num-sv", type=int, default=None)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        print(f"fsva {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

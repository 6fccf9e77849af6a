"""Command-line pipeline: generate data, fit local maps, predict, evaluate.

Exit codes: 0 success, 2 usage error, 3 invalid data or config, 4 numeric or
training failure. All commands are deterministic given their flags and seed;
``WASSREG_SEED`` supplies the default seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .datagen import (
    GaussianGenConfig,
    GmmGenConfig,
    gen_gaussian_pairs,
    gen_gmm_pairs,
    subsample_regime,
)
from .errors import (
    CapacityError,
    DatasetFormatError,
    NumericError,
    SupportError,
    TrainingError,
    ValidationError,
)
from .evaluation import evaluate_predictions, run_regime, run_single_repetition, write_regime_csv
from .kernel import BandwidthRule
from .measures import load_dataset, load_measure, save_dataset, save_measure
from .ot import SinkhornConfig
from .plots import render_clouds_svg
from .train import (
    TrainConfig,
    fit_local_map,
    load_model,
    predict,
    save_model,
    select_references,
)

BLUR_HELP = (
    "entropic regularization; by default a temperature multiplying the "
    "KL term (squared-length units), so values approach the exact squared "
    "distance as it shrinks. With --blur-as-length it is a length scale "
    "(temperature blur^2), the convention some OT libraries use."
)


def _default_seed() -> int:
    return int(os.environ.get("WASSREG_SEED", "0"))


def _check_output(path: str, force: bool) -> None:
    if Path(path).exists() and not force:
        raise ValidationError(f"{path} exists; pass --force to overwrite")


# --- shared flag groups -----------------------------------------------------

def _add_sinkhorn_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--blur", type=float, default=0.15, help=BLUR_HELP)
    p.add_argument("--blur-as-length", action="store_true")
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--sinkhorn-tol", type=float, default=1e-9)
    p.add_argument("--unroll", type=int, default=50, help="iterations differentiated through")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    _add_sinkhorn_flags(p)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--weight-floor", type=float, default=1e-3)
    p.add_argument("--kernel", choices=("gaussian", "epanechnikov"), default="gaussian")
    p.add_argument("--neighbors", type=int, default=5, help="k-th neighbor sets the bandwidth")
    p.add_argument("--rho", type=float, default=1.0, help="bandwidth scale factor")
    p.add_argument("--seed", type=int, default=None)


def _sinkhorn_from_args(args) -> SinkhornConfig:
    return SinkhornConfig(
        blur=args.blur,
        max_iters=args.max_iters,
        tol=args.sinkhorn_tol,
        unroll_iters=min(args.unroll, args.max_iters),
        blur_as_length=args.blur_as_length,
    )


def _train_cfg_from_args(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        sinkhorn=_sinkhorn_from_args(args),
        weight_floor=args.weight_floor,
        seed=args.seed if args.seed is not None else _default_seed(),
    )


def _rule_from_args(args) -> BandwidthRule:
    return BandwidthRule(neighbors=args.neighbors, scale=args.rho)


# --- gen --------------------------------------------------------------------

def _gmm_config_from_args(args) -> GmmGenConfig:
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as e:
            raise DatasetFormatError(
                f"{args.config}: line {e.lineno}, column {e.colno}: {e.msg}"
            ) from e
        if not isinstance(base, dict):
            raise ValidationError(f"{args.config}: config must be a JSON object")
    flag_map = {
        "n": args.n,
        "k": args.k,
        "components": args.components,
        "component_sigma": args.sigma,
        "alpha_rot": args.alpha_rot,
        "kappa0": args.kappa0,
        "kappa1": args.kappa1,
        "r_thresh": args.r_thresh,
        "gamma": args.gamma,
        "beta": args.beta,
        "tau": args.tau,
        "seed": args.seed,
        "dim": args.dim,
    }
    for key, value in flag_map.items():
        if value is not None:
            base[key] = value
    if args.mean_lo is not None or args.mean_hi is not None:
        lo, hi = base.get("mean_box", (-3.0, 3.0))
        base["mean_box"] = (
            args.mean_lo if args.mean_lo is not None else lo,
            args.mean_hi if args.mean_hi is not None else hi,
        )
    if "seed" not in base:
        base["seed"] = _default_seed()
    if "n" not in base or "k" not in base:
        raise ValidationError("gen gmm needs --n and --k (flags or config file)")
    return GmmGenConfig.from_dict(base)


def cmd_gen_gauss(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    cfg = GaussianGenConfig(
        n=args.n,
        k=args.k,
        noise_sigma=args.sigma,
        seed=seed,
        mean_box=(args.mean_lo, args.mean_hi),
    )
    _check_output(args.out, args.force)
    data = gen_gaussian_pairs(cfg)
    save_dataset(data, args.out)
    print(f"wrote {args.out}: n={len(data)} k={cfg.k} d={data.dim} seed={cfg.seed}")
    return 0


def cmd_gen_gmm(args) -> int:
    cfg = _gmm_config_from_args(args)
    _check_output(args.out, args.force)
    data = gen_gmm_pairs(cfg)
    save_dataset(data, args.out)
    print(f"wrote {args.out}: n={len(data)} k={cfg.k} d={data.dim} seed={cfg.seed}")
    return 0


# --- fit / predict ----------------------------------------------------------

def cmd_fit(args) -> int:
    data = load_dataset(args.data)
    cfg = _train_cfg_from_args(args)
    rule = _rule_from_args(args)

    if args.refs is not None:
        ref_indices = select_references(data, args.refs, cfg.sinkhorn)
        references = [data.sources[i] for i in ref_indices]
    elif args.ref_file is not None:
        references = [load_measure(args.ref_file)]
    else:
        idx = args.ref_index if args.ref_index is not None else 0
        if not (0 <= idx < len(data)):
            raise ValidationError(f"--ref-index {idx} out of range [0, {len(data)})")
        references = [data.sources[idx]]

    out = Path(args.out)
    paths = (
        [out]
        if len(references) == 1
        else [out.with_name(f"{out.stem}-{i}{out.suffix}") for i in range(len(references))]
    )
    for ref, path in zip(references, paths):
        model = fit_local_map(ref, data, args.map, rule, cfg, kernel_family=args.kernel)
        save_model(model, path)
        print(
            f"wrote {path}: final_loss={model.loss_history[-1]:.6g} "
            f"bandwidth={model.kernel.bandwidth:.6g} pairs={len(model.included_pair_ids)}"
        )
    return 0


def cmd_predict(args) -> int:
    data = load_dataset(args.data)
    if not (0 <= args.index < len(data)):
        raise ValidationError(f"--index {args.index} out of range [0, {len(data)})")
    models = [load_model(p) for p in args.model]
    cfg = models[0].config.sinkhorn
    prediction, chosen = predict(models, data.sources[args.index], cfg)
    save_measure(prediction, args.out)
    print(f"wrote {args.out}: model={chosen} ({args.model[chosen]})")
    return 0


# --- eval / regime / plot ---------------------------------------------------

def cmd_eval(args) -> int:
    train_data = load_dataset(args.data)
    models = [load_model(p) for p in args.model]
    cfg = models[0].config.sinkhorn
    if args.test_data:
        test_data = load_dataset(args.test_data)
    elif args.test_index is not None:
        if not (0 <= args.test_index < len(train_data)):
            raise ValidationError(
                f"--test-index {args.test_index} out of range [0, {len(train_data)})"
            )
        from .measures import make_dataset

        test_data = make_dataset(
            [train_data.pairs[args.test_index]], train_data.dim,
            [train_data.ids[args.test_index]],
        )
        keep = [i for i in range(len(train_data)) if i != args.test_index]
        train_data = make_dataset(
            [train_data.pairs[i] for i in keep], train_data.dim,
            [train_data.ids[i] for i in keep],
        )
    else:
        raise ValidationError("eval needs --test-data or --test-index")

    report = evaluate_predictions(models, train_data, test_data, cfg)
    write_regime_csv([report], args.out)
    print(
        f"wrote {args.out}: abs_err={report.abs_test_error:.6g} r2w={report.r2w:.6g}"
    )
    if args.plot:
        plot_dir = Path(args.plot)
        plot_dir.mkdir(parents=True, exist_ok=True)
        for pid, (src, tgt) in zip(test_data.ids, test_data.pairs):
            pred, _ = predict(models, src, cfg)
            svg = plot_dir / f"pair-{pid}.svg"
            render_clouds_svg(
                svg,
                [("source", src), ("prediction", pred), ("target", tgt)],
                title=f"pair {pid}",
            )
            print(f"wrote {svg}")
    return 0


def cmd_regime(args) -> int:
    gen = _gmm_config_from_args(args)
    cfg = _train_cfg_from_args(args)
    rule = _rule_from_args(args)
    report = run_regime(
        d=args.d,
        n=args.regime_n,
        k=args.regime_k,
        reps=args.reps,
        gen=gen,
        rule=rule,
        train_cfg=cfg,
        family=args.map,
    )
    write_regime_csv([report], args.out)
    print(
        f"wrote {args.out}: d={report.dim} n={report.n} k={report.k} reps={report.reps} "
        f"abs_err={report.abs_test_error:.6g}+-{report.abs_err_std:.6g} r2w={report.r2w:.6g}"
    )
    for failure in report.failures:
        print(f"failed {failure}", file=sys.stderr)
    if args.plot:
        plot_dir = Path(args.plot)
        plot_dir.mkdir(parents=True, exist_ok=True)
        master = gen_gmm_pairs(replace(gen, dim=args.d) if gen.dim != args.d else gen)
        _, src, pred, tgt = run_single_repetition(
            master, args.regime_n, args.regime_k, report.seeds[0], rule, cfg, family=args.map
        )
        svg = plot_dir / f"regime-d{args.d}-n{args.regime_n}-k{args.regime_k}.svg"
        render_clouds_svg(
            svg, [("source", src), ("prediction", pred), ("target", tgt)],
            title=f"d={args.d} n={args.regime_n} k={args.regime_k}",
        )
        print(f"wrote {svg}")
    return 0


def cmd_plot(args) -> int:
    data = load_dataset(args.data)
    if not (0 <= args.index < len(data)):
        raise ValidationError(f"--index {args.index} out of range [0, {len(data)})")
    src, tgt = data.pairs[args.index]
    clouds = [("source", src), ("target", tgt)]
    if args.model:
        model = load_model(args.model)
        pred, _ = predict([model], src, model.config.sinkhorn)
        clouds.insert(1, ("prediction", pred))
    render_clouds_svg(args.out, clouds, title=f"pair {data.ids[args.index]}")
    print(f"wrote {args.out}")
    return 0


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wassreg",
        description="Local transport-map regression between empirical measures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate synthetic datasets")
    gen_sub = gen.add_subparsers(dest="generator", required=True)

    gauss = gen_sub.add_parser("gauss", help="rotated-Gaussian benchmark")
    gauss.add_argument("--n", type=int, required=True)
    gauss.add_argument("--k", type=int, required=True)
    gauss.add_argument("--sigma", type=float, default=0.0, help="shared target noise std")
    gauss.add_argument("--seed", type=int, default=None)
    gauss.add_argument("--mean-lo", type=float, default=-3.0)
    gauss.add_argument("--mean-hi", type=float, default=3.0)
    gauss.add_argument("-o", "--out", required=True)
    gauss.add_argument("--force", action="store_true")
    gauss.set_defaults(func=cmd_gen_gauss)

    gmm = gen_sub.add_parser("gmm", help="mixture benchmark with rotation/shear maps")
    gmm.add_argument("--config", help="JSON config; flags override its values")
    gmm.add_argument("--n", type=int)
    gmm.add_argument("--k", type=int)
    gmm.add_argument("--components", type=int)
    gmm.add_argument("--sigma", type=float, help="component std")
    gmm.add_argument("--alpha-rot", type=float)
    gmm.add_argument("--kappa0", type=float)
    gmm.add_argument("--kappa1", type=float)
    gmm.add_argument("--r-thresh", type=float)
    gmm.add_argument("--gamma", type=float)
    gmm.add_argument("--beta", type=float)
    gmm.add_argument("--tau", type=float)
    gmm.add_argument("--dim", type=int)
    gmm.add_argument("--mean-lo", type=float)
    gmm.add_argument("--mean-hi", type=float)
    gmm.add_argument("--seed", type=int, default=None)
    gmm.add_argument("-o", "--out", required=True)
    gmm.add_argument("--force", action="store_true")
    gmm.set_defaults(func=cmd_gen_gmm)

    fit = sub.add_parser("fit", help="fit a local map around a reference measure")
    fit.add_argument("--data", required=True)
    fit.add_argument("--map", choices=("affine", "displacement"), default="affine")
    group = fit.add_mutually_exclusive_group()
    group.add_argument("--ref-index", type=int, help="use this pair's source as reference")
    group.add_argument("--ref-file", help="JSON measure file to use as reference")
    group.add_argument("--refs", type=int, help="greedy farthest-point selection of this many references")
    _add_train_flags(fit)
    fit.add_argument("-o", "--out", required=True)
    fit.set_defaults(func=cmd_fit)

    pred = sub.add_parser("predict", help="push a source through the nearest model")
    pred.add_argument("--data", required=True)
    pred.add_argument("--index", type=int, required=True)
    pred.add_argument("--model", action="append", required=True)
    pred.add_argument("-o", "--out", required=True)
    pred.set_defaults(func=cmd_predict)

    ev = sub.add_parser("eval", help="score predictions with the transport R^2")
    ev.add_argument("--data", required=True, help="training pairs (barycenter reference)")
    ev.add_argument("--test-data")
    ev.add_argument("--test-index", type=int)
    ev.add_argument("--model", action="append", required=True)
    ev.add_argument("--plot", help="directory for SVG snapshots")
    ev.add_argument("-o", "--out", required=True)
    ev.set_defaults(func=cmd_eval)

    reg = sub.add_parser("regime", help="run a (d, n, k) benchmark regime")
    reg.add_argument("--d", type=int, required=True)
    reg.add_argument("--regime-n", type=int, required=True, help="pairs per repetition")
    reg.add_argument("--regime-k", type=int, required=True, help="points per measure")
    reg.add_argument("--reps", type=int, default=10)
    reg.add_argument("--map", choices=("affine", "displacement"), default="affine")
    reg.add_argument("--config", help="JSON generator config; flags override")
    reg.add_argument("--n", type=int, help="master dataset pair count")
    reg.add_argument("--k", type=int, help="master dataset points per measure")
    reg.add_argument("--components", type=int)
    reg.add_argument("--sigma", type=float)
    reg.add_argument("--alpha-rot", type=float)
    reg.add_argument("--kappa0", type=float)
    reg.add_argument("--kappa1", type=float)
    reg.add_argument("--r-thresh", type=float)
    reg.add_argument("--gamma", type=float)
    reg.add_argument("--beta", type=float)
    reg.add_argument("--tau", type=float)
    reg.add_argument("--dim", type=int)
    reg.add_argument("--mean-lo", type=float)
    reg.add_argument("--mean-hi", type=float)
    reg.add_argument("--plot", help="directory for SVG snapshots")
    _add_train_flags(reg)
    reg.add_argument("-o", "--out", required=True)
    reg.set_defaults(func=cmd_regime)

    plot = sub.add_parser("plot", help="SVG snapshot of one dataset pair")
    plot.add_argument("--data", required=True)
    plot.add_argument("--index", type=int, default=0)
    plot.add_argument("--model", help="optional model to draw the prediction")
    plot.add_argument("-o", "--out", required=True)
    plot.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, DatasetFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (SupportError, TrainingError, NumericError, CapacityError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

"""Prediction quality metrics and the (d, n, k) regime harness.

The coefficient of determination in transport space compares the squared
distance from the target to the prediction (residual) against the squared
distance from the target to the barycenter of the training targets (total).
Squared distances use the exact assignment/LP backend whenever supports are
small enough, falling back to the debiased Sinkhorn value otherwise; residual
and total always share one backend.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .datagen import GmmGenConfig, gen_gmm_pairs, subsample_regime
from .errors import DegenerateBaselineError, SupportError, TrainingError
from .kernel import BandwidthRule
from .measures import EmpiricalMeasure, RegressionDataset, make_dataset
from .ot import SinkhornConfig, free_support_barycenter, w2_squared_auto
from .train import TrainConfig, fit_local_map, predict

CSV_HEADER = ("d", "n", "k", "reps", "abs_err_mean", "abs_err_std", "r2w_mean")

DEGENERATE_TOTAL_TOL = 1e-12

# offset between the generator seed and the first repetition's subset seed
_REP_SEED_OFFSET = 7919


@dataclass(frozen=True)
class PairEval:
    pair_id: int
    ss_res: float
    ss_tot: float
    r2w: float
    abs_error: float


@dataclass(frozen=True)
class EvalReport:
    """Aggregate metrics plus the per-pair breakdown and regime metadata."""

    ss_res: float
    ss_tot: float
    r2w: float
    abs_test_error: float
    abs_err_std: float
    per_pair: tuple
    failures: tuple
    dim: int
    n: int
    k: int
    reps: int
    seeds: tuple


def r2w(
    target: EmpiricalMeasure,
    prediction: EmpiricalMeasure,
    barycenter: EmpiricalMeasure,
    cfg: SinkhornConfig,
    pair_id: int = 0,
) -> PairEval:
    """Evaluate one prediction: residual, total, and their 1 - ratio."""
    ss_res = w2_squared_auto(target, prediction, cfg)
    ss_tot = w2_squared_auto(target, barycenter, cfg)
    if ss_tot <= DEGENERATE_TOTAL_TOL:
        raise DegenerateBaselineError(
            f"total variation {ss_tot!r} is numerically zero (target equals the barycenter)"
        )
    return PairEval(
        pair_id=pair_id,
        ss_res=ss_res,
        ss_tot=ss_tot,
        r2w=1.0 - ss_res / ss_tot,
        abs_error=ss_res,
    )


def abs_test_error(target: EmpiricalMeasure, prediction: EmpiricalMeasure, cfg: SinkhornConfig) -> float:
    """Squared transport distance between target and prediction (same as ss_res)."""
    return w2_squared_auto(target, prediction, cfg)


def _aggregate(per_pair, failures, dim, n, k, reps, seeds) -> EvalReport:
    errs = np.array([p.abs_error for p in per_pair]) if per_pair else np.array([np.nan])
    return EvalReport(
        ss_res=float(np.mean([p.ss_res for p in per_pair])) if per_pair else float("nan"),
        ss_tot=float(np.mean([p.ss_tot for p in per_pair])) if per_pair else float("nan"),
        r2w=float(np.mean([p.r2w for p in per_pair])) if per_pair else float("nan"),
        abs_test_error=float(errs.mean()),
        abs_err_std=float(errs.std()) if per_pair else float("nan"),
        per_pair=tuple(per_pair),
        failures=tuple(failures),
        dim=dim,
        n=n,
        k=k,
        reps=reps,
        seeds=tuple(seeds),
    )


def evaluate_predictions(models, train_data: RegressionDataset, test_data: RegressionDataset,
                         cfg: SinkhornConfig, barycenter_outer: int = 15) -> EvalReport:
    """Score every test pair against models, with the training-target barycenter
    as the total-variation reference."""
    support = test_data.pairs[0][1].size if len(test_data) else train_data.pairs[0][1].size
    bary = free_support_barycenter(train_data.targets, support, cfg, max_outer=barycenter_outer)
    per_pair = []
    for pid, (src, tgt) in zip(test_data.ids, test_data.pairs):
        pred, _ = predict(models, src, cfg)
        per_pair.append(r2w(tgt, pred, bary, cfg, pair_id=pid))
    return _aggregate(
        per_pair, (), train_data.dim, len(train_data), support, len(test_data), ()
    )


def run_single_repetition(
    master: RegressionDataset,
    n: int,
    k: int,
    seed: int,
    rule: BandwidthRule,
    train_cfg: TrainConfig,
    family: str = "affine",
    barycenter_outer: int = 10,
):
    """One harness repetition: subsample (n, k), hold out one pair, fit a
    local map at the held-out source, predict, and score.

    Returns (PairEval, test source, prediction, test target).
    """
    sub = subsample_regime(master, n, k, seed)
    test_idx = int(np.random.default_rng(np.random.SeedSequence((seed, 3))).integers(n))
    test_src, test_tgt = sub.pairs[test_idx]
    train_pairs = [p for i, p in enumerate(sub.pairs) if i != test_idx]
    train_ids = [pid for i, pid in enumerate(sub.ids) if i != test_idx]
    train_data = make_dataset(train_pairs, sub.dim, train_ids)
    rule_used = BandwidthRule(min(rule.neighbors, len(train_data)), rule.scale)
    model = fit_local_map(
        test_src, train_data, family, rule_used, replace(train_cfg, seed=seed)
    )
    pred, _ = predict([model], test_src, train_cfg.sinkhorn)
    bary = free_support_barycenter(
        train_data.targets, k, train_cfg.sinkhorn, max_outer=barycenter_outer
    )
    frag = r2w(test_tgt, pred, bary, train_cfg.sinkhorn, pair_id=sub.ids[test_idx])
    return frag, test_src, pred, test_tgt


def run_regime(
    d: int,
    n: int,
    k: int,
    reps: int,
    gen: GmmGenConfig,
    rule: BandwidthRule,
    train_cfg: TrainConfig,
    family: str = "affine",
    master: RegressionDataset | None = None,
    rep_seed0: int | None = None,
    barycenter_outer: int = 10,
) -> EvalReport:
    """Repeatedly subsample, hold out one pair, fit at the held-out source,
    and score the prediction. Failed repetitions are recorded, not dropped.

    The reported r2w is the mean over repetitions.
    """
    if gen.dim != d:
        gen = replace(gen, dim=d)
    if master is None:
        master = gen_gmm_pairs(gen)
    if rep_seed0 is None:
        rep_seed0 = gen.seed + _REP_SEED_OFFSET

    per_pair, failures, seeds = [], [], []
    for rep in range(reps):
        seed = rep_seed0 + rep
        seeds.append(seed)
        try:
            frag, _, _, _ = run_single_repetition(
                master, n, k, seed, rule, train_cfg,
                family=family, barycenter_outer=barycenter_outer,
            )
            per_pair.append(frag)
        except (SupportError, TrainingError, DegenerateBaselineError) as e:
            failures.append(f"rep {rep} (seed {seed}): {type(e).__name__}: {e}")
    if not per_pair:
        raise SupportError(
            "every repetition failed: " + "; ".join(failures)
        )
    return _aggregate(per_pair, failures, d, n, k, reps, seeds)


def write_regime_csv(reports, path) -> None:
    """One row per regime, columns matching the pinned header exactly."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in reports:
            writer.writerow(
                [r.dim, r.n, r.k, r.reps, r.abs_test_error, r.abs_err_std, r.r2w]
            )

"""Fit local transport maps by Adam on a kernel-weighted entropic loss.

The objective for a reference measure is the weighted mean of debiased
Sinkhorn losses between pushed sources and their targets, with weights from a
kernel on transport distances to the reference. Pairs whose weight falls
below ``weight_floor`` times the largest weight are dropped; inside every
mini-batch the surviving weights are renormalized to mean one, which makes
the parameter trajectory invariant to rescaling all weights by a constant.

Gradients flow through the pushforward (and the set encoder for the
displacement family) and through the unrolled Sinkhorn iterations.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import SupportError, TrainingError, ValidationError
from .kernel import BandwidthRule, KernelSpec, kernel_weight, select_bandwidth
from .measures import EmpiricalMeasure, RegressionDataset, measure_from_json, measure_to_json
from .maps import (
    TransportMap,
    canonical_order,
    identity_affine,
    init_displacement,
    leaves_from_params,
    map_from_dict,
    map_params,
    map_to_dict,
    map_variant,
    push_torch_batch,
    pushforward,
    replace_params,
)
from .ot import SinkhornConfig, _ot_dual_unrolled, sinkhorn_loss_batch, w2_distance

MODEL_SCHEMA_VERSION = 1

MAP_FAMILIES = ("affine", "displacement")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 200
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    weight_floor: float = 1e-3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    enc_width: int = 64
    ctx_width: int = 32
    head_width: int = 64

    def __post_init__(self):
        if not (self.learning_rate > 0):
            raise ValidationError("learning_rate must be positive")
        if not (0 <= self.weight_floor < 1):
            raise ValidationError("need 0 <= weight_floor < 1")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be >= 1")


@dataclass(frozen=True)
class TrainedLocalModel:
    reference: EmpiricalMeasure
    map: TransportMap
    kernel: KernelSpec
    included_pair_ids: tuple
    loss_history: tuple
    config: TrainConfig

    def __post_init__(self):
        if not all(np.isfinite(v) for v in self.loss_history):
            raise ValidationError("loss history contains non-finite values")
        if self.reference.dim != self.map.dim:
            raise ValidationError("reference dimension does not match map")


# --- Adam -------------------------------------------------------------------

@dataclass
class AdamState:
    step: int
    m: dict
    v: dict


def adam_init(params: dict) -> AdamState:
    return AdamState(
        step=0,
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
    )


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update; returns new params and state."""
    t = state.step + 1
    new_params, m_new, v_new = {}, {}, {}
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ValidationError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m = cfg.beta1 * state.m[key] + (1 - cfg.beta1) * g
        v = cfg.beta2 * state.v[key] + (1 - cfg.beta2) * g * g
        m_hat = m / (1 - cfg.beta1 ** t)
        v_hat = v / (1 - cfg.beta2 ** t)
        new_params[key] = p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        m_new[key] = m
        v_new[key] = v
    return new_params, AdamState(step=t, m=m_new, v=v_new)


# --- loss -------------------------------------------------------------------

class _PairBatch:
    """Same-shape pairs stacked for batched loss evaluation.

    The target self-terms of the debiased loss carry no parameter gradient,
    so they are precomputed once here.
    """

    def __init__(self, pairs, scfg: SinkhornConfig):
        self.x = torch.stack([torch.tensor(s.points, dtype=torch.float64) for s, _ in pairs])
        self.wa = torch.stack([torch.tensor(s.weights, dtype=torch.float64) for s, _ in pairs])
        self.y = torch.stack([torch.tensor(t.points, dtype=torch.float64) for _, t in pairs])
        self.wb = torch.stack([torch.tensor(t.weights, dtype=torch.float64) for _, t in pairs])
        self.orders = torch.stack(
            [torch.tensor(canonical_order(s.points, s.weights)) for s, _ in pairs]
        )
        if scfg.debiased:
            with torch.no_grad():
                self.bb = _ot_dual_unrolled(
                    self.y, self.wb, self.y, self.wb, scfg.epsilon, scfg.unroll_iters
                )
        else:
            self.bb = None

    def take(self, rows: torch.Tensor) -> "_PairBatch":
        sub = _PairBatch.__new__(_PairBatch)
        sub.x = self.x[rows]
        sub.wa = self.wa[rows]
        sub.y = self.y[rows]
        sub.wb = self.wb[rows]
        sub.orders = self.orders[rows]
        sub.bb = None if self.bb is None else self.bb[rows]
        return sub


class _PairBank:
    """Training pairs stacked per support shape, sliceable by pair index."""

    def __init__(self, pairs, scfg: SinkhornConfig):
        shapes: dict = {}
        for i, (src, tgt) in enumerate(pairs):
            shapes.setdefault((src.size, tgt.size), []).append(i)
        self.group_of = np.zeros(len(pairs), dtype=int)
        self.row_of = np.zeros(len(pairs), dtype=int)
        self.batches = []
        for gid, idx in enumerate(shapes.values()):
            for row, i in enumerate(idx):
                self.group_of[i] = gid
                self.row_of[i] = row
            self.batches.append(_PairBatch([pairs[i] for i in idx], scfg))

    def gather(self, sel: np.ndarray):
        """Pieces (positions-within-sel, stacked batch) covering the selection."""
        sel = np.asarray(sel)
        pieces = []
        for gid, batch in enumerate(self.batches):
            pos = np.flatnonzero(self.group_of[sel] == gid)
            if pos.size == 0:
                continue
            rows = torch.tensor(self.row_of[sel[pos]])
            pieces.append((pos, batch.take(rows)))
        return pieces


def _grouped_loss_torch(variant, leaves, pieces, weights, scfg):
    weights = torch.tensor(np.asarray(weights, dtype=np.float64))
    total = torch.zeros((), dtype=torch.float64)
    for pos, batch in pieces:
        pushed = push_torch_batch(variant, leaves, batch.x, batch.wa, batch.orders)
        losses = sinkhorn_loss_batch(pushed, batch.wa, batch.y, batch.wb, scfg, bb_values=batch.bb)
        total = total + (weights[pos] * losses).sum()
    return total / weights.shape[0]


def weighted_loss(m: TransportMap, pairs, weights, sinkhorn: SinkhornConfig) -> float:
    """(1/n) sum_i w_i * S(push(mu_i), nu_i) over the given pairs."""
    pairs = list(pairs)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(pairs),):
        raise ValidationError("weights length must match pair count")
    if np.any(weights < 0):
        raise ValidationError("weights must be nonnegative")
    if not pairs:
        return 0.0
    bank = _PairBank(pairs, sinkhorn)
    pieces = bank.gather(np.arange(len(pairs)))
    with torch.no_grad():
        value = _grouped_loss_torch(
            map_variant(m), leaves_from_params(map_params(m)), pieces, weights, sinkhorn
        )
    return float(value)


def _loss_and_grads(variant, params, groups, weights, scfg):
    leaves = {k: torch.tensor(v, dtype=torch.float64, requires_grad=True)
              for k, v in params.items()}
    value = _grouped_loss_torch(variant, leaves, groups, weights, scfg)
    value.backward()
    grads = {k: leaf.grad.numpy().copy() for k, leaf in leaves.items()}
    return float(value.detach()), grads


# --- fitting ----------------------------------------------------------------

def _init_map(family: str, dim: int, cfg: TrainConfig) -> TransportMap:
    if family == "affine":
        return identity_affine(dim)
    if family == "displacement":
        return init_displacement(
            dim, cfg.enc_width, cfg.ctx_width, cfg.head_width, seed=cfg.seed
        )
    raise ValidationError(f"unknown map family {family!r}; expected one of {MAP_FAMILIES}")


def fit_local_map(
    reference: EmpiricalMeasure,
    data: RegressionDataset,
    family: str,
    rule: BandwidthRule,
    cfg: TrainConfig,
    kernel_family: str = "gaussian",
) -> TrainedLocalModel:
    """Train one local map centered at the reference measure.

    Transport distances from the reference to every training source set the
    bandwidth (k-th nearest neighbor rule) and the kernel weights; training
    runs Adam over mini-batches of the surviving pairs.
    """
    if len(data) == 0:
        raise ValidationError("training dataset is empty")
    if rule.neighbors > len(data):
        raise ValidationError(
            f"bandwidth rule needs {rule.neighbors} neighbors but dataset has {len(data)} pairs"
        )
    dists = np.array(
        [w2_distance(reference, src, cfg.sinkhorn) for src in data.sources]
    )
    h = select_bandwidth(dists, rule)
    spec = KernelSpec(kernel_family, h, data.dim)
    weights = np.array([kernel_weight(d, spec) for d in dists])
    w_max = float(weights.max())
    if w_max <= 0:
        raise SupportError(
            f"all kernel weights vanished at bandwidth {h:.6g} "
            f"(nearest source at distance {dists.min():.6g}); increase the "
            "bandwidth scale or neighbor count"
        )
    keep = weights >= cfg.weight_floor * w_max
    if not np.any(keep):
        raise SupportError(
            f"no pairs survive the weight floor at bandwidth {h:.6g} "
            f"(nearest source at distance {dists.min():.6g}); increase the "
            "bandwidth scale or neighbor count"
        )
    kept_idx = np.flatnonzero(keep)
    kept_pairs = [data.pairs[i] for i in kept_idx]
    kept_ids = tuple(data.ids[i] for i in kept_idx)
    kept_weights = weights[kept_idx]

    m0 = _init_map(family, data.dim, cfg)
    variant = map_variant(m0)
    params = map_params(m0)
    state = adam_init(params)
    bank = _PairBank(kept_pairs, cfg.sinkhorn)

    rng = np.random.default_rng(cfg.seed)
    n_kept = len(kept_pairs)
    full_batch = n_kept <= cfg.batch_size
    loss_history = []
    for epoch in range(cfg.epochs):
        order = np.arange(n_kept) if full_batch else rng.permutation(n_kept)
        epoch_losses = []
        for start in range(0, n_kept, cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            batch_w = kept_weights[sel]
            batch_w = batch_w / batch_w.mean()
            value, grads = _loss_and_grads(
                variant, params, bank.gather(sel), batch_w, cfg.sinkhorn
            )
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            params, state = adam_step(params, grads, state, cfg)
            epoch_losses.append(value)
        loss_history.append(float(np.mean(epoch_losses)))

    return TrainedLocalModel(
        reference=reference,
        map=replace_params(m0, params),
        kernel=spec,
        included_pair_ids=kept_ids,
        loss_history=tuple(loss_history),
        config=cfg,
    )


def predict(models, test_source: EmpiricalMeasure, sinkhorn: SinkhornConfig):
    """Push the test source through the model with the nearest reference.

    Returns the predicted measure and the index of the chosen model;
    ties resolve to the lowest index.
    """
    models = list(models)
    if not models:
        raise ValidationError("need at least one trained model")
    dists = [w2_distance(m.reference, test_source, sinkhorn) for m in models]
    chosen = int(np.argmin(dists))
    return pushforward(models[chosen].map, test_source), chosen


def select_references(data: RegressionDataset, count: int, sinkhorn: SinkhornConfig) -> list:
    """Greedy farthest-point traversal over training sources in W2.

    Starts at pair 0; each step adds the source farthest from the chosen set.
    Returns indices into the dataset.
    """
    if not (1 <= count <= len(data)):
        raise ValidationError(f"reference count must be in [1, {len(data)}]")
    chosen = [0]
    min_dist = np.array(
        [w2_distance(data.sources[0], src, sinkhorn) for src in data.sources]
    )
    while len(chosen) < count:
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        new_d = np.array(
            [w2_distance(data.sources[nxt], src, sinkhorn) for src in data.sources]
        )
        min_dist = np.minimum(min_dist, new_d)
    return chosen


# --- model persistence ------------------------------------------------------

def model_to_dict(model: TrainedLocalModel) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "kind": "trained-local-model",
        "reference": measure_to_json(model.reference),
        "map": map_to_dict(model.map),
        "kernel": {
            "family": model.kernel.family,
            "bandwidth": model.kernel.bandwidth,
            "dim": model.kernel.dim,
        },
        "included_pair_ids": list(model.included_pair_ids),
        "loss_history": list(model.loss_history),
        "config": asdict(model.config),
    }


def model_from_dict(obj: dict) -> TrainedLocalModel:
    if obj.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ValidationError(f"unsupported model schema version {obj.get('schema_version')!r}")
    cfg_obj = dict(obj["config"])
    cfg_obj["sinkhorn"] = SinkhornConfig(**cfg_obj["sinkhorn"])
    return TrainedLocalModel(
        reference=measure_from_json(obj["reference"]),
        map=map_from_dict(obj["map"]),
        kernel=KernelSpec(**obj["kernel"]),
        included_pair_ids=tuple(obj["included_pair_ids"]),
        loss_history=tuple(obj["loss_history"]),
        config=TrainConfig(**cfg_obj),
    )


def save_model(model: TrainedLocalModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n")


def load_model(path) -> TrainedLocalModel:
    return model_from_dict(json.loads(Path(path).read_text()))

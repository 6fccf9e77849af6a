"""Local transport-map families: affine maps and set-conditioned displacement maps.

The displacement variant follows the permutation-invariant encoder/decoder
pattern: a pointwise MLP encoder, weighted mean pooling over the support, a
linear decoder producing a context vector, and a displacement head mapping
``[point; context]`` to a per-point correction added to the input point.

Pooling sums in a canonical support order (points sorted lexicographically,
weights as a tiebreaker), so the context vector is bit-identical under any
permutation of the support.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Union

import numpy as np
import torch

from .errors import DimensionError, ValidationError
from .measures import EmpiricalMeasure

MAP_SCHEMA_VERSION = 1


def _arr(x, shape_hint: str) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{shape_hint} contains NaN or Inf")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class AffineMap:
    """x -> matrix @ x + shift."""

    shift: np.ndarray
    matrix: np.ndarray

    def __post_init__(self):
        shift = _arr(self.shift, "shift")
        matrix = _arr(self.matrix, "matrix")
        if shift.ndim != 1 or matrix.ndim != 2:
            raise ValidationError("shift must be a vector and matrix a square matrix")
        d = shift.shape[0]
        if matrix.shape != (d, d):
            raise ValidationError(f"matrix shape {matrix.shape} != ({d}, {d})")
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "matrix", matrix)

    @property
    def dim(self) -> int:
        return self.shift.shape[0]


@dataclass(frozen=True)
class DeepSetsParams:
    """Weights of the set encoder, context decoder, and displacement head."""

    enc_w1: np.ndarray
    enc_b1: np.ndarray
    enc_w2: np.ndarray
    enc_b2: np.ndarray
    dec_w: np.ndarray
    dec_b: np.ndarray
    head_w1: np.ndarray
    head_b1: np.ndarray
    head_w2: np.ndarray
    head_b2: np.ndarray
    init_seed: int | None = None

    def __post_init__(self):
        for f in fields(self):
            if f.name == "init_seed":
                continue
            object.__setattr__(self, f.name, _arr(getattr(self, f.name), f.name))
        d = self.enc_w1.shape[1]
        enc = self.enc_w1.shape[0]
        ctx = self.dec_w.shape[0]
        head = self.head_w1.shape[0]
        expected = {
            "enc_w1": (enc, d),
            "enc_b1": (enc,),
            "enc_w2": (enc, enc),
            "enc_b2": (enc,),
            "dec_w": (ctx, enc),
            "dec_b": (ctx,),
            "head_w1": (head, d + ctx),
            "head_b1": (head,),
            "head_w2": (d, head),
            "head_b2": (d,),
        }
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValidationError(f"{name} shape {got} != {shape}")

    @property
    def dim(self) -> int:
        return self.enc_w1.shape[1]

    @property
    def enc_width(self) -> int:
        return self.enc_w1.shape[0]

    @property
    def ctx_width(self) -> int:
        return self.dec_w.shape[0]

    @property
    def head_width(self) -> int:
        return self.head_w1.shape[0]


TransportMap = Union[AffineMap, DeepSetsParams]

PARAM_FIELDS = {
    "affine": ("shift", "matrix"),
    "displacement": (
        "enc_w1", "enc_b1", "enc_w2", "enc_b2", "dec_w", "dec_b",
        "head_w1", "head_b1", "head_w2", "head_b2",
    ),
}


def map_variant(m: TransportMap) -> str:
    if isinstance(m, AffineMap):
        return "affine"
    if isinstance(m, DeepSetsParams):
        return "displacement"
    raise ValidationError(f"not a transport map: {type(m).__name__}")


def map_dim(m: TransportMap) -> int:
    return m.dim


def map_params(m: TransportMap) -> dict:
    """Trainable arrays keyed by field name (copies, safe to mutate)."""
    return {name: np.array(getattr(m, name)) for name in PARAM_FIELDS[map_variant(m)]}


def replace_params(m: TransportMap, params: dict) -> TransportMap:
    variant = map_variant(m)
    kwargs = {name: params[name] for name in PARAM_FIELDS[variant]}
    if variant == "displacement":
        kwargs["init_seed"] = m.init_seed
    return type(m)(**kwargs)


def identity_affine(dim: int) -> AffineMap:
    return AffineMap(np.zeros(dim), np.eye(dim))


def init_displacement(
    dim: int,
    enc_width: int = 64,
    ctx_width: int = 32,
    head_width: int = 64,
    seed: int = 0,
) -> DeepSetsParams:
    """Seeded fan-in-uniform init; the head's output layer starts at zero so
    the map begins as the identity."""
    rng = np.random.default_rng(seed)

    def layer(out_w, in_w):
        bound = 1.0 / np.sqrt(in_w)
        return (
            rng.uniform(-bound, bound, size=(out_w, in_w)),
            rng.uniform(-bound, bound, size=out_w),
        )

    enc_w1, enc_b1 = layer(enc_width, dim)
    enc_w2, enc_b2 = layer(enc_width, enc_width)
    dec_w, dec_b = layer(ctx_width, enc_width)
    head_w1, head_b1 = layer(head_width, dim + ctx_width)
    return DeepSetsParams(
        enc_w1, enc_b1, enc_w2, enc_b2, dec_w, dec_b,
        head_w1, head_b1,
        np.zeros((dim, head_width)), np.zeros(dim),
        init_seed=seed,
    )


# --- forward evaluation (single torch implementation, numpy wrappers) -------

def canonical_order(points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Support order that is invariant to permutations: lexicographic by
    coordinates, weights as tiebreaker."""
    keys = (weights,) + tuple(points[:, j] for j in reversed(range(points.shape[1])))
    return np.lexsort(keys)


def _t(arr) -> torch.Tensor:
    return torch.tensor(np.asarray(arr), dtype=torch.float64)


def _relu(x):
    return torch.clamp(x, min=0.0)


def encode_torch_batch(leaves: dict, points: torch.Tensor, weights: torch.Tensor, orders: torch.Tensor):
    """Context vectors for a batch: points (B, k, d), weights (B, k), orders (B, k)."""
    bidx = torch.arange(points.shape[0])[:, None]
    xs = points[bidx, orders]
    ws = weights[bidx, orders]
    h = _relu(xs @ leaves["enc_w1"].T + leaves["enc_b1"])
    h = _relu(h @ leaves["enc_w2"].T + leaves["enc_b2"])
    pooled = torch.einsum("bk,bke->be", ws, h)
    return pooled @ leaves["dec_w"].T + leaves["dec_b"]


def push_torch_batch(
    variant: str,
    leaves: dict,
    points: torch.Tensor,
    weights: torch.Tensor,
    orders: torch.Tensor | None = None,
) -> torch.Tensor:
    """Map a batch of clouds (B, k, d) pointwise; output keeps the input order."""
    if variant == "affine":
        return points @ leaves["matrix"].T + leaves["shift"]
    if orders is None:
        raise ValidationError("displacement push needs canonical support orders")
    z = encode_torch_batch(leaves, points, weights, orders)
    k = points.shape[1]
    inp = torch.cat([points, z[:, None, :].expand(-1, k, -1)], dim=2)
    h = _relu(inp @ leaves["head_w1"].T + leaves["head_b1"])
    return points + h @ leaves["head_w2"].T + leaves["head_b2"]


def leaves_from_params(params: dict) -> dict:
    return {k: _t(v) for k, v in params.items()}


def deepsets_encode(source: EmpiricalMeasure, params: DeepSetsParams) -> np.ndarray:
    """Context vector of a measure; identical for any permutation of the support."""
    if source.dim != params.dim:
        raise DimensionError(f"measure dim {source.dim} != encoder dim {params.dim}")
    order = canonical_order(source.points, source.weights)
    with torch.no_grad():
        z = encode_torch_batch(
            leaves_from_params(map_params(params)),
            _t(source.points)[None],
            _t(source.weights)[None],
            torch.tensor(order)[None],
        )
    return z[0].numpy()


def apply_map(m: TransportMap, x: np.ndarray, z: np.ndarray | None = None) -> np.ndarray:
    """Evaluate the map at a single point; displacement maps need the context z."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (map_dim(m),):
        raise DimensionError(f"point shape {x.shape} != ({map_dim(m)},)")
    if isinstance(m, AffineMap):
        return m.matrix @ x + m.shift
    if z is None:
        raise ValidationError("displacement map needs a context vector z")
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (m.ctx_width,):
        raise DimensionError(f"context shape {z.shape} != ({m.ctx_width},)")
    inp = np.concatenate([x, z])
    h = np.maximum(m.head_w1 @ inp + m.head_b1, 0.0)
    return x + m.head_w2 @ h + m.head_b2


def pushforward(m: TransportMap, source: EmpiricalMeasure) -> EmpiricalMeasure:
    """Map every support point; weights are carried over unchanged.

    Displacement maps compute their context from the source itself.
    """
    if source.dim != map_dim(m):
        raise DimensionError(f"measure dim {source.dim} != map dim {map_dim(m)}")
    variant = map_variant(m)
    orders = None
    if variant == "displacement":
        orders = torch.tensor(canonical_order(source.points, source.weights))[None]
    with torch.no_grad():
        pushed = push_torch_batch(
            variant,
            leaves_from_params(map_params(m)),
            _t(source.points)[None],
            _t(source.weights)[None],
            orders,
        )
    return EmpiricalMeasure(pushed[0].numpy(), source.weights)


# --- serialization ----------------------------------------------------------

def map_to_dict(m: TransportMap) -> dict:
    variant = map_variant(m)
    out = {
        "schema_version": MAP_SCHEMA_VERSION,
        "variant": variant,
        "dim": map_dim(m),
        "params": {name: getattr(m, name).tolist() for name in PARAM_FIELDS[variant]},
    }
    if variant == "displacement":
        out["sizes"] = {
            "enc_width": m.enc_width,
            "ctx_width": m.ctx_width,
            "head_width": m.head_width,
        }
        out["init_seed"] = m.init_seed
    return out


def map_from_dict(obj: dict) -> TransportMap:
    if obj.get("schema_version") != MAP_SCHEMA_VERSION:
        raise ValidationError(f"unsupported map schema version {obj.get('schema_version')!r}")
    variant = obj.get("variant")
    if variant not in PARAM_FIELDS:
        raise ValidationError(f"unknown map variant {variant!r}")
    params = {name: np.asarray(obj["params"][name]) for name in PARAM_FIELDS[variant]}
    if variant == "affine":
        return AffineMap(**params)
    return DeepSetsParams(**params, init_seed=obj.get("init_seed"))


def save_map(m: TransportMap, path) -> None:
    Path(path).write_text(json.dumps(map_to_dict(m)) + "\n")


def load_map(path) -> TransportMap:
    return map_from_dict(json.loads(Path(path).read_text()))

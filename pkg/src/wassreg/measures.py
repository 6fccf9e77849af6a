"""Weighted point-cloud measures, paired datasets, and file persistence.

Two on-disk formats, both versioned (loaders reject unknown versions):

* ``.wrd`` -- little-endian binary: 4-byte magic ``WRD1``, ``uint32``
  schema version, ``uint32`` ambient dimension, ``uint64`` pair count,
  then per pair a ``uint64`` id followed by the source and target blocks.
  Each block is a ``uint64`` point count, row-major ``float64`` points,
  and ``float64`` weights.
* ``.json`` -- the same schema spelled out as arrays, one object per pair.

Binary round-trips are bit-exact; JSON round-trips are exact as well
because floats are written with full shortest-round-trip precision.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DatasetFormatError, DimensionError, ValidationError

MAGIC = b"WRD1"
SCHEMA_VERSION = 1

WEIGHT_SUM_TOL = 1e-9


def _as_float_matrix(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(
            f"points must be a nonempty k x d matrix, got shape {arr.shape}"
        )
    return np.ascontiguousarray(arr)


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted point cloud in R^d; weights live on the probability simplex."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = _as_float_matrix(self.points)
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        if w.ndim != 1 or w.shape[0] != pts.shape[0]:
            raise ValidationError(
                f"weights shape {w.shape} does not match {pts.shape[0]} points"
            )
        if not np.all(np.isfinite(pts)):
            raise ValidationError("points contain NaN or Inf")
        if not np.all(np.isfinite(w)):
            raise ValidationError("weights contain NaN or Inf")
        if np.any(w < 0):
            raise ValidationError("weights must be nonnegative")
        s = float(w.sum())
        if abs(s - 1.0) > WEIGHT_SUM_TOL:
            raise ValidationError(f"weights sum to {s!r}, expected 1 within {WEIGHT_SUM_TOL}")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def is_uniform(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.weights - 1.0 / self.size) <= tol))


def make_uniform_measure(points) -> EmpiricalMeasure:
    """Build a uniformly weighted measure from a k x d point matrix."""
    pts = _as_float_matrix(points)
    k = pts.shape[0]
    return EmpiricalMeasure(pts, np.full(k, 1.0 / k))


@dataclass(frozen=True)
class RegressionDataset:
    """Ordered (source, target) measure pairs sharing one ambient dimension."""

    pairs: tuple
    dim: int
    ids: tuple

    def __post_init__(self):
        pairs = tuple((src, tgt) for src, tgt in self.pairs)
        ids = tuple(int(i) for i in self.ids)
        if int(self.dim) < 1:
            raise ValidationError("dataset dimension must be >= 1")
        if len(ids) != len(pairs):
            raise ValidationError("ids length does not match pair count")
        if len(set(ids)) != len(ids):
            raise ValidationError("pair ids must be unique")
        for src, tgt in pairs:
            if src.dim != self.dim or tgt.dim != self.dim:
                raise ValidationError(
                    f"pair dimension ({src.dim}, {tgt.dim}) != dataset dimension {self.dim}"
                )
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def sources(self) -> tuple:
        return tuple(src for src, _ in self.pairs)

    @property
    def targets(self) -> tuple:
        return tuple(tgt for _, tgt in self.pairs)


def make_dataset(pairs: Iterable, dim: int, ids: Sequence[int] | None = None) -> RegressionDataset:
    pairs = tuple(pairs)
    if ids is None:
        ids = tuple(range(len(pairs)))
    return RegressionDataset(pairs, dim, tuple(ids))


# --- JSON helpers -----------------------------------------------------------

def measure_to_json(m: EmpiricalMeasure) -> dict:
    return {"points": m.points.tolist(), "weights": m.weights.tolist()}


def measure_from_json(obj: dict) -> EmpiricalMeasure:
    try:
        return EmpiricalMeasure(np.asarray(obj["points"]), np.asarray(obj["weights"]))
    except KeyError as e:
        raise DatasetFormatError(f"measure object missing key {e}") from e


def save_measure(m: EmpiricalMeasure, path) -> None:
    Path(path).write_text(json.dumps(measure_to_json(m)) + "\n")


def load_measure(path) -> EmpiricalMeasure:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    return measure_from_json(obj)


# --- dataset persistence ----------------------------------------------------

def _infer_format(path, format: str | None) -> str:
    if format is not None:
        if format not in ("json", "binary"):
            raise ValidationError(f"unknown dataset format {format!r}")
        return format
    suffix = Path(path).suffix.lower()
    if suffix == ".json":
        return "json"
    if suffix == ".wrd":
        return "binary"
    raise ValidationError(f"cannot infer format from suffix {suffix!r}; pass format=")


def save_dataset(dataset: RegressionDataset, path, format: str | None = None) -> None:
    fmt = _infer_format(path, format)
    if fmt == "json":
        obj = {
            "format": "wassreg-dataset",
            "schema_version": SCHEMA_VERSION,
            "dim": dataset.dim,
            "pairs": [
                {
                    "id": pid,
                    "source": measure_to_json(src),
                    "target": measure_to_json(tgt),
                }
                for pid, (src, tgt) in zip(dataset.ids, dataset.pairs)
            ],
        }
        Path(path).write_text(json.dumps(obj) + "\n")
        return

    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<II", SCHEMA_VERSION, dataset.dim)
    buf += struct.pack("<Q", len(dataset))
    for pid, (src, tgt) in zip(dataset.ids, dataset.pairs):
        buf += struct.pack("<Q", pid)
        for m in (src, tgt):
            buf += struct.pack("<Q", m.size)
            buf += m.points.astype("<f8").tobytes()
            buf += m.weights.astype("<f8").tobytes()
    Path(path).write_bytes(bytes(buf))


class _BinReader:
    def __init__(self, data: bytes, name: str):
        self.data = data
        self.off = 0
        self.name = name

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise DatasetFormatError(
                f"{self.name}: truncated file at byte offset {self.off} (needed {n} more bytes)"
            )
        chunk = self.data[self.off : self.off + n]
        self.off += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def load_dataset(path, format: str | None = None) -> RegressionDataset:
    fmt = _infer_format(path, format)
    if fmt == "json":
        text = Path(path).read_text()
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(
                f"{path}: line {e.lineno}, column {e.colno}: {e.msg}"
            ) from e
        if not isinstance(obj, dict) or obj.get("format") != "wassreg-dataset":
            raise DatasetFormatError(f"{path}: not a wassreg dataset file")
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise DatasetFormatError(
                f"{path}: unsupported schema version {obj.get('schema_version')!r}"
            )
        dim = obj["dim"]
        pairs, ids = [], []
        for entry in obj["pairs"]:
            ids.append(entry["id"])
            pairs.append((measure_from_json(entry["source"]), measure_from_json(entry["target"])))
        return RegressionDataset(tuple(pairs), dim, tuple(ids))

    raw = Path(path).read_bytes()
    r = _BinReader(raw, str(path))
    if r.take(4) != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic at byte offset 0")
    version = r.u32()
    if version != SCHEMA_VERSION:
        raise DatasetFormatError(f"{path}: unsupported schema version {version}")
    dim = r.u32()
    n = r.u64()
    pairs, ids = [], []
    for _ in range(n):
        ids.append(r.u64())
        sides = []
        for _ in range(2):
            k = r.u64()
            pts = r.f64_array(k * dim).reshape(k, dim) if k else np.zeros((0, dim))
            w = r.f64_array(k)
            sides.append(EmpiricalMeasure(pts, w))
        pairs.append((sides[0], sides[1]))
    if r.off != len(raw):
        raise DatasetFormatError(
            f"{path}: {len(raw) - r.off} trailing bytes at offset {r.off}"
        )
    return RegressionDataset(tuple(pairs), dim, tuple(ids))

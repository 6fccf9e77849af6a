"""Synthetic benchmark generators: rotated Gaussians and sheared mixtures.

Randomness comes from PCG64 generators seeded through a SeedSequence spawned
once per pair, so generation is reproducible, order-independent across
pairs, and parallelizable. Within one pair the draw order is fixed and
documented on each generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import ValidationError
from .measures import RegressionDataset, make_dataset, make_uniform_measure

# stream tags so pilot draws never collide with per-pair draws
_PAIR_STREAM = 1
_PILOT_STREAM = 2

PILOT_PAIRS = 64


@dataclass(frozen=True)
class GaussianGenConfig:
    """Unit-covariance Gaussian clouds pushed through a mean-dependent rotation.

    Per pair: mean m uniform on the box, rotation angle 2*||m||, translation
    0.5*m, and one shared Gaussian noise draw (std ``noise_sigma``) added to
    every target point. Ambient dimension is fixed at 2.
    """

    n: int
    k: int
    noise_sigma: float = 0.0
    seed: int = 0
    mean_box: tuple = (-3.0, 3.0)

    def __post_init__(self):
        _check_common(self.n, self.k, self.mean_box)
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be nonnegative")


@dataclass(frozen=True)
class GmmGenConfig:
    """Gaussian-mixture clouds pushed through a radius-dependent rotation/shear blend.

    Per pair the draw order is: Dirichlet weights, component means, component
    indices, source points, then target noise. ``r_thresh=None`` resolves to
    the median cloud radius over a deterministic pilot sample.
    """

    n: int
    k: int
    components: int = 3
    mean_box: tuple = (-3.0, 3.0)
    component_sigma: float = 0.5
    alpha_rot: float = 0.15
    kappa0: float = 0.1
    kappa1: float = 0.03
    r_thresh: float | None = None
    gamma: float = 0.5
    beta: float = 1.25
    tau: float = 0.05
    seed: int = 0
    dim: int = 2

    def __post_init__(self):
        _check_common(self.n, self.k, self.mean_box)
        if self.components < 1:
            raise ValidationError("components must be >= 1")
        if not (self.gamma > 0):
            raise ValidationError("gamma must be positive")
        if self.tau < 0 or self.component_sigma < 0:
            raise ValidationError("noise scales must be nonnegative")
        if self.dim < 2:
            raise ValidationError("dim must be >= 2")

    @classmethod
    def from_dict(cls, obj: dict) -> "GmmGenConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        if "mean_box" in obj:
            obj = dict(obj, mean_box=tuple(obj["mean_box"]))
        return cls(**obj)


def _check_common(n, k, mean_box):
    if n < 1 or k < 1:
        raise ValidationError("n and k must be >= 1")
    lo, hi = mean_box
    if not (lo < hi):
        raise ValidationError("mean_box must satisfy lo < hi")


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def shear_matrix(strength: float) -> np.ndarray:
    return np.array([[1.0, strength], [0.0, 1.0]])


def gaussian_truth_map(m: np.ndarray):
    """(rotation matrix, translation, angle) of the ground-truth affine map at mean m."""
    theta = 2.0 * float(np.linalg.norm(m))
    return rotation_matrix(theta), 0.5 * np.asarray(m, dtype=np.float64), theta


def gmm_blend_matrix(r: float, cfg: GmmGenConfig) -> np.ndarray:
    """Logistic blend of a rotation and a shear, acting on the first two
    coordinates; identity on any remaining coordinates."""
    theta = cfg.alpha_rot * r
    strength = cfg.kappa0 + cfg.kappa1 * r
    if cfg.r_thresh is None:
        raise ValidationError("r_thresh unresolved; call resolve_gmm_config first")
    lam = 1.0 / (1.0 + math.exp(-(cfg.r_thresh - r) / cfg.gamma))
    blend = lam * rotation_matrix(theta) + (1.0 - lam) * shear_matrix(strength)
    out = np.eye(cfg.dim)
    out[:2, :2] = blend
    return out


def gen_gaussian_pairs(cfg: GaussianGenConfig) -> RegressionDataset:
    """Generate the rotated-Gaussian benchmark; fully determined by the seed."""
    children = np.random.SeedSequence((cfg.seed, _PAIR_STREAM)).spawn(cfg.n)
    lo, hi = cfg.mean_box
    pairs = []
    for ss in children:
        rng = np.random.default_rng(ss)
        m = rng.uniform(lo, hi, size=2)
        x = m + rng.standard_normal((cfg.k, 2))
        rot, shift, _ = gaussian_truth_map(m)
        noise = cfg.noise_sigma * rng.standard_normal(2)
        y = x @ rot.T + shift + noise
        pairs.append((make_uniform_measure(x), make_uniform_measure(y)))
    return make_dataset(pairs, 2)


def _gmm_source(rng, cfg: GmmGenConfig):
    lo, hi = cfg.mean_box
    w = rng.dirichlet(np.ones(cfg.components))
    means = rng.uniform(lo, hi, size=(cfg.components, cfg.dim))
    comps = rng.choice(cfg.components, size=cfg.k, p=w)
    x = means[comps] + cfg.component_sigma * rng.standard_normal((cfg.k, cfg.dim))
    return x


def _cloud_radius(x: np.ndarray) -> float:
    return float(np.sqrt((x ** 2).sum(axis=1).mean()))


def resolve_gmm_config(cfg: GmmGenConfig) -> GmmGenConfig:
    """Fill in r_thresh (median pilot radius) if it was left unset."""
    if cfg.r_thresh is not None:
        return cfg
    children = np.random.SeedSequence((cfg.seed, _PILOT_STREAM)).spawn(PILOT_PAIRS)
    radii = [
        _cloud_radius(_gmm_source(np.random.default_rng(ss), cfg)) for ss in children
    ]
    return replace(cfg, r_thresh=float(np.median(radii)))


def gen_gmm_pairs(cfg: GmmGenConfig) -> RegressionDataset:
    """Generate the mixture benchmark; fully determined by the seed."""
    cfg = resolve_gmm_config(cfg)
    children = np.random.SeedSequence((cfg.seed, _PAIR_STREAM)).spawn(cfg.n)
    pairs = []
    for ss in children:
        rng = np.random.default_rng(ss)
        x = _gmm_source(rng, cfg)
        mbar = x.mean(axis=0)
        r = _cloud_radius(x)
        blend = gmm_blend_matrix(r, cfg)
        noise = cfg.tau * rng.standard_normal((cfg.k, cfg.dim))
        y = x @ blend.T + cfg.beta * mbar + noise
        pairs.append((make_uniform_measure(x), make_uniform_measure(y)))
    return make_dataset(pairs, cfg.dim)


def subsample_regime(master: RegressionDataset, n: int, k: int, subset_seed: int) -> RegressionDataset:
    """Deterministically pick n pairs and k support points per measure.

    When source and target have equal support sizes, one index set thins
    both sides, preserving the pointwise pairing the generators create
    (independent thinning would add a spurious resampling floor to every
    transport distance). Unequal sides are thinned independently.
    Selections are sorted, so requesting the full sizes returns the master
    dataset unchanged; original pair ids are preserved.
    """
    if n > len(master) or n < 1:
        raise ValidationError(f"cannot take {n} of {len(master)} pairs")
    rng = np.random.default_rng(np.random.SeedSequence(subset_seed))
    if n == len(master):
        pair_idx = np.arange(len(master))
    else:
        pair_idx = np.sort(rng.choice(len(master), size=n, replace=False))

    def point_idx(size):
        if k > size:
            raise ValidationError(f"cannot take {k} of {size} points")
        if k == size:
            return None
        return np.sort(rng.choice(size, size=k, replace=False))

    def thin(measure, idx):
        if idx is None:
            return measure
        w = measure.weights[idx]
        total = w.sum()
        if total <= 0:
            raise ValidationError("subsampled weights have zero mass")
        return type(measure)(measure.points[idx], w / total)

    pairs = []
    ids = []
    for i in pair_idx:
        src, tgt = master.pairs[i]
        if src.size == tgt.size:
            idx = point_idx(src.size)
            pairs.append((thin(src, idx), thin(tgt, idx)))
        else:
            pairs.append((thin(src, point_idx(src.size)), thin(tgt, point_idx(tgt.size))))
        ids.append(master.ids[i])
    return RegressionDataset(tuple(pairs), master.dim, tuple(ids))

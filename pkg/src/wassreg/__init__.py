"""Local transport-map regression between empirical measures."""

from .measures import (
    EmpiricalMeasure,
    RegressionDataset,
    load_dataset,
    make_dataset,
    make_uniform_measure,
    save_dataset,
)
from .ot import (
    OtResult,
    SinkhornConfig,
    exact_w2_squared,
    free_support_barycenter,
    sinkhorn_divergence,
    sinkhorn_grad_points,
    w2_distance,
)
from .kernel import BandwidthRule, KernelSpec, kernel_weight, select_bandwidth
from .maps import (
    AffineMap,
    DeepSetsParams,
    apply_map,
    deepsets_encode,
    identity_affine,
    init_displacement,
    pushforward,
)
from .train import (
    TrainConfig,
    TrainedLocalModel,
    adam_step,
    fit_local_map,
    predict,
    select_references,
    weighted_loss,
)
from .datagen import (
    GaussianGenConfig,
    GmmGenConfig,
    gen_gaussian_pairs,
    gen_gmm_pairs,
    subsample_regime,
)
from .evaluation import EvalReport, PairEval, abs_test_error, r2w, run_regime

__version__ = "0.1.0"

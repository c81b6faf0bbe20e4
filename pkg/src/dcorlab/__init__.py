"""Distance correlation, partial distance correlation and their gradients."""

__version__ = "0.1.0"

from .core import DCorReport, dcor, dcov2, double_center, fig1_sampler, make_rng, pairwise_distances, pearson
from .exceptions import (
    BadMagicError,
    DcorError,
    DegenerateError,
    DimensionError,
    DumpFormatError,
    InvalidInputError,
    ManifestError,
    OffsetOverlapError,
    SizeError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .grad import (
    GradResult,
    bias_corrected_dcor2_value_grad,
    dcor_value_grad,
    finite_diff_check,
    pdcor_value_grad,
)
from .nn import AttackConfig, BSGConfig, BSGResult, MLPParams, attack, bsg_train, forward, init_mlp
from .pdc import PDCorReport, bias_corrected_dcor2, pdcor, pdcov, project_orthogonal, u_center, u_inner
from .storage import FeatureDump, export_heatmap, read_dump, write_dump
from .experiments import (
    DisentangleWeights,
    HeatmapResult,
    PairTrainConfig,
    disentangle_losses,
    layer_similarity_heatmap,
    residual_independence_loss,
    stochastic_dc_estimate,
    stochastic_pdc_estimate,
    train_independent_pair,
    transfer_attack_eval,
)
from .estimators import (
    DistanceCorrelation,
    IndependentPairClassifier,
    MLPClassifier,
    PartialDistanceCorrelation,
)

"""Pseudo-label refinement engine over feature banks.

Clusters global features into pseudo-labels, scores how well each part
feature space agrees with the global neighborhood structure, refines the
labels both ways (smoothing for parts, prediction ensembling for the
global head), and trains a toy model end to end on synthetic banks.
"""

from .agreement import agreement_matrix, cross_agreement
from .cluster import DbscanParams, cluster_centroids, dbscan
from .core import (
    ConfigError,
    CrossAgreement,
    DataFormatError,
    FeatureBank,
    NumericalError,
    PPLRError,
    PseudoLabels,
    RankedLists,
    SoftLabel,
    l2_normalize,
    normalize_bank,
    one_hot,
)
from .evaluate import (
    LabelQuality,
    RetrievalResult,
    average_precision,
    label_quality,
    map_cmc,
)
from .ingest import (
    SynthConfig,
    generate_synthetic_bank,
    load_sample_ids,
    read_feature_bank,
    write_feature_bank,
)
from .neighbors import (
    DistanceMatrix,
    k_reciprocal_jaccard,
    pairwise_sq_euclidean,
    topk_ranked_lists,
)
from .objectives import (
    CameraProxySet,
    ClassifierHead,
    LossWeights,
    aals_loss,
    build_camera_proxies,
    cross_entropy,
    inter_camera_loss,
    softmax_forward,
    softmax_triplet_loss,
    total_loss,
)
from .pipeline import (
    EpochReport,
    PipelineConfig,
    ToyModel,
    clustering_stage,
    initial_model,
    load_model,
    project_bank,
    run,
    save_model,
    training_stage,
)
from .refine import (
    RefinementConfig,
    aals_target,
    aals_targets,
    effective_alpha,
    pglr_target,
    pglr_targets,
    pglr_weights,
)

__version__ = "0.1.0"

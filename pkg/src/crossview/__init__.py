"""Training-free cross-view geo-localization engine.

Pre-extracted patch-feature tensors are aggregated into hierarchical
unit-norm descriptors, the drone and satellite feature manifolds are
aligned via domain-wise PCA plus an orthogonal Procrustes rotation, and
retrieval is exact cosine ranking with standard recall/AP metrics.
"""

from .aggregation import AggregationSpec, aggregate, sweep_alpha
from .alignment import (
    AlignmentModel,
    DomainStats,
    PairingStrategy,
    apply_alignment,
    build_pairs,
    fit_alignment,
    fit_pca,
    fit_procrustes,
    load_model,
    project,
    save_model,
)
from .descriptors import (
    Descriptor,
    DescriptorSet,
    descriptor_set_hash,
    load_descriptor_set,
    save_descriptor_set,
)
from .errors import CrossviewError, DataValidationError, NumericalError
from .evaluation import (
    EvalReport,
    GroundTruth,
    average_precision,
    evaluate,
    ground_truth_from_sets,
    recall_at_k,
    recall_top1pct,
)
from .feature_store import (
    DatasetManifest,
    Domain,
    FeatureMap,
    ManifestEntry,
    load_dataset,
    read_feature_map,
    save_manifest,
    write_feature_map,
)
from .pooling import PooledVector, PoolingKind, PoolingSpec, pool_cls, pool_region
from .retrieval import Heatmap, Hit, RankedResult, search, similarity_heatmap
from .synth import SynthSpec, generate

__version__ = "0.1.0"

__all__ = [
    "AggregationSpec",
    "AlignmentModel",
    "CrossviewError",
    "DataValidationError",
    "DatasetManifest",
    "Descriptor",
    "DescriptorSet",
    "Domain",
    "DomainStats",
    "EvalReport",
    "FeatureMap",
    "GroundTruth",
    "Heatmap",
    "Hit",
    "ManifestEntry",
    "NumericalError",
    "PairingStrategy",
    "PooledVector",
    "PoolingKind",
    "PoolingSpec",
    "RankedResult",
    "SynthSpec",
    "aggregate",
    "apply_alignment",
    "average_precision",
    "build_pairs",
    "descriptor_set_hash",
    "evaluate",
    "fit_alignment",
    "fit_pca",
    "fit_procrustes",
    "generate",
    "ground_truth_from_sets",
    "load_dataset",
    "load_descriptor_set",
    "load_model",
    "pool_cls",
    "pool_region",
    "project",
    "read_feature_map",
    "recall_at_k",
    "recall_top1pct",
    "save_descriptor_set",
    "save_manifest",
    "save_model",
    "search",
    "similarity_heatmap",
    "sweep_alpha",
    "write_feature_map",
]

"""Histology patch relevance filtering and benign/malign classification.

A transfer pipeline in two stages: a relevance SVM trained on relabeled
tissue-class source features decides which sliding-window patches of a tumor
dataset are worth classifying, and a second SVM classifies the surviving
patches, aggregated to image and patient accuracy by majority vote and the
posterior sum rule.
"""

from .data_model import (
    BENIGN_SUBTYPES,
    MAGNIFICATIONS,
    MALIGN_SUBTYPES,
    SOURCE_CLASSES,
    DatasetManifest,
    FilterScenario,
    FoldSpec,
    SampleRecord,
    binary_from_class,
    load_folds,
    make_folds,
    parse_manifest,
    relabel_by_class,
    relabel_source,
    save_folds,
    scenario,
    write_manifest,
)
from .errors import HistofilterError
from .experiment import (
    ExperimentConfig,
    ExperimentReport,
    FoldResult,
    PatchPrediction,
    WinLoss,
    aggregate_image,
    load_experiment_config,
    overall_accuracy,
    patient_score,
    run_experiment,
    win_loss,
)
from .feature_io import (
    FeatureMatrix,
    align_features,
    export_features_csv,
    import_features_csv,
    read_features,
    write_features,
)
from .filterbank import (
    FEATURE_KINDS,
    FilterModel,
    RetentionStats,
    apply_filter,
    retention_stats,
    train_filter,
)
from .imaging import (
    PatchGrid,
    RgbImage,
    compute_grid,
    decode_image,
    extract_patches,
    patch_manifest_from_size,
    patch_records,
    patch_sample_id,
    save_png,
)
from .model_store import load_model, save_model
from .pca import PcaModel, explained_variance_ratio, pca_fit, pca_transform
from .pftas import PFTAS_DIM, otsu_threshold, pftas, pftas_features, tas_histogram
from .report import load_report, save_report
from .svm import (
    GridSearchResult,
    SvmModel,
    grid_search,
    platt_fit,
    rbf_kernel,
    svm_decision,
    svm_predict,
    svm_predict_proba,
    svm_train,
)
from .synth import SynthSpec, TextureClass, default_source_spec, default_target_spec, generate

__version__ = "1.0.0"

__all__ = [
    "BENIGN_SUBTYPES",
    "MAGNIFICATIONS",
    "MALIGN_SUBTYPES",
    "SOURCE_CLASSES",
    "DatasetManifest",
    "FilterScenario",
    "FoldSpec",
    "SampleRecord",
    "binary_from_class",
    "load_folds",
    "make_folds",
    "parse_manifest",
    "relabel_by_class",
    "relabel_source",
    "save_folds",
    "scenario",
    "write_manifest",
    "HistofilterError",
    "ExperimentConfig",
    "ExperimentReport",
    "FoldResult",
    "PatchPrediction",
    "WinLoss",
    "aggregate_image",
    "load_experiment_config",
    "overall_accuracy",
    "patient_score",
    "run_experiment",
    "win_loss",
    "FeatureMatrix",
    "align_features",
    "export_features_csv",
    "import_features_csv",
    "read_features",
    "write_features",
    "FEATURE_KINDS",
    "FilterModel",
    "RetentionStats",
    "apply_filter",
    "retention_stats",
    "train_filter",
    "PatchGrid",
    "RgbImage",
    "compute_grid",
    "decode_image",
    "extract_patches",
    "patch_manifest_from_size",
    "patch_records",
    "patch_sample_id",
    "save_png",
    "load_model",
    "save_model",
    "PcaModel",
    "explained_variance_ratio",
    "pca_fit",
    "pca_transform",
    "PFTAS_DIM",
    "otsu_threshold",
    "pftas",
    "pftas_features",
    "tas_histogram",
    "load_report",
    "save_report",
    "GridSearchResult",
    "SvmModel",
    "grid_search",
    "platt_fit",
    "rbf_kernel",
    "svm_decision",
    "svm_predict",
    "svm_predict_proba",
    "svm_train",
    "SynthSpec",
    "TextureClass",
    "default_source_spec",
    "default_target_spec",
    "generate",
    "__version__",
]

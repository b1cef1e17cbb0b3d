"""Relevance filters: one RBF SVM per relabeling scenario and feature kind.

A filter is trained on relabeled source features (relevant vs irrelevant),
optionally behind a PCA projection, and is applied unchanged to target patches
of every magnification. Retention statistics summarize how much of the target
survives at patch, image, and patient granularity.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import MAGNIFICATIONS, DatasetManifest
from .errors import SingleClass
from .feature_io import FeatureMatrix, _atomic_write_bytes, align_features
from .pca import PcaModel, pca_fit, pca_transform
from .svm import SvmModel, grid_search, svm_predict, svm_train
from .util import derive_rng

FEATURE_KINDS = ("pftas", "deep_pca_100", "deep_pca_200", "deep_pca_400", "deep_pca_600")
DEFAULT_C_GRID = (1.0, 10.0, 100.0)
DEFAULT_GAMMA_GRID = (0.001, 0.01, 0.1)


def pca_dim_for(feature_kind: str) -> int | None:
    if feature_kind == "pftas":
        return None
    if feature_kind.startswith("deep_pca_"):
        return int(feature_kind.rsplit("_", 1)[1])
    raise ValueError(f"unknown feature kind {feature_kind!r}")


@dataclass(frozen=True)
class FilterModel:
    scenario_id: str
    feature_kind: str
    svm: SvmModel
    pca: PcaModel | None
    validation_accuracy: float

    def __post_init__(self):
        if self.feature_kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.feature_kind!r}")
        if (self.pca is not None) != self.feature_kind.startswith("deep_pca_"):
            raise ValueError("pca stage present iff feature kind is a deep_pca variant")
        if not 0.0 <= self.validation_accuracy <= 1.0:
            raise ValueError("validation_accuracy outside [0, 1]")


@dataclass(frozen=True)
class RetentionStats:
    magnification: str
    pct_patches_relevant: float
    pct_images_with_all_patches_relevant: float
    pct_patients_with_all_images_relevant: float

    def __post_init__(self):
        for v in (
            self.pct_patches_relevant,
            self.pct_images_with_all_patches_relevant,
            self.pct_patients_with_all_images_relevant,
        ):
            if not 0.0 <= v <= 100.0:
                raise ValueError("percentages must lie in [0, 100]")


def _stratified_holdout(labels: np.ndarray, val_fraction: float, seed: int):
    """Boolean train mask; per label, round(val_fraction * count) go to validation."""
    n = labels.shape[0]
    train = np.ones(n, dtype=bool)
    for class_index, value in enumerate(np.unique(labels)):
        members = np.flatnonzero(labels == value)
        n_val = int(round(val_fraction * members.size))
        n_val = min(max(n_val, 1), members.size - 1)
        rng = derive_rng(seed, 1, class_index)
        chosen = members[rng.permutation(members.size)[:n_val]]
        train[chosen] = False
    return train


def train_filter(
    source_features: FeatureMatrix,
    relabeled: DatasetManifest,
    feature_kind: str,
    val_fraction: float = 0.15,
    seed: int = 0,
    c_grid=DEFAULT_C_GRID,
    gamma_grid=DEFAULT_GAMMA_GRID,
    cv_folds: int = 5,
    balanced: bool = False,
) -> FilterModel:
    """Fit a relevance SVM on a relabeled source manifest.

    Split the relabeled samples (stratified) into train and validation, fit the
    optional PCA on the training side, pick C and gamma by cross-validated grid
    search on the training side, refit, and record held-out accuracy.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must be in (0, 1)")
    pca_dim = pca_dim_for(feature_kind)
    ids = [r.sample_id for r in relabeled.records]
    x = align_features(source_features, ids)
    y_str = np.array([r.binary_label for r in relabeled.records])
    bad = set(y_str) - {"relevant", "irrelevant"}
    if bad:
        raise ValueError(f"manifest is not relabeled; found labels {sorted(bad)}")
    y = np.where(y_str == "relevant", 1.0, -1.0)
    if np.all(y == y[0]):
        raise SingleClass("relabeled manifest has a single relevance class")

    train_mask = _stratified_holdout(y, val_fraction, seed)
    x_train, y_train = x[train_mask], y[train_mask]
    x_val, y_val = x[~train_mask], y[~train_mask]

    pca = None
    if pca_dim is not None:
        pca = pca_fit(x_train, pca_dim)
        x_train = pca_transform(pca, x_train)
        x_val = pca_transform(pca, x_val)

    cv_seed = int(derive_rng(seed, 2).integers(2**32))
    best = grid_search(
        x_train, y_train, c_grid, gamma_grid, n_folds=cv_folds, seed=cv_seed, balanced=balanced
    )
    model = svm_train(x_train, y_train, best.c, best.gamma, balanced=balanced)
    val_acc = float((svm_predict(model, x_val) == y_val).mean())
    return FilterModel(_scenario_of(relabeled), feature_kind, model, pca, val_acc)


def _scenario_of(relabeled: DatasetManifest) -> str:
    # scenario identity is carried by how many distinct classes are relevant
    relevant = {r.class_label for r in relabeled.records if r.binary_label == "relevant"}
    return f"F{len(relevant)}"


def apply_filter(filter_model: FilterModel, patch_features: FeatureMatrix) -> tuple[set, set]:
    """Partition of patch ids into (relevant, irrelevant) by the filter SVM."""
    x = patch_features.values.astype(np.float64)
    if filter_model.pca is not None:
        x = pca_transform(filter_model.pca, x)
    keep = svm_predict(filter_model.svm, x) > 0
    relevant = {sid for sid, k in zip(patch_features.sample_ids, keep) if k}
    irrelevant = set(patch_features.sample_ids) - relevant
    return relevant, irrelevant


def retention_stats(manifest: DatasetManifest, relevant_ids: set) -> list[RetentionStats]:
    """Per magnification: % patches kept, % images fully kept, % patients fully kept."""
    out = []
    for mag in MAGNIFICATIONS:
        records = [r for r in manifest.records if r.magnification == mag]
        if not records:
            continue
        n_rel = sum(1 for r in records if r.sample_id in relevant_ids)
        images: dict[str, bool] = {}
        patients: dict[str, bool] = {}
        for r in records:
            kept = r.sample_id in relevant_ids
            images[r.image_id] = images.get(r.image_id, True) and kept
            patients[r.patient_id] = patients.get(r.patient_id, True) and kept
        out.append(
            RetentionStats(
                magnification=mag,
                pct_patches_relevant=100.0 * n_rel / len(records),
                pct_images_with_all_patches_relevant=100.0
                * sum(images.values())
                / len(images),
                pct_patients_with_all_images_relevant=100.0
                * sum(patients.values())
                / len(patients),
            )
        )
    return out


def export_retention_csv(stats_by_filter: dict[str, list[RetentionStats]], path) -> None:
    """CSV `magnification,filter,pct_patches,pct_images,pct_patients`."""
    lines = ["magnification,filter,pct_patches,pct_images,pct_patients"]
    for name in sorted(stats_by_filter):
        for s in stats_by_filter[name]:
            lines.append(
                f"{s.magnification},{name},{s.pct_patches_relevant:.4f},"
                f"{s.pct_images_with_all_patches_relevant:.4f},"
                f"{s.pct_patients_with_all_images_relevant:.4f}"
            )
    _atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))

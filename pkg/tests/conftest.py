"""Shared fixtures: synthetic corpora and their features, built once per run."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from histofilter.data_model import (
    DatasetManifest,
    SampleRecord,
    parse_manifest,
    relabel_by_class,
)
from histofilter.feature_io import write_features
from histofilter.filterbank import train_filter
from histofilter.imaging import patch_manifest_from_size
from histofilter.model_store import save_model
from histofilter.pftas import pftas_features
from histofilter.synth import default_source_spec, default_target_spec, generate


def source_manifest_in_memory(per_class=625):
    """A full 8-class source manifest without any files behind it."""
    from histofilter.data_model import SOURCE_CLASSES

    records = []
    for cls in SOURCE_CLASSES:
        for i in range(per_class):
            sid = f"{cls.lower()}_{i:04d}"
            records.append(
                SampleRecord(
                    sample_id=sid,
                    patient_id=sid,
                    image_id=sid,
                    magnification="none",
                    class_label=cls,
                    source_path=f"mem/{sid}.png",
                )
            )
    return DatasetManifest(tuple(records), "tissue_source")


def target_manifest_in_memory(n_patients=8, images=2, magnification="40x"):
    """A small malign/benign image-level manifest without files behind it."""
    records = []
    for pi in range(n_patients):
        cls = "benign_a" if pi % 2 == 0 else "malign_b"
        pid = f"pt{pi:02d}"
        for ii in range(images):
            iid = f"{pid}_im{ii}"
            records.append(
                SampleRecord(
                    sample_id=iid,
                    patient_id=pid,
                    image_id=iid,
                    magnification=magnification,
                    class_label=cls,
                    source_path=f"mem/{iid}.png",
                    binary_label="benign" if pi % 2 == 0 else "malign",
                )
            )
    return DatasetManifest(tuple(records), "tumor_target")


@pytest.fixture(scope="session")
def e2e_bundle(tmp_path_factory):
    """Default synthetic corpora, their descriptors, and a trained filter.

    Computed once; the end-to-end, filtering, and CLI report tests all read
    from this bundle instead of regenerating images.
    """
    root = tmp_path_factory.mktemp("e2e")
    generate(default_target_spec(), root / "target")
    generate(default_source_spec(), root / "source")
    target_images = parse_manifest(root / "target" / "manifest.csv", "tumor_target")
    source = parse_manifest(root / "source" / "manifest.csv", "tissue_source")

    source_features = pftas_features(source, patch_size=150)
    target_features = pftas_features(target_images, patch_size=150)
    write_features(target_features, root / "target_pftas.fv")
    write_features(source_features, root / "source_pftas.fv")

    patches = patch_manifest_from_size(target_images, 150, (300, 300))
    from histofilter.data_model import write_manifest

    write_manifest(patches, root / "target_patches.csv")

    filter_model = train_filter(
        source_features, relabel_by_class(source, {"background"}), "pftas", seed=0
    )
    save_model(filter_model, root / "filter.json")

    return {
        "root": root,
        "target_dir": root / "target",
        "source_dir": root / "source",
        "target_images": target_images,
        "source": source,
        "source_features": source_features,
        "target_features": target_features,
        "features_path": root / "target_pftas.fv",
        "source_features_path": root / "source_pftas.fv",
        "patches": patches,
        "patches_path": root / "target_patches.csv",
        "filter_model": filter_model,
        "filter_path": root / "filter.json",
        "relevance_path": root / "target" / "relevance.csv",
    }

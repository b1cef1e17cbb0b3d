"""Versioned JSON persistence for trained models.

Documents carry a format tag, a version, and a kind; numeric arrays are
embedded as base64 little-endian blocks with explicit dtype and shape. Output
is byte-deterministic (sorted keys, fixed separators, trailing newline) and
written atomically.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .errors import BadMagic, CorruptFile, MissingModel, UnsupportedFormat
from .feature_io import _atomic_write_bytes
from .filterbank import FilterModel
from .pca import PcaModel
from .svm import SvmModel

FORMAT_TAG = "histofilter-model"
VERSION = 1


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.asarray(arr)
    kind = {"f": "f8", "i": "i8"}.get(arr.dtype.kind)
    if kind is None:
        raise ValueError(f"cannot store arrays of dtype {arr.dtype}")
    le = np.ascontiguousarray(arr.astype("<" + kind))
    return {
        "dtype": kind,
        "shape": list(arr.shape),
        "data": base64.b64encode(le.tobytes()).decode("ascii"),
    }


def _decode_array(doc: dict) -> np.ndarray:
    try:
        raw = base64.b64decode(doc["data"], validate=True)
        arr = np.frombuffer(raw, dtype="<" + doc["dtype"]).reshape(doc["shape"])
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptFile(f"bad array block: {exc}") from exc
    return arr.astype(doc["dtype"])


def _svm_payload(model: SvmModel) -> dict:
    return {
        "gamma": model.gamma,
        "c": model.c,
        "support_vectors": _encode_array(model.support_vectors),
        "dual_coef": _encode_array(model.dual_coef),
        "bias": model.bias,
        "platt_a": model.platt_a,
        "platt_b": model.platt_b,
        "n_iter": model.n_iter,
        "converged": model.converged,
    }


def _svm_from_payload(doc: dict) -> SvmModel:
    return SvmModel(
        gamma=float(doc["gamma"]),
        c=float(doc["c"]),
        support_vectors=_decode_array(doc["support_vectors"]),
        dual_coef=_decode_array(doc["dual_coef"]),
        bias=float(doc["bias"]),
        platt_a=None if doc["platt_a"] is None else float(doc["platt_a"]),
        platt_b=None if doc["platt_b"] is None else float(doc["platt_b"]),
        n_iter=int(doc["n_iter"]),
        converged=bool(doc["converged"]),
    )


def _pca_payload(model: PcaModel) -> dict:
    return {
        "mean": _encode_array(model.mean),
        "components": _encode_array(model.components),
        "eigenvalues": _encode_array(model.eigenvalues),
        "total_variance": model.total_variance,
    }


def _pca_from_payload(doc: dict) -> PcaModel:
    return PcaModel(
        mean=_decode_array(doc["mean"]),
        components=_decode_array(doc["components"]),
        eigenvalues=_decode_array(doc["eigenvalues"]),
        total_variance=float(doc["total_variance"]),
    )


def _filter_payload(model: FilterModel) -> dict:
    return {
        "scenario_id": model.scenario_id,
        "feature_kind": model.feature_kind,
        "svm": _svm_payload(model.svm),
        "pca": None if model.pca is None else _pca_payload(model.pca),
        "validation_accuracy": model.validation_accuracy,
    }


def _filter_from_payload(doc: dict) -> FilterModel:
    return FilterModel(
        scenario_id=str(doc["scenario_id"]),
        feature_kind=str(doc["feature_kind"]),
        svm=_svm_from_payload(doc["svm"]),
        pca=None if doc["pca"] is None else _pca_from_payload(doc["pca"]),
        validation_accuracy=float(doc["validation_accuracy"]),
    )


_KINDS = {
    "svm": (SvmModel, _svm_payload, _svm_from_payload),
    "pca": (PcaModel, _pca_payload, _pca_from_payload),
    "filter": (FilterModel, _filter_payload, _filter_from_payload),
}


def save_model(model, path: str | Path) -> None:
    for kind, (cls, encode, _) in _KINDS.items():
        if isinstance(model, cls):
            doc = {
                "format": FORMAT_TAG,
                "version": VERSION,
                "kind": kind,
                "payload": encode(model),
            }
            text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
            _atomic_write_bytes(Path(path), text.encode("utf-8"))
            return
    raise ValueError(f"cannot store objects of type {type(model).__name__}")


def load_model(path: str | Path, expect_kind: str | None = None):
    path = Path(path)
    if not path.exists():
        raise MissingModel(f"model file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_TAG:
        raise BadMagic(f"{path}: not a {FORMAT_TAG} document")
    if doc.get("version") != VERSION:
        raise UnsupportedFormat(f"{path}: version {doc.get('version')}, expected {VERSION}")
    kind = doc.get("kind")
    if kind not in _KINDS:
        raise CorruptFile(f"{path}: unknown model kind {kind!r}")
    if expect_kind is not None and kind != expect_kind:
        raise CorruptFile(f"{path}: kind {kind!r}, expected {expect_kind!r}")
    try:
        return _KINDS[kind][2](doc["payload"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc

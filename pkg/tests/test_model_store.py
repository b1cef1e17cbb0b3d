import json

import numpy as np
import pytest

from histofilter.errors import BadMagic, CorruptFile, MissingModel, UnsupportedFormat
from histofilter.filterbank import FilterModel
from histofilter.model_store import load_model, save_model
from histofilter.pca import pca_fit
from histofilter.svm import svm_train


def _svm_model(rng, probability=False):
    x = np.vstack([rng.normal(-1.5, 1.0, size=(10, 3)), rng.normal(1.5, 1.0, size=(10, 3))])
    y = np.concatenate([-np.ones(10), np.ones(10)])
    return x, y, svm_train(x, y, 1.0, 0.3, probability=probability, seed=4)


def _pca_model(rng):
    return pca_fit(rng.normal(size=(12, 6)), 3)


def _filter_model(rng):
    x, y, svm = _svm_model(rng)
    return FilterModel("F4", "pftas", svm, None, 0.9375)


# --- roundtrips ---------------------------------------------------------------

def test_svm_roundtrip_preserves_decision_function(tmp_path):
    rng = np.random.default_rng(0)
    x, y, model = _svm_model(rng, probability=True)
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json", expect_kind="svm")
    from histofilter.svm import svm_decision, svm_predict_proba

    probes = rng.normal(size=(20, 3))
    assert np.array_equal(svm_decision(model, probes), svm_decision(back, probes))
    assert np.array_equal(svm_predict_proba(model, probes), svm_predict_proba(back, probes))
    assert back.gamma == model.gamma and back.c == model.c
    assert back.n_iter == model.n_iter and back.converged == model.converged


def test_uncalibrated_svm_roundtrip_keeps_none_platt(tmp_path):
    rng = np.random.default_rng(1)
    _, _, model = _svm_model(rng)
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert back.platt_a is None and back.platt_b is None


def test_pca_roundtrip_is_exact(tmp_path):
    rng = np.random.default_rng(2)
    model = _pca_model(rng)
    save_model(model, tmp_path / "p.json")
    back = load_model(tmp_path / "p.json", expect_kind="pca")
    assert np.array_equal(back.mean, model.mean)
    assert np.array_equal(back.components, model.components)
    assert np.array_equal(back.eigenvalues, model.eigenvalues)
    assert back.total_variance == model.total_variance


def test_filter_roundtrip_keeps_metadata(tmp_path):
    rng = np.random.default_rng(3)
    model = _filter_model(rng)
    save_model(model, tmp_path / "f.json")
    back = load_model(tmp_path / "f.json", expect_kind="filter")
    assert back.scenario_id == "F4"
    assert back.feature_kind == "pftas"
    assert back.pca is None
    assert back.validation_accuracy == model.validation_accuracy
    assert np.array_equal(back.svm.dual_coef, model.svm.dual_coef)


def test_save_is_byte_deterministic(tmp_path):
    rng = np.random.default_rng(4)
    model = _filter_model(rng)
    save_model(model, tmp_path / "a.json")
    save_model(model, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_save_rejects_foreign_objects(tmp_path):
    with pytest.raises(ValueError):
        save_model({"not": "a model"}, tmp_path / "x.json")


# --- load failure modes -------------------------------------------------------

def test_load_missing_file(tmp_path):
    with pytest.raises(MissingModel):
        load_model(tmp_path / "absent.json")


def test_load_rejects_invalid_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{truncated")
    with pytest.raises(CorruptFile):
        load_model(p)


def test_load_rejects_foreign_document(tmp_path):
    p = tmp_path / "x.json"
    p.write_text(json.dumps({"format": "something-else", "version": 1}))
    with pytest.raises(BadMagic):
        load_model(p)
    p.write_text(json.dumps([1, 2, 3]))
    with pytest.raises(BadMagic):
        load_model(p)


def test_load_rejects_unknown_version(tmp_path):
    rng = np.random.default_rng(5)
    p = tmp_path / "x.json"
    save_model(_pca_model(rng), p)
    doc = json.loads(p.read_text())
    doc["version"] = 99
    p.write_text(json.dumps(doc))
    with pytest.raises(UnsupportedFormat):
        load_model(p)


def test_load_rejects_kind_mismatch(tmp_path):
    rng = np.random.default_rng(6)
    p = tmp_path / "x.json"
    save_model(_pca_model(rng), p)
    with pytest.raises(CorruptFile):
        load_model(p, expect_kind="svm")
    doc = json.loads(p.read_text())
    doc["kind"] = "mystery"
    p.write_text(json.dumps(doc))
    with pytest.raises(CorruptFile):
        load_model(p)


def test_load_rejects_corrupt_array_block(tmp_path):
    rng = np.random.default_rng(7)
    p = tmp_path / "x.json"
    save_model(_pca_model(rng), p)
    doc = json.loads(p.read_text())
    doc["payload"]["mean"]["data"] = "!!!not-base64!!!"
    p.write_text(json.dumps(doc))
    with pytest.raises(CorruptFile):
        load_model(p)

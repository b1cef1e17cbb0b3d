import json

import pytest

from histofilter.errors import BadMagic, CorruptFile
from histofilter.experiment import (
    RULE_SUM,
    RULE_VOTE,
    ExperimentReport,
    FoldResult,
    WinLoss,
    summarize,
)
from histofilter.filterbank import RetentionStats
from histofilter.report import (
    attach_win_loss,
    load_report,
    per_fold_csv,
    report_to_json,
    save_report,
    summary_csv,
)


def _fold(mag="40x", fold=0, seed=1, acc=0.875, excluded=()):
    return FoldResult(
        magnification=mag,
        fold_index=fold,
        repeat_seed=seed,
        c=10.0,
        gamma=0.01,
        patch_accuracy=acc,
        image_accuracy={RULE_SUM: acc, RULE_VOTE: acc / 2},
        patient_accuracy={RULE_SUM: acc, RULE_VOTE: acc / 2},
        n_train_patches=40,
        n_test_patches=16,
        n_test_images=8,
        n_test_patients=4,
        excluded_images=tuple(excluded),
    )


def _report(with_retention=True, with_win_loss=True):
    results = (_fold(fold=0), _fold(fold=1, acc=0.75, excluded=("p1_img2", "p3_img0")))
    mean, std = summarize(results)
    retention = (
        (RetentionStats("40x", 92.5, 80.0, 70.0),) if with_retention else ()
    )
    wl = (WinLoss(0, 2, 0, 0), WinLoss(1, 1, 1, 0)) if with_win_loss else ()
    return ExperimentReport(
        results=results, mean=mean, std=std, retention=retention, win_loss=wl
    )


def test_per_fold_csv_layout():
    text = per_fold_csv(_report())
    lines = text.splitlines()
    assert lines[0] == (
        "magnification,fold,seed,c,gamma,Patches,Images-Sum,Images-Vote,"
        "Patients-Sum,Patients-Vote,train_patches,test_patches,test_images,"
        "test_patients,excluded_images"
    )
    assert len(lines) == 3
    assert lines[1] == (
        "40x,0,1,10.0,0.01,87.5000,87.5000,43.7500,87.5000,43.7500,40,16,8,4,"
    )
    assert lines[2].endswith(",p1_img2;p3_img0")
    assert text.endswith("\n")


def test_summary_csv_layout():
    text = summary_csv(_report())
    lines = text.splitlines()
    assert lines[0] == "magnification,Patches,Images-Sum,Images-Vote,Patients-Sum,Patients-Vote"
    assert len(lines) == 2
    # pooled mean of 87.5 and 75.0 with population std 6.25
    assert lines[1].split(",")[0] == "40x"
    assert lines[1].split(",")[1] == "81.25 ± 6.25"


def test_json_roundtrip_preserves_report(tmp_path):
    report = _report()
    path = tmp_path / "summary.json"
    path.write_text(report_to_json(report))
    assert load_report(path) == report


def test_json_roundtrip_without_optional_blocks(tmp_path):
    report = _report(with_retention=False, with_win_loss=False)
    path = tmp_path / "summary.json"
    path.write_text(report_to_json(report))
    loaded = load_report(path)
    assert loaded == report
    assert loaded.retention == () and loaded.win_loss == ()


def test_report_json_is_deterministic():
    assert report_to_json(_report()) == report_to_json(_report())


def test_attach_win_loss_computes_from_baseline():
    filtered = _report(with_win_loss=False)
    baseline = ExperimentReport(
        results=(_fold(fold=0, acc=0.5), _fold(fold=1, acc=0.95)),
        mean={},
        std={},
    )
    merged = attach_win_loss(filtered, baseline)
    assert merged.results == filtered.results
    assert merged.win_loss == (WinLoss(0, 2, 0, 0), WinLoss(1, 0, 2, 0))


def test_load_report_error_paths(tmp_path):
    bad = tmp_path / "r.json"
    bad.write_text("{ not json")
    with pytest.raises(CorruptFile):
        load_report(bad)
    bad.write_text(json.dumps({"format": "something-else"}))
    with pytest.raises(BadMagic):
        load_report(bad)
    bad.write_text(json.dumps([1, 2, 3]))
    with pytest.raises(BadMagic):
        load_report(bad)
    doc = json.loads(report_to_json(_report()))
    del doc["results"][0]["patch_accuracy"]
    bad.write_text(json.dumps(doc))
    with pytest.raises(CorruptFile):
        load_report(bad)


def test_save_report_writes_tables_and_figures(tmp_path):
    report = _report()
    written = save_report(report, tmp_path, filter_name="pftas")
    names = [p.relative_to(tmp_path).as_posix() for p in written]
    assert names == [
        "per_fold.csv",
        "summary.csv",
        "summary.json",
        "retention.csv",
        "figures/accuracy_by_fold.png",
        "figures/retention.png",
        "figures/win_loss.png",
    ]
    for p in written:
        assert p.is_file() and p.stat().st_size > 0
    for p in written:
        if p.suffix == ".png":
            assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert "pftas" in (tmp_path / "retention.csv").read_text()
    assert load_report(tmp_path / "summary.json") == report


def test_save_report_skips_optional_outputs(tmp_path):
    written = save_report(_report(with_retention=False, with_win_loss=False), tmp_path)
    names = [p.relative_to(tmp_path).as_posix() for p in written]
    assert names == ["per_fold.csv", "summary.csv", "summary.json", "figures/accuracy_by_fold.png"]
    assert not (tmp_path / "retention.csv").exists()
    assert not (tmp_path / "figures" / "win_loss.png").exists()


def test_save_report_is_byte_deterministic(tmp_path):
    report = _report()
    a = save_report(report, tmp_path / "a")
    b = save_report(report, tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes(), pa.name

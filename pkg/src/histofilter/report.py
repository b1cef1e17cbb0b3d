"""Deterministic report rendering: CSV tables, a JSON summary, and figures.

The per-fold and summary tables use the accuracy columns Patches, Images-Sum,
Images-Vote, Patients-Sum, Patients-Vote. All numeric cells are fixed-format
percentages so identical runs serialize byte-identically; figures are written
without software metadata for the same reason.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .errors import BadMagic, CorruptFile
from .experiment import (
    METRIC_KEYS,
    RULES,
    ExperimentReport,
    FoldResult,
    WinLoss,
    win_loss,
)
from .feature_io import _atomic_write_bytes
from .filterbank import RetentionStats, export_retention_csv

REPORT_TAG = "histofilter-report"
REPORT_VERSION = 1
TABLE_COLUMNS = ("Patches", "Images-Sum", "Images-Vote", "Patients-Sum", "Patients-Vote")


def _pct(v: float) -> str:
    return f"{100.0 * v:.4f}"


def per_fold_csv(report: ExperimentReport) -> str:
    header = (
        "magnification,fold,seed,c,gamma,"
        + ",".join(TABLE_COLUMNS)
        + ",train_patches,test_patches,test_images,test_patients,excluded_images"
    )
    lines = [header]
    for r in report.results:
        metrics = ",".join(_pct(r.metric(k)) for k in METRIC_KEYS)
        lines.append(
            f"{r.magnification},{r.fold_index},{r.repeat_seed},{r.c},{r.gamma},"
            f"{metrics},{r.n_train_patches},{r.n_test_patches},{r.n_test_images},"
            f"{r.n_test_patients},{';'.join(r.excluded_images)}"
        )
    return "\n".join(lines) + "\n"


def summary_csv(report: ExperimentReport) -> str:
    lines = ["magnification," + ",".join(TABLE_COLUMNS)]
    for mag in report.mean:
        cells = [
            f"{100.0 * report.mean[mag][k]:.2f} ± {100.0 * report.std[mag][k]:.2f}"
            for k in METRIC_KEYS
        ]
        lines.append(mag + "," + ",".join(cells))
    return "\n".join(lines) + "\n"


def report_to_json(report: ExperimentReport) -> str:
    doc = {
        "format": REPORT_TAG,
        "version": REPORT_VERSION,
        "results": [
            {
                "magnification": r.magnification,
                "fold_index": r.fold_index,
                "repeat_seed": r.repeat_seed,
                "c": r.c,
                "gamma": r.gamma,
                "patch_accuracy": r.patch_accuracy,
                "image_accuracy": r.image_accuracy,
                "patient_accuracy": r.patient_accuracy,
                "n_train_patches": r.n_train_patches,
                "n_test_patches": r.n_test_patches,
                "n_test_images": r.n_test_images,
                "n_test_patients": r.n_test_patients,
                "excluded_images": list(r.excluded_images),
            }
            for r in report.results
        ],
        "mean": report.mean,
        "std": report.std,
        "retention": [
            {
                "magnification": s.magnification,
                "pct_patches_relevant": s.pct_patches_relevant,
                "pct_images_with_all_patches_relevant": s.pct_images_with_all_patches_relevant,
                "pct_patients_with_all_images_relevant": s.pct_patients_with_all_images_relevant,
            }
            for s in report.retention
        ],
        "win_loss": [
            {"fold_index": w.fold_index, "wins": w.wins, "losses": w.losses, "ties": w.ties}
            for w in report.win_loss
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def load_report(path: str | Path) -> ExperimentReport:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != REPORT_TAG:
        raise BadMagic(f"{path}: not a {REPORT_TAG} document")
    try:
        results = tuple(
            FoldResult(
                magnification=r["magnification"],
                fold_index=int(r["fold_index"]),
                repeat_seed=int(r["repeat_seed"]),
                c=float(r["c"]),
                gamma=float(r["gamma"]),
                patch_accuracy=float(r["patch_accuracy"]),
                image_accuracy={k: float(v) for k, v in r["image_accuracy"].items()},
                patient_accuracy={k: float(v) for k, v in r["patient_accuracy"].items()},
                n_train_patches=int(r["n_train_patches"]),
                n_test_patches=int(r["n_test_patches"]),
                n_test_images=int(r["n_test_images"]),
                n_test_patients=int(r["n_test_patients"]),
                excluded_images=tuple(r["excluded_images"]),
            )
            for r in doc["results"]
        )
        retention = tuple(
            RetentionStats(
                magnification=s["magnification"],
                pct_patches_relevant=float(s["pct_patches_relevant"]),
                pct_images_with_all_patches_relevant=float(
                    s["pct_images_with_all_patches_relevant"]
                ),
                pct_patients_with_all_images_relevant=float(
                    s["pct_patients_with_all_images_relevant"]
                ),
            )
            for s in doc["retention"]
        )
        wl = tuple(
            WinLoss(
                fold_index=int(w["fold_index"]),
                wins=int(w["wins"]),
                losses=int(w["losses"]),
                ties=int(w["ties"]),
            )
            for w in doc["win_loss"]
        )
        mean = {m: {k: float(v) for k, v in d.items()} for m, d in doc["mean"].items()}
        std = {m: {k: float(v) for k, v in d.items()} for m, d in doc["std"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    return ExperimentReport(results=results, mean=mean, std=std, retention=retention, win_loss=wl)


def attach_win_loss(report: ExperimentReport, baseline: ExperimentReport) -> ExperimentReport:
    return ExperimentReport(
        results=report.results,
        mean=report.mean,
        std=report.std,
        retention=report.retention,
        win_loss=win_loss(report, baseline),
    )


def _save_fig(fig, path: Path) -> None:
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def _accuracy_figure(report: ExperimentReport, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(8, 5))
    mags = list(report.mean)
    folds = sorted({r.fold_index for r in report.results})
    for mag in mags:
        for rule in RULES:
            ys = []
            for fold in folds:
                vals = [
                    r.patient_accuracy[rule]
                    for r in report.results
                    if r.magnification == mag and r.fold_index == fold
                ]
                ys.append(100.0 * sum(vals) / len(vals))
            ax.plot(folds, ys, marker="o", label=f"{mag} / {rule}")
    ax.set_xlabel("fold")
    ax.set_ylabel("patient-level accuracy (%)")
    ax.set_xticks(folds)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save_fig(fig, path)


def _retention_figure(report: ExperimentReport, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    mags = [s.magnification for s in report.retention]
    x = range(len(mags))
    width = 0.27
    series = (
        ("patches", [s.pct_patches_relevant for s in report.retention]),
        ("images", [s.pct_images_with_all_patches_relevant for s in report.retention]),
        ("patients", [s.pct_patients_with_all_images_relevant for s in report.retention]),
    )
    for k, (label, vals) in enumerate(series):
        ax.bar([i + (k - 1) * width for i in x], vals, width=width, label=label)
    ax.set_xticks(list(x))
    ax.set_xticklabels(mags)
    ax.set_ylabel("relevant (%)")
    ax.set_ylim(0, 105)
    ax.legend()
    fig.tight_layout()
    _save_fig(fig, path)


def _win_loss_figure(report: ExperimentReport, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    folds = [w.fold_index for w in report.win_loss]
    x = range(len(folds))
    width = 0.27
    for k, (label, vals) in enumerate(
        (
            ("wins", [w.wins for w in report.win_loss]),
            ("losses", [w.losses for w in report.win_loss]),
            ("ties", [w.ties for w in report.win_loss]),
        )
    ):
        ax.bar([i + (k - 1) * width for i in x], vals, width=width, label=label)
    ax.set_xticks(list(x))
    ax.set_xticklabels([str(f) for f in folds])
    ax.set_xlabel("fold")
    ax.set_ylabel("configurations")
    ax.legend()
    fig.tight_layout()
    _save_fig(fig, path)


def save_report(
    report: ExperimentReport, out_dir: str | Path, filter_name: str = "none"
) -> list[Path]:
    """Write tables, JSON, and figures under out_dir; returns written paths."""
    out_dir = Path(out_dir)
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []

    for name, text in (
        ("per_fold.csv", per_fold_csv(report)),
        ("summary.csv", summary_csv(report)),
        ("summary.json", report_to_json(report)),
    ):
        target = out_dir / name
        _atomic_write_bytes(target, text.encode("utf-8"))
        written.append(target)

    if report.retention:
        target = out_dir / "retention.csv"
        export_retention_csv({filter_name: list(report.retention)}, target)
        written.append(target)

    _accuracy_figure(report, fig_dir / "accuracy_by_fold.png")
    written.append(fig_dir / "accuracy_by_fold.png")
    if report.retention:
        _retention_figure(report, fig_dir / "retention.png")
        written.append(fig_dir / "retention.png")
    if report.win_loss:
        _win_loss_figure(report, fig_dir / "win_loss.png")
        written.append(fig_dir / "win_loss.png")
    return written

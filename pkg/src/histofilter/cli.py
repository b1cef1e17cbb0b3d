"""Command-line surface for the patch filtering pipeline.

Exit codes: 0 success, 1 domain error, 2 usage error. Diagnostics and progress
go to standard error; machine-readable output goes to files only. The
HISTOFILTER_SEED environment variable supplies the default --seed everywhere;
an explicit flag wins, and for `evaluate` a seed from either source overrides
the config file's seed.
"""

from __future__ import annotations

import os
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import data_model, filterbank, synth
from .data_model import DatasetManifest, parse_manifest, write_manifest
from .errors import HistofilterError, JoinOrphans
from .experiment import load_experiment_config, run_experiment
from .feature_io import (
    FeatureMatrix,
    align_features,
    export_features_csv,
    import_features_csv,
    read_features,
    write_features,
)
from .imaging import (
    compute_grid,
    decode_image,
    expand_manifest,
    extract_patches,
    patch_sample_id,
    save_png,
)
from .model_store import load_model, save_model
from .pca import pca_fit, pca_transform
from .pftas import pftas_features
from .report import attach_win_loss, load_report, save_report
from .svm import grid_search, svm_decision, svm_predict_proba, svm_train
from .util import derive_rng

SEED_ENV = "HISTOFILTER_SEED"


def _default_jobs() -> int:
    return os.cpu_count() or 1


def _grid(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise click.BadParameter(f"not a comma-separated float list: {text!r}") from None
    if not values:
        raise click.BadParameter("empty grid")
    return values


seed_option = click.option(
    "--seed", type=int, default=None, envvar=SEED_ENV, show_envvar=True, help="RNG seed."
)
jobs_option = click.option(
    "--jobs", type=int, default=None, help="Worker processes (default: available CPUs)."
)


@click.group()
def main():
    """Histology patch filtering pipeline."""


def _run(body):
    try:
        body()
    except HistofilterError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(1)


@main.command("patch")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--patch-size", type=int, default=150, show_default=True)
def patch_cmd(manifest_path, out_dir, patch_size):
    """Crop sliding-window patches to PNGs and write a patch-level manifest."""

    def body():
        manifest = parse_manifest(manifest_path)
        out = Path(out_dir)
        patch_dir = out / "patches"
        patch_dir.mkdir(parents=True, exist_ok=True)
        records = []
        for k, r in enumerate(manifest.records):
            if r.is_patch:
                records.append(r)
                continue
            image = decode_image(r.source_path)
            grid = compute_grid(image.width, image.height, patch_size)
            for (x, y), patch in extract_patches(image, grid):
                sid = patch_sample_id(r.image_id, x, y)
                save_png(patch, patch_dir / f"{sid}.png")
                records.append(
                    replace(
                        r,
                        sample_id=sid,
                        source_path=f"patches/{sid}.png",
                        patch_origin=(x, y),
                    )
                )
            if (k + 1) % 25 == 0:
                click.echo(f"patch: {k + 1}/{len(manifest.records)} images", err=True)
        write_manifest(DatasetManifest(tuple(records), manifest.dataset_kind), out / "patches.csv")
        click.echo(f"patch: wrote {len(records)} records to {out / 'patches.csv'}", err=True)

    _run(body)


@main.command("pftas")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--patch-size", type=int, default=150, show_default=True)
@click.option(
    "--patch-manifest-out",
    type=click.Path(),
    default=None,
    help="Also write the patch-level manifest matching the feature row ids.",
)
@jobs_option
def pftas_cmd(manifest_path, out_path, patch_size, patch_manifest_out, jobs):
    """Texture descriptors for every patch of every manifest image."""

    def body():
        manifest = parse_manifest(manifest_path)
        matrix = pftas_features(
            manifest, patch_size=patch_size, jobs=jobs or _default_jobs(), log=sys.stderr
        )
        write_features(matrix, out_path)
        click.echo(f"pftas: wrote {len(matrix)} x {matrix.dim} to {out_path}", err=True)
        if patch_manifest_out:
            expanded = expand_manifest(manifest, patch_size)
            write_manifest(expanded, patch_manifest_out)
            click.echo(
                f"pftas: patch manifest ({len(expanded.records)} rows) -> {patch_manifest_out}",
                err=True,
            )

    _run(body)


@main.command("features-import")
@click.option("--csv", "csv_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def features_import_cmd(csv_path, out_path):
    """Convert a sample_id,v0,... CSV into the binary feature format."""

    def body():
        matrix = import_features_csv(csv_path)
        write_features(matrix, out_path)
        click.echo(f"features-import: wrote {len(matrix)} x {matrix.dim} to {out_path}", err=True)

    _run(body)


@main.command("pca")
@click.option("--features", "features_path", required=True, type=click.Path(exists=True))
@click.option("--dim", type=int, required=True)
@click.option("--model-out", type=click.Path(), default=None)
@click.option("--transformed-out", type=click.Path(), default=None)
def pca_cmd(features_path, dim, model_out, transformed_out):
    """Fit a PCA on a feature file; optionally save projected features."""

    def body():
        matrix = read_features(features_path)
        model = pca_fit(matrix.values.astype(np.float64), dim)
        if model_out:
            save_model(model, model_out)
            click.echo(f"pca: model saved to {model_out}", err=True)
        if transformed_out:
            projected = pca_transform(model, matrix.values.astype(np.float64))
            write_features(
                FeatureMatrix(matrix.sample_ids, projected.astype(np.float32)), transformed_out
            )
            click.echo(f"pca: projected features saved to {transformed_out}", err=True)
        if not model_out and not transformed_out:
            raise click.UsageError("nothing to do: pass --model-out and/or --transformed-out")

    _run(body)


@main.command("filter-train")
@click.option("--source-manifest", required=True, type=click.Path(exists=True))
@click.option("--source-features", required=True, type=click.Path(exists=True))
@click.option("--scenario", "scenario_id", default=None, help="Canonical scenario F1..F7.")
@click.option(
    "--irrelevant-classes",
    default=None,
    help="Comma-separated class names to mark irrelevant (alternative to --scenario).",
)
@click.option(
    "--feature-kind",
    type=click.Choice(["pftas", "deep"]),
    default="pftas",
    show_default=True,
)
@click.option("--pca-dim", type=int, default=None, help="Required for deep features.")
@click.option("--val-fraction", type=float, default=0.15, show_default=True)
@click.option("--c-grid", default="1,10,100", show_default=True)
@click.option("--gamma-grid", default="0.001,0.01,0.1", show_default=True)
@click.option("--cv-folds", type=int, default=5, show_default=True)
@click.option("--balanced", is_flag=True, default=False)
@seed_option
@click.option("--out", "out_path", required=True, type=click.Path())
def filter_train_cmd(
    source_manifest,
    source_features,
    scenario_id,
    irrelevant_classes,
    feature_kind,
    pca_dim,
    val_fraction,
    c_grid,
    gamma_grid,
    cv_folds,
    balanced,
    seed,
    out_path,
):
    """Train a relevance filter on relabeled source features."""
    if (scenario_id is None) == (irrelevant_classes is None):
        raise click.UsageError("pass exactly one of --scenario or --irrelevant-classes")
    if feature_kind == "pftas" and pca_dim is not None:
        raise click.UsageError("--pca-dim applies to deep features only")
    if feature_kind == "deep" and pca_dim is None:
        raise click.UsageError("deep features need --pca-dim")
    kind = "pftas" if feature_kind == "pftas" else f"deep_pca_{pca_dim}"

    def body():
        seed_value = 0 if seed is None else seed
        manifest = parse_manifest(source_manifest, kind="tissue_source")
        if scenario_id is not None:
            relabeled = data_model.relabel_source(
                manifest, data_model.scenario(scenario_id), seed_value
            )
        else:
            names = {s.strip() for s in irrelevant_classes.split(",") if s.strip()}
            relabeled = data_model.relabel_by_class(manifest, names)
        features = read_features(source_features)
        model = filterbank.train_filter(
            features,
            relabeled,
            kind,
            val_fraction=val_fraction,
            seed=seed_value,
            c_grid=_grid(c_grid),
            gamma_grid=_grid(gamma_grid),
            cv_folds=cv_folds,
            balanced=balanced,
        )
        save_model(model, out_path)
        click.echo(
            f"filter-train: {model.scenario_id}/{model.feature_kind} "
            f"validation accuracy {model.validation_accuracy:.4f} -> {out_path}",
            err=True,
        )

    _run(body)


@main.command("filter-apply")
@click.option("--filter", "filter_path", required=True, type=click.Path())
@click.option("--features", "features_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
@click.option("--retention-out", type=click.Path(), default=None)
def filter_apply_cmd(filter_path, features_path, out_path, manifest_path, retention_out):
    """Partition patches by a trained filter; write sample_id,relevant CSV."""

    def body():
        model = load_model(filter_path, expect_kind="filter")
        features = read_features(features_path)
        relevant, _ = filterbank.apply_filter(model, features)
        lines = ["sample_id,relevant"]
        lines.extend(
            f"{sid},{'true' if sid in relevant else 'false'}" for sid in features.sample_ids
        )
        Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
        click.echo(
            f"filter-apply: {len(relevant)}/{len(features)} relevant -> {out_path}", err=True
        )
        if retention_out:
            if manifest_path is None:
                raise click.UsageError("--retention-out needs --manifest")
            manifest = parse_manifest(manifest_path)
            known = set(features.sample_ids)
            if not any(r.sample_id in known for r in manifest.records):
                # retention against an image-level manifest is always a mistake
                raise JoinOrphans(r.sample_id for r in manifest.records)
            stats = filterbank.retention_stats(manifest, relevant)
            name = f"{model.scenario_id}/{model.feature_kind}"
            filterbank.export_retention_csv({name: stats}, retention_out)
            click.echo(f"filter-apply: retention stats -> {retention_out}", err=True)

    _run(body)


@main.command("train")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--features", "features_path", required=True, type=click.Path(exists=True))
@click.option("--relevance", "relevance_path", type=click.Path(exists=True), default=None)
@click.option("--c-grid", default="1,10,100", show_default=True)
@click.option("--gamma-grid", default="0.001,0.01,0.1", show_default=True)
@click.option("--cv-folds", type=int, default=3, show_default=True)
@click.option("--balanced", is_flag=True, default=False)
@seed_option
@click.option("--out", "out_path", required=True, type=click.Path())
def train_cmd(
    manifest_path,
    features_path,
    relevance_path,
    c_grid,
    gamma_grid,
    cv_folds,
    balanced,
    seed,
    out_path,
):
    """Grid-search and train the benign/malign patch classifier."""

    def body():
        seed_value = 0 if seed is None else seed
        manifest = parse_manifest(manifest_path, kind="tumor_target")
        records = list(manifest.records)
        if relevance_path:
            keep = synth.read_relevance(relevance_path)
            records = [r for r in records if keep.get(r.sample_id, False)]
        features = read_features(features_path)
        x = align_features(features, [r.sample_id for r in records])
        y = np.array([1.0 if r.binary_label == "malign" else -1.0 for r in records])
        grid_seed = int(derive_rng(seed_value, 4).integers(2**32))
        best = grid_search(
            x, y, _grid(c_grid), _grid(gamma_grid), n_folds=cv_folds, seed=grid_seed,
            balanced=balanced,
        )
        model = svm_train(
            x, y, best.c, best.gamma, balanced=balanced, probability=True, seed=seed_value
        )
        save_model(model, out_path)
        click.echo(
            f"train: C={best.c} gamma={best.gamma} cv accuracy {best.score:.4f} -> {out_path}",
            err=True,
        )

    _run(body)


@main.command("evaluate")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--model", "model_path", type=click.Path(), default=None)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
@click.option("--features", "features_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--filter-name", default=None, help="Label used in the retention table.")
@seed_option
@jobs_option
def evaluate_cmd(config_path, model_path, manifest_path, features_path, out_path, filter_name, seed, jobs):
    """Run the full experiment from a config, or score patches with a model."""
    if (config_path is None) == (model_path is None):
        raise click.UsageError("pass exactly one of --config or --model")

    def body():
        if config_path is not None:
            config = load_experiment_config(config_path, seed_override=seed)
            report = run_experiment(config, n_jobs=jobs or _default_jobs(), log=sys.stderr)
            name = filter_name
            if name is None:
                name = (
                    Path(config.filter_model_path).stem
                    if config.filter_model_path is not None
                    else "none"
                )
            written = save_report(report, config.output_dir, filter_name=name)
            for p in written:
                click.echo(f"evaluate: wrote {p}", err=True)
            return
        if manifest_path is None or features_path is None or out_path is None:
            raise click.UsageError("--model mode needs --manifest, --features, --out")
        model = load_model(model_path, expect_kind="svm")
        manifest = parse_manifest(manifest_path, kind="tumor_target")
        features = read_features(features_path)
        ids = [r.sample_id for r in manifest.records]
        x = align_features(features, ids)
        dec = svm_decision(model, x)
        prob = svm_predict_proba(model, x) if model.is_calibrated else None
        lines = ["sample_id,decision_value,prob_malign,predicted,true_label,correct"]
        n_correct = 0
        for i, r in enumerate(manifest.records):
            predicted = "malign" if dec[i] >= 0 else "benign"
            ok = predicted == r.binary_label
            n_correct += ok
            p = "" if prob is None else f"{prob[i]:.6f}"
            lines.append(
                f"{r.sample_id},{dec[i]:.6f},{p},{predicted},{r.binary_label},"
                f"{'true' if ok else 'false'}"
            )
        Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
        click.echo(
            f"evaluate: patch accuracy {n_correct / len(ids):.4f} "
            f"({n_correct}/{len(ids)}) -> {out_path}",
            err=True,
        )

    _run(body)


@main.command("synth")
@click.option("--out-dir", required=True, type=click.Path())
@click.option(
    "--kind",
    type=click.Choice(["target", "source"]),
    default="target",
    show_default=True,
)
@click.option("--n-patients", type=int, default=20, show_default=True)
@click.option("--images-per-patient", type=int, default=4, show_default=True)
@click.option("--tiles-per-class", type=int, default=60, show_default=True)
@click.option("--irrelevant-fraction", type=float, default=0.3, show_default=True)
@click.option(
    "--image-size",
    default=None,
    help="WxH pixels [default: 300x300 for target, 150x150 for source]",
)
@click.option("--patch-size", type=int, default=150, show_default=True)
@seed_option
def synth_cmd(
    out_dir,
    kind,
    n_patients,
    images_per_patient,
    tiles_per_class,
    irrelevant_fraction,
    image_size,
    patch_size,
    seed,
):
    """Generate a seeded synthetic corpus (images + manifest + ground truth)."""
    if image_size is None:
        image_size = "300x300" if kind == "target" else "150x150"
    try:
        w, h = (int(v) for v in image_size.lower().split("x"))
    except ValueError:
        raise click.BadParameter("--image-size must look like 300x300")

    def body():
        seed_value = 0 if seed is None else seed
        if kind == "target":
            spec = synth.default_target_spec(
                n_patients=n_patients,
                images_per_patient=images_per_patient,
                irrelevant_fraction=irrelevant_fraction,
                seed=seed_value,
                image_size=(w, h),
                patch_size=patch_size,
            )
        else:
            spec = synth.default_source_spec(
                tiles_per_class=tiles_per_class, seed=seed_value, tile_size=(w, h)
            )
        manifest = synth.generate(spec, out_dir)
        click.echo(f"synth: {len(manifest.records)} records under {out_dir}", err=True)

    _run(body)


@main.command("report")
@click.option("--summary", "summary_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--baseline", "baseline_path", type=click.Path(exists=True), default=None)
@click.option("--filter-name", default="none", show_default=True)
def report_cmd(summary_path, out_dir, baseline_path, filter_name):
    """Re-render tables and figures from a JSON summary; optional win/loss."""

    def body():
        report = load_report(summary_path)
        if baseline_path:
            report = attach_win_loss(report, load_report(baseline_path))
        written = save_report(report, out_dir, filter_name=filter_name)
        for p in written:
            click.echo(f"report: wrote {p}", err=True)

    _run(body)


if __name__ == "__main__":
    main()

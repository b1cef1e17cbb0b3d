"""Per-fold tumor classification over relevant patches, scored per patient.

Each fold trains a benign/malign RBF SVM on the relevant patches of training
patients (grid-searched on that data only), predicts the test patients'
relevant patches, aggregates patches to image labels by majority vote and by
the sum rule over malignancy posteriors, and scores patients as the fraction
of their classified images labeled correctly; the experiment accuracy is the
mean over patients. Images whose patches were all filtered away are excluded
from the denominators and listed. A filter that removes every patch of a test
patient is a hard error, matching the protocol's rejection of such filters.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data_model import (
    MAGNIFICATIONS,
    DatasetManifest,
    FoldSpec,
    load_folds,
    make_folds,
    parse_manifest,
)
from .errors import (
    EmptyPredictionSet,
    FoldMismatch,
    NoImages,
    NoPatients,
    PatientEliminated,
)
from .feature_io import FeatureMatrix, align_features, read_features
from .filterbank import RetentionStats, apply_filter, retention_stats
from .model_store import load_model
from .svm import grid_search, svm_decision, svm_predict_proba, svm_train
from .util import derive_rng

RULE_SUM = "sum_rule"
RULE_VOTE = "majority_vote"
RULES = (RULE_SUM, RULE_VOTE)

METRIC_KEYS = ("patch", "image_sum", "image_vote", "patient_sum", "patient_vote")


@dataclass(frozen=True)
class PatchPrediction:
    sample_id: str
    decision_value: float
    prob_malign: float
    predicted: str

    def __post_init__(self):
        if self.predicted not in ("benign", "malign"):
            raise ValueError(f"bad predicted label {self.predicted!r}")
        if (self.predicted == "malign") != (self.decision_value >= 0.0):
            raise ValueError("predicted label must follow the decision sign")
        if not 0.0 <= self.prob_malign <= 1.0:
            raise ValueError("prob_malign outside [0, 1]")


def aggregate_image(preds: list[PatchPrediction], rule: str) -> str:
    """Image label from its patch predictions; ties go to malign under both rules."""
    if not preds:
        raise EmptyPredictionSet("cannot aggregate an image with no predictions")
    if rule == RULE_VOTE:
        n_malign = sum(1 for p in preds if p.predicted == "malign")
        return "malign" if 2 * n_malign >= len(preds) else "benign"
    if rule == RULE_SUM:
        mean = sum(p.prob_malign for p in preds) / len(preds)
        return "malign" if mean >= 0.5 else "benign"
    raise ValueError(f"unknown aggregation rule {rule!r}")


def patient_score(image_results: list[tuple[str, bool]]) -> float:
    """Correctly labeled fraction of one patient's classified images."""
    if not image_results:
        raise NoImages("patient has no classified images")
    return sum(1 for _, ok in image_results if ok) / len(image_results)


def overall_accuracy(scores: list[float]) -> float:
    """Unweighted mean of per-patient scores."""
    if not scores:
        raise NoPatients("no patient scores to average")
    return float(sum(scores) / len(scores))


@dataclass(frozen=True)
class FoldResult:
    magnification: str
    fold_index: int
    repeat_seed: int
    c: float
    gamma: float
    patch_accuracy: float
    image_accuracy: dict[str, float]  # rule -> accuracy
    patient_accuracy: dict[str, float]  # rule -> accuracy
    n_train_patches: int
    n_test_patches: int
    n_test_images: int
    n_test_patients: int
    excluded_images: tuple[str, ...] = ()

    def metric(self, key: str) -> float:
        if key == "patch":
            return self.patch_accuracy
        group, rule = key.split("_", 1)
        rule = {"sum": RULE_SUM, "vote": RULE_VOTE}[rule]
        return (self.image_accuracy if group == "image" else self.patient_accuracy)[rule]


@dataclass(frozen=True)
class WinLoss:
    fold_index: int
    wins: int
    losses: int
    ties: int


@dataclass(frozen=True)
class ExperimentReport:
    results: tuple[FoldResult, ...]
    mean: dict[str, dict[str, float]]  # magnification -> metric key -> mean
    std: dict[str, dict[str, float]]  # population std over fold entries
    retention: tuple[RetentionStats, ...] = ()
    win_loss: tuple[WinLoss, ...] = ()


@dataclass(frozen=True)
class ExperimentConfig:
    manifest_path: Path
    features_path: Path
    output_dir: Path
    filter_model_path: Path | None = None
    folds_path: Path | None = None
    seed: int = 0
    repeat_seeds: tuple[int, ...] = ()
    n_folds: int = 5
    train_fraction: float = 0.7
    magnifications: tuple[str, ...] = ()
    c_grid: tuple[float, ...] = (1.0, 10.0, 100.0)
    gamma_grid: tuple[float, ...] = (0.001, 0.01, 0.1)
    cv_folds: int = 3
    balanced: bool = False
    tol: float = 1e-3

    def __post_init__(self):
        if not self.repeat_seeds:
            object.__setattr__(self, "repeat_seeds", (self.seed,))
        bad = [m for m in self.magnifications if m not in MAGNIFICATIONS]
        if bad:
            raise ValueError(f"unknown magnifications {bad}")


def load_experiment_config(path: str | Path, seed_override: int | None = None) -> ExperimentConfig:
    """Read the TOML experiment description; paths resolve against the file."""
    path = Path(path)
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    base = path.parent
    paths = doc.get("paths", {})
    exp = doc.get("experiment", {})
    svm_sec = doc.get("svm", {})

    def _resolve(key):
        return (base / paths[key]).resolve() if key in paths else None

    manifest = _resolve("manifest")
    features = _resolve("features")
    output_dir = _resolve("output_dir")
    if manifest is None or features is None or output_dir is None:
        raise ValueError(f"{path}: [paths] must set manifest, features, output_dir")
    seed = int(exp.get("seed", 0)) if seed_override is None else int(seed_override)
    return ExperimentConfig(
        manifest_path=manifest,
        features_path=features,
        output_dir=output_dir,
        filter_model_path=_resolve("filter_model"),
        folds_path=_resolve("folds"),
        seed=seed,
        repeat_seeds=tuple(int(s) for s in exp.get("repeat_seeds", [])),
        n_folds=int(exp.get("n_folds", 5)),
        train_fraction=float(exp.get("train_fraction", 0.7)),
        magnifications=tuple(exp.get("magnifications", [])),
        c_grid=tuple(float(v) for v in svm_sec.get("c_grid", [1.0, 10.0, 100.0])),
        gamma_grid=tuple(float(v) for v in svm_sec.get("gamma_grid", [0.001, 0.01, 0.1])),
        cv_folds=int(svm_sec.get("cv_folds", 3)),
        balanced=bool(svm_sec.get("balanced", False)),
        tol=float(svm_sec.get("tol", 1e-3)),
    )


def _job_seed(repeat_seed: int, magnification: str, fold_index: int) -> tuple[int, int]:
    mag_index = MAGNIFICATIONS.index(magnification)
    rng = derive_rng(repeat_seed, 3, mag_index, fold_index)
    pair = rng.integers(2**32, size=2)
    return int(pair[0]), int(pair[1])


def _run_fold(
    records,
    row_of,
    x_all,
    relevant,
    fold: FoldSpec,
    repeat_seed: int,
    magnification: str,
    config: ExperimentConfig,
):
    train_recs = [
        r
        for r in records
        if r.patient_id in fold.train_patients and r.sample_id in relevant
    ]
    test_recs = [
        r
        for r in records
        if r.patient_id in fold.test_patients and r.sample_id in relevant
    ]

    train_ids = {r.sample_id for r in train_recs}
    assert not train_ids & {r.sample_id for r in test_recs}, "sample leaked across split"
    assert not {r.patient_id for r in train_recs} & {
        r.patient_id for r in test_recs
    }, "patient leaked across split"

    y_train = np.array([1.0 if r.binary_label == "malign" else -1.0 for r in train_recs])
    x_train = x_all[[row_of[r.sample_id] for r in train_recs]]
    x_test = x_all[[row_of[r.sample_id] for r in test_recs]]
    y_test = np.array([1.0 if r.binary_label == "malign" else -1.0 for r in test_recs])

    grid_seed, train_seed = _job_seed(repeat_seed, magnification, fold.fold_index)
    best = grid_search(
        x_train,
        y_train,
        config.c_grid,
        config.gamma_grid,
        n_folds=config.cv_folds,
        seed=grid_seed,
        tol=config.tol,
        balanced=config.balanced,
    )
    model = svm_train(
        x_train,
        y_train,
        best.c,
        best.gamma,
        tol=config.tol,
        balanced=config.balanced,
        probability=True,
        seed=train_seed,
    )
    dec = svm_decision(model, x_test)
    prob = svm_predict_proba(model, x_test)
    preds = [
        PatchPrediction(
            sample_id=r.sample_id,
            decision_value=float(d),
            prob_malign=float(p),
            predicted="malign" if d >= 0.0 else "benign",
        )
        for r, d, p in zip(test_recs, dec, prob)
    ]
    patch_acc = float(np.mean((dec >= 0.0) == (y_test > 0.0))) if preds else 0.0

    by_image: dict[str, list[PatchPrediction]] = {}
    image_truth: dict[str, str] = {}
    image_patient: dict[str, str] = {}
    for r, p in zip(test_recs, preds):
        by_image.setdefault(r.image_id, []).append(p)
        image_truth[r.image_id] = r.binary_label
        image_patient[r.image_id] = r.patient_id

    all_test_images = {
        r.image_id for r in records if r.patient_id in fold.test_patients
    }
    excluded = tuple(sorted(all_test_images - set(by_image)))

    image_acc = {}
    patient_acc = {}
    for rule in RULES:
        per_patient: dict[str, list[tuple[str, bool]]] = {}
        n_correct = 0
        for image_id in sorted(by_image):
            label = aggregate_image(by_image[image_id], rule)
            ok = label == image_truth[image_id]
            n_correct += ok
            per_patient.setdefault(image_patient[image_id], []).append((image_id, ok))
        image_acc[rule] = n_correct / len(by_image) if by_image else 0.0
        scores = [patient_score(v) for _, v in sorted(per_patient.items())]
        patient_acc[rule] = overall_accuracy(scores)

    return FoldResult(
        magnification=magnification,
        fold_index=fold.fold_index,
        repeat_seed=repeat_seed,
        c=best.c,
        gamma=best.gamma,
        patch_accuracy=patch_acc,
        image_accuracy=image_acc,
        patient_accuracy=patient_acc,
        n_train_patches=len(train_recs),
        n_test_patches=len(test_recs),
        n_test_images=len(by_image),
        n_test_patients=len({r.patient_id for r in test_recs}),
        excluded_images=excluded,
    )


def summarize(results) -> tuple[dict, dict]:
    """Pooled mean and population std per magnification and metric."""
    mags = sorted({r.magnification for r in results}, key=MAGNIFICATIONS.index)
    mean: dict[str, dict[str, float]] = {}
    std: dict[str, dict[str, float]] = {}
    for mag in mags:
        entries = [r for r in results if r.magnification == mag]
        mean[mag] = {}
        std[mag] = {}
        for key in METRIC_KEYS:
            vals = np.array([e.metric(key) for e in entries])
            mean[mag][key] = float(vals.mean())
            std[mag][key] = float(vals.std())
    return mean, std


def _check_elimination(records, folds, relevant, magnification):
    # detected before any training so the error is independent of job order
    for fold in folds:
        with_patches = {r.patient_id for r in records if r.patient_id in fold.test_patients}
        with_relevant = {
            r.patient_id
            for r in records
            if r.patient_id in fold.test_patients and r.sample_id in relevant
        }
        gone = sorted(with_patches - with_relevant)
        if gone:
            raise PatientEliminated(gone[0], fold.fold_index)


def run_experiment(config: ExperimentConfig, n_jobs: int = 1, log=None) -> ExperimentReport:
    manifest = parse_manifest(config.manifest_path, kind="tumor_target")
    features = read_features(config.features_path)
    ids = [r.sample_id for r in manifest.records]
    x_all = align_features(features, ids)
    row_of = {sid: i for i, sid in enumerate(ids)}

    filter_model = None
    if config.filter_model_path is not None:
        filter_model = load_model(config.filter_model_path, expect_kind="filter")
        subset = FeatureMatrix(tuple(ids), x_all.astype(np.float32))
        relevant, _ = apply_filter(filter_model, subset)
    else:
        relevant = set(ids)
    retention = tuple(retention_stats(manifest, relevant))

    if config.folds_path is not None:
        folds = load_folds(config.folds_path)
        known = set(manifest.patient_ids())
        for f in folds:
            stray = (f.train_patients | f.test_patients) - known
            if stray:
                raise FoldMismatch(f"fold {f.fold_index} names unknown patients {sorted(stray)[:5]}")
    else:
        folds = make_folds(manifest, config.n_folds, config.train_fraction, config.seed)

    present = {r.magnification for r in manifest.records}
    mags = config.magnifications or tuple(m for m in MAGNIFICATIONS if m in present)
    repeat_seeds = config.repeat_seeds

    jobs = []
    for mag in mags:
        records = [r for r in manifest.records if r.magnification == mag]
        if not records:
            continue
        if filter_model is not None:
            _check_elimination(records, folds, relevant, mag)
        for fold in folds:
            for rseed in repeat_seeds:
                jobs.append((records, fold, rseed, mag))

    def _one(job):
        records, fold, rseed, mag = job
        return _run_fold(records, row_of, x_all, relevant, fold, rseed, mag, config)

    if n_jobs > 1 and len(jobs) > 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(_one)(j) for j in jobs)
    else:
        results = []
        for k, job in enumerate(jobs):
            results.append(_one(job))
            if log is not None:
                print(f"fold job {k + 1}/{len(jobs)} done", file=log)

    results = tuple(
        sorted(
            results,
            key=lambda r: (
                MAGNIFICATIONS.index(r.magnification),
                r.fold_index,
                repeat_seeds.index(r.repeat_seed),
            ),
        )
    )
    mean, std = summarize(results)
    return ExperimentReport(results=results, mean=mean, std=std, retention=retention)


def win_loss(filtered: ExperimentReport, unfiltered: ExperimentReport) -> tuple[WinLoss, ...]:
    """Per-fold configuration counts where filtering helped or hurt patient accuracy.

    A configuration is one (magnification, repeat seed, aggregation rule)
    triple; ties are counted separately from wins and losses.
    """

    def _key(r: FoldResult):
        return (r.magnification, r.fold_index, r.repeat_seed)

    f_map = {_key(r): r for r in filtered.results}
    u_map = {_key(r): r for r in unfiltered.results}
    if set(f_map) != set(u_map):
        raise FoldMismatch("reports cover different (magnification, fold, seed) sets")

    folds = sorted({k[1] for k in f_map})
    out = []
    for fold_index in folds:
        wins = losses = ties = 0
        for key in sorted(f_map):
            if key[1] != fold_index:
                continue
            for rule in RULES:
                a = f_map[key].patient_accuracy[rule]
                b = u_map[key].patient_accuracy[rule]
                if a > b:
                    wins += 1
                elif a < b:
                    losses += 1
                else:
                    ties += 1
        out.append(WinLoss(fold_index=fold_index, wins=wins, losses=losses, ties=ties))
    return tuple(out)

"""Dataset manifests, sample lineage, patient-wise folds, and source relabeling.

A manifest is a flat list of :class:`SampleRecord` rows describing either a
tissue-labeled source corpus (150x150 tiles, no patients) or a tumor-labeled
target corpus (patient -> image -> patch lineage with magnifications).
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import (
    ClassMissing,
    DuplicateSampleId,
    MalformedRow,
    MissingColumn,
    TooFewPatients,
    WrongDatasetKind,
)
from .util import derive_rng, round_half_away

MAGNIFICATIONS = ("40x", "100x", "200x", "400x", "none")
BINARY_LABELS = ("benign", "malign", "relevant", "irrelevant", "unset")

# Canonical tissue-structure classes of the source (colorectal) corpus, ordered
# from most to least diagnostically important. Scenario Fk marks the first k
# relevant and the remaining 8-k irrelevant.
SOURCE_CLASSES = (
    "Tumor",
    "Stroma",
    "ComplexStroma",
    "Lympho",
    "Debris",
    "Mucosa",
    "Adipose",
    "Empty",
)
IMAGES_PER_SOURCE_CLASS = 625

# Published relevant/irrelevant totals per scenario. The subsampled side's
# per-class quota is total // n_classes with any remainder (+1 each) going to
# the first classes in canonical order, which is how F1/F7 reach 625.
SCENARIO_TOTALS = {
    "F1": (625, 625),
    "F2": (1250, 1248),
    "F3": (1875, 1875),
    "F4": (2500, 2500),
    "F5": (1875, 1875),
    "F6": (1248, 1250),
    "F7": (625, 625),
}

# Tumor subtypes of the target corpus grouped by diagnosis.
BENIGN_SUBTYPES = frozenset({"adenosis", "fibroadenoma", "phyllodes_tumor", "tubular_adenoma"})
MALIGN_SUBTYPES = frozenset(
    {"ductal_carcinoma", "lobular_carcinoma", "mucinous_carcinoma", "papillary_carcinoma"}
)

MANIFEST_COLUMNS = ("sample_id", "patient_id", "image_id", "magnification", "class_label", "source_path", "x", "y")
FOLD_COLUMNS = ("fold_index", "patient_id", "split")


def binary_from_class(class_label: str) -> str:
    """Map a tumor class label to 'benign'/'malign', or 'unset' if unknown.

    Knows the eight standard subtype names; otherwise falls back to a
    'benign'/'malign' name prefix so synthetic corpora can self-describe.
    """
    norm = class_label.strip().lower().replace(" ", "_")
    if norm in BENIGN_SUBTYPES or norm.startswith("benign"):
        return "benign"
    if norm in MALIGN_SUBTYPES or norm.startswith("malign"):
        return "malign"
    return "unset"


@dataclass(frozen=True)
class SampleRecord:
    """One image or patch with its full lineage."""

    sample_id: str
    patient_id: str
    image_id: str
    magnification: str
    class_label: str
    source_path: str
    binary_label: str = "unset"
    patch_origin: tuple[int, int] | None = None  # (x, y), present iff this is a patch

    def __post_init__(self):
        if self.magnification not in MAGNIFICATIONS:
            raise ValueError(f"bad magnification {self.magnification!r}")
        if self.binary_label not in BINARY_LABELS:
            raise ValueError(f"bad binary_label {self.binary_label!r}")

    @property
    def is_patch(self) -> bool:
        return self.patch_origin is not None


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[SampleRecord, ...]
    dataset_kind: str  # "tissue_source" | "tumor_target"
    class_inventory: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        inventory = dict(Counter(r.class_label for r in self.records))
        object.__setattr__(self, "class_inventory", inventory)
        if self.dataset_kind not in ("tissue_source", "tumor_target"):
            raise ValueError(f"bad dataset_kind {self.dataset_kind!r}")
        if self.dataset_kind == "tumor_target":
            for r in self.records:
                if not r.patient_id:
                    raise MalformedRow(0, f"record {r.sample_id!r} has empty patient_id in a tumor_target manifest")

    def __len__(self) -> int:
        return len(self.records)

    def patient_ids(self) -> list[str]:
        seen = []
        have = set()
        for r in self.records:
            if r.patient_id and r.patient_id not in have:
                have.add(r.patient_id)
                seen.append(r.patient_id)
        return seen

    def patients_by_subtype(self) -> dict[str, list[str]]:
        """Patients grouped by tumor subtype, both levels sorted."""
        subtype: dict[str, str] = {}
        for r in self.records:
            # patients carry one subtype; min() keeps this deterministic if not
            subtype[r.patient_id] = min(subtype.get(r.patient_id, r.class_label), r.class_label)
        groups: dict[str, list[str]] = {}
        for patient, cls in subtype.items():
            groups.setdefault(cls, []).append(patient)
        return {cls: sorted(patients) for cls, patients in sorted(groups.items())}

    def by_sample_id(self) -> dict[str, SampleRecord]:
        return {r.sample_id: r for r in self.records}


@dataclass(frozen=True)
class FoldSpec:
    fold_index: int
    train_patients: frozenset[str]
    test_patients: frozenset[str]
    seed: int

    def __post_init__(self):
        if self.train_patients & self.test_patients:
            raise ValueError("train and test patient sets overlap")


@dataclass(frozen=True)
class FilterScenario:
    """Relabeling scenario Fk: first k canonical classes relevant, rest irrelevant.

    quotas holds the per-class sample counts after the remainder policy; the
    two side totals always equal SCENARIO_TOTALS[scenario_id].
    """

    scenario_id: str
    relevant_classes: tuple[str, ...]
    irrelevant_classes: tuple[str, ...]
    quotas: dict[str, int]


def scenario(scenario_id: str) -> FilterScenario:
    """Build scenario F1..F7 with quotas from the published side totals."""
    if scenario_id not in SCENARIO_TOTALS:
        raise ValueError(f"unknown scenario {scenario_id!r}; expected F1..F7")
    k = int(scenario_id[1])
    relevant = SOURCE_CLASSES[:k]
    irrelevant = SOURCE_CLASSES[k:]
    re_total, ir_total = SCENARIO_TOTALS[scenario_id]
    quotas: dict[str, int] = {}
    for classes, total in ((relevant, re_total), (irrelevant, ir_total)):
        base, rem = divmod(total, len(classes))
        for i, name in enumerate(classes):
            quotas[name] = base + (1 if i < rem else 0)
    assert all(q <= IMAGES_PER_SOURCE_CLASS for q in quotas.values())
    return FilterScenario(scenario_id, relevant, irrelevant, quotas)


# --- manifest I/O ------------------------------------------------------------

def parse_manifest(path: str | Path, kind: str | None = None) -> DatasetManifest:
    """Read a manifest CSV; dataset kind is inferred from magnifications unless given.

    Raises MissingColumn, MalformedRow (with line number), DuplicateSampleId,
    WrongDatasetKind when an explicit kind contradicts the rows.
    """
    path = Path(path)
    records: list[SampleRecord] = []
    seen_ids: set[str] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise MissingColumn(f"{path}: empty file, expected header {','.join(MANIFEST_COLUMNS)}")
        missing = [c for c in MANIFEST_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
        base_dir = path.resolve().parent
        for line_no, row in enumerate(reader, start=2):
            records.append(_parse_row(row, line_no, seen_ids, base_dir))

    if kind is None:
        kind = "tumor_target" if any(r.magnification != "none" for r in records) else "tissue_source"
    for r in records:
        if kind == "tumor_target" and r.magnification == "none":
            raise WrongDatasetKind(f"record {r.sample_id!r}: magnification 'none' in a tumor_target manifest")
        if kind == "tissue_source" and r.magnification != "none":
            raise WrongDatasetKind(f"record {r.sample_id!r}: magnification {r.magnification!r} in a tissue_source manifest")
    return DatasetManifest(tuple(records), kind)


def _parse_row(row: dict, line_no: int, seen_ids: set[str], base_dir: Path | None = None) -> SampleRecord:
    def cell(name: str) -> str:
        value = row.get(name)
        if value is None:
            raise MalformedRow(line_no, f"short row, missing {name!r}")
        return value.strip()

    sample_id = cell("sample_id")
    if not sample_id:
        raise MalformedRow(line_no, "empty sample_id")
    if sample_id in seen_ids:
        raise DuplicateSampleId(sample_id)
    seen_ids.add(sample_id)

    magnification = cell("magnification") or "none"
    if magnification not in MAGNIFICATIONS:
        raise MalformedRow(line_no, f"bad magnification {magnification!r}")

    x_raw, y_raw = cell("x"), cell("y")
    if (x_raw == "") != (y_raw == ""):
        raise MalformedRow(line_no, "x and y must both be set or both be empty")
    origin = None
    if x_raw:
        try:
            origin = (int(x_raw), int(y_raw))
        except ValueError:
            raise MalformedRow(line_no, f"non-integer patch origin ({x_raw!r}, {y_raw!r})") from None
        if origin[0] < 0 or origin[1] < 0:
            raise MalformedRow(line_no, f"negative patch origin {origin}")

    class_label = cell("class_label")
    source_path = cell("source_path")
    # relative paths are taken relative to the manifest file, not the cwd
    if source_path and base_dir is not None and not Path(source_path).is_absolute():
        source_path = str(base_dir / source_path)
    return SampleRecord(
        sample_id=sample_id,
        patient_id=cell("patient_id"),
        image_id=cell("image_id"),
        magnification=magnification,
        class_label=class_label,
        source_path=source_path,
        binary_label=binary_from_class(class_label) if magnification != "none" else "unset",
        patch_origin=origin,
    )


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for r in manifest.records:
            x, y = (str(r.patch_origin[0]), str(r.patch_origin[1])) if r.patch_origin else ("", "")
            writer.writerow(
                [r.sample_id, r.patient_id, r.image_id, r.magnification, r.class_label, r.source_path, x, y]
            )


def save_folds(folds: list[FoldSpec], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(FOLD_COLUMNS)
        for fold in folds:
            for patient in sorted(fold.train_patients):
                writer.writerow([fold.fold_index, patient, "train"])
            for patient in sorted(fold.test_patients):
                writer.writerow([fold.fold_index, patient, "test"])


def load_folds(path: str | Path) -> list[FoldSpec]:
    """Read a fold file; lets externally published folds replace generated ones."""
    train: dict[int, set[str]] = {}
    test: dict[int, set[str]] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in FOLD_COLUMNS):
            raise MissingColumn(f"{path}: expected header {','.join(FOLD_COLUMNS)}")
        for line_no, row in enumerate(reader, start=2):
            try:
                idx = int(row["fold_index"])
            except (TypeError, ValueError):
                raise MalformedRow(line_no, f"bad fold_index {row.get('fold_index')!r}") from None
            split = (row.get("split") or "").strip()
            if split not in ("train", "test"):
                raise MalformedRow(line_no, f"bad split {split!r}")
            patient = (row.get("patient_id") or "").strip()
            if not patient:
                raise MalformedRow(line_no, "empty patient_id")
            (train if split == "train" else test).setdefault(idx, set()).add(patient)
    folds = []
    for idx in sorted(set(train) | set(test)):
        folds.append(FoldSpec(idx, frozenset(train.get(idx, set())), frozenset(test.get(idx, set())), seed=0))
    return folds


# --- fold construction -------------------------------------------------------

def make_folds(
    manifest: DatasetManifest,
    n_folds: int,
    train_fraction: float,
    seed: int,
) -> list[FoldSpec]:
    """Patient-wise folds, stratified by tumor subtype.

    Each fold is an independent seeded draw that keeps all samples of a patient
    on one side of the split. The global train count is round(train_fraction *
    n_patients) and is allocated to subtypes by largest remainder, so every
    subtype lands within one patient of its proportional share while each keeps
    at least one patient per side.
    """
    if manifest.dataset_kind != "tumor_target":
        raise WrongDatasetKind("folds are defined over tumor_target manifests")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    if n_folds < 1:
        raise ValueError("n_folds must be >= 1")

    groups = manifest.patients_by_subtype()
    for subtype, patients in groups.items():
        if len(patients) < 2:
            raise TooFewPatients(subtype, len(patients))

    n_patients = sum(len(p) for p in groups.values())
    target = round_half_away(train_fraction * n_patients)
    target = min(max(target, len(groups)), n_patients - len(groups))
    allocation = _allocate_train_counts(groups, train_fraction, target)

    folds = []
    for fold_index in range(n_folds):
        rng = derive_rng(seed, fold_index)
        train: set[str] = set()
        test: set[str] = set()
        for subtype in sorted(groups):
            patients = list(groups[subtype])
            rng.shuffle(patients)
            n_train = allocation[subtype]
            train.update(patients[:n_train])
            test.update(patients[n_train:])
        folds.append(FoldSpec(fold_index, frozenset(train), frozenset(test), seed))
    return folds


def _allocate_train_counts(groups: dict[str, list[str]], train_fraction: float, target: int) -> dict[str, int]:
    names = sorted(groups)
    exact = {s: train_fraction * len(groups[s]) for s in names}
    counts = {s: min(max(int(exact[s]), 1), len(groups[s]) - 1) for s in names}
    # hand out (or claw back) one at a time, largest (smallest) remainder first
    by_remainder = sorted(names, key=lambda s: (-(exact[s] - int(exact[s])), s))
    while sum(counts.values()) < target:
        moved = False
        for s in by_remainder:
            if counts[s] < len(groups[s]) - 1:
                counts[s] += 1
                moved = True
                break
        if not moved:
            break
    while sum(counts.values()) > target:
        moved = False
        for s in reversed(by_remainder):
            if counts[s] > 1:
                counts[s] -= 1
                moved = True
                break
        if not moved:
            break
    return counts


# --- source relabeling -------------------------------------------------------

def relabel_source(manifest: DatasetManifest, scn: FilterScenario, seed: int) -> DatasetManifest:
    """Relabel the 8-class source manifest into relevant/irrelevant per scenario.

    Classes above their quota are subsampled by a seeded shuffle of the class's
    records (sorted by sample_id first, so row order in the file is irrelevant).
    """
    if manifest.dataset_kind != "tissue_source":
        raise WrongDatasetKind("relabel_source expects a tissue_source manifest")
    present = set(manifest.class_inventory)
    expected = set(SOURCE_CLASSES)
    if present != expected:
        missing = sorted(expected - present)
        extra = sorted(present - expected)
        parts = []
        if missing:
            parts.append(f"missing {', '.join(missing)}")
        if extra:
            parts.append(f"unexpected {', '.join(extra)}")
        raise ClassMissing("; ".join(parts))

    by_class: dict[str, list[SampleRecord]] = {name: [] for name in SOURCE_CLASSES}
    for r in manifest.records:
        by_class[r.class_label].append(r)

    out: list[SampleRecord] = []
    for class_index, name in enumerate(SOURCE_CLASSES):
        quota = scn.quotas[name]
        pool = sorted(by_class[name], key=lambda r: r.sample_id)
        if len(pool) < quota:
            raise ClassMissing(f"class {name} has {len(pool)} records but quota is {quota}")
        if quota < len(pool):
            rng = derive_rng(seed, int(scn.scenario_id[1]), class_index)
            idx = rng.permutation(len(pool))[:quota]
            pool = [pool[i] for i in sorted(idx)]
        label = "relevant" if name in scn.relevant_classes else "irrelevant"
        out.extend(replace(r, binary_label=label) for r in pool)
    return DatasetManifest(tuple(out), "tissue_source")


def relabel_by_class(manifest: DatasetManifest, irrelevant_classes: set[str]) -> DatasetManifest:
    """Binary relabel by explicit class list; used for non-CRC source corpora."""
    unknown = irrelevant_classes - set(manifest.class_inventory)
    if unknown:
        raise ClassMissing(f"unknown class(es): {', '.join(sorted(unknown))}")
    out = tuple(
        replace(r, binary_label="irrelevant" if r.class_label in irrelevant_classes else "relevant")
        for r in manifest.records
    )
    return DatasetManifest(out, manifest.dataset_kind)

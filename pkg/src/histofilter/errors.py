"""Exception hierarchy shared by all histofilter modules.

Every domain failure raises a subclass of :class:`HistofilterError`; the CLI
maps these to exit code 1 and anything else (usage problems) to exit code 2.
"""


class HistofilterError(Exception):
    """Base class for all domain errors."""


# --- manifests ---------------------------------------------------------------

class MalformedRow(HistofilterError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class MissingColumn(HistofilterError):
    pass


class DuplicateSampleId(HistofilterError):
    def __init__(self, sample_id: str):
        super().__init__(f"duplicate sample_id {sample_id!r}")
        self.sample_id = sample_id


class TooFewPatients(HistofilterError):
    def __init__(self, subtype: str, count: int):
        super().__init__(f"tumor subtype {subtype!r} has only {count} patient(s); need at least 2")
        self.subtype = subtype


class WrongDatasetKind(HistofilterError):
    pass


class ClassMissing(HistofilterError):
    pass


# --- imaging -----------------------------------------------------------------

class PatchTooLarge(HistofilterError):
    pass


class GridMismatch(HistofilterError):
    pass


class UnsupportedFormat(HistofilterError):
    pass


class CorruptFile(HistofilterError):
    pass


# --- features / linear algebra ----------------------------------------------

class EmptyHistogram(HistofilterError):
    pass


class KTooLarge(HistofilterError):
    pass


class DimMismatch(HistofilterError):
    pass


class ZeroVariance(HistofilterError):
    pass


class NonFinite(HistofilterError):
    pass


# --- SVM ---------------------------------------------------------------------

class SingleClass(HistofilterError):
    pass


class Degenerate(HistofilterError):
    pass


# --- feature files -----------------------------------------------------------

class IoError(HistofilterError):
    pass


class BadMagic(IoError):
    pass


class Truncated(IoError):
    pass


class JoinOrphans(HistofilterError):
    def __init__(self, orphan_ids):
        ids = sorted(orphan_ids)
        shown = ", ".join(ids[:10]) + ("..." if len(ids) > 10 else "")
        super().__init__(f"{len(ids)} sample id(s) do not resolve: {shown}")
        self.orphan_ids = ids


# --- experiment --------------------------------------------------------------

class EmptyPredictionSet(HistofilterError):
    pass


class NoImages(HistofilterError):
    pass


class NoPatients(HistofilterError):
    pass


class PatientEliminated(HistofilterError):
    def __init__(self, patient_id: str, fold_index: int):
        super().__init__(
            f"filter removed every patch of test patient {patient_id!r} in fold {fold_index}"
        )
        self.patient_id = patient_id
        self.fold_index = fold_index


class FoldMismatch(HistofilterError):
    pass


class MissingModel(HistofilterError):
    pass

"""Core data types, timeline validation, and CSV ingestion/export for
dialysis occasion records."""
from __future__ import annotations

import csv
import datetime as dt
import enum
import io
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    "patient_id",
    "occasion_index",
    "exam_date",
    "hb",
    "mcv",
    "ferritin",
    "tsat",
    "esa_direction",
    "esa_dose",
    "is_direction",
    "is_active_weeks",
    "esa_basis_lag",
    "is_basis_lag",
]

MIN_OCCASIONS = 3


class Direction(enum.Enum):
    UP = "UP"
    STAY = "STAY"
    DOWN = "DOWN"


class Medication(enum.Enum):
    ESA = "ESA"
    IS = "IS"


class ParseError(ValueError):
    """Malformed CSV content; carries the 1-based row number."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class ValidationError(ValueError):
    """Invariant violation; names the offending patient and occasion."""

    def __init__(self, patient_id: str, occasion_index: Optional[int], message: str):
        where = f"patient {patient_id!r}"
        if occasion_index is not None:
            where += f", occasion {occasion_index}"
        super().__init__(f"{where}: {message}")
        self.patient_id = patient_id
        self.occasion_index = occasion_index


@dataclass(frozen=True)
class BloodPanel:
    """One occasion's blood examination. Ferritin/TSAT are measured less
    frequently than Hb/MCV and may be absent."""

    hb: float
    mcv: float
    ferritin: Optional[float] = None
    tsat: Optional[float] = None

    def check(self) -> Optional[str]:
        """Return a description of the first violated invariant, or None."""
        if not (0 < self.hb < 25):
            return f"hb {self.hb} outside (0, 25)"
        if not (self.mcv > 0):
            return f"mcv {self.mcv} must be positive"
        if self.ferritin is not None and self.ferritin < 0:
            return f"ferritin {self.ferritin} must be >= 0"
        if self.tsat is not None and not (0 <= self.tsat <= 100):
            return f"tsat {self.tsat} outside [0, 100]"
        return None


@dataclass(frozen=True)
class OccasionRecord:
    """One hemodialysis occasion: panel, both dosing directions, delay metadata.

    ``esa_basis_lag`` / ``is_basis_lag``: how many occasions earlier the exam
    that the recorded direction was actually based on took place. Absent when
    unknown; 0 means same-day.
    """

    occasion_index: int
    exam_date: dt.date
    panel: BloodPanel
    esa_direction: Direction
    is_direction: Direction
    esa_dose: float
    is_active_weeks: int
    esa_basis_lag: Optional[int] = None
    is_basis_lag: Optional[int] = None

    def check(self) -> Optional[str]:
        panel_problem = self.panel.check()
        if panel_problem:
            return panel_problem
        if self.is_direction is Direction.DOWN:
            return "iron-supplement direction may not be DOWN"
        if self.esa_dose < 0:
            return f"esa_dose {self.esa_dose} must be >= 0"
        if self.is_active_weeks < 0:
            return f"is_active_weeks {self.is_active_weeks} must be >= 0"
        for name, lag in (("esa_basis_lag", self.esa_basis_lag),
                          ("is_basis_lag", self.is_basis_lag)):
            if lag is not None:
                if lag < 0:
                    return f"{name} {lag} must be >= 0"
                if lag > self.occasion_index:
                    return f"{name} {lag} exceeds occasion_index {self.occasion_index}"
        return None

    def direction(self, medication: Medication) -> Direction:
        return self.esa_direction if medication is Medication.ESA else self.is_direction

    def basis_lag(self, medication: Medication) -> Optional[int]:
        return self.esa_basis_lag if medication is Medication.ESA else self.is_basis_lag


@dataclass(frozen=True)
class PatientTimeline:
    patient_id: str
    occasions: tuple[OccasionRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "occasions", tuple(self.occasions))
        if len(self.occasions) < MIN_OCCASIONS:
            raise ValidationError(
                self.patient_id, None,
                f"timeline has {len(self.occasions)} occasions, needs >= {MIN_OCCASIONS}")
        prev_date = None
        for position, rec in enumerate(self.occasions):
            if rec.occasion_index != position:
                raise ValidationError(
                    self.patient_id, rec.occasion_index,
                    f"occasion_index not gap-free from 0 (expected {position})")
            if prev_date is not None and rec.exam_date <= prev_date:
                raise ValidationError(
                    self.patient_id, rec.occasion_index,
                    f"exam_date {rec.exam_date} not after previous {prev_date}")
            prev_date = rec.exam_date
            problem = rec.check()
            if problem:
                raise ValidationError(self.patient_id, rec.occasion_index, problem)
            if rec.is_active_weeks > 6:
                logger.warning(
                    "patient %s occasion %d: is_active_weeks %d exceeds the "
                    "6-week stop rule (raw data tolerated)",
                    self.patient_id, rec.occasion_index, rec.is_active_weeks)


@dataclass(frozen=True)
class Cohort:
    name: str
    patients: tuple[PatientTimeline, ...]

    def __post_init__(self):
        object.__setattr__(self, "patients", tuple(self.patients))
        seen: set[str] = set()
        for p in self.patients:
            if p.patient_id in seen:
                raise ValidationError(p.patient_id, None, "duplicate patient_id in cohort")
            seen.add(p.patient_id)

    @property
    def n_patients(self) -> int:
        return len(self.patients)

    @property
    def n_occasions(self) -> int:
        return sum(len(p.occasions) for p in self.patients)

    def patient(self, patient_id: str) -> PatientTimeline:
        for p in self.patients:
            if p.patient_id == patient_id:
                return p
        raise KeyError(patient_id)


def _round1(x: float) -> float:
    return round(float(x), 1)


def _parse_float(cell: str, column: str, row: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ParseError(row, f"column {column!r}: {cell!r} is not numeric") from None


def _parse_opt_float(cell: str, column: str, row: int) -> Optional[float]:
    if cell == "":
        return None
    return _parse_float(cell, column, row)


def _parse_int(cell: str, column: str, row: int) -> int:
    try:
        return int(cell)
    except ValueError:
        raise ParseError(row, f"column {column!r}: {cell!r} is not an integer") from None


def _parse_direction(cell: str, column: str, row: int) -> Direction:
    try:
        return Direction(cell)
    except ValueError:
        raise ParseError(row, f"column {column!r}: {cell!r} is not UP/STAY/DOWN") from None


def ingest_csv(source, name: str = "cohort") -> Cohort:
    """Parse and validate a cohort from a CSV byte or text stream.

    Rows are grouped by patient_id and sorted by occasion_index. Empty
    ferritin/tsat/basis-lag cells become absent values.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    elif hasattr(source, "read"):
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    else:
        raise TypeError(f"unsupported source type {type(source)!r}")

    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(1, "empty input, expected header row") from None
    if header != CSV_COLUMNS:
        raise ParseError(1, f"header {header} != expected {CSV_COLUMNS}")

    by_patient: dict[str, list[OccasionRecord]] = {}
    for row_num, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_COLUMNS):
            raise ParseError(row_num, f"expected {len(CSV_COLUMNS)} cells, got {len(row)}")
        cells = dict(zip(CSV_COLUMNS, row))
        try:
            exam_date = dt.date.fromisoformat(cells["exam_date"])
        except ValueError:
            raise ParseError(
                row_num, f"column 'exam_date': {cells['exam_date']!r} is not ISO-8601") from None
        panel = BloodPanel(
            hb=_round1(_parse_float(cells["hb"], "hb", row_num)),
            mcv=_round1(_parse_float(cells["mcv"], "mcv", row_num)),
            ferritin=(None if cells["ferritin"] == ""
                      else _round1(_parse_float(cells["ferritin"], "ferritin", row_num))),
            tsat=(None if cells["tsat"] == ""
                  else _round1(_parse_float(cells["tsat"], "tsat", row_num))),
        )
        rec = OccasionRecord(
            occasion_index=_parse_int(cells["occasion_index"], "occasion_index", row_num),
            exam_date=exam_date,
            panel=panel,
            esa_direction=_parse_direction(cells["esa_direction"], "esa_direction", row_num),
            is_direction=_parse_direction(cells["is_direction"], "is_direction", row_num),
            esa_dose=_round1(_parse_float(cells["esa_dose"], "esa_dose", row_num)),
            is_active_weeks=_parse_int(cells["is_active_weeks"], "is_active_weeks", row_num),
            esa_basis_lag=(None if cells["esa_basis_lag"] == ""
                           else _parse_int(cells["esa_basis_lag"], "esa_basis_lag", row_num)),
            is_basis_lag=(None if cells["is_basis_lag"] == ""
                          else _parse_int(cells["is_basis_lag"], "is_basis_lag", row_num)),
        )
        pid = cells["patient_id"]
        records = by_patient.setdefault(pid, [])
        if any(existing.occasion_index == rec.occasion_index for existing in records):
            raise ValidationError(pid, rec.occasion_index, "duplicate (patient_id, occasion_index)")
        records.append(rec)

    patients = []
    for pid, records in by_patient.items():
        records.sort(key=lambda r: r.occasion_index)
        patients.append(PatientTimeline(patient_id=pid, occasions=tuple(records)))
    return Cohort(name=name, patients=tuple(patients))


def _fmt_opt(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.1f}"


def _fmt_opt_int(x: Optional[int]) -> str:
    return "" if x is None else str(x)


def export_csv(cohort: Cohort) -> bytes:
    """Serialize a cohort to CSV bytes. Round-trips field-for-field through
    ingest_csv; absent optional values become empty cells."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for patient in cohort.patients:
        for rec in patient.occasions:
            writer.writerow([
                patient.patient_id,
                rec.occasion_index,
                rec.exam_date.isoformat(),
                f"{rec.panel.hb:.1f}",
                f"{rec.panel.mcv:.1f}",
                _fmt_opt(rec.panel.ferritin),
                _fmt_opt(rec.panel.tsat),
                rec.esa_direction.value,
                f"{rec.esa_dose:.1f}",
                rec.is_direction.value,
                rec.is_active_weeks,
                _fmt_opt_int(rec.esa_basis_lag),
                _fmt_opt_int(rec.is_basis_lag),
            ])
    return buf.getvalue().encode("utf-8")


def label_histogram(cohort: Cohort, medication: Medication) -> dict[Direction, int]:
    """Direction counts over every occasion; values sum to cohort.n_occasions."""
    counts = {d: 0 for d in Direction}
    for patient in cohort.patients:
        for rec in patient.occasions:
            counts[rec.direction(medication)] += 1
    return counts

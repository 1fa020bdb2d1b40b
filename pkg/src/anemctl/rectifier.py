"""Detect and repair delayed dosing decisions.

A delayed decision is a non-STAY direction recorded one or two occasions after
the blood exam it was actually based on. ``rectify`` moves such directions
back using basis-lag metadata; ``detect_delayed_heuristic`` fills basis-lag
metadata from the hb trajectory when the metadata is absent.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, replace
from typing import Optional

from .domain import Cohort, Direction, Medication, OccasionRecord, PatientTimeline

logger = logging.getLogger(__name__)

DEFAULT_MAX_LAG = 2


@dataclass(frozen=True)
class RectificationEntry:
    patient_id: str
    medication: Medication
    from_occasion: int
    to_occasion: int
    source: str  # "metadata" or "heuristic"

    def __post_init__(self):
        if not self.to_occasion < self.from_occasion:
            raise ValueError("to_occasion must precede from_occasion")


@dataclass(frozen=True)
class RectificationLog:
    entries: tuple[RectificationEntry, ...]
    conflicts: tuple[RectificationEntry, ...] = ()   # moves skipped: target occupied
    skipped: tuple[RectificationEntry, ...] = ()     # moves skipped: lag beyond max_lag

    def to_csv(self) -> bytes:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["patient_id", "medication", "from_occasion", "to_occasion", "source"])
        for e in self.entries:
            writer.writerow([e.patient_id, e.medication.value,
                             e.from_occasion, e.to_occasion, e.source])
        return buf.getvalue().encode("utf-8")


def _set_direction(rec: OccasionRecord, medication: Medication,
                   direction: Direction, lag: Optional[int]) -> OccasionRecord:
    if medication is Medication.ESA:
        return replace(rec, esa_direction=direction, esa_basis_lag=lag)
    return replace(rec, is_direction=direction, is_basis_lag=lag)


def rectify(cohort: Cohort, max_lag: int = DEFAULT_MAX_LAG) -> tuple[Cohort, RectificationLog]:
    """Move every non-STAY direction with basis_lag L (1 <= L <= max_lag)
    back L occasions, leaving STAY at the recorded occasion.

    Moves are skipped (and logged) when the target occasion already holds a
    non-STAY direction for the same medication, or when L exceeds max_lag.
    Idempotent: moved directions have their basis_lag cleared to 0.
    """
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    moved: list[RectificationEntry] = []
    conflicts: list[RectificationEntry] = []
    skipped: list[RectificationEntry] = []
    patients = []
    for patient in cohort.patients:
        records = list(patient.occasions)
        for medication in Medication:
            for t in range(len(records)):
                rec = records[t]
                direction = rec.direction(medication)
                lag = rec.basis_lag(medication)
                if direction is Direction.STAY or not lag:
                    continue
                entry = RectificationEntry(patient.patient_id, medication, t, t - lag, "metadata")
                if lag > max_lag:
                    logger.warning("%s: basis lag %d exceeds max_lag %d, leaving in place",
                                   entry, lag, max_lag)
                    skipped.append(entry)
                    continue
                target = records[t - lag]
                if target.direction(medication) is not Direction.STAY:
                    logger.warning("%s: target already holds %s, conflict skipped",
                                   entry, target.direction(medication).value)
                    conflicts.append(entry)
                    continue
                records[t - lag] = _set_direction(target, medication, direction, 0)
                records[t] = _set_direction(rec, medication, Direction.STAY, 0)
                moved.append(entry)
        patients.append(PatientTimeline(patient_id=patient.patient_id,
                                        occasions=tuple(records)))
    sort_key = lambda e: (e.patient_id, e.from_occasion, e.medication.value)
    log = RectificationLog(entries=tuple(sorted(moved, key=sort_key)),
                           conflicts=tuple(sorted(conflicts, key=sort_key)),
                           skipped=tuple(sorted(skipped, key=sort_key)))
    return Cohort(name=cohort.name, patients=tuple(patients)), log


def detect_delayed_heuristic(cohort: Cohort,
                             target_low: float = 10.0,
                             target_high: float = 12.0) -> Cohort:
    """Fill basis_lag=1 on ESA directions that look delayed by one occasion.

    A recorded UP (DOWN) at occasion t is flagged when hb at t-1 was below
    target_low (above target_high) while hb at t is back inside the band:
    the decision is consistent with the previous exam, not the same-day one.
    Present basis_lag values are never overwritten. Iron-supplement decisions
    are not hb-band driven and are left to the metadata path.
    """
    patients = []
    for patient in cohort.patients:
        records = list(patient.occasions)
        for t in range(1, len(records)):
            rec = records[t]
            if rec.esa_direction is Direction.STAY or rec.esa_basis_lag is not None:
                continue
            hb_prev = records[t - 1].panel.hb
            hb_now = rec.panel.hb
            inside_now = target_low <= hb_now <= target_high
            crossed_prev = (hb_prev < target_low if rec.esa_direction is Direction.UP
                            else hb_prev > target_high)
            if inside_now and crossed_prev:
                records[t] = replace(rec, esa_basis_lag=1)
        patients.append(PatientTimeline(patient_id=patient.patient_id,
                                        occasions=tuple(records)))
    return Cohort(name=cohort.name, patients=tuple(patients))

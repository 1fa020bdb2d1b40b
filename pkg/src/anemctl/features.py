"""Build the 16-component network input per occasion.

Composition: 4 lab values (hb, mcv, ferritin, tsat with last observation
carried forward), 4 trends (first differences between the two most recent
observations of each item), 4 ESA direction history codes (-1/0/+1) and
4 iron administration history codes (0/1) over the preceding occasions.
Continuous components are z-scored with statistics fitted on the training
split only.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .domain import Cohort, Direction, PatientTimeline

logger = logging.getLogger(__name__)

HISTORY_LEN = 4
N_CONTINUOUS = 8  # values + trends; history codes are passed through unscaled
N_FEATURES = 16

DIRECTION_CODE = {Direction.DOWN: -1.0, Direction.STAY: 0.0, Direction.UP: 1.0}

# fallbacks when a sparse lab has never been observed up to the occasion
FALLBACK_FERRITIN = 0.0
FALLBACK_TSAT = 0.0


@dataclass(frozen=True)
class FeatureVector:
    values: tuple[float, float, float, float]       # hb, mcv, ferritin_locf, tsat_locf
    trends: tuple[float, float, float, float]
    esa_history: tuple[float, float, float, float]  # oldest -> newest, in {-1, 0, +1}
    is_history: tuple[float, float, float, float]   # oldest -> newest, in {0, 1}

    def __post_init__(self):
        for code in self.esa_history:
            if code not in (-1.0, 0.0, 1.0):
                raise ValueError(f"esa history code {code} not in {{-1, 0, +1}}")
        for code in self.is_history:
            if code not in (0.0, 1.0):
                raise ValueError(f"is history code {code} not in {{0, 1}}")

    def to_array(self) -> np.ndarray:
        return np.array(self.values + self.trends + self.esa_history + self.is_history,
                        dtype=np.float64)

    @staticmethod
    def from_array(arr: Sequence[float]) -> "FeatureVector":
        arr = tuple(float(x) for x in arr)
        if len(arr) != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} components, got {len(arr)}")
        return FeatureVector(values=arr[0:4], trends=arr[4:8],
                             esa_history=arr[8:12], is_history=arr[12:16])


@dataclass(frozen=True)
class TrainingExample:
    features: FeatureVector
    esa_label: Direction
    is_label: Direction
    patient_id: str
    occasion_index: int
    sequence_prev: Optional[FeatureVector] = None  # preceding occasion, for the recurrent net


@dataclass(frozen=True)
class NormalizationStats:
    """Per-component mean/std (population convention) for the 8 continuous
    components. Constant components get std=1."""

    mean: tuple[float, ...]
    std: tuple[float, ...]

    def __post_init__(self):
        if len(self.mean) != N_CONTINUOUS or len(self.std) != N_CONTINUOUS:
            raise ValueError(f"stats must cover {N_CONTINUOUS} components")
        if any(s <= 0 for s in self.std):
            raise ValueError("std must be positive")


def _observations(timeline: PatientTimeline, item: str, upto: int) -> list[float]:
    """Observed values of a sparse lab at occasions 0..upto, in order."""
    out = []
    for rec in timeline.occasions[:upto + 1]:
        v = getattr(rec.panel, item)
        if v is not None:
            out.append(v)
    return out


def features_at(timeline: PatientTimeline, t: int,
                history_len: int = HISTORY_LEN) -> FeatureVector:
    """Feature vector for occasion t; reads occasions <= t only, histories
    strictly before t."""
    if t < history_len:
        raise ValueError(f"occasion {t} has fewer than {history_len} prior occasions")
    occ = timeline.occasions
    hb = occ[t].panel.hb
    mcv = occ[t].panel.mcv
    ferr_obs = _observations(timeline, "ferritin", t)
    tsat_obs = _observations(timeline, "tsat", t)
    ferr = ferr_obs[-1] if ferr_obs else FALLBACK_FERRITIN
    tsat = tsat_obs[-1] if tsat_obs else FALLBACK_TSAT

    trends = (
        hb - occ[t - 1].panel.hb,
        mcv - occ[t - 1].panel.mcv,
        ferr_obs[-1] - ferr_obs[-2] if len(ferr_obs) >= 2 else 0.0,
        tsat_obs[-1] - tsat_obs[-2] if len(tsat_obs) >= 2 else 0.0,
    )
    window = occ[t - history_len:t]
    esa_hist = tuple(DIRECTION_CODE[r.esa_direction] for r in window)
    is_hist = tuple(1.0 if r.is_active_weeks > 0 else 0.0 for r in window)
    return FeatureVector(values=(hb, mcv, ferr, tsat), trends=trends,
                         esa_history=esa_hist, is_history=is_hist)


def build_examples(cohort: Cohort,
                   history_len: int = HISTORY_LEN) -> list[TrainingExample]:
    """One example per occasion with index >= history_len; patients too short
    to contribute are skipped with a log line."""
    examples: list[TrainingExample] = []
    for patient in cohort.patients:
        if len(patient.occasions) < history_len + 1:
            logger.info("patient %s has %d occasions, fewer than %d: no examples",
                        patient.patient_id, len(patient.occasions), history_len + 1)
            continue
        prev: Optional[FeatureVector] = None
        for t in range(history_len, len(patient.occasions)):
            fv = features_at(patient, t, history_len)
            rec = patient.occasions[t]
            examples.append(TrainingExample(
                features=fv,
                esa_label=rec.esa_direction,
                is_label=rec.is_direction,
                patient_id=patient.patient_id,
                occasion_index=t,
                sequence_prev=prev,
            ))
            prev = fv
    return examples


def fit_normalization(examples: Sequence[TrainingExample]) -> NormalizationStats:
    """Population mean/std of the 8 continuous components over the training
    examples. Requires >= 2 examples; constant components get std=1."""
    if len(examples) < 2:
        raise ValueError(f"need at least 2 examples to fit normalization, got {len(examples)}")
    mat = np.stack([ex.features.to_array()[:N_CONTINUOUS] for ex in examples])
    mean = mat.mean(axis=0)
    std = mat.std(axis=0)  # population (divide-by-n) convention
    for i in range(N_CONTINUOUS):
        if std[i] == 0.0:
            logger.warning("continuous component %d is constant; std set to 1", i)
            std[i] = 1.0
    return NormalizationStats(mean=tuple(float(m) for m in mean),
                              std=tuple(float(s) for s in std))


def apply_normalization(stats: NormalizationStats, features: FeatureVector) -> FeatureVector:
    """Z-score the continuous components; history codes pass through."""
    arr = features.to_array()
    arr[:N_CONTINUOUS] = (arr[:N_CONTINUOUS] - np.array(stats.mean)) / np.array(stats.std)
    return FeatureVector(values=tuple(arr[0:4]), trends=tuple(arr[4:8]),
                         esa_history=features.esa_history, is_history=features.is_history)


def invert_normalization(stats: NormalizationStats, features: FeatureVector) -> FeatureVector:
    arr = features.to_array()
    arr[:N_CONTINUOUS] = arr[:N_CONTINUOUS] * np.array(stats.std) + np.array(stats.mean)
    return FeatureVector(values=tuple(arr[0:4]), trends=tuple(arr[4:8]),
                         esa_history=features.esa_history, is_history=features.is_history)


def normalized_matrix(stats: NormalizationStats,
                      examples: Sequence[TrainingExample]) -> np.ndarray:
    """(n, 16) matrix of normalized feature rows."""
    mat = np.stack([ex.features.to_array() for ex in examples])
    mat[:, :N_CONTINUOUS] = (mat[:, :N_CONTINUOUS] - np.array(stats.mean)) / np.array(stats.std)
    return mat


def normalized_prev_matrix(stats: NormalizationStats,
                           examples: Sequence[TrainingExample]) -> np.ndarray:
    """(n, 16) matrix of normalized predecessor rows; examples without a
    predecessor duplicate their own features (degenerate-input rule)."""
    rows = []
    for ex in examples:
        fv = ex.sequence_prev if ex.sequence_prev is not None else ex.features
        rows.append(fv.to_array())
    mat = np.stack(rows)
    mat[:, :N_CONTINUOUS] = (mat[:, :N_CONTINUOUS] - np.array(stats.mean)) / np.array(stats.std)
    return mat


EXPORT_COLUMNS = (
    ["patient_id", "occasion_index"]
    + ["hb", "mcv", "ferritin_locf", "tsat_locf"]
    + ["hb_trend", "mcv_trend", "ferritin_trend", "tsat_trend"]
    + [f"esa_hist_{i}" for i in range(HISTORY_LEN)]
    + [f"is_hist_{i}" for i in range(HISTORY_LEN)]
    + ["esa_label", "is_label"]
)


def export_examples_csv(examples: Sequence[TrainingExample]) -> bytes:
    """Raw (unnormalized) examples for offline inspection."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EXPORT_COLUMNS)
    for ex in examples:
        writer.writerow([ex.patient_id, ex.occasion_index,
                         *(f"{x:g}" for x in ex.features.to_array()),
                         ex.esa_label.value, ex.is_label.value])
    return buf.getvalue().encode("utf-8")

"""End-to-end recommendation for one patient timeline: featurize the latest
occasion, run both models, apply thresholds, and keep enough context for
audit replay and instant threshold what-ifs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .classify import classify_esa, classify_is
from .domain import Direction, Medication, PatientTimeline
from .features import FeatureVector, apply_normalization, features_at
from .network import ClassProbabilities, Model

HISTORY_LEN_DEFAULT = 4


class TimelineTooShort(ValueError):
    def __init__(self, got: int, needed: int):
        super().__init__(f"timeline has {got} occasions; {needed} required")
        self.got = got
        self.needed = needed


@dataclass(frozen=True)
class Recommendation:
    patient_id: str
    occasion_index: int
    esa_probabilities: ClassProbabilities
    esa_direction: Direction
    is_probabilities: ClassProbabilities
    is_direction: Direction
    thresholds: dict[Medication, float]
    features: FeatureVector  # unnormalized snapshot of the latest occasion
    esa_model_version: str
    is_model_version: str

    def to_json_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "occasion_index": self.occasion_index,
            "esa": {
                "p_up": self.esa_probabilities.p_up,
                "p_stay": self.esa_probabilities.p_stay,
                "p_down": self.esa_probabilities.p_down,
                "direction": self.esa_direction.value,
                "threshold": self.thresholds[Medication.ESA],
            },
            "is": {
                "p_up": self.is_probabilities.p_up,
                "p_stay": self.is_probabilities.p_stay,
                "direction": self.is_direction.value,
                "threshold": self.thresholds[Medication.IS],
            },
            "features": list(self.features.to_array()),
            "esa_model_version": self.esa_model_version,
            "is_model_version": self.is_model_version,
        }


def recommend(esa_model: Model, is_model: Model, timeline: PatientTimeline,
              thresholds: dict[Medication, float],
              history_len: int = HISTORY_LEN_DEFAULT) -> Recommendation:
    """Deterministic direction recommendation for the latest occasion."""
    needed = history_len + 1
    if len(timeline.occasions) < needed:
        raise TimelineTooShort(len(timeline.occasions), needed)
    if esa_model.normalization is None or is_model.normalization is None:
        raise ValueError("models must carry normalization statistics")
    if esa_model.normalization != is_model.normalization:
        raise ValueError("ESA and IS models were trained with different featurizer stats")
    t = len(timeline.occasions) - 1
    raw = features_at(timeline, t, history_len)
    x = apply_normalization(esa_model.normalization, raw).to_array()
    prev = None
    if t - 1 >= history_len:
        prev = apply_normalization(
            is_model.normalization, features_at(timeline, t - 1, history_len)).to_array()
    esa_probs = esa_model.forward_single(x)
    is_probs = is_model.forward_single(x, prev)
    return Recommendation(
        patient_id=timeline.patient_id,
        occasion_index=t,
        esa_probabilities=esa_probs,
        esa_direction=classify_esa(esa_probs, thresholds[Medication.ESA]),
        is_probabilities=is_probs,
        is_direction=classify_is(is_probs, thresholds[Medication.IS]),
        thresholds=dict(thresholds),
        features=raw,
        esa_model_version=esa_model.version_id(),
        is_model_version=is_model.version_id(),
    )


def what_if_threshold(recommendation: Recommendation,
                      sweep: Sequence[float]) -> list[tuple[float, Direction, Direction]]:
    """Re-classify the stored probabilities at each threshold; no network run.
    Returns (t, esa_direction, is_direction) per sweep point."""
    return [(float(t),
             classify_esa(recommendation.esa_probabilities, t),
             classify_is(recommendation.is_probabilities, t))
            for t in sweep]

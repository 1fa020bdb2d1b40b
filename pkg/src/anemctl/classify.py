"""Two-step thresholded classification.

Step one separates STAY from NON-STAY: STAY iff p_stay is strictly larger
than the threshold T. Step two assigns the NON-STAY case to whichever of
UP/DOWN has the larger probability; an exact tie goes to DOWN, erring against
over-administration.
"""
from __future__ import annotations

from dataclasses import dataclass

from .domain import Direction, Medication
from .network import ClassProbabilities


@dataclass(frozen=True)
class Threshold:
    t: float
    medication: Medication

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"threshold {self.t} outside [0, 1]")


def classify_esa(probs: ClassProbabilities, threshold: Threshold | float) -> Direction:
    t = threshold.t if isinstance(threshold, Threshold) else float(threshold)
    if probs.p_down is None:
        raise ValueError("ternary probabilities required for ESA classification")
    if probs.p_stay > t:
        return Direction.STAY
    return Direction.UP if probs.p_up > probs.p_down else Direction.DOWN


def classify_is(probs: ClassProbabilities, threshold: Threshold | float) -> Direction:
    t = threshold.t if isinstance(threshold, Threshold) else float(threshold)
    return Direction.STAY if probs.p_stay > t else Direction.UP


def classify(probs: ClassProbabilities, threshold: Threshold | float,
             medication: Medication) -> Direction:
    if medication is Medication.ESA:
        return classify_esa(probs, threshold)
    return classify_is(probs, threshold)

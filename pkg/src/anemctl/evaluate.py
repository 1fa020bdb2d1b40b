"""Validation machinery: decision audits, per-class correct-classification
rates, ROC/AUC over a threshold sweep, nearest-corner threshold selection,
before-physician categorization, leave-one-patient-out and independent-cohort
harnesses, class-weight tuning, and PCA projection of the feature space."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .classify import classify
from .domain import Cohort, Direction, Medication
from .features import (
    NormalizationStats,
    TrainingExample,
    build_examples,
    fit_normalization,
    normalized_matrix,
    normalized_prev_matrix,
)
from .network import (
    ClassProbabilities,
    DenseNetConfig,
    ESA_CLASSES,
    IS_CLASSES,
    Model,
    RecurrentNetConfig,
    labels_to_indices,
    train,
)

logger = logging.getLogger(__name__)

CATEGORY_CORRECT = "correct"
CATEGORY_BEFORE_PHYSICIAN = "before_physician"
CATEGORY_OTHER = "other_mismatch"

DEFAULT_LOOKAHEAD = 3


@dataclass(frozen=True)
class AuditRow:
    patient_id: str
    occasion_index: int
    ai_direction: Direction
    md_direction: Direction
    probabilities: ClassProbabilities
    category: str

    def __post_init__(self):
        if (self.category == CATEGORY_CORRECT) != (self.ai_direction == self.md_direction):
            raise ValueError("category 'correct' must match ai == md exactly")


@dataclass(frozen=True)
class RatesReport:
    r_total: float
    r_up: Optional[float]
    r_stay: Optional[float]
    r_down: Optional[float]
    counts: dict[Direction, int]
    before_physician_rate: float

    def class_rate(self, direction: Direction) -> Optional[float]:
        return {Direction.UP: self.r_up, Direction.STAY: self.r_stay,
                Direction.DOWN: self.r_down}[direction]


def rates(audit: Sequence[AuditRow]) -> RatesReport:
    """Correct-decision fraction overall and confined to each physician
    reference class; classes absent from the references get an absent rate."""
    if not audit:
        raise ValueError("empty audit")
    total = len(audit)
    correct = sum(1 for r in audit if r.ai_direction == r.md_direction)
    per_class: dict[Direction, Optional[float]] = {}
    counts: dict[Direction, int] = {}
    for direction in Direction:
        rows = [r for r in audit if r.md_direction == direction]
        counts[direction] = len(rows)
        per_class[direction] = (
            sum(1 for r in rows if r.ai_direction == direction) / len(rows)
            if rows else None)
    bp = sum(1 for r in audit if r.category == CATEGORY_BEFORE_PHYSICIAN)
    return RatesReport(r_total=correct / total,
                       r_up=per_class[Direction.UP],
                       r_stay=per_class[Direction.STAY],
                       r_down=per_class[Direction.DOWN],
                       counts=counts,
                       before_physician_rate=bp / total)


# -- ROC / threshold ---------------------------------------------------------

@dataclass(frozen=True)
class RocPoint:
    fpr: float
    tpr: float
    threshold: float


@dataclass(frozen=True)
class RocCurve:
    points: tuple[RocPoint, ...]  # sorted by threshold
    auc: float


def roc(probabilities: Sequence[ClassProbabilities],
        references: Sequence[Direction],
        grid: Optional[Sequence[float]] = None) -> RocCurve:
    """ROC over the STAY/NON-STAY binarization: positive = reference is not
    STAY; predicted positive at threshold t iff not (p_stay > t).

    The default grid is every distinct p_stay plus {0, 1}, which makes the
    trapezoidal AUC equal the pairwise ranking statistic.
    """
    if len(probabilities) != len(references):
        raise ValueError("probabilities and references must align")
    p_stay = np.array([p.p_stay for p in probabilities])
    positive = np.array([d is not Direction.STAY for d in references])
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: need both STAY and NON-STAY references")
    if grid is None:
        grid = sorted(set(p_stay.tolist()) | {0.0, 1.0})
    else:
        grid = sorted(grid)
        if grid[0] != 0.0 or grid[-1] != 1.0:
            raise ValueError("grid must cover [0, 1] including endpoints")
    points = []
    for t in grid:
        predicted_pos = p_stay <= t
        tpr = float(np.sum(predicted_pos & positive)) / n_pos
        fpr = float(np.sum(predicted_pos & ~positive)) / n_neg
        points.append(RocPoint(fpr=fpr, tpr=tpr, threshold=float(t)))
    by_fpr = sorted(points, key=lambda p: (p.fpr, p.tpr))
    if by_fpr[0].fpr != 0.0 or by_fpr[0].tpr != 0.0:
        # scores exactly at the grid minimum flip at t=0; anchor the area
        # at the predict-nothing-positive limit
        by_fpr.insert(0, RocPoint(fpr=0.0, tpr=0.0, threshold=0.0))
    auc = 0.0
    for a, b in zip(by_fpr, by_fpr[1:]):
        auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0
    return RocCurve(points=tuple(points), auc=auc)


def select_threshold(curve: RocCurve) -> float:
    """Grid threshold whose ROC point is nearest to the ideal corner (0, 1);
    ties broken toward higher TPR, then lower threshold."""
    best = min(curve.points,
               key=lambda p: (p.fpr ** 2 + (1.0 - p.tpr) ** 2, -p.tpr, p.threshold))
    return best.threshold


def roc_to_csv(curve: RocCurve) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["threshold", "fpr", "tpr"])
    for p in curve.points:
        writer.writerow([f"{p.threshold:.12g}", f"{p.fpr:.12g}", f"{p.tpr:.12g}"])
    return buf.getvalue().encode("utf-8")


# -- before-physician categorization -----------------------------------------

def categorize_before_physician(audit: Sequence[AuditRow],
                                lookahead: int = DEFAULT_LOOKAHEAD) -> list[AuditRow]:
    """Tag incorrect UP/DOWN rows whose direction the physician issued within
    the next `lookahead` occasions (physician said STAY at the row itself)."""
    md_at = {(r.patient_id, r.occasion_index): r.md_direction for r in audit}
    out = []
    for row in audit:
        if (row.category != CATEGORY_CORRECT
                and row.ai_direction in (Direction.UP, Direction.DOWN)
                and row.md_direction is Direction.STAY):
            hit = any(
                md_at.get((row.patient_id, row.occasion_index + k)) == row.ai_direction
                for k in range(1, lookahead + 1))
            if hit:
                out.append(replace(row, category=CATEGORY_BEFORE_PHYSICIAN))
                continue
        out.append(row)
    return out


def audit_to_csv(audit: Sequence[AuditRow]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["patient_id", "occasion_index", "ai_direction", "md_direction",
                     "p_up", "p_stay", "p_down", "category"])
    for r in audit:
        writer.writerow([r.patient_id, r.occasion_index, r.ai_direction.value,
                         r.md_direction.value, f"{r.probabilities.p_up:.6g}",
                         f"{r.probabilities.p_stay:.6g}",
                         "" if r.probabilities.p_down is None else f"{r.probabilities.p_down:.6g}",
                         r.category])
    return buf.getvalue().encode("utf-8")


def review_worksheet(audit: Sequence[AuditRow]) -> bytes:
    """Rows still mismatched after before-physician tagging, for human review."""
    return audit_to_csv([r for r in audit if r.category == CATEGORY_OTHER])


# -- training + auditing harnesses --------------------------------------------

@dataclass(frozen=True)
class ValidationSettings:
    """Everything a harness needs to train and audit both medications."""

    esa_config: DenseNetConfig
    is_config: RecurrentNetConfig
    history_len: int = 4
    esa_weights: Optional[dict[Direction, float]] = None  # None = inverse frequency
    is_weights: Optional[dict[Direction, float]] = None
    threshold_mode: str = "select_on_train"  # or "fixed"
    esa_threshold: float = 0.475
    is_threshold: float = 0.470
    lookahead: int = DEFAULT_LOOKAHEAD

    def __post_init__(self):
        if self.threshold_mode not in ("select_on_train", "fixed"):
            raise ValueError(f"unknown threshold_mode {self.threshold_mode!r}")


def inverse_frequency_weights(labels: Sequence[Direction],
                              classes: Sequence[Direction]) -> dict[Direction, float]:
    """majority_count / class_count per class (majority class gets weight 1)."""
    counts = {c: sum(1 for d in labels if d == c) for c in classes}
    if any(v == 0 for v in counts.values()):
        logger.warning("class missing from labels; absent classes get weight 1: %s", counts)
    top = max(counts.values())
    return {c: (top / v if v else 1.0) for c, v in counts.items()}


@dataclass
class TrainedPair:
    esa_model: Model
    is_model: Model
    thresholds: dict[Medication, float]
    stats: NormalizationStats


def _weights_array(weights: Optional[dict[Direction, float]],
                   labels: Sequence[Direction],
                   classes: Sequence[Direction]) -> np.ndarray:
    chosen = weights if weights is not None else inverse_frequency_weights(labels, classes)
    return np.array([chosen[c] for c in classes], dtype=np.float64)


def train_pair(train_examples: Sequence[TrainingExample],
               settings: ValidationSettings) -> TrainedPair:
    """Fit normalization on the training examples only, train both models,
    and resolve thresholds per the settings' policy."""
    stats = fit_normalization(train_examples)
    X = normalized_matrix(stats, train_examples)
    X_prev = normalized_prev_matrix(stats, train_examples)
    esa_labels = [ex.esa_label for ex in train_examples]
    is_labels = [ex.is_label for ex in train_examples]

    esa_model = train(settings.esa_config, X,
                      labels_to_indices(esa_labels, ESA_CLASSES),
                      class_weights=_weights_array(settings.esa_weights, esa_labels, ESA_CLASSES),
                      normalization=stats)
    is_model = train(settings.is_config, X,
                     labels_to_indices(is_labels, IS_CLASSES),
                     X_prev=X_prev,
                     class_weights=_weights_array(settings.is_weights, is_labels, IS_CLASSES),
                     normalization=stats)

    thresholds = {Medication.ESA: settings.esa_threshold,
                  Medication.IS: settings.is_threshold}
    if settings.threshold_mode == "select_on_train":
        for medication, model, refs in ((Medication.ESA, esa_model, esa_labels),
                                        (Medication.IS, is_model, is_labels)):
            probs = _probabilities(model, medication, X, X_prev)
            try:
                thresholds[medication] = select_threshold(roc(probs, refs))
            except ValueError:
                logger.warning("%s: single-class training labels, keeping fixed threshold",
                               medication.value)
    return TrainedPair(esa_model=esa_model, is_model=is_model,
                       thresholds=thresholds, stats=stats)


def _probabilities(model: Model, medication: Medication,
                   X: np.ndarray, X_prev: Optional[np.ndarray]) -> list[ClassProbabilities]:
    raw = model.predict_probs(X, X_prev if medication is Medication.IS else None)
    if medication is Medication.ESA:
        return [ClassProbabilities(p_up=float(p[0]), p_stay=float(p[1]), p_down=float(p[2]))
                for p in raw]
    return [ClassProbabilities(p_up=float(p[0]), p_stay=float(p[1])) for p in raw]


def audit_examples(pair: TrainedPair, examples: Sequence[TrainingExample],
                   medication: Medication,
                   lookahead: int = DEFAULT_LOOKAHEAD) -> list[AuditRow]:
    """Classify every example and categorize agreement with the physician."""
    model = pair.esa_model if medication is Medication.ESA else pair.is_model
    X = normalized_matrix(model.normalization, examples)
    X_prev = (normalized_prev_matrix(model.normalization, examples)
              if medication is Medication.IS else None)
    probs = _probabilities(model, medication, X, X_prev)
    t = pair.thresholds[medication]
    rows = []
    for ex, p in zip(examples, probs):
        md = ex.esa_label if medication is Medication.ESA else ex.is_label
        ai = classify(p, t, medication)
        rows.append(AuditRow(
            patient_id=ex.patient_id, occasion_index=ex.occasion_index,
            ai_direction=ai, md_direction=md, probabilities=p,
            category=CATEGORY_CORRECT if ai == md else CATEGORY_OTHER))
    return categorize_before_physician(rows, lookahead)


# -- LOPO / RDV ----------------------------------------------------------------

@dataclass
class FoldReport:
    patient_id: str
    reports: dict[Medication, Optional[RatesReport]]
    audits: dict[Medication, list[AuditRow]]
    thresholds: dict[Medication, float]


@dataclass
class LopoResult:
    aggregate: dict[Medication, RatesReport]
    folds: list[FoldReport]
    audits: dict[Medication, list[AuditRow]]


def lopo(cohort: Cohort, settings: ValidationSettings) -> LopoResult:
    """Leave-one-patient-out: N folds, each trained on N-1 patients with
    normalization refitted per fold, audited on the held-out patient."""
    if cohort.n_patients < 2:
        raise ValueError("LOPO needs at least 2 patients")
    examples_by_patient = {
        p.patient_id: [ex for ex in build_examples(
            Cohort(name="fold", patients=(p,)), settings.history_len)]
        for p in cohort.patients}
    folds: list[FoldReport] = []
    merged: dict[Medication, list[AuditRow]] = {m: [] for m in Medication}
    for held_out in cohort.patients:
        eval_examples = examples_by_patient[held_out.patient_id]
        if not eval_examples:
            logger.warning("patient %s contributes no examples; fold skipped",
                           held_out.patient_id)
            continue
        train_examples = [ex for p in cohort.patients if p.patient_id != held_out.patient_id
                          for ex in examples_by_patient[p.patient_id]]
        pair = train_pair(train_examples, settings)
        audits = {m: audit_examples(pair, eval_examples, m, settings.lookahead)
                  for m in Medication}
        folds.append(FoldReport(
            patient_id=held_out.patient_id,
            reports={m: rates(a) if a else None for m, a in audits.items()},
            audits=audits,
            thresholds=dict(pair.thresholds)))
        for m in Medication:
            merged[m].extend(audits[m])
    aggregate = {m: rates(merged[m]) for m in Medication}
    return LopoResult(aggregate=aggregate, folds=folds, audits=merged)


@dataclass
class RdvResult:
    reports: dict[Medication, RatesReport]
    audits: dict[Medication, list[AuditRow]]
    thresholds: dict[Medication, float]


def rdv(train_cohort: Cohort, valid_cohort: Cohort,
        settings: ValidationSettings) -> RdvResult:
    """Train once on one cohort, audit every usable occasion of a fully
    independent cohort."""
    train_ids = {p.patient_id for p in train_cohort.patients}
    valid_ids = {p.patient_id for p in valid_cohort.patients}
    overlap = train_ids & valid_ids
    if overlap:
        raise ValueError(f"cohorts share patient ids: {sorted(overlap)[:5]}")
    train_examples = build_examples(train_cohort, settings.history_len)
    valid_examples = build_examples(valid_cohort, settings.history_len)
    if not valid_examples:
        raise ValueError("validation cohort has no usable occasions")
    pair = train_pair(train_examples, settings)
    audits = {m: audit_examples(pair, valid_examples, m, settings.lookahead)
              for m in Medication}
    return RdvResult(reports={m: rates(a) for m, a in audits.items()},
                     audits=audits, thresholds=dict(pair.thresholds))


# -- class-weight tuning ---------------------------------------------------------

@dataclass
class WeightTuningResult:
    weights: dict[Direction, float]
    min_class_rate: float
    rate_spread: float
    budget_exhausted: bool


def tune_class_weights(cohort: Cohort, settings: ValidationSettings,
                       multipliers: Sequence[float] = (1.0, 1.5, 2.0, 3.0),
                       budget: int = 8,
                       dev_fraction: float = 0.25,
                       seed: int = 0) -> WeightTuningResult:
    """Coordinate search over multiplicative adjustments to the minority-class
    (UP/DOWN) inverse-frequency weights, maximizing the minimum per-class rate
    on a held-out patient slice."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(cohort.n_patients)
    n_dev = max(1, int(round(dev_fraction * cohort.n_patients)))
    dev_idx = set(order[:n_dev].tolist())
    train_patients = tuple(p for i, p in enumerate(cohort.patients) if i not in dev_idx)
    dev_patients = tuple(p for i, p in enumerate(cohort.patients) if i in dev_idx)
    train_examples = build_examples(Cohort(name="tune-train", patients=train_patients),
                                    settings.history_len)
    dev_examples = build_examples(Cohort(name="tune-dev", patients=dev_patients),
                                  settings.history_len)
    labels = [ex.esa_label for ex in train_examples]
    if any(sum(1 for d in labels if d == c) == 0 for c in ESA_CLASSES):
        raise ValueError("all three classes must be present to tune weights")
    base = inverse_frequency_weights(labels, ESA_CLASSES)

    def evaluate(mult: dict[Direction, float]) -> tuple[float, float]:
        weights = {c: base[c] * mult.get(c, 1.0) for c in ESA_CLASSES}
        pair = train_pair(train_examples,
                          replace(settings, esa_weights=weights))
        report = rates(audit_examples(pair, dev_examples, Medication.ESA))
        per = [r for r in (report.r_up, report.r_stay, report.r_down) if r is not None]
        return min(per), max(per) - min(per)

    current = {Direction.UP: 1.0, Direction.DOWN: 1.0}
    best_score, best_spread = evaluate(current)
    evaluations = 1
    exhausted = False
    for direction in (Direction.UP, Direction.DOWN):
        for m in multipliers:
            if m == current[direction]:
                continue
            if evaluations >= budget:
                exhausted = True
                break
            trial = dict(current)
            trial[direction] = m
            score, spread = evaluate(trial)
            evaluations += 1
            if score > best_score or (score == best_score and spread < best_spread):
                best_score, best_spread = score, spread
                current = trial
        if exhausted:
            logger.warning("weight-tuning budget exhausted; returning best so far")
            break
    weights = {c: base[c] * current.get(c, 1.0) for c in ESA_CLASSES}
    return WeightTuningResult(weights=weights, min_class_rate=best_score,
                              rate_spread=best_spread, budget_exhausted=exhausted)


# -- PCA ----------------------------------------------------------------------------

@dataclass(frozen=True)
class PcaResult:
    components: np.ndarray          # (k, d), orthonormal rows
    projections: np.ndarray         # (n, k)
    explained_variance: np.ndarray  # (k,) fractions, non-increasing
    eigenvalues: np.ndarray         # (k,)


def pca(X: np.ndarray, k: int = 3) -> PcaResult:
    """Top-k principal components of the (already normalized) feature matrix."""
    n, d = X.shape
    if k > d:
        raise ValueError(f"k={k} exceeds feature dimension {d}")
    if n < k:
        raise ValueError(f"need at least {k} examples, got {n}")
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / n
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues)[::-1][:k]
    top_vals = eigenvalues[order]
    components = eigenvectors[:, order].T
    total = float(eigenvalues.sum())
    explained = top_vals / total if total > 0 else np.zeros(k)
    return PcaResult(components=components,
                     projections=centered @ components.T,
                     explained_variance=explained,
                     eigenvalues=top_vals)


def pca_to_csv(result: PcaResult, examples: Sequence[TrainingExample]) -> bytes:
    """Projection rows with direction labels, for plotting."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    k = result.projections.shape[1]
    writer.writerow(["patient_id", "occasion_index", "esa_label", "is_label"]
                    + [f"pc{i + 1}" for i in range(k)])
    for ex, row in zip(examples, result.projections):
        writer.writerow([ex.patient_id, ex.occasion_index, ex.esa_label.value,
                         ex.is_label.value] + [f"{x:.6g}" for x in row])
    return buf.getvalue().encode("utf-8")

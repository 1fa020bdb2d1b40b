"""Seeded synthetic hemodialysis cohort generator.

Simulates per-patient hematology dynamics under a rule-based physician policy
and emits paired cohorts: a ground-truth variant where every direction sits on
the occasion of the exam it was based on, and a delayed variant where some
non-STAY directions are recorded one or two occasions late (with basis-lag
metadata set), mimicking clerical recording delays.

The dynamics are deliberately simple (first-order relaxation plus dose
response with iron gating); the generator exists to exercise the pipeline, not
to model physiology.
"""
from __future__ import annotations

import dataclasses
import datetime as dt
import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .domain import (
    BloodPanel,
    Cohort,
    Direction,
    Medication,
    OccasionRecord,
    PatientTimeline,
)

AMPOULE_UG = 10.0  # dose recorded as level * one ampoule
MAX_DOSE_LEVEL = 8
IRON_COURSE_WEEKS = 6
LAB_PERIOD = 4  # ferritin/tsat observed every 4th occasion (monthly vs weekly)


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PatientModel:
    """Per-patient hematology parameters."""

    hb_equilibrium: float      # g/dl without ESA support
    esa_sensitivity: float     # g/dl per dose level per occasion
    relaxation: float          # pull toward equilibrium per occasion
    noise_sd: float            # g/dl
    iron_store: float          # ferritin-equivalent state, ng/ml
    tsat_state: float          # percent
    mcv_state: float           # fl
    seed: int
    equilibrium_drift_sd: float = 0.0   # slow random walk of the equilibrium

    def __post_init__(self):
        if self.esa_sensitivity <= 0:
            raise ValueError("esa_sensitivity must be positive")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")


@dataclass(frozen=True)
class PhysicianPolicy:
    """Deterministic dosing rule evaluated on the recorded (rounded) panel."""

    target_low: float = 10.0
    target_high: float = 12.0
    hysteresis_margin: float = 0.5   # extra excursion needed to repeat a direction
    cooldown: int = 2                # occasions after a non-STAY before repeating
    ferritin_start: float = 60.0     # iron course start cutoffs (on latest observed)
    tsat_start: float = 20.0
    p_delay: float = 0.15            # probability a non-STAY record is delayed
    lag2_fraction: float = 0.10      # delayed records with lag 2 (rest lag 1)
    max_lag: int = 2

    def __post_init__(self):
        if not self.target_low < self.target_high:
            raise ValueError("target_low must be < target_high")
        if not 0 <= self.p_delay < 1:
            raise ValueError("p_delay must be in [0, 1)")
        if self.max_lag not in (1, 2):
            raise ValueError("max_lag must be 1 or 2")


@dataclass(frozen=True)
class CohortSpec:
    """Counts, parameter ranges, and seed for cohort generation."""

    n_patients: int = 60
    n_occasions: int = 60
    seed: int = 7
    name: str = "synthetic"
    policy: PhysicianPolicy = field(default_factory=PhysicianPolicy)
    hb_equilibrium_range: tuple[float, float] = (7.5, 9.0)
    sensitivity_range: tuple[float, float] = (0.30, 0.42)
    relaxation: float = 0.30
    noise_sd_range: tuple[float, float] = (0.28, 0.42)
    equilibrium_drift_sd: float = 0.06


def advance_hb(hb: float, equilibrium: float, sensitivity: float, dose_level: float,
               iron_factor: float, relaxation: float, noise: float) -> float:
    """One-occasion hemoglobin update: dose response gated by iron
    availability, first-order relaxation toward equilibrium, additive noise."""
    return hb + sensitivity * dose_level * iron_factor - relaxation * (hb - equilibrium) + noise


def _esa_decision(hb: float, policy: PhysicianPolicy,
                  recent: list[Direction]) -> Direction:
    """ESA direction from the recorded hb and the last `cooldown` directions.

    Out-of-band exam triggers UP/DOWN; within the cooldown window the same
    direction repeats only on a deeper excursion (hysteresis)."""
    low, high = policy.target_low, policy.target_high
    window = recent[-policy.cooldown:] if policy.cooldown else []
    if hb < low:
        if Direction.UP in window and hb >= low - policy.hysteresis_margin:
            return Direction.STAY
        return Direction.UP
    if hb > high:
        if Direction.DOWN in window and hb <= high + policy.hysteresis_margin:
            return Direction.STAY
        return Direction.DOWN
    return Direction.STAY


def simulate_patient(model: PatientModel, policy: PhysicianPolicy,
                     occasions: int,
                     patient_id: str = "P000",
                     start_date: dt.date = dt.date(2024, 1, 4),
                     ) -> tuple[PatientTimeline, PatientTimeline]:
    """Simulate one patient; returns (ground_truth, delayed) timelines.

    Both variants share the same physiology and administration trajectory:
    a delay moves only where the direction is *recorded*, never when the
    dose actually changed.
    """
    if occasions < 8:
        raise ValueError("need at least 8 occasions")
    rng = np.random.default_rng(model.seed)

    hb = float(np.clip(rng.uniform(10.3, 11.5), 6, 16))
    equilibrium = model.hb_equilibrium
    ferritin = model.iron_store
    tsat = model.tsat_state
    mcv = model.mcv_state
    dose_level = int(np.clip(
        round(model.relaxation * (11.0 - model.hb_equilibrium) / model.esa_sensitivity),
        0, MAX_DOSE_LEVEL))
    iron_weeks = 0          # weeks since the active course began, 0 = none
    last_obs_ferritin: Optional[float] = None
    last_obs_tsat: Optional[float] = None
    esa_recent: list[Direction] = []

    rows = []  # (panel, esa_dir, is_dir, dose_level, iron_weeks)
    for t in range(occasions):
        hb_rec = round(hb, 1)
        mcv_rec = round(mcv, 1)
        labs_due = t % LAB_PERIOD == 0
        ferritin_rec = round(ferritin, 1) if labs_due else None
        tsat_rec = round(float(np.clip(tsat, 0, 100)), 1) if labs_due else None
        if labs_due:
            last_obs_ferritin = ferritin_rec
            last_obs_tsat = tsat_rec

        esa_dir = _esa_decision(hb_rec, policy, esa_recent)
        esa_recent.append(esa_dir)

        # iron course: start on latest observed labs, run 6 weeks, stop
        if iron_weeks == 0 and last_obs_ferritin is not None and last_obs_tsat is not None \
                and last_obs_ferritin < policy.ferritin_start \
                and last_obs_tsat < policy.tsat_start:
            is_dir = Direction.UP
            iron_weeks = 1
        else:
            is_dir = Direction.STAY
            if iron_weeks > 0:
                iron_weeks = iron_weeks + 1 if iron_weeks < IRON_COURSE_WEEKS else 0

        if esa_dir is Direction.UP:
            dose_level = min(dose_level + 1, MAX_DOSE_LEVEL)
        elif esa_dir is Direction.DOWN:
            dose_level = max(dose_level - 1, 0)

        rows.append((BloodPanel(hb=hb_rec, mcv=mcv_rec, ferritin=ferritin_rec,
                                tsat=tsat_rec),
                     esa_dir, is_dir, dose_level, iron_weeks))

        # physiology update for the next occasion
        iron_factor = 1.0 if tsat >= 15.0 else 0.8
        noise = rng.normal(0.0, model.noise_sd)
        equilibrium += rng.normal(0.0, model.equilibrium_drift_sd)
        equilibrium = float(np.clip(equilibrium, 7.2, 10.2))
        hb = advance_hb(hb, equilibrium, model.esa_sensitivity,
                        dose_level, iron_factor, model.relaxation, noise)
        if not (4.0 < hb < 20.0):
            raise SimulationError(
                f"patient {patient_id}: hb {hb:.2f} left (4, 20) at occasion {t}")
        consumption = 0.8 * dose_level
        if iron_weeks > 0:
            ferritin = min(ferritin + 15.0, 400.0)
            tsat = min(tsat + 3.0, 60.0)
        else:
            ferritin = max(ferritin - consumption - rng.uniform(0.0, 2.0), 5.0)
            tsat = float(np.clip(tsat - 0.15 * dose_level
                                 - 0.15 * (tsat - 18.0) + rng.normal(0, 0.8), 2.0, 60.0))
        mcv += -0.05 * (mcv - 92.0) - (0.4 if tsat < 15.0 else 0.0) + rng.normal(0, 0.3)
        mcv = float(np.clip(mcv, 70.0, 110.0))

    # inject recording delays into a copy of the direction sequences
    esa_dirs = [r[1] for r in rows]
    is_dirs = [r[2] for r in rows]
    delayed_esa = list(esa_dirs)
    delayed_is = list(is_dirs)
    esa_lags: list[Optional[int]] = [None] * occasions
    is_lags: list[Optional[int]] = [None] * occasions
    for t in range(occasions):
        for dirs, delayed, lags in ((esa_dirs, delayed_esa, esa_lags),
                                    (is_dirs, delayed_is, is_lags)):
            if dirs[t] is Direction.STAY or delayed[t] is not dirs[t]:
                continue
            if rng.random() >= policy.p_delay:
                continue
            lag = 2 if (policy.max_lag == 2 and rng.random() < policy.lag2_fraction) else 1
            target = t + lag
            # only inject when the move is losslessly reversible: target
            # exists, is STAY in ground truth, and not already occupied
            if target >= occasions or dirs[target] is not Direction.STAY \
                    or delayed[target] is not Direction.STAY:
                continue
            delayed[target] = dirs[t]
            delayed[t] = Direction.STAY
            lags[target] = lag

    ground = PatientTimeline(patient_id=patient_id, occasions=tuple(
        OccasionRecord(
            occasion_index=t,
            exam_date=start_date + dt.timedelta(weeks=t),
            panel=rows[t][0],
            esa_direction=esa_dirs[t],
            is_direction=is_dirs[t],
            esa_dose=round(rows[t][3] * AMPOULE_UG, 1),
            is_active_weeks=rows[t][4],
            esa_basis_lag=0,
            is_basis_lag=0,
        ) for t in range(occasions)))
    delayed = PatientTimeline(patient_id=patient_id, occasions=tuple(
        OccasionRecord(
            occasion_index=t,
            exam_date=start_date + dt.timedelta(weeks=t),
            panel=rows[t][0],
            esa_direction=delayed_esa[t],
            is_direction=delayed_is[t],
            esa_dose=round(rows[t][3] * AMPOULE_UG, 1),
            is_active_weeks=rows[t][4],
            esa_basis_lag=esa_lags[t] if esa_lags[t] is not None else 0,
            is_basis_lag=is_lags[t] if is_lags[t] is not None else 0,
        ) for t in range(occasions)))
    return ground, delayed


_PARAM_STREAM_SALT = 0xC0010


def _patient_seed(cohort_seed: int, index: int) -> int:
    # stable across runs and platforms: derive from a SeedSequence spawn key
    return int(np.random.SeedSequence((cohort_seed, index)).generate_state(1)[0])


def generate_cohort(spec: CohortSpec) -> tuple[Cohort, Cohort]:
    """Generate (ground_truth, delayed) cohorts. Deterministic for a fixed
    seed; per-patient streams are independent of patient count."""
    param_rng = np.random.default_rng(np.random.SeedSequence((spec.seed, _PARAM_STREAM_SALT)))
    ground_patients = []
    delayed_patients = []
    for i in range(spec.n_patients):
        model = PatientModel(
            hb_equilibrium=float(param_rng.uniform(*spec.hb_equilibrium_range)),
            esa_sensitivity=float(param_rng.uniform(*spec.sensitivity_range)),
            relaxation=spec.relaxation,
            noise_sd=float(param_rng.uniform(*spec.noise_sd_range)),
            equilibrium_drift_sd=spec.equilibrium_drift_sd,
            iron_store=float(param_rng.uniform(40.0, 120.0)),
            tsat_state=float(param_rng.uniform(14.0, 30.0)),
            mcv_state=float(param_rng.uniform(85.0, 98.0)),
            seed=_patient_seed(spec.seed, i),
        )
        pid = f"P{i:03d}"
        start = dt.date(2024, 1, 4) + dt.timedelta(days=int(param_rng.integers(0, 7)))
        ground, delayed = simulate_patient(model, spec.policy, spec.n_occasions,
                                           patient_id=pid, start_date=start)
        ground_patients.append(ground)
        delayed_patients.append(delayed)
    return (Cohort(name=f"{spec.name}-ground", patients=tuple(ground_patients)),
            Cohort(name=f"{spec.name}-delayed", patients=tuple(delayed_patients)))


def manifest(spec: CohortSpec) -> str:
    """JSON manifest of seed and parameters, written beside generated CSVs."""
    doc = dataclasses.asdict(spec)
    doc["policy"] = dataclasses.asdict(spec.policy)
    return json.dumps(doc, indent=2, sort_keys=True)

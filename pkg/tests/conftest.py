import datetime as dt

import pytest

from anemctl.domain import BloodPanel, Cohort, Direction, OccasionRecord, PatientTimeline
from anemctl.evaluate import ValidationSettings, train_pair
from anemctl.features import build_examples
from anemctl.network import DenseNetConfig, RecurrentNetConfig
from anemctl.rectifier import rectify
from anemctl.simulate import CohortSpec, generate_cohort

# scaled-down configs used throughout the tests; the full-scale settings
# (10x512, 1000 epochs) live in config defaults documentation
SMALL_ESA = DenseNetConfig(hidden_layers=2, units=32, dropout_rate=0.10,
                           l1_coefficient=1e-4, learning_rate=1e-3, epochs=60,
                           batch_size=64, seed=11)
SMALL_IS = RecurrentNetConfig(hidden_layers=1, units=32, dropout_rate=0.10,
                              l1_coefficient=1e-4, learning_rate=1e-3, epochs=40,
                              batch_size=64, seed=12)

TINY_ESA = DenseNetConfig(hidden_layers=1, units=16, dropout_rate=0.0,
                          l1_coefficient=0.0, epochs=20, batch_size=64, seed=1)
TINY_IS = RecurrentNetConfig(hidden_layers=1, units=16, dropout_rate=0.0,
                             l1_coefficient=0.0, epochs=15, batch_size=64, seed=2)


def make_record(t, hb, *, mcv=92.0, ferritin=None, tsat=None,
                esa=Direction.STAY, is_=Direction.STAY, dose=30.0, weeks=0,
                esa_lag=None, is_lag=None,
                start=dt.date(2024, 1, 4)):
    return OccasionRecord(
        occasion_index=t,
        exam_date=start + dt.timedelta(weeks=t),
        panel=BloodPanel(hb=hb, mcv=mcv, ferritin=ferritin, tsat=tsat),
        esa_direction=esa,
        is_direction=is_,
        esa_dose=dose,
        is_active_weeks=weeks,
        esa_basis_lag=esa_lag,
        is_basis_lag=is_lag,
    )


def make_timeline(hbs, patient_id="P000", **kwargs):
    return PatientTimeline(patient_id=patient_id, occasions=tuple(
        make_record(t, hb, **kwargs) for t, hb in enumerate(hbs)))


def midband_timeline(patient_id="MID", n=8):
    """Canonical fixture: latest panel mid-band with flat trends."""
    recs = []
    for t in range(n):
        recs.append(make_record(
            t, 11.0, mcv=92.0,
            ferritin=90.0 if t % 4 == 0 else None,
            tsat=25.0 if t % 4 == 0 else None))
    return PatientTimeline(patient_id=patient_id, occasions=tuple(recs))


@pytest.fixture(scope="session")
def default_cohorts():
    """The default simulator settings: 60 patients x 60 occasions, seed 7,
    p_delay 0.15, max lag 2."""
    return generate_cohort(CohortSpec())


@pytest.fixture(scope="session")
def rectified_default(default_cohorts):
    _, delayed = default_cohorts
    rectified, _ = rectify(delayed)
    return rectified


@pytest.fixture(scope="session")
def small_cohorts():
    return generate_cohort(CohortSpec(n_patients=12, n_occasions=40, seed=5))


@pytest.fixture(scope="session")
def small_settings():
    return ValidationSettings(esa_config=SMALL_ESA, is_config=SMALL_IS)


@pytest.fixture(scope="session")
def small_trained_pair(small_cohorts, small_settings):
    _, delayed = small_cohorts
    rectified, _ = rectify(delayed)
    return train_pair(build_examples(rectified), small_settings)

"""Shared builders for small synthetic samples and registries."""

import os

import numpy as np
import pytest

from riskcal import COHORT, SURVEY, RegistrySummary, Sample

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")


def make_sample(kind, x, d, w=None, covariates=None, stratum=None, psu=None):
    """Build a Sample from plain lists with sensible defaults."""
    x = np.asarray(x, dtype=float)
    n = x.size
    d = np.asarray(d, dtype=float)
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if stratum is None:
        stratum = np.zeros(n, dtype=int)
    if psu is None:
        psu = np.arange(n)
    covs = {k: np.asarray(v, dtype=float) for k, v in (covariates or {}).items()}
    return Sample(kind=kind, ids=np.arange(n), x=x, d=d, w=w,
                  stratum=np.asarray(stratum), psu=np.asarray(psu),
                  covariates=covs)


def random_sample(rng, n, kind=COHORT, p_cov=1, event_rate=0.4, weights=False):
    """A random right-censored sample with ``p_cov`` standard normal columns."""
    x = rng.exponential(2.0, n) + 1e-3
    d = (rng.uniform(size=n) < event_rate).astype(float)
    if d.sum() == 0:
        d[rng.integers(n)] = 1.0
    covs = {f"z{k + 1}": rng.standard_normal(n) for k in range(p_cov)}
    w = rng.uniform(0.5, 5.0, n) if (weights and kind != COHORT) else None
    return make_sample(kind, x, d, w=w, covariates=covs)


def flat_registry(m=10_000, events=(("1", 30.0), ("2", 20.0)),
                  nonevents=None, rate=0.02, horizon=20.0):
    """Registry with a single constant-rate hazard segment."""
    return RegistrySummary(
        population_size=m,
        event_cells=dict(events),
        nonevent_cells=dict(nonevents) if nonevents else None,
        hazard_start=[0.0], hazard_end=[horizon], hazard_rate=[rate],
    )


@pytest.fixture(scope="session")
def fixture_paths():
    return {
        "cohort": os.path.join(DATA_DIR, "cohort.csv"),
        "survey": os.path.join(DATA_DIR, "survey.csv"),
        "registry": os.path.join(DATA_DIR, "registry.json"),
    }

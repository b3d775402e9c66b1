import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dtic.batch import PaddedCohort
from dtic.timeseries import Encounter, IrregularSeries, VARIABLES

settings.register_profile("dtic", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("dtic")


def make_encounter(enc_id="e", points=None, seventh=None, label=None):
    """Encounter from ``{variable: [(t, x), ...]}``; unspecified variables are empty."""
    points = points or {}
    series = [IrregularSeries(v, [p[0] for p in points.get(v, [])], [p[1] for p in points.get(v, [])])
              for v in VARIABLES]
    sev = None
    if seventh is not None:
        sev = [IrregularSeries(v, [p[0] for p in seventh.get(v, [])], [p[1] for p in seventh.get(v, [])])
               for v in VARIABLES]
    return Encounter(enc_id, series, sev, label)


def random_scaled_encounter(rng, enc_id="r", max_obs=6, seventh=True):
    pts, sev = {}, {}
    for v in VARIABLES:
        n = int(rng.integers(1, max_obs + 1))
        t = np.sort(rng.choice(np.arange(0, 360, 7.0), size=n, replace=False))
        pts[v] = list(zip(t, rng.random(n)))
        if seventh and rng.random() < 0.7:
            sev[v] = [(360.0 + 30 * rng.random(), float(rng.random()))]
    return make_encounter(enc_id, pts, sev if seventh else None)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_batch():
    r = np.random.default_rng(7)
    return PaddedCohort.from_encounters([random_scaled_encounter(r, f"b{i}") for i in range(3)])


# one summary line per acceptance criterion, shown even when output is captured
ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")

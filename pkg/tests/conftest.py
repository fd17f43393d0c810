import os
from pathlib import Path

import pytest
from hypothesis import settings

from sapa.ingest import build_traveler_records, engineer_observables
from sapa.synthgen import SynthConfig, generate_population

GOLDEN = Path(__file__).parent / "golden"

settings.register_profile("ci", deadline=None, max_examples=100)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture(scope="session")
def golden():
    return GOLDEN


@pytest.fixture(scope="session")
def small_population():
    """~600 persons; enough ever-users for 3 folds."""
    cfg = SynthConfig(n_persons=600, target_trip_rate=0.05, seed=11, n_tracts=30)
    bundle, truth, emb = generate_population(cfg)
    travelers = build_traveler_records(bundle, emb)
    return bundle, truth, emb, travelers


@pytest.fixture(scope="session")
def small_trips(small_population):
    bundle, _, emb, _ = small_population
    trips, _ = engineer_observables(bundle, embeddings=emb)
    return trips


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and return the flag."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

import numpy as np
import pandas as pd
import pytest

from sapa.ingest import (
    SchemaConfig,
    age_group,
    build_traveler_records,
    engineer_observables,
    load_survey,
    parse_age,
    read_travelers,
    read_trips,
    write_bundle,
    write_records,
)
from sapa.synthgen import SynthConfig, generate_population


def write_fixture(root, extra_trip=False):
    root.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({
        "household_id": ["H1", "H2", "H3"],
        "income": ["50-100k", "<25k", "150k+"],
        "vehicle_count": [1, 0, 2],
        "home_tract_id": ["t1", "t2", "t3"],
        "spatial_profile": ["Dense Urban Core", "Inner Suburb", "Outer Suburb"],
    }).to_csv(root / "households.csv", index=False)
    pd.DataFrame({
        "person_id": ["P1", "P2", "P3", "P4", "P5"],
        "household_id": ["H1", "H1", "H2", "H3", "H3"],
        "age": ["34", "35-44", "70", "", "19"],
        "gender": ["female", "male", "female", "male", "female"],
        "employment": ["full_time", "full_time", "retired", "student", "student"],
        "education": ["bachelors", "graduate", "high_school", "some_college", "some_college"],
    }).to_csv(root / "persons.csv", index=False)
    rows = []
    modes = ["drive", "ridesourcing", "walk", "transit"]
    for i in range(20):
        pid = f"P{i % 5 + 1}"
        mode = modes[i % 4] if pid in ("P1", "P2") else ("walk" if i % 2 else "transit")
        rows.append({
            "trip_id": f"T{i:02d}", "person_id": pid, "travel_mode": mode,
            "trip_purpose": "work" if i % 3 == 0 else "shopping",
            # 2023-04-08 is a Saturday
            "depart_timestamp": f"2023-04-{3 + i % 7:02d} 0{8 + i % 2}:15:00",
            "traveltime": 10 + i, "distance": "" if i == 4 else 2.5 + i, "fare": "" if i % 5 == 0 else 5.0,
        })
    if extra_trip:
        rows[-1]["person_id"] = "P999"
    pd.DataFrame(rows).to_csv(root / "trips.csv", index=False)
    return root


def test_identity_load(tmp_path):
    b = load_survey(write_fixture(tmp_path / "t"))
    assert b.counts() == (3, 5, 20)


def test_unknown_person_dropped_with_warning(tmp_path):
    b = load_survey(write_fixture(tmp_path / "t", extra_trip=True))
    assert b.counts() == (3, 5, 19)
    assert b.load_report["dropped_trips"] == 1
    assert b.load_report["warnings"]


def test_missing_required_column(tmp_path):
    root = write_fixture(tmp_path / "t")
    df = pd.read_csv(root / "trips.csv").drop(columns=["fare"])
    df.to_csv(root / "trips.csv", index=False)
    with pytest.raises(ValueError, match="fare"):
        load_survey(root)


def test_schema_renames_columns(tmp_path):
    root = write_fixture(tmp_path / "t")
    df = pd.read_csv(root / "trips.csv").rename(columns={"travel_mode": "mode_1"})
    df.to_csv(root / "trips.csv", index=False)
    schema = SchemaConfig(columns={"trips": {"travel_mode": "mode_1"}})
    assert load_survey(root, schema).counts() == (3, 5, 20)


def test_ever_user_definition(tmp_path):
    b = load_survey(write_fixture(tmp_path / "t"))
    recs = {r.person_id: r for r in build_traveler_records(b, embedding_dim=4)}
    assert recs["P2"].ever_uses_ridesourcing  # drive + ridesourcing
    assert not recs["P3"].ever_uses_ridesourcing  # walk + transit
    assert recs["P4"].socio_demographics["age_group"] == "missing"
    assert not recs["P1"].has_embedding and len(recs["P1"].spatial_embedding) == 4


def test_observable_rules(tmp_path):
    b = load_survey(write_fixture(tmp_path / "t"))
    trips, imp = engineer_observables(b)
    by_id = {t.trip_id: t for t in trips}
    assert by_id["T00"].observables["is_mandatory"] == 1.0
    assert by_id["T01"].observables["is_mandatory"] == 0.0
    assert by_id["T05"].observables["is_weekend"] == 1.0  # April 8
    assert by_id["T02"].observables["is_weekend"] == 0.0
    # missing distance imputed with the median, missing fare from the fare policy
    assert by_id["T04"].observables["distance"] == imp.medians["distance"]
    assert by_id["T00"].observables["fare"] == pytest.approx(2.0 + 2.5 * 2.5)
    assert by_id["T01"].label_ridesourcing == 1


def test_imputation_fits_on_train_persons_only(tmp_path):
    b = load_survey(write_fixture(tmp_path / "t"))
    _, all_imp = engineer_observables(b)
    _, train_imp = engineer_observables(b, train_person_ids=["P1"])
    assert train_imp.n_fit_rows == 4
    assert train_imp.medians["traveltime"] != all_imp.medians["traveltime"]


def test_age_rules():
    assert age_group(34) == "18–34"
    assert age_group(35) == "35–64"
    assert age_group(65) == "65+"
    assert age_group(12) == "under_18"
    assert parse_age("35-44") == 39.5
    assert parse_age("65+") == 65
    assert np.isnan(parse_age("unknown"))


def test_synthetic_bundle_round_trips(tmp_path):
    bundle, truth, emb = generate_population(SynthConfig(n_persons=300, seed=5, n_tracts=20))
    write_bundle(bundle, tmp_path / "tables")
    back = load_survey(tmp_path / "tables")
    assert back.counts() == bundle.counts()
    for name in ("households", "persons", "trips"):
        a = getattr(bundle, name).reset_index(drop=True)
        c = getattr(back, name)[list(a.columns)]
        for col in a.columns:
            left = pd.to_numeric(a[col], errors="coerce")
            right = pd.to_numeric(c[col], errors="coerce")
            if left.notna().all():
                np.testing.assert_allclose(left.to_numpy(float), right.to_numpy(float), err_msg=f"{name}.{col}")
            else:
                assert a[col].astype(str).where(a[col].notna(), "").tolist() == \
                    c[col].astype(str).where(c[col].notna(), "").tolist(), f"{name}.{col}"


def test_recovered_ever_rate_equals_generated(small_population):
    bundle, truth, _, travelers = small_population
    rate = np.mean([t.ever_uses_ridesourcing for t in travelers])
    assert rate == pytest.approx(truth.realized_ever_rate, abs=0)


def test_record_files_round_trip(tmp_path, small_population, small_trips):
    _, _, _, travelers = small_population
    write_records(tmp_path, travelers[:50], small_trips[:200])
    assert read_travelers(tmp_path / "travelers.csv") == travelers[:50]
    back = read_trips(tmp_path / "trips.csv")
    assert [t.trip_id for t in back] == [t.trip_id for t in small_trips[:200]]
    assert back[7].observables == pytest.approx(small_trips[7].observables)

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sapa.dimensions import INTERACTION_COLUMNS, LATENT_DIMENSIONS, PROPENSITY_COLUMN
from sapa.features import (
    BASELINE,
    FULL,
    SCENARIOS,
    FeatureMatrix,
    TagVocabulary,
    TripTable,
    assemble_stage2,
    build_interactions,
    build_tag_vocabulary,
    featurize_tags,
    scenario_columns,
)
from sapa.ingest import TripRecord
from sapa.synthesis.parsing import LatentProfile, Persona, fallback_persona

OBS = {"traveltime": 30.0, "fare": 12.5, "household_vehicles": 2.0, "distance": 4.0, "is_mandatory": 1.0,
       "is_weekend": 0.0, "age": 40.0}


def profile(pid, **scores):
    base = {d: 5 for d in LATENT_DIMENSIONS}
    base.update(scores)
    return LatentProfile(pid, base)


def test_interaction_products():
    v = build_interactions(profile("P", time_sensitivity=8, spontaneity=7), OBS)
    assert v["interaction_time"] == 240.0
    assert v["interaction_spont"] == 0.0
    assert list(v) == list(INTERACTION_COLUMNS)


def test_all_fives_factor_out():
    v = build_interactions(profile("P"), OBS)
    operands = [OBS[k] for k in ("traveltime", "fare", "household_vehicles", "distance", "is_mandatory",
                                 "is_weekend")]
    assert list(v.values()) == [5 * x for x in operands]


def test_tag_encoding():
    vocab = TagVocabulary(("tech-savvy", "cost-conscious", "urban"))
    personas = {"a": Persona("a", "m", ("tech-savvy", "urban"), "j"), "b": fallback_persona("b"),
                "c": Persona("c", "m", ("tech-savvy", "novel"), "j")}
    cols, X = featurize_tags(personas, vocab, ["a", "b", "c"])
    assert cols[-2:] == ["tag_count", "tag_oov"]
    np.testing.assert_array_equal(X[0], [1, 0, 1, 2, 0])
    np.testing.assert_array_equal(X[1], [0, 0, 0, 0, 0])
    np.testing.assert_array_equal(X[2], [1, 0, 0, 2, 1])


def test_vocabulary_uses_given_persons_only():
    personas = {f"p{i}": Persona(f"p{i}", "m", ("common", "rare") if i == 0 else ("common",), "j")
                for i in range(6)}
    personas["test"] = Persona("test", "m", ("leak",) * 1, "j")
    vocab = build_tag_vocabulary(personas, [f"p{i}" for i in range(6)], min_frequency=2)
    assert vocab.tags == ("common",)


def trips_fixture():
    recs = []
    for i, (pid, tt) in enumerate([("A", 10.0), ("A", 20.0), ("B", 15.0)]):
        obs = dict(OBS, traveltime=tt)
        recs.append(TripRecord(f"T{i}", pid, obs, int(pid == "B")))
    return recs


def test_scenario_column_arithmetic():
    trips = trips_fixture()
    profiles = {"A": profile("A", time_sensitivity=9), "B": profile("B")}
    scores = {"A": 0.2, "B": 0.7}
    base = assemble_stage2(trips, scores, profiles, BASELINE)
    full = assemble_stage2(trips, scores, profiles, FULL)
    extra = set(full.columns) - set(base.columns)
    assert not set(base.columns) & ({PROPENSITY_COLUMN} | set(LATENT_DIMENSIONS) | set(INTERACTION_COLUMNS))
    assert len(full.columns) - len(base.columns) == 14 and len(extra) == 14
    sizes = {s: len(assemble_stage2(trips, scores, profiles, s).columns) - len(base.columns) for s in SCENARIOS}
    assert sizes == {"observables": 0, "obs+latent": 7, "obs+propensity": 1, "full_no_interactions": 8,
                     "full_all_interactions": 14}
    lat = [full.columns.index(d) for d in LATENT_DIMENSIONS]
    np.testing.assert_array_equal(full.values[0, lat], full.values[1, lat])
    it = full.columns.index("interaction_time")
    assert full.values[0, it] == 90.0 and full.values[1, it] == 180.0


def test_missing_person_is_fatal():
    with pytest.raises(ValueError, match="B"):
        assemble_stage2(trips_fixture(), {"A": 0.1, "B": 0.1}, {"A": profile("A")}, FULL)
    with pytest.raises(ValueError, match="unknown scenario"):
        scenario_columns(["x"], "everything")


def test_custom_scenario_groups():
    custom = {"obs+interactions": ("observables", "interactions")}
    fm = assemble_stage2(trips_fixture(), {}, {"A": profile("A"), "B": profile("B")}, "obs+interactions", custom)
    assert fm.columns[-6:] == list(INTERACTION_COLUMNS)


def test_feature_matrix_round_trip(tmp_path):
    fm = assemble_stage2(trips_fixture(), {"A": 1 / 3, "B": 0.7}, {"A": profile("A"), "B": profile("B")}, FULL)
    fm.write(tmp_path / "m.csv")
    back = FeatureMatrix.read(tmp_path / "m.csv")
    assert back.columns == fm.columns and back.row_ids == fm.row_ids
    np.testing.assert_array_equal(back.values, fm.values)
    with pytest.raises(ValueError):
        FeatureMatrix(["r"], ["a"], np.array([[np.nan]]), "x")


@given(st.lists(st.integers(1, 10), min_size=7, max_size=7), st.floats(0, 100), st.floats(0, 100))
def test_interactions_scale_linearly(scores, tt, fare):
    prof = dict(zip(LATENT_DIMENSIONS, scores))
    obs = dict(OBS, traveltime=tt, fare=fare)
    a = build_interactions(prof, obs)
    b = build_interactions({k: 2 * v for k, v in prof.items()}, obs)
    assert all(b[k] == pytest.approx(2 * a[k]) for k in a)


def test_trip_table_subset():
    t = TripTable.from_records(trips_fixture())
    s = t.subset(np.array([False, True, True]))
    assert s.trip_ids == ["T1", "T2"] and s.column("traveltime").tolist() == [20.0, 15.0]

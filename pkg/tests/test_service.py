import csv

import pytest
from fastapi.testclient import TestClient

from sapa.service.app import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def test_health(client):
    assert client.get("/health").json()["status"] == "ok"


def test_metrics(client):
    r = client.post("/metrics", json={"labels": [1, 0, 1, 0], "scores": [0.9, 0.8, 0.7, 0.1]})
    body = r.json()
    assert r.status_code == 200 and body["tp"] == 2 and body["fp"] == 1
    assert body["pr_auc"] == pytest.approx((1 + 2 / 3) / 2)
    single = client.post("/metrics", json={"labels": [0, 0], "scores": [0.1, 0.2]}).json()
    assert single["pr_auc"] is None and "single_class" in single["flags"]
    assert client.post("/metrics", json={"labels": [1], "scores": [0.1, 0.2]}).status_code == 422


def test_compare_reproduces_table8(client, golden):
    rows = [r for r in csv.DictReader(open(golden / "table8_fold_pr_auc.csv")) if r["classifier"] == "LightGBM"]
    arms = {r["arm"]: [float(r[f"fold{i}"]) for i in range(1, 6)] for r in rows}
    body = client.post("/stats/compare", json={"baseline": arms["baseline"], "treatment": arms["sapa"]}).json()
    assert body["wilcoxon_p"] == 0.03125
    assert body["cohens_d"] == pytest.approx(3.279, abs=0.05)
    assert body["formatted"].startswith("+")
    bad = client.post("/stats/compare", json={"baseline": [1, 2], "treatment": [1, 2]})
    assert bad.status_code == 422


def test_prompt_and_parse_round_trip(client, golden):
    t = {"person_id": "P1", "socio_demographics": {"age": 30}, "spatial_profile_label": "Inner Suburb",
         "spatial_embedding": [0.1, 0.2]}
    p = client.post("/synthesis/persona-prompt", json=t).json()
    assert p["purpose"] == "persona" and "Inner Suburb" in p["user_text"]
    raw = (golden / "listing4_persona.json").read_text()
    persona = client.post("/synthesis/parse-persona", json={"raw": raw, "person_id": "P1"}).json()
    assert persona["primary_motivation"] == "Convenience and flexibility in travel"
    lp = client.post("/synthesis/latent-prompt", json=persona).json()
    assert "tech-savvy" in lp["user_text"] and lp["temperature"] == 0.3
    latent = client.post("/synthesis/parse-latent",
                         json={"raw": (golden / "listing4_latent_response.json").read_text()}).json()
    assert latent["scores"]["tech_affinity"] == 10
    assert client.post("/synthesis/parse-persona", json={"raw": "nope"}).status_code == 422


def test_interactions(client):
    scores = {d: 5 for d in ("time_sensitivity", "cost_sensitivity", "tech_affinity", "pro_car_attitude",
                             "environmental_concern", "convenience_comfort", "spontaneity")}
    scores["time_sensitivity"] = 8
    trip = {"traveltime": 30, "fare": 10, "household_vehicles": 1, "distance": 3, "is_mandatory": 0,
            "is_weekend": 1}
    body = client.post("/features/interactions", json={"scores": scores, "trip": trip}).json()
    assert body["interaction_time"] == 240 and body["interaction_spont"] == 5
    assert client.post("/features/interactions", json={"scores": {}, "trip": trip}).status_code == 422


def test_ablation_job(client):
    cfg = {"data": {"synth": {"n_persons": 300, "target_trip_rate": 0.05, "n_tracts": 10, "seed": 2}},
           "split": {"k": 3}, "scenarios": ["observables", "full_all_interactions"], "classifiers": ["gbdt"],
           "learners": {"gbdt": {"n_estimators": 5, "max_depth": 2}}, "include_test": False}
    r = client.post("/ablations", json={"config": cfg})
    assert r.status_code == 202
    job = client.get(f"/ablations/{r.json()['job_id']}").json()
    # TestClient runs background tasks before returning
    assert job["status"] == "done", job.get("error")
    assert "Mean CV PR-AUC" in job["summary"] and len(job["report"]["cells"]) == 6
    assert client.post("/ablations", json={"config": {"bogus": 1}}).status_code == 422
    assert client.get("/ablations/nope").status_code == 404

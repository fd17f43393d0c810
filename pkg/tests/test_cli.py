import json

import pytest
import yaml
from click.testing import CliRunner

from sapa.cli import main

SMALL = {"n_persons": 400, "target_trip_rate": 0.05, "n_tracts": 20}
FAST_LEARNERS = {"gbdt": {"n_estimators": 10, "max_depth": 3}, "forest": {"n_trees": 5, "max_depth": 6}}


def run(args, ok=True):
    res = CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)
    if ok:
        assert res.exit_code == 0, res.output
    return res


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


def test_stepwise_commands(workdir):
    w = workdir
    cfg = w / "synth.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))
    out = run(["synth", "--config", cfg, "--seed", 3, "--out", w / "pop"]).output
    assert "400 persons" in out
    run(["ingest", "--tables", w / "pop/tables", "--embeddings", w / "pop/embeddings.csv", "--out", w / "rec"])
    run(["split", "--travelers", w / "rec/travelers.csv", "--k", 3, "--out", w / "split.csv"])
    run(["ingest", "--tables", w / "pop/tables", "--embeddings", w / "pop/embeddings.csv",
         "--split", w / "split.csv", "--out", w / "rec"])
    backend = ["--backend", "oracle", "--truth", w / "pop/truth", "--cache", w / "cache.jsonl"]
    run(["personas", "--travelers", w / "rec/travelers.csv", *backend, "--out", w / "personas.jsonl"])
    out = run(["score-latents", "--travelers", w / "rec/travelers.csv", "--personas", w / "personas.jsonl",
               *backend, "--out", w / "profiles.csv"]).output
    assert "0 failures" in out
    out = run(["train-propensity", "--travelers", w / "rec/travelers.csv", "--split", w / "split.csv",
               "--personas", w / "personas.jsonl", "--out", w / "prop"]).output
    assert "PR-AUC" in out and "0.3214" in out
    run(["build-features", "--trips", w / "rec/trips.csv", "--propensity", w / "prop/propensity_scores.csv",
         "--profiles", w / "profiles.csv", "--out", w / "full.csv"])
    manifest = json.loads((w / "full.csv.manifest.json").read_text())
    assert manifest["columns"][-1] == "interaction_spont"
    out = run(["train", "--features", w / "full.csv", "--split", w / "split.csv", "--out", w / "model.json"]).output
    assert json.loads(out)["pr_auc"] > 0


def test_oracle_without_truth_fails(workdir):
    res = CliRunner().invoke(main, ["personas", "--travelers", str(workdir / "rec/travelers.csv"),
                                    "--out", str(workdir / "x.jsonl")])
    assert res.exit_code != 0


def test_ablate_and_report(workdir):
    cfg = {
        "seed": 1,
        "data": {"synth": dict(SMALL, seed=4)},
        "split": {"k": 3},
        "scenarios": ["observables", "full_all_interactions"],
        "learners": FAST_LEARNERS,
    }
    path = workdir / "ablate.yaml"
    path.write_text(yaml.safe_dump(cfg))
    out = run(["ablate", "--config", path, "--out", workdir / "run"]).output
    assert "Mean CV PR-AUC" in out
    for name in ("report.json", "cells.csv", "table3_overall.csv", "table6_significance.csv",
                 "segment_profiles.csv", "timings.json"):
        assert (workdir / "run" / name).exists(), name
    listed = run(["report", "--run", workdir / "run", "--format", "csv", "--out", workdir / "again"]).output
    assert "table5_ablation.csv" in listed
    assert (workdir / "again/cells.csv").read_bytes() == (workdir / "run/cells.csv").read_bytes()


def test_ablate_exits_nonzero_when_cells_fail(workdir):
    cfg = {"data": {"synth": dict(SMALL, seed=5)}, "split": {"k": 3}, "scenarios": ["observables"],
           "classifiers": ["forest"], "learners": {"forest": {"n_trees": 0}}, "include_test": False}
    path = workdir / "bad.yaml"
    path.write_text(yaml.safe_dump(cfg))
    res = CliRunner().invoke(main, ["ablate", "--config", str(path), "--out", str(workdir / "bad")])
    assert res.exit_code == 2


def test_unknown_config_key_rejected(workdir):
    path = workdir / "typo.yaml"
    path.write_text(yaml.safe_dump({"sead": 1}))
    res = CliRunner().invoke(main, ["ablate", "--config", str(path), "--out", str(workdir / "typo")])
    assert res.exit_code != 0 and "sead" in str(res.exception)

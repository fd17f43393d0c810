"""End-to-end run from one YAML config.

Config schema (all keys optional)::

    seed: 42
    data:
      synth: {n_persons: 10000, seed: 0, ...}   # generate in memory, or
      tables: DIR                                # load survey tables
      embeddings: FILE
      schema: FILE
      truth: DIR                                 # needed only for the oracle backend
    synthesis:
      backend: oracle | mock | http
      model: NAME           # http
      base_url: URL         # http
      noise_sigma: 0        # oracle; number or "shuffled"
      malformed_rate: 0.0   # oracle
      concurrency: 1
      cache: FILE
    split: {test_fraction: 0.2, strata: [ever, spatial, year], k: 5}
    propensity: {llm_features: true, mode: crossfit}
    scenarios: [observables, obs+latent, obs+propensity, full_no_interactions, full_all_interactions]
    scenario_groups: {name: [observables, propensity, latent, interactions]}   # extra scenarios
    classifiers: [gbdt, forest]
    learners: {gbdt: {...}, forest: {...}}
    include_test: true
    workers: 1            # grid cells trained concurrently
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from sapa.features import SCENARIOS, TripTable
from sapa.harness import StudyData, run_ablation
from sapa.ingest import build_traveler_records, engineer_observables, load_survey, read_embeddings
from sapa.learners import GbdtParams
from sapa.propensity import PropensityConfig, crossfit_propensity
from sapa.split import assign_split, grouped_kfold
from sapa.synthesis import HttpBackend, MockBackend, synthesize_all
from sapa.synthgen import OracleBackend, SynthConfig, generate_population, read_truth

log = logging.getLogger(__name__)

DEFAULTS = {
    "seed": 42,
    "data": {"synth": {}},
    "synthesis": {"backend": "oracle", "noise_sigma": 0.0, "malformed_rate": 0.0, "concurrency": 1, "cache": None},
    "split": {"test_fraction": 0.2, "strata": ["ever", "spatial", "year"], "k": 5},
    "propensity": {"llm_features": True, "mode": "crossfit"},
    "scenarios": list(SCENARIOS),
    "scenario_groups": {},
    "classifiers": ["gbdt", "forest"],
    "learners": {},
    "include_test": True,
    "workers": 1,
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "data":
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path_or_mapping):
    if isinstance(path_or_mapping, (str, Path)):
        raw = yaml.safe_load(Path(path_or_mapping).read_text(encoding="utf-8")) or {}
    else:
        raw = path_or_mapping or {}
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return _merge(DEFAULTS, raw)


def config_digest(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def make_backend(syn, truth=None):
    kind = syn.get("backend", "oracle")
    if kind == "oracle":
        if truth is None:
            raise ValueError("the oracle backend needs ground truth (synthetic data or data.truth)")
        return OracleBackend(truth, syn.get("noise_sigma", 0.0), syn.get("seed", 0), syn.get("malformed_rate", 0.0))
    if kind == "mock":
        return MockBackend(syn.get("seed", 0))
    if kind == "http":
        if not syn.get("model"):
            raise ValueError("the http backend needs synthesis.model")
        return HttpBackend(syn["model"], syn.get("base_url", "https://api.openai.com/v1"),
                           syn.get("api_key_env", "OPENAI_API_KEY"))
    raise ValueError(f"unknown backend {kind!r}")


@dataclass
class PipelineResult:
    report: object
    travelers: list
    synthesis: object
    split: object
    folds: object
    propensity: dict
    timings: dict = field(default_factory=dict)
    truth: object = None


def run_pipeline(config, progress=None) -> PipelineResult:
    cfg = load_config(config)
    seed = int(cfg["seed"])
    timings = {}
    t0 = time.perf_counter()

    data = cfg["data"]
    truth = None
    if data.get("tables"):
        bundle = load_survey(data["tables"], data.get("schema"))
        embeddings = read_embeddings(data["embeddings"]) if data.get("embeddings") else None
        if data.get("truth"):
            truth = read_truth(data["truth"])
    else:
        bundle, truth, embeddings = generate_population(SynthConfig.from_mapping(data.get("synth", {})))
    travelers = build_traveler_records(bundle, embeddings,
                                       embedding_dim=len(next(iter(embeddings.values()))) if embeddings else 128)
    timings["data"] = time.perf_counter() - t0

    t = time.perf_counter()
    syn = cfg["synthesis"]
    backend = make_backend(syn, truth)
    synth = synthesize_all(travelers, backend, syn.get("cache"), int(syn.get("concurrency", 1)))
    timings["synthesis"] = time.perf_counter() - t

    t = time.perf_counter()
    sp = cfg["split"]
    split = assign_split(travelers, sp["test_fraction"], tuple(sp["strata"]), seed)
    train_set = set(split.train)
    folds = grouped_kfold([x for x in travelers if x.person_id in train_set], sp["k"], seed)
    records, _ = engineer_observables(bundle, train_person_ids=split.train, embeddings=embeddings)
    trips = TripTable.from_records(records)
    timings["features"] = time.perf_counter() - t

    t = time.perf_counter()
    pc = cfg["propensity"]
    gbdt = GbdtParams(**{**cfg["learners"].get("gbdt", {}), "seed": seed})
    prop_cfg = PropensityConfig(use_llm_features=bool(pc["llm_features"]), gbdt=gbdt, seed=seed)
    scores = crossfit_propensity(travelers, split, folds, prop_cfg, synth.personas, pc["mode"])
    timings["propensity"] = time.perf_counter() - t

    t = time.perf_counter()
    groups = {**SCENARIOS, **{k: tuple(v) for k, v in cfg["scenario_groups"].items()}}
    study = StudyData(trips, split, folds, synth.profiles, scores)
    report = run_ablation(study, cfg["scenarios"], tuple(cfg["classifiers"]), cfg["learners"], seed,
                          bool(cfg["include_test"]), groups, config_digest=config_digest(cfg), progress=progress,
                          workers=int(cfg["workers"]))
    report.metadata["synthesis_failures"] = len(synth.failures)
    report.metadata["propensity_mode"] = pc["mode"]
    timings["ablation"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t0
    return PipelineResult(report, travelers, synth, split, folds, scores, timings, truth)

"""Synthetic survey populations with planted latent attitudes, and an oracle chat backend.

The choice utility reuses the six attitude x trip-context products, so a
model that sees the attitudes is correctly specified and one that only sees
observables is not.  Ground truth is written to its own directory and is
never read by pipeline stages; only :class:`OracleBackend` consumes it.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
import pandas as pd
import yaml
from scipy.special import expit

from sapa.dimensions import INTERACTIONS, LATENT_DIMENSIONS, PROMPT_NAMES
from sapa.ingest import SurveyBundle, write_bundle, write_embeddings
from sapa.synthesis.prompts import PromptPair

GENDERS = ("female", "male", "nonbinary")
GENDER_P = (0.49, 0.49, 0.02)
EMPLOYMENT = ("full_time", "part_time", "student", "retired", "unemployed")
EDUCATION = ("high_school", "some_college", "bachelors", "graduate")
EDUCATION_P = (0.25, 0.28, 0.29, 0.18)
INCOME = ("<25k", "25-50k", "50-100k", "100-150k", "150k+")
INCOME_P = (0.14, 0.18, 0.30, 0.20, 0.18)
PROFILES = ("Dense Urban Core", "Inner Suburb", "Outer Suburb", "Exurban Fringe")
PROFILE_P = (0.22, 0.33, 0.30, 0.15)
PURPOSES = ("work", "school", "shopping", "errand", "social", "meal", "recreation", "escort")
OTHER_MODES = ("drive", "passenger", "transit", "walk", "bike")

# Default planted effects.  Interaction weights act on centered attitudes times
# standardized trip operands; main weights act on centered attitudes alone.
DEFAULT_INTERACTION_WEIGHTS = {
    "interaction_time": 0.9,
    "interaction_cost": -0.9,
    "interaction_procar": -0.9,
    "interaction_convenience": 0.8,
    "interaction_env": -0.5,
    "interaction_spont": 1.0,
}
DEFAULT_MAIN_WEIGHTS = {
    "time_sensitivity": 0.3,
    "cost_sensitivity": -0.2,
    "tech_affinity": 0.9,
    "pro_car_attitude": -0.5,
    "environmental_concern": 0.0,
    "convenience_comfort": 0.3,
    "spontaneity": 0.4,
}
DEFAULT_OBSERVABLE_WEIGHTS = {
    "distance": 0.35,
    "household_vehicles": -0.45,
    "is_weekend": 0.3,
    "night": 0.5,
}


@dataclass
class SynthConfig:
    n_persons: int = 10_000
    trips_mean: float = 5.0
    trips_dispersion: float = 3.0
    target_trip_rate: float = 0.0103
    # informational: the ever-user share is an outcome of the realized trips
    ever_user_rate: float = 0.046
    interaction_weights: dict = field(default_factory=lambda: dict(DEFAULT_INTERACTION_WEIGHTS))
    main_weights: dict = field(default_factory=lambda: dict(DEFAULT_MAIN_WEIGHTS))
    observable_weights: dict = field(default_factory=lambda: dict(DEFAULT_OBSERVABLE_WEIGHTS))
    demographic_link: float = 1.0
    latent_sd: float = 1.6
    person_noise: float = 0.3
    noise_sigma: float = 0.0
    n_tracts: int = 200
    embedding_dim: int = 8
    survey_years: tuple = (2017, 2019, 2021, 2023)
    missing_rate: float = 0.02
    rate_tolerance: float = 0.02
    seed: int = 42

    def __post_init__(self):
        self.survey_years = tuple(int(y) for y in self.survey_years)
        for name in ("target_trip_rate", "ever_user_rate"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if self.n_persons < 1 or self.trips_mean < 1.0:
            raise ValueError("need n_persons >= 1 and trips_mean >= 1")
        if self.noise_sigma < 0 or self.latent_sd < 0 or self.person_noise < 0:
            raise ValueError("noise scales must be non-negative")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError("missing_rate must lie in [0, 1)")
        for group in (self.interaction_weights, self.main_weights, self.observable_weights):
            for key, value in group.items():
                if not math.isfinite(float(value)):
                    raise ValueError(f"weight {key} is not finite")
        unknown = set(self.interaction_weights) - {c for c, _, _ in INTERACTIONS}
        unknown |= set(self.main_weights) - set(LATENT_DIMENSIONS)
        if unknown:
            raise ValueError(f"unknown weight keys: {sorted(unknown)}")

    @classmethod
    def from_mapping(cls, data):
        data = dict(data or {})
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown synth config keys: {sorted(extra)}")
        base = cls()
        for key in ("interaction_weights", "main_weights", "observable_weights"):
            if key in data:
                data[key] = {**getattr(base, key), **data[key]}
        return cls(**data)

    @classmethod
    def load(cls, path):
        return cls.from_mapping(yaml.safe_load(Path(path).read_text(encoding="utf-8")))

    def to_dict(self):
        out = asdict(self)
        out["survey_years"] = list(self.survey_years)
        return out

    def zero_latent_weights(self):
        self.interaction_weights = {k: 0.0 for k in self.interaction_weights}
        self.main_weights = {k: 0.0 for k in self.main_weights}
        return self


@dataclass
class GroundTruth:
    latents: dict  # person_id -> np.ndarray of 7 reals in [1, 10]
    trip_probability: dict  # trip_id -> true choice probability
    intercept: float
    realized_trip_rate: float
    realized_ever_rate: float
    config: dict = field(default_factory=dict)

    def rounded(self, person_id):
        return {d: int(np.clip(np.round(v), 1, 10)) for d, v in zip(LATENT_DIMENSIONS, self.latents[person_id])}


def _choice(rng, options, p, size):
    return np.asarray(options, dtype=object)[rng.choice(len(options), size=size, p=p)]


def _latent_means(age, income_idx, employment, education, vehicles, profile_idx, link):
    """Demographic-linked attitude means on the 1-10 scale (before person noise)."""
    young = (age < 35).astype(float)
    old = (age >= 65).astype(float)
    rich = (income_idx >= 3).astype(float)
    poor = (income_idx <= 1).astype(float)
    urban = (profile_idx == 0).astype(float)
    rural = (profile_idx == 3).astype(float)
    worker = (employment == "full_time").astype(float)
    student = (employment == "student").astype(float)
    grad = (education == "graduate").astype(float)
    car = np.minimum(vehicles, 3.0)
    shifts = np.column_stack([
        0.9 * worker + 0.6 * rich - 0.5 * old,  # time
        1.2 * poor + 0.8 * student - 0.8 * rich,  # cost
        1.2 * young - 1.4 * old + 0.4 * grad,  # tech
        0.6 * car + 0.8 * rural - 0.9 * urban,  # pro car
        0.8 * urban + 0.6 * grad - 0.4 * rural,  # environment
        0.7 * rich + 0.5 * old,  # convenience
        0.9 * young + 0.4 * student - 0.7 * old,  # spontaneity
    ])
    return 5.5 + link * (shifts - shifts.mean(axis=0))


def _embeddings(rng, n_tracts, dim):
    centers = rng.normal(0.0, 1.0, size=(len(PROFILES), dim))
    tract_profile = rng.choice(len(PROFILES), size=n_tracts, p=PROFILE_P)
    vectors = centers[tract_profile] + rng.normal(0.0, 0.35, size=(n_tracts, dim))
    ids = [f"53033{i:06d}" for i in range(n_tracts)]
    return ids, tract_profile, {tid: tuple(np.round(v, 6).tolist()) for tid, v in zip(ids, vectors)}


def _tune_intercept(linear, uniforms, target, tol, lo=-40.0, hi=20.0, max_iter=200):
    """Intercept whose realized positive rate (U < sigmoid(b + linear)) hits target."""
    def rate(b):
        return float(np.mean(uniforms < expit(b + linear)))

    if rate(lo) > target * (1 + tol) or rate(hi) < target * (1 - tol):
        raise ValueError(f"target rate {target} unattainable with the configured weights")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        r = rate(mid)
        if abs(r - target) <= tol * target:
            return mid, r
        if r < target:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    r = rate(mid)
    if abs(r - target) > 0.1 * target:
        raise ValueError(f"bisection could not reach target rate {target} (best {r:.5f})")
    return mid, r


def generate_population(cfg: SynthConfig | None = None):
    """Returns (SurveyBundle, GroundTruth, tract embeddings)."""
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_persons

    tract_ids, tract_profile, embeddings = _embeddings(rng, cfg.n_tracts, cfg.embedding_dim)

    # households of 1-4 persons until n persons exist
    sizes = []
    while sum(sizes) < n:
        sizes.append(int(rng.choice([1, 2, 3, 4], p=[0.3, 0.35, 0.2, 0.15])))
    sizes[-1] -= sum(sizes) - n
    n_hh = len(sizes)
    hh_tract = rng.integers(0, cfg.n_tracts, size=n_hh)
    hh_profile = tract_profile[hh_tract]
    hh_income = rng.choice(len(INCOME), size=n_hh, p=INCOME_P)
    base_vehicles = np.array([1.2, 1.7, 2.1, 2.4])[hh_profile] + 0.25 * (hh_income - 2)
    hh_vehicles = np.clip(rng.poisson(np.clip(base_vehicles, 0.1, None)), 0, 5)
    hh_year = rng.choice(cfg.survey_years, size=n_hh)
    hh_ids = [f"H{i + 1:06d}" for i in range(n_hh)]

    hh_of_person = np.repeat(np.arange(n_hh), sizes)
    age = np.clip(np.round(rng.gamma(7.0, 6.2, size=n) + 8), 16, 92)
    employment = np.empty(n, dtype=object)
    for i, a in enumerate(age):
        if a < 23:
            p = (0.15, 0.25, 0.55, 0.0, 0.05)
        elif a < 65:
            p = (0.62, 0.15, 0.05, 0.03, 0.15)
        else:
            p = (0.1, 0.1, 0.0, 0.75, 0.05)
        employment[i] = EMPLOYMENT[rng.choice(5, p=p)]
    gender = _choice(rng, GENDERS, GENDER_P, n)
    education = _choice(rng, EDUCATION, EDUCATION_P, n)
    income_idx = hh_income[hh_of_person]
    profile_idx = hh_profile[hh_of_person]
    vehicles = hh_vehicles[hh_of_person].astype(float)

    means = _latent_means(age, income_idx, employment, education, vehicles, profile_idx, cfg.demographic_link)
    latents = np.clip(means + rng.normal(0.0, cfg.latent_sd, size=means.shape), 1.0, 10.0)
    person_effect = rng.normal(0.0, cfg.person_noise, size=n)
    person_ids = [f"P{i + 1:06d}" for i in range(n)]

    # trips: 1 + negative binomial with mean trips_mean - 1
    extra = cfg.trips_mean - 1.0
    if extra > 0:
        r = cfg.trips_dispersion
        counts = 1 + rng.negative_binomial(r, r / (r + extra), size=n)
    else:
        counts = np.ones(n, dtype=int)
    owner = np.repeat(np.arange(n), counts)
    m = len(owner)
    purpose = np.empty(m, dtype=object)
    emp_of_trip = employment[owner]
    for j in range(m):
        e = emp_of_trip[j]
        if e in ("full_time", "part_time"):
            p = (0.3, 0.02, 0.16, 0.14, 0.12, 0.1, 0.1, 0.06)
        elif e == "student":
            p = (0.06, 0.3, 0.14, 0.1, 0.18, 0.1, 0.1, 0.02)
        else:
            p = (0.02, 0.01, 0.27, 0.22, 0.18, 0.12, 0.14, 0.04)
        purpose[j] = PURPOSES[rng.choice(len(PURPOSES), p=p)]
    is_mandatory = np.isin(purpose, ("work", "school")).astype(float)

    start = datetime(2023, 4, 3)  # a Monday
    day = rng.integers(0, 28, size=m)
    hour = np.clip(rng.normal(13.5, 4.5, size=m), 0, 23.98)
    hour = np.where(is_mandatory == 1, np.clip(rng.normal(8.0, 1.6, size=m), 5, 11), hour)
    minute = np.floor((hour % 1) * 60).astype(int)
    stamps = [(start + timedelta(days=int(d), hours=int(h), minutes=int(mi))).strftime("%Y-%m-%d %H:%M:%S")
              for d, h, mi in zip(day, hour, minute)]
    is_weekend = (day % 7 >= 5).astype(float)
    night = ((hour >= 21) | (hour < 5)).astype(float)

    median_dist = np.array([2.0, 4.0, 6.5, 10.0])[profile_idx[owner]]
    distance = np.round(np.clip(rng.lognormal(np.log(median_dist), 0.75), 0.1, 80.0), 2)
    speed = rng.uniform(12.0, 35.0, size=m)  # mph
    traveltime = np.maximum(1.0, np.round(distance / speed * 60.0 + rng.exponential(4.0, size=m)))
    fare = np.round((2.0 + 2.5 * distance) * rng.lognormal(0.0, 0.15, size=m), 2)
    trip_vehicles = vehicles[owner]

    operands = {"traveltime": traveltime, "fare": fare, "household_vehicles": trip_vehicles,
                "distance": distance, "is_mandatory": is_mandatory, "is_weekend": is_weekend}

    def standardized(name):
        x = operands[name]
        if name in ("is_mandatory", "is_weekend"):
            return x
        return (x - x.mean()) / (x.std() + 1e-12)

    centered = (latents[owner] - 5.5) / 2.25
    linear = person_effect[owner].copy()
    for col, dim, op in INTERACTIONS:
        w = float(cfg.interaction_weights.get(col, 0.0))
        if w:
            linear += w * centered[:, LATENT_DIMENSIONS.index(dim)] * standardized(op)
    for dim, w in cfg.main_weights.items():
        linear += float(w) * centered[:, LATENT_DIMENSIONS.index(dim)]
    obs = cfg.observable_weights
    linear += float(obs.get("distance", 0.0)) * standardized("distance")
    linear += float(obs.get("household_vehicles", 0.0)) * standardized("household_vehicles")
    linear += float(obs.get("is_weekend", 0.0)) * is_weekend
    linear += float(obs.get("night", 0.0)) * night

    uniforms = rng.random(m)
    intercept, realized = _tune_intercept(linear, uniforms, cfg.target_trip_rate, cfg.rate_tolerance)
    prob = expit(intercept + linear)
    chosen = uniforms < prob

    car_avail = trip_vehicles > 0
    mode = np.empty(m, dtype=object)
    alt = rng.random(m)
    for j in range(m):
        if chosen[j]:
            mode[j] = "ridesourcing"
        elif car_avail[j]:
            mode[j] = OTHER_MODES[np.searchsorted([0.62, 0.77, 0.88, 0.97, 1.0], alt[j], side="right")]
        else:
            mode[j] = OTHER_MODES[1 + np.searchsorted([0.2, 0.6, 0.9, 1.0], alt[j], side="right")]

    fare_cells = fare.astype(object)
    fare_cells[rng.random(m) < cfg.missing_rate] = np.nan
    age_cells = np.array([str(int(a)) for a in age], dtype=object)
    age_cells[rng.random(n) < cfg.missing_rate] = np.nan
    income_cells = np.asarray(INCOME, dtype=object)[hh_income]
    income_cells[rng.random(n_hh) < cfg.missing_rate] = np.nan

    households = pd.DataFrame({
        "household_id": hh_ids,
        "income": income_cells,
        "vehicle_count": hh_vehicles.astype(float),
        "home_tract_id": [tract_ids[t] for t in hh_tract],
        "spatial_profile": [PROFILES[p] for p in hh_profile],
        "survey_year": [str(y) for y in hh_year],
    })
    persons = pd.DataFrame({
        "person_id": person_ids,
        "household_id": [hh_ids[h] for h in hh_of_person],
        "age": age_cells,
        "gender": gender,
        "employment": employment,
        "education": education,
    })
    trip_ids = [f"T{j + 1:07d}" for j in range(m)]
    trips = pd.DataFrame({
        "trip_id": trip_ids,
        "person_id": [person_ids[o] for o in owner],
        "travel_mode": mode,
        "trip_purpose": purpose,
        "depart_timestamp": stamps,
        "traveltime": traveltime,
        "distance": distance,
        "fare": pd.to_numeric(pd.Series(fare_cells), errors="coerce"),
    })
    ever = np.bincount(owner, weights=chosen.astype(float), minlength=n) > 0
    bundle = SurveyBundle(households, persons, trips, None, max(cfg.survey_years), {"warnings": []})
    truth = GroundTruth(
        latents={pid: latents[i] for i, pid in enumerate(person_ids)},
        trip_probability=dict(zip(trip_ids, prob.tolist())),
        intercept=float(intercept),
        realized_trip_rate=float(realized),
        realized_ever_rate=float(ever.mean()),
        config=cfg.to_dict(),
    )
    return bundle, truth, embeddings


# ------------------------------------------------------------------- files


def write_truth(truth: GroundTruth, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "latents.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["person_id", *LATENT_DIMENSIONS])
        for pid in sorted(truth.latents):
            w.writerow([pid, *[repr(float(v)) for v in truth.latents[pid]]])
    with open(out_dir / "trip_probability.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["trip_id", "probability"])
        for tid in sorted(truth.trip_probability):
            w.writerow([tid, repr(float(truth.trip_probability[tid]))])
    meta = {k: getattr(truth, k) for k in ("intercept", "realized_trip_rate", "realized_ever_rate", "config")}
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")


def read_truth(out_dir) -> GroundTruth:
    out_dir = Path(out_dir)
    lat = pd.read_csv(out_dir / "latents.csv", dtype={"person_id": str}, float_precision="round_trip")
    latents = {pid: lat.loc[i, list(LATENT_DIMENSIONS)].to_numpy(dtype=float) for i, pid in enumerate(lat["person_id"])}
    tp = pd.read_csv(out_dir / "trip_probability.csv", dtype={"trip_id": str}, float_precision="round_trip")
    meta = json.loads((out_dir / "meta.json").read_text(encoding="utf-8"))
    return GroundTruth(latents, dict(zip(tp["trip_id"], tp["probability"].astype(float))), **meta)


def write_population(bundle, truth, embeddings, out_dir):
    """tables/ (survey CSVs), embeddings.csv, and truth/ kept apart from the tables."""
    out_dir = Path(out_dir)
    write_bundle(bundle, out_dir / "tables")
    write_embeddings(embeddings, out_dir / "embeddings.csv")
    write_truth(truth, out_dir / "truth")


# ------------------------------------------------------------------ oracle

_BAND_TAGS = {
    "time_sensitivity": ("time-pressed", "patient"),
    "cost_sensitivity": ("budget-conscious", "spends-freely"),
    "tech_affinity": ("tech-savvy", "tech-averse"),
    "pro_car_attitude": ("car-loyal", "car-free-minded"),
    "environmental_concern": ("eco-minded", "eco-indifferent"),
    "convenience_comfort": ("comfort-seeking", "hardship-tolerant"),
    "spontaneity": ("spontaneous", "planner"),
}
_MOTIVATION = {
    "time_sensitivity": "Getting there fast",
    "cost_sensitivity": "Keeping travel costs low",
    "tech_affinity": "App-enabled flexible travel",
    "pro_car_attitude": "Control of personal car",
    "environmental_concern": "Low-impact sustainable travel",
    "convenience_comfort": "Comfort and ease",
    "spontaneity": "Freedom for last-minute plans",
}


def _unit_hash(*parts):
    h = hashlib.sha256("\x00".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "big") / 2**64


class OracleBackend:
    """Answers persona and scoring prompts from planted ground truth.

    Persona tags encode coarse bands (e.g. "tech-savvy" iff tech_affinity >= 7,
    "tech-averse" iff <= 3).  Latent scores are clamp(round(true + N(0, sigma)))
    per dimension; ``noise_sigma="shuffled"`` answers with another person's
    truth under a fixed permutation.  ``malformed_rate`` makes that share of
    persons always answer the persona prompt with unparseable text.
    """

    kind = "oracle"

    def __init__(self, truth: GroundTruth, noise_sigma=0.0, seed=0, malformed_rate=0.0):
        self.truth = truth
        self.shuffled = noise_sigma == "shuffled"
        self.noise_sigma = 0.0 if self.shuffled else float(noise_sigma)
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0 or 'shuffled'")
        self.seed = seed
        self.malformed_rate = float(malformed_rate)
        self._donor = {}
        if self.shuffled:
            ids = sorted(truth.latents)
            perm = np.random.default_rng([seed, 7]).permutation(len(ids))
            self._donor = {pid: ids[j] for pid, j in zip(ids, perm)}

    @property
    def backend_id(self):
        noise = "shuffled" if self.shuffled else repr(self.noise_sigma)
        return f"oracle:{noise}:{self.seed}:{self.malformed_rate!r}"

    def _scores(self, person_id):
        source = self._donor.get(person_id, person_id)
        true = self.truth.latents[source]
        if self.noise_sigma > 0:
            digest = hashlib.sha256(f"{self.seed}\x00{person_id}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
            true = true + rng.normal(0.0, self.noise_sigma, size=len(true))
        return {d: int(np.clip(np.round(v), 1, 10)) for d, v in zip(LATENT_DIMENSIONS, true)}

    def persona_for(self, person_id):
        scores = self._scores(person_id)
        tags = []
        for dim in LATENT_DIMENSIONS:
            high, low = _BAND_TAGS[dim]
            if scores[dim] >= 7:
                tags.append(high)
            elif scores[dim] <= 3:
                tags.append(low)
        if not tags:
            tags = ["balanced-traveler"]
        top = max(LATENT_DIMENSIONS, key=lambda d: (scores[d], -LATENT_DIMENSIONS.index(d)))
        return {
            "primary_motivation": _MOTIVATION[top],
            "behavioral_tags": tags,
            "brief_justification": "Profile cues point to these travel priorities.",
        }

    def chat(self, prompt: PromptPair, person_id=None) -> str:
        if person_id is None or person_id not in self.truth.latents:
            return json.dumps({"error": f"unknown traveler {person_id!r}"})
        if prompt.purpose == "persona":
            if self.malformed_rate > 0 and _unit_hash(self.seed, person_id, "malformed") < self.malformed_rate:
                return "I'm sorry, I can't produce that profile."
            return json.dumps(self.persona_for(person_id))
        scores = self._scores(person_id)
        return json.dumps({PROMPT_NAMES[d]: {"score": scores[d], "justification": "Planted attitude."}
                           for d in LATENT_DIMENSIONS})

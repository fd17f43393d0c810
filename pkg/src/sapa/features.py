"""Persona tag features, attitude x context interactions and per-scenario design matrices."""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from sapa.dimensions import INTERACTION_COLUMNS, INTERACTIONS, LATENT_DIMENSIONS, PROPENSITY_COLUMN

log = logging.getLogger(__name__)

# Scenario -> column groups.  Groups: observables, propensity, latent, interactions.
SCENARIOS = {
    "observables": ("observables",),
    "obs+latent": ("observables", "latent"),
    "obs+propensity": ("observables", "propensity"),
    "full_no_interactions": ("observables", "propensity", "latent"),
    "full_all_interactions": ("observables", "propensity", "latent", "interactions"),
}
BASELINE = "observables"
FULL = "full_all_interactions"
SCENARIO_LABELS = {
    "observables": "1. Observables Only (Baseline)",
    "obs+latent": "2. Observables + Latent Variables",
    "obs+propensity": "3. Observables + Propensity Score",
    "full_no_interactions": "4. Full SAPA (No Interactions)",
    "full_all_interactions": "5. Full SAPA (All Interactions)",
}
GROUP_COLUMNS = {
    "propensity": (PROPENSITY_COLUMN,),
    "latent": LATENT_DIMENSIONS,
    "interactions": INTERACTION_COLUMNS,
}


# ------------------------------------------------------------------ tags


@dataclass(frozen=True)
class TagVocabulary:
    tags: tuple
    min_frequency: int = 5
    built_from: str = "train"

    def index(self):
        return {t: i for i, t in enumerate(self.tags)}

    def columns(self):
        return [f"tag={t}" for t in self.tags] + ["tag_count", "tag_oov"]


def build_tag_vocabulary(personas, person_ids=None, min_frequency=5, built_from="train") -> TagVocabulary:
    """Tags used by at least ``min_frequency`` of the given persons; frequency desc, then name."""
    ids = personas.keys() if person_ids is None else person_ids
    counts = Counter()
    for pid in ids:
        persona = personas.get(pid)
        if persona is not None:
            counts.update(set(persona.behavioral_tags))
    kept = sorted((t for t, c in counts.items() if c >= min_frequency), key=lambda t: (-counts[t], t))
    return TagVocabulary(tuple(kept), min_frequency, built_from)


def featurize_tags(personas, vocab: TagVocabulary, person_ids):
    """Multi-hot over the vocabulary plus tag_count and out-of-vocabulary count, one row per person."""
    index = vocab.index()
    out = np.zeros((len(person_ids), len(vocab.tags) + 2))
    for row, pid in enumerate(person_ids):
        persona = personas.get(pid)
        tags = persona.behavioral_tags if persona is not None else ()
        for tag in tags:
            j = index.get(tag)
            if j is None:
                out[row, -1] += 1
            else:
                out[row, j] = 1.0
        out[row, -2] = len(tags)
    return vocab.columns(), out


# ---------------------------------------------------------- interactions


def build_interactions(profile, trip):
    """The six Table-style products of an attitude score and a trip operand.

    ``profile`` may be a LatentProfile or a plain score mapping; ``trip`` a
    TripRecord or an observables mapping.
    """
    scores = getattr(profile, "scores", profile)
    obs = getattr(trip, "observables", trip)
    return {name: float(scores[dim]) * float(obs[operand]) for name, dim, operand in INTERACTIONS}


def interaction_matrix(latent, operands):
    """Vectorized form: latent (n, 7) in canonical order, operands dict of (n,) arrays."""
    cols = [latent[:, LATENT_DIMENSIONS.index(dim)] * np.asarray(operands[op], dtype=float)
            for _, dim, op in INTERACTIONS]
    return np.column_stack(cols) if cols else np.zeros((len(latent), 0))


# ------------------------------------------------------------- matrices


@dataclass
class TripTable:
    """Column-major view of trip records used for fast assembly."""

    trip_ids: list
    person_ids: list
    labels: np.ndarray
    columns: list
    values: np.ndarray

    @classmethod
    def from_records(cls, trips):
        if not trips:
            raise ValueError("no trips")
        cols = list(trips[0].observables)
        values = np.array([[t.observables[c] for c in cols] for t in trips], dtype=float)
        return cls([t.trip_id for t in trips], [t.person_id for t in trips],
                   np.array([t.label_ridesourcing for t in trips], dtype=np.int8), cols, values)

    def subset(self, mask):
        idx = np.flatnonzero(mask)
        return TripTable([self.trip_ids[i] for i in idx], [self.person_ids[i] for i in idx], self.labels[idx],
                         self.columns, self.values[idx])

    def column(self, name):
        return self.values[:, self.columns.index(name)]

    def __len__(self):
        return len(self.trip_ids)


@dataclass
class FeatureMatrix:
    row_ids: list
    columns: list
    values: np.ndarray
    scenario: str
    person_ids: list = field(default_factory=list)
    labels: np.ndarray | None = None
    standardized: bool = False

    def __post_init__(self):
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("duplicate column names")
        if self.values.shape != (len(self.row_ids), len(self.columns)):
            raise ValueError(f"shape {self.values.shape} does not match {len(self.row_ids)} rows x "
                             f"{len(self.columns)} columns")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix contains non-finite values")

    def manifest(self):
        return {
            "scenario": self.scenario,
            "columns": list(self.columns),
            "n_rows": len(self.row_ids),
            "standardized": self.standardized,
            "scaling_note": "none (tree learners are invariant to monotone feature transforms)"
            if not self.standardized else "z-scored after interaction construction",
        }

    def write(self, path):
        """CSV (row_id, person_id, label, features...) plus ``<path>.manifest.json``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        df = pd.DataFrame(self.values, columns=self.columns)
        df.insert(0, "label", self.labels if self.labels is not None else 0)
        df.insert(0, "person_id", self.person_ids or [""] * len(self.row_ids))
        df.insert(0, "row_id", self.row_ids)
        df.to_csv(path, index=False, float_format="%.17g")
        Path(str(path) + ".manifest.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True),
                                                      encoding="utf-8")

    @classmethod
    def read(cls, path):
        manifest = json.loads(Path(str(path) + ".manifest.json").read_text(encoding="utf-8"))
        df = pd.read_csv(path, dtype={"row_id": str, "person_id": str}, keep_default_na=False, float_precision="round_trip")
        cols = manifest["columns"]
        return cls(df["row_id"].tolist(), cols, df[cols].to_numpy(dtype=float), manifest["scenario"],
                   df["person_id"].tolist(), df["label"].to_numpy(dtype=np.int8), manifest["standardized"])


def scenario_columns(observable_columns, scenario, scenarios=None):
    groups = (scenarios or SCENARIOS).get(scenario)
    if groups is None:
        raise ValueError(f"unknown scenario {scenario!r}")
    cols = []
    for group in groups:
        cols.extend(observable_columns if group == "observables" else GROUP_COLUMNS[group])
    return cols


def assemble_stage2(trips, propensity_scores, profiles, scenario, scenarios=None, standardize=False):
    """Design matrix for one scenario.

    ``trips`` is a TripTable or list of TripRecord; ``propensity_scores`` maps
    person_id -> float (or PropensityScore); ``profiles`` maps person_id ->
    LatentProfile.  Latent scores are repeated on every trip of a person.
    """
    table = trips if isinstance(trips, TripTable) else TripTable.from_records(trips)
    groups = (scenarios or SCENARIOS).get(scenario)
    if groups is None:
        raise ValueError(f"unknown scenario {scenario!r}")
    blocks, columns = [], []
    need_latent = "latent" in groups or "interactions" in groups
    latent = None
    if need_latent:
        missing = sorted({p for p in table.person_ids if p not in (profiles or {})})
        if missing:
            raise ValueError(f"no latent profile for {len(missing)} persons: {missing[:10]}")
        cache = {}
        latent = np.empty((len(table), len(LATENT_DIMENSIONS)))
        for i, pid in enumerate(table.person_ids):
            vec = cache.get(pid)
            if vec is None:
                vec = cache[pid] = [float(profiles[pid].scores[d]) for d in LATENT_DIMENSIONS]
            latent[i] = vec
    for group in groups:
        if group == "observables":
            blocks.append(table.values)
            columns.extend(table.columns)
        elif group == "propensity":
            missing = sorted({p for p in table.person_ids if p not in (propensity_scores or {})})
            if missing:
                raise ValueError(f"no propensity score for {len(missing)} persons: {missing[:10]}")
            s = np.array([float(getattr(propensity_scores[p], "score", propensity_scores[p]))
                          for p in table.person_ids])
            blocks.append(s[:, None])
            columns.append(PROPENSITY_COLUMN)
        elif group == "latent":
            blocks.append(latent)
            columns.extend(LATENT_DIMENSIONS)
        elif group == "interactions":
            operands = {op: table.column(op) for _, _, op in INTERACTIONS}
            blocks.append(interaction_matrix(latent, operands))
            columns.extend(INTERACTION_COLUMNS)
        else:
            raise ValueError(f"unknown column group {group!r}")
    values = np.hstack(blocks)
    if standardize:
        sd = values.std(axis=0)
        values = (values - values.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    return FeatureMatrix(list(table.trip_ids), columns, values, scenario, list(table.person_ids),
                         table.labels.copy(), standardize)

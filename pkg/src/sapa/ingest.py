"""Load household-travel-survey tables and derive person and trip records.

Column names come from a schema config so that differently named survey
exports share one loader.  Canonical table columns:

* households: household_id, income, vehicle_count, home_tract_id
  [, spatial_profile, survey_year]
* persons: person_id, household_id, age, gender, employment, education
  [, survey_year]
* trips: trip_id, person_id, travel_mode, trip_purpose, depart_timestamp,
  traveltime, distance, fare
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

log = logging.getLogger(__name__)

REQUIRED = {
    "households": ("household_id", "income", "vehicle_count", "home_tract_id"),
    "persons": ("person_id", "household_id", "age", "gender", "employment", "education"),
    "trips": (
        "trip_id",
        "person_id",
        "travel_mode",
        "trip_purpose",
        "depart_timestamp",
        "traveltime",
        "distance",
        "fare",
    ),
}
OPTIONAL = {
    "households": ("spatial_profile", "survey_year"),
    "persons": ("survey_year",),
    "trips": (),
    "days": (),
}
ID_COLUMNS = {"household_id", "person_id", "trip_id", "home_tract_id"}
DEMOGRAPHIC_KEYS = ("age", "age_group", "gender", "employment", "education", "income", "household_vehicles", "household_size")


@dataclass
class SchemaConfig:
    tables: dict = field(
        default_factory=lambda: {
            "households": "households.csv",
            "persons": "persons.csv",
            "trips": "trips.csv",
            "days": "days.csv",
        }
    )
    # canonical column -> source column, per table; missing entries map to themselves
    columns: dict = field(default_factory=dict)
    ridesourcing_modes: tuple = ("ridesourcing",)
    survey_year: int = 2023

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        cfg = cls()
        if "tables" in data:
            cfg.tables = {**cfg.tables, **data["tables"]}
        cfg.columns = data.get("columns", {})
        if "ridesourcing_modes" in data:
            cfg.ridesourcing_modes = tuple(str(m).lower() for m in data["ridesourcing_modes"])
        cfg.survey_year = int(data.get("survey_year", cfg.survey_year))
        return cfg

    def source(self, table, canonical):
        return self.columns.get(table, {}).get(canonical, canonical)


@dataclass
class SurveyBundle:
    households: pd.DataFrame
    persons: pd.DataFrame
    trips: pd.DataFrame
    days: pd.DataFrame | None = None
    survey_year: int = 2023
    load_report: dict = field(default_factory=dict)

    def counts(self):
        return len(self.households), len(self.persons), len(self.trips)


@dataclass(frozen=True)
class TravelerRecord:
    person_id: str
    household_id: str
    socio_demographics: dict
    spatial_profile_label: str
    spatial_embedding: tuple
    ever_uses_ridesourcing: bool
    survey_year: int
    has_embedding: bool = True
    home_tract_id: str = ""


@dataclass(frozen=True)
class TripRecord:
    trip_id: str
    person_id: str
    observables: dict
    label_ridesourcing: int


@dataclass
class ObservableConfig:
    age_edges: tuple = (18, 35, 65)
    categoricals: tuple = ("gender", "employment", "education", "income", "spatial_profile_label")
    fare_per_distance: float = 2.5
    fare_flag_fall: float = 2.0
    include_embedding: bool = True
    mandatory_purposes: tuple = ("work", "school")


@dataclass
class ImputationParams:
    medians: dict
    levels: dict
    age_groups: list
    fare_policy: str
    embedding_dim: int
    n_fit_rows: int
    n_fare_imputed: int = 0

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


# --------------------------------------------------------------------- loading


def _read_table(path, table, schema: SchemaConfig, required):
    if not path.exists():
        raise FileNotFoundError(f"required table {table!r} not found at {path}")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""], encoding="utf-8")
    rename = {}
    for canonical in required + OPTIONAL.get(table, ()):
        src = schema.source(table, canonical)
        if src in raw.columns:
            rename[src] = canonical
        elif canonical in required:
            raise ValueError(f"table {table!r} is missing required column {src!r} (canonical {canonical!r})")
    return raw.rename(columns=rename)


def load_survey(tables_dir, schema_config: SchemaConfig | str | Path | None = None) -> SurveyBundle:
    schema = schema_config if isinstance(schema_config, SchemaConfig) else SchemaConfig.load(schema_config)
    tables_dir = Path(tables_dir)
    frames = {t: _read_table(tables_dir / schema.tables[t], t, schema, REQUIRED[t]) for t in REQUIRED}
    days_path = tables_dir / schema.tables.get("days", "days.csv")
    days = pd.read_csv(days_path, dtype=str) if days_path.exists() else None

    report = {"warnings": []}
    for table, key in (("households", "household_id"), ("persons", "person_id"), ("trips", "trip_id")):
        dupes = frames[table][key].duplicated()
        if dupes.any():
            raise ValueError(f"duplicate {key} values in {table}: {frames[table][key][dupes].head().tolist()}")

    hh_ids = set(frames["households"]["household_id"])
    bad_p = ~frames["persons"]["household_id"].isin(hh_ids)
    if bad_p.any():
        msg = f"dropped {int(bad_p.sum())} person rows with unknown household_id"
        report["warnings"].append(msg)
        log.warning(msg)
    persons = frames["persons"][~bad_p].reset_index(drop=True)
    bad_t = ~frames["trips"]["person_id"].isin(set(persons["person_id"]))
    if bad_t.any():
        msg = f"dropped {int(bad_t.sum())} trip rows with unknown person_id"
        report["warnings"].append(msg)
        log.warning(msg)
    trips = frames["trips"][~bad_t].reset_index(drop=True)
    report.update(dropped_persons=int(bad_p.sum()), dropped_trips=int(bad_t.sum()))

    for col in ("traveltime", "distance", "fare"):
        trips[col] = pd.to_numeric(trips[col], errors="coerce")
    households = frames["households"].copy()
    households["vehicle_count"] = pd.to_numeric(households["vehicle_count"], errors="coerce")
    bundle = SurveyBundle(
        households=households.reset_index(drop=True),
        persons=persons,
        trips=trips,
        days=days,
        survey_year=schema.survey_year,
        load_report=report,
    )
    bundle.load_report["counts"] = list(bundle.counts())
    return bundle


def write_bundle(bundle: SurveyBundle, out_dir):
    """Write canonical-schema tables that ``load_survey`` reads back unchanged."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle.households.to_csv(out_dir / "households.csv", index=False)
    bundle.persons.to_csv(out_dir / "persons.csv", index=False)
    bundle.trips.to_csv(out_dir / "trips.csv", index=False)
    if bundle.days is not None:
        bundle.days.to_csv(out_dir / "days.csv", index=False)


def read_embeddings(path):
    """tract_id followed by N floats per row; all rows must share N."""
    table = {}
    dim = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, 1):
            if not row:
                continue
            try:
                vec = tuple(float(v) for v in row[1:])
            except ValueError:
                if lineno == 1:
                    continue  # header row
                raise
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise ValueError(f"embedding dimension mismatch at line {lineno}: {len(vec)} != {dim}")
            table[str(row[0])] = vec
    return table


def write_embeddings(table, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for tract in sorted(table):
            writer.writerow([tract, *[repr(float(v)) for v in table[tract]]])


# ----------------------------------------------------------------- person level


def is_ridesourcing(mode, modes=("ridesourcing",)):
    return str(mode).strip().lower() in modes


def parse_age(value):
    """Numeric age from a number or an ordinal bracket such as '35-44' or '65+'."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return float("nan")
    text = str(value).strip().replace("–", "-")
    try:
        return float(text)
    except ValueError:
        pass
    if text.endswith("+"):
        return float(text[:-1])
    if "-" in text:
        lo, hi = text.split("-", 1)
        try:
            return (float(lo) + float(hi)) / 2.0
        except ValueError:
            return float("nan")
    return float("nan")


def age_group_labels(edges):
    labels = [f"under_{edges[0]}"]
    for lo, hi in zip(edges[:-1], edges[1:]):
        labels.append(f"{lo}–{hi - 1}")
    labels.append(f"{edges[-1]}+")
    return labels


def age_group(age, edges=(18, 35, 65)):
    """Lower-inclusive, upper-exclusive bracket label; 'missing' when unknown."""
    if age is None or math.isnan(age):
        return "missing"
    labels = age_group_labels(edges)
    for i, edge in enumerate(edges):
        if age < edge:
            return labels[i]
    return labels[-1]


def _person_frame(bundle: SurveyBundle):
    hh = bundle.households.copy()
    hh["household_size"] = hh["household_id"].map(bundle.persons.groupby("household_id").size()).fillna(0)
    cols = ["household_id", "income", "vehicle_count", "home_tract_id", "household_size"]
    cols += [c for c in ("spatial_profile", "survey_year") if c in hh.columns]
    persons = bundle.persons.merge(hh[cols], on="household_id", how="left", suffixes=("", "_hh"))
    if "survey_year" not in persons.columns:
        persons["survey_year"] = persons.get("survey_year_hh", bundle.survey_year)
    elif "survey_year_hh" in persons.columns:
        persons["survey_year"] = persons["survey_year"].fillna(persons["survey_year_hh"])
    persons["survey_year"] = pd.to_numeric(persons["survey_year"], errors="coerce").fillna(bundle.survey_year)
    if "spatial_profile" not in persons.columns:
        persons["spatial_profile"] = "unknown"
    persons["spatial_profile"] = persons["spatial_profile"].fillna("unknown")
    return persons


def build_traveler_records(bundle: SurveyBundle, embeddings=None, embedding_dim=128,
                           ridesourcing_modes=("ridesourcing",), age_edges=(18, 35, 65)):
    """One record per person, in person-table order."""
    if embeddings:
        dims = {len(v) for v in embeddings.values()}
        if len(dims) != 1:
            raise ValueError(f"embedding dimension mismatch across tracts: {sorted(dims)}")
        embedding_dim = dims.pop()
    zero = (0.0,) * embedding_dim

    users = set(bundle.trips.loc[bundle.trips["travel_mode"].map(lambda m: is_ridesourcing(m, ridesourcing_modes)),
                                 "person_id"])
    records = []
    for row in _person_frame(bundle).itertuples(index=False):
        age = parse_age(row.age)
        demo = {
            "age": None if math.isnan(age) else age,
            "age_group": age_group(age, age_edges),
            "gender": _clean(row.gender),
            "employment": _clean(row.employment),
            "education": _clean(row.education),
            "income": _clean(row.income),
            "household_vehicles": None if pd.isna(row.vehicle_count) else float(row.vehicle_count),
            "household_size": float(row.household_size),
        }
        tract = _clean(row.home_tract_id)
        vec = embeddings.get(tract) if embeddings else None
        records.append(
            TravelerRecord(
                person_id=str(row.person_id),
                household_id=str(row.household_id),
                socio_demographics=demo,
                spatial_profile_label=_clean(row.spatial_profile),
                spatial_embedding=tuple(vec) if vec is not None else zero,
                ever_uses_ridesourcing=str(row.person_id) in users,
                survey_year=int(row.survey_year),
                has_embedding=vec is not None,
                home_tract_id=tract,
            )
        )
    return records


def _clean(value):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "missing"
    text = str(value).strip()
    return text if text else "missing"


# ------------------------------------------------------------------- trip level

BASE_NUMERIC = (
    "traveltime",
    "distance",
    "fare",
    "household_vehicles",
    "household_size",
    "vehicles_per_person",
    "age",
    "depart_hour",
    "survey_year",
    "is_mandatory",
    "is_weekend",
)
_IMPUTED = ("traveltime", "distance", "household_vehicles", "age", "depart_hour")


def _trip_frame(bundle: SurveyBundle, ridesourcing_modes):
    persons = _person_frame(bundle)
    persons["age_num"] = persons["age"].map(parse_age)
    trips = bundle.trips.merge(persons, on="person_id", how="left", suffixes=("", "_p"))
    stamp = pd.to_datetime(trips["depart_timestamp"], errors="coerce")
    trips["depart_hour"] = stamp.dt.hour + stamp.dt.minute / 60.0
    trips["is_weekend"] = stamp.dt.dayofweek.isin([5, 6]).astype(float)
    trips.loc[stamp.isna(), "is_weekend"] = 0.0
    trips["label"] = trips["travel_mode"].map(lambda m: int(is_ridesourcing(m, ridesourcing_modes)))
    trips["household_vehicles"] = pd.to_numeric(trips["vehicle_count"], errors="coerce")
    trips["age"] = trips["age_num"]
    trips["spatial_profile_label"] = trips["spatial_profile"].fillna("unknown")
    for col in ("gender", "employment", "education", "income", "home_tract_id"):
        trips[col] = trips[col].map(_clean)
    return trips


def engineer_observables(bundle: SurveyBundle, config: ObservableConfig | None = None, train_person_ids=None,
                         imputation: ImputationParams | None = None, embeddings=None,
                         ridesourcing_modes=("ridesourcing",)):
    """Derive trip observables; returns (list of TripRecord, ImputationParams).

    Medians and one-hot levels come only from trips of ``train_person_ids``
    (all trips when None), or are reused from ``imputation``.
    """
    cfg = config or ObservableConfig()
    df = _trip_frame(bundle, ridesourcing_modes)
    mandatory = {p.lower() for p in cfg.mandatory_purposes}
    df["is_mandatory"] = df["trip_purpose"].map(lambda p: float(str(p).strip().lower() in mandatory))

    if imputation is None:
        fit = df if train_person_ids is None else df[df["person_id"].isin(set(map(str, train_person_ids)))]
        medians = {}
        for col in _IMPUTED:
            values = pd.to_numeric(fit[col], errors="coerce")
            if values.notna().sum() == 0:
                raise ValueError(f"every value of required numeric {col!r} is missing")
            medians[col] = float(values.median())
        levels = {}
        for col in cfg.categoricals:
            seen = sorted({str(v) for v in fit[col].dropna()} - {"missing"})
            levels[col] = seen + ["missing"]
        emb_dim = len(next(iter(embeddings.values()))) if embeddings and cfg.include_embedding else 0
        imputation = ImputationParams(
            medians=medians,
            levels=levels,
            age_groups=age_group_labels(cfg.age_edges) + ["missing"],
            fare_policy=f"missing fare = {cfg.fare_flag_fall} + {cfg.fare_per_distance} * distance",
            embedding_dim=emb_dim,
            n_fit_rows=int(len(fit)),
        )

    for col in _IMPUTED:
        df[col] = pd.to_numeric(df[col], errors="coerce").fillna(imputation.medians[col])
    missing_fare = df["fare"].isna()
    imputation.n_fare_imputed = int(missing_fare.sum())
    df.loc[missing_fare, "fare"] = cfg.fare_flag_fall + cfg.fare_per_distance * df.loc[missing_fare, "distance"]
    df["household_size"] = df["household_size"].clip(lower=1)
    df["vehicles_per_person"] = df["household_vehicles"] / df["household_size"]
    for col in ("traveltime", "distance", "fare", "household_vehicles"):
        df[col] = df[col].clip(lower=0.0)

    columns = list(BASE_NUMERIC)
    matrix = [df[c].astype(float).to_numpy() for c in BASE_NUMERIC]
    groups = df["age"].map(lambda a: age_group(a, cfg.age_edges))
    for label in imputation.age_groups:
        columns.append(f"age_group={label}")
        matrix.append((groups == label).astype(float).to_numpy())
    for col, levels in imputation.levels.items():
        values = df[col].astype(str).where(df[col].astype(str).isin(levels), "missing")
        for level in levels:
            columns.append(f"{col}={level}")
            matrix.append((values == level).astype(float).to_numpy())
    if imputation.embedding_dim:
        emb = np.zeros((len(df), imputation.embedding_dim))
        has = np.zeros(len(df))
        for i, tract in enumerate(df["home_tract_id"]):
            vec = embeddings.get(tract) if embeddings else None
            if vec is not None:
                emb[i] = vec
                has[i] = 1.0
        for j in range(imputation.embedding_dim):
            columns.append(f"emb_{j}")
            matrix.append(emb[:, j])
        columns.append("has_embedding")
        matrix.append(has)

    values = np.column_stack(matrix)
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite trip observables after imputation")
    trip_ids = df["trip_id"].astype(str).tolist()
    person_ids = df["person_id"].astype(str).tolist()
    labels = df["label"].astype(int).tolist()
    records = [
        TripRecord(trip_ids[i], person_ids[i], dict(zip(columns, values[i].tolist())), labels[i])
        for i in range(len(df))
    ]
    return records, imputation


# ---------------------------------------------------------------- record files


def write_records(out_dir, travelers, trips, imputation: ImputationParams | None = None, load_report=None):
    """Canonical record files: travelers.csv, trips.csv (+ imputation.json, load_report.json).

    travelers.csv: person_id, household_id, home_tract_id, survey_year,
    ever_uses_ridesourcing (0/1), spatial_profile_label, has_embedding (0/1),
    demo:<key> per demographic, emb_<j> per embedding component.
    trips.csv: trip_id, person_id, label_ridesourcing, then one column per
    observable in engineered order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dim = len(travelers[0].spatial_embedding) if travelers else 0
    demo_keys = list(DEMOGRAPHIC_KEYS)
    with open(out_dir / "travelers.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["person_id", "household_id", "home_tract_id", "survey_year", "ever_uses_ridesourcing",
                    "spatial_profile_label", "has_embedding"] + [f"demo:{k}" for k in demo_keys]
                   + [f"emb_{j}" for j in range(dim)])
        for t in travelers:
            demo = [("" if t.socio_demographics.get(k) is None else t.socio_demographics.get(k)) for k in demo_keys]
            w.writerow([t.person_id, t.household_id, t.home_tract_id, t.survey_year, int(t.ever_uses_ridesourcing),
                        t.spatial_profile_label, int(t.has_embedding)] + demo
                       + [repr(float(v)) for v in t.spatial_embedding])
    if trips:
        cols = list(trips[0].observables)
        with open(out_dir / "trips.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["trip_id", "person_id", "label_ridesourcing"] + cols)
            for r in trips:
                w.writerow([r.trip_id, r.person_id, r.label_ridesourcing] + [repr(r.observables[c]) for c in cols])
    if imputation is not None:
        (out_dir / "imputation.json").write_text(imputation.to_json(), encoding="utf-8")
    if load_report is not None:
        (out_dir / "load_report.json").write_text(json.dumps(load_report, indent=2, sort_keys=True), encoding="utf-8")


_NUMERIC_DEMO = {"age", "household_vehicles", "household_size"}


def read_travelers(path):
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    emb_cols = [c for c in df.columns if c.startswith("emb_")]
    demo_cols = [c for c in df.columns if c.startswith("demo:")]
    out = []
    for row in df.to_dict("records"):
        demo = {}
        for c in demo_cols:
            key = c[5:]
            value = row[c]
            if key in _NUMERIC_DEMO:
                demo[key] = float(value) if value != "" else None
            else:
                demo[key] = value
        out.append(
            TravelerRecord(
                person_id=row["person_id"],
                household_id=row["household_id"],
                socio_demographics=demo,
                spatial_profile_label=row["spatial_profile_label"],
                spatial_embedding=tuple(float(row[c]) for c in emb_cols),
                ever_uses_ridesourcing=row["ever_uses_ridesourcing"] == "1",
                survey_year=int(row["survey_year"]),
                has_embedding=row["has_embedding"] == "1",
                home_tract_id=row["home_tract_id"],
            )
        )
    return out


def read_trips(path):
    df = pd.read_csv(path, dtype={"trip_id": str, "person_id": str}, float_precision="round_trip")
    obs_cols = [c for c in df.columns if c not in ("trip_id", "person_id", "label_ridesourcing")]
    values = df[obs_cols].to_numpy(dtype=np.float64)
    return [
        TripRecord(tid, pid, dict(zip(obs_cols, values[i].tolist())), int(lab))
        for i, (tid, pid, lab) in enumerate(zip(df["trip_id"], df["person_id"], df["label_ridesourcing"]))
    ]

"""Person-level (grouped) stratified train/test split and k-fold assignment.

All of a person's trips follow the person, so no traveler is ever seen on
both sides of a partition.
"""
from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

STRATA_KEYS = ("ever_uses_ridesourcing", "spatial_profile_label", "survey_year")
STRATA_ALIASES = {"ever": "ever_uses_ridesourcing", "spatial": "spatial_profile_label", "year": "survey_year"}


@dataclass
class SplitAssignment:
    partition: dict  # person_id -> "train" | "test"
    seed: int
    strata_keys: tuple
    warnings: list = field(default_factory=list)

    def persons(self, tag):
        return sorted(pid for pid, part in self.partition.items() if part == tag)

    @property
    def train(self):
        return self.persons("train")

    @property
    def test(self):
        return self.persons("test")


@dataclass
class FoldAssignment:
    fold: dict  # person_id -> fold index
    k: int
    seed: int

    def members(self, i):
        return sorted(pid for pid, f in self.fold.items() if f == i)


def resolve_strata(keys):
    out = []
    for key in keys:
        key = STRATA_ALIASES.get(key, key)
        if key not in STRATA_KEYS:
            raise ValueError(f"unknown stratification key {key!r}; choose from {STRATA_KEYS}")
        out.append(key)
    return tuple(out)


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def _cell_rng(seed, label):
    # stable per-cell stream regardless of how many cells exist
    digest = sum((i + 1) * ord(ch) for i, ch in enumerate(label)) % (2**31)
    return np.random.default_rng([seed, digest, len(label)])


def assign_split(travelers, test_fraction=0.2, strata_keys=("ever_uses_ridesourcing",), seed=42) -> SplitAssignment:
    if not travelers:
        raise ValueError("cannot split an empty traveler list")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    keys = resolve_strata(strata_keys)

    cells = defaultdict(list)
    for t in travelers:
        cells[tuple(str(getattr(t, k)) for k in keys)].append(t)

    # singleton cells collapse onto the coarsest key (ever-use)
    final = defaultdict(list)
    for key, members in cells.items():
        if len(members) == 1 and len(keys) > 1:
            final[("collapsed", str(members[0].ever_uses_ridesourcing))].extend(members)
        else:
            final[key].extend(members)

    partition, warnings = {}, []
    for key in sorted(final):
        members = sorted(final[key], key=lambda t: str(t.person_id))
        if len(members) == 1:
            partition[members[0].person_id] = "train"
            msg = f"stratum {key} has a single person; assigned to train"
            warnings.append(msg)
            log.warning(msg)
            continue
        n_test = _round_half_up(test_fraction * len(members))
        rng = _cell_rng(seed, "|".join(key))
        chosen = set(rng.permutation(len(members))[:n_test].tolist())
        for i, t in enumerate(members):
            partition[t.person_id] = "test" if i in chosen else "train"
    return SplitAssignment(partition=partition, seed=seed, strata_keys=keys, warnings=warnings)


def grouped_kfold(travelers, k=5, seed=42) -> FoldAssignment:
    """Stratified on ever-use; per-fold positive counts and fold sizes differ by at most one."""
    if k < 2:
        raise ValueError("k must be >= 2")
    ordered = sorted(travelers, key=lambda t: str(t.person_id))
    pos = [t.person_id for t in ordered if t.ever_uses_ridesourcing]
    neg = [t.person_id for t in ordered if not t.ever_uses_ridesourcing]
    if len(pos) < k:
        raise ValueError(f"need at least k={k} ever-users for stratified folds, got {len(pos)}")
    rng = np.random.default_rng(seed)
    pos = [pos[i] for i in rng.permutation(len(pos))]
    neg = [neg[i] for i in rng.permutation(len(neg))]
    relabel = rng.permutation(k)
    fold = {}
    for i, pid in enumerate(pos):
        fold[pid] = int(relabel[i % k])
    offset = len(pos) % k
    for i, pid in enumerate(neg):
        fold[pid] = int(relabel[(offset + i) % k])
    return FoldAssignment(fold=fold, k=k, seed=seed)


def write_split(split: SplitAssignment, path, folds: FoldAssignment | None = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["person_id", "partition"] + (["fold"] if folds is not None else [])
        writer.writerow(header)
        for pid in sorted(split.partition, key=str):
            row = [pid, split.partition[pid]]
            if folds is not None:
                row.append(folds.fold.get(pid, ""))
            writer.writerow(row)


def read_split(path):
    """Return (SplitAssignment, FoldAssignment or None) from a split file."""
    partition, fold = {}, {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            partition[row["person_id"]] = row["partition"]
            if row.get("fold") not in (None, ""):
                fold[row["person_id"]] = int(row["fold"])
    split = SplitAssignment(partition=partition, seed=-1, strata_keys=())
    folds = FoldAssignment(fold=fold, k=max(fold.values()) + 1, seed=-1) if fold else None
    return split, folds

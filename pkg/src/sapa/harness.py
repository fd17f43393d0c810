"""Scenario x classifier x fold ablation grid, comparisons, segment profiles and report files."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sapa.dimensions import FEATURE_CATEGORIES, LATENT_DIMENSIONS
from sapa.features import BASELINE, FULL, SCENARIO_LABELS, SCENARIOS, TripTable, assemble_stage2
from sapa.learners import ForestParams, GbdtParams, feature_importance, raw_scores, train
from sapa.metrics import classification_metrics
from sapa.stats import cohens_d_pooled, format_improvement, relative_improvement, wilcoxon_signed_rank

log = logging.getLogger(__name__)

TEST_FOLD = "test"
MAX_FAILED_FRACTION = 0.25
CLASSIFIER_LABELS = {"gbdt": "Gradient-Boosted Trees", "forest": "Random Forest"}
METRIC_KEYS = ("pr_auc", "roc_auc", "f1", "mcc", "precision", "recall")


class AblationFailed(RuntimeError):
    """More than a quarter of grid cells failed to train."""


@dataclass
class StudyData:
    """Everything a grid needs, already materialized."""

    trips: TripTable
    split: object  # SplitAssignment
    folds: object  # FoldAssignment over training persons
    profiles: dict
    propensity: dict


@dataclass
class AblationReport:
    cells: list  # dicts: scenario, classifier, fold, status, metrics | error, n_train, n_eval
    comparisons: dict  # classifier -> {baseline_folds, full_folds, wilcoxon_p, cohens_d, ...}
    importance: dict  # classifier -> {category: share}
    metadata: dict
    scenarios: list = field(default_factory=list)
    classifiers: list = field(default_factory=list)

    def cell(self, scenario, classifier, fold):
        for c in self.cells:
            if c["scenario"] == scenario and c["classifier"] == classifier and c["fold"] == fold:
                return c
        raise KeyError((scenario, classifier, fold))

    def fold_values(self, scenario, classifier, metric="pr_auc"):
        k = self.metadata["k"]
        out = []
        for f in range(k):
            c = self.cell(scenario, classifier, f)
            out.append(c["metrics"][metric] if c["status"] == "ok" else float("nan"))
        return out

    def failed_fraction(self):
        return sum(c["status"] != "ok" for c in self.cells) / max(1, len(self.cells))

    def to_json(self):
        payload = {
            "format": "sapa-ablation",
            "version": 1,
            "scenarios": self.scenarios,
            "classifiers": self.classifiers,
            "metadata": self.metadata,
            "cells": self.cells,
            "comparisons": self.comparisons,
            "importance": self.importance,
        }
        return json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        p = json.loads(text)
        if p.get("format") != "sapa-ablation":
            raise ValueError("not an ablation report")
        return cls(p["cells"], p["comparisons"], p["importance"], p["metadata"], p["scenarios"], p["classifiers"])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _cell_seed(seed, classifier, fold):
    # shared across scenarios so that scenario comparisons are paired
    h = hashlib.sha256(f"{seed}|{classifier}|{fold}".encode()).digest()
    return int.from_bytes(h[:4], "big")


def _learner_params(classifier, params, seed):
    base = dict((params or {}).get(classifier, {}))
    base["seed"] = seed
    if classifier == "gbdt":
        return GbdtParams(**base)
    if classifier == "forest":
        return ForestParams(**base)
    raise ValueError(f"unknown classifier {classifier!r}")


def compare_folds(baseline, full):
    """Paired one-sided test (full > baseline) and pooled effect size over fold scores."""
    out = {
        "baseline_folds": list(baseline),
        "full_folds": list(full),
        "baseline_mean": float(np.mean(baseline)),
        "full_mean": float(np.mean(full)),
    }
    out["relative_improvement_pct"] = relative_improvement(out["baseline_mean"], out["full_mean"])
    for key, fn in (("wilcoxon_p", lambda: wilcoxon_signed_rank(baseline, full, "greater")),
                    ("cohens_d", lambda: cohens_d_pooled(baseline, full))):
        try:
            out[key] = fn()
        except ValueError as exc:
            out[key] = None
            out[f"{key}_error"] = str(exc)
    return out


def run_ablation(data: StudyData, scenarios=None, classifiers=("gbdt", "forest"), learner_params=None, seed=42,
                 include_test=True, scenario_groups=None, threshold=0.5, config_digest="", progress=None,
                 workers=1):
    """Train and evaluate every (scenario, classifier, fold) cell, plus the held-out test cell.

    Fold cells train on the training persons outside the fold and evaluate
    on the fold's persons; the test cell trains on all training persons.
    """
    groups = scenario_groups or SCENARIOS
    scenarios = list(scenarios or groups)
    k = data.folds.k
    folds = list(range(k)) + ([TEST_FOLD] if include_test else [])
    person_fold = np.array([data.folds.fold.get(p, -1) for p in data.trips.person_ids])
    part = np.array([data.split.partition.get(p, "") for p in data.trips.person_ids])

    tasks = []
    matrices = {}
    for scenario in scenarios:
        matrices[scenario] = assemble_stage2(data.trips, data.propensity, data.profiles, scenario, groups)
        for classifier in classifiers:
            for fold in folds:
                tasks.append((scenario, classifier, fold))

    def run_cell(task):
        scenario, classifier, fold = task
        matrix = matrices[scenario]
        if fold == TEST_FOLD:
            train_mask, eval_mask = part == "train", part == "test"
        else:
            train_mask = (part == "train") & (person_fold != fold)
            eval_mask = (part == "train") & (person_fold == fold)
        train_people = {data.trips.person_ids[i] for i in np.flatnonzero(train_mask)}
        eval_people = {data.trips.person_ids[i] for i in np.flatnonzero(eval_mask)}
        if train_people & eval_people:
            raise AssertionError(f"person leakage in cell {scenario}/{classifier}/{fold}")
        cell = {"scenario": scenario, "classifier": classifier, "fold": fold,
                "n_train": int(train_mask.sum()), "n_eval": int(eval_mask.sum()),
                "n_features": len(matrix.columns)}
        model = None
        try:
            params = _learner_params(classifier, learner_params, _cell_seed(seed, classifier, fold))
            model = train(classifier, matrix.values[train_mask], matrix.labels[train_mask], params, matrix.columns)
            scores = raw_scores(model, matrix.values[eval_mask])
            cell["metrics"] = classification_metrics(matrix.labels[eval_mask], scores, threshold).as_dict()
            cell["status"] = "ok"
        except Exception as exc:  # a failed cell must not stop the grid
            log.warning("cell %s/%s/%s failed: %s", scenario, classifier, fold, exc)
            cell["status"] = "failed"
            cell["error"] = f"{type(exc).__name__}: {exc}"
            model = None
        if progress:
            progress(cell)
        return cell, model

    if workers > 1:
        # tree kernels release the GIL, so threads overlap the heavy work
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_cell, tasks))
    else:
        results = [run_cell(t) for t in tasks]

    cells, models = [], {}
    keep_fold = TEST_FOLD if include_test else k - 1
    for (scenario, classifier, fold), (cell, model) in zip(tasks, results):
        cells.append(cell)
        if fold == keep_fold and model is not None:
            models[(scenario, classifier)] = model

    report = AblationReport(cells, {}, {}, {
        "seed": seed,
        "k": k,
        "threshold": threshold,
        "include_test": include_test,
        "config_digest": config_digest,
        "scenario_groups": {s: list(groups[s]) for s in scenarios},
        "n_trips": len(data.trips),
        "n_positive_trips": int(data.trips.labels.sum()),
    }, scenarios, list(classifiers))

    if BASELINE in scenarios and FULL in scenarios:
        for classifier in classifiers:
            base = report.fold_values(BASELINE, classifier)
            full = report.fold_values(FULL, classifier)
            if any(math.isnan(v) for v in base + full):
                report.comparisons[classifier] = {"error": "failed fold cells"}
            else:
                report.comparisons[classifier] = compare_folds(base, full)
    importance_scenario = FULL if FULL in scenarios else scenarios[-1]
    for classifier in classifiers:
        model = models.get((importance_scenario, classifier))
        if model is not None:
            per_column, shares = feature_importance(model)
            report.importance[classifier] = {"scenario": importance_scenario, "shares": shares,
                                             "per_column": per_column}
    return report


def check_failures(report: AblationReport, limit=MAX_FAILED_FRACTION):
    frac = report.failed_fraction()
    if frac > limit:
        raise AblationFailed(f"{frac:.0%} of grid cells failed (limit {limit:.0%})")
    return frac


# ------------------------------------------------------------ segments


def default_segments(traveler):
    demo = traveler.socio_demographics
    veh = demo.get("household_vehicles")
    return {
        "user_status": "ridesourcing user" if traveler.ever_uses_ridesourcing else "non-user",
        "age_group": str(demo.get("age_group", "missing")),
        "income": str(demo.get("income", "missing")),
        "vehicles": "missing" if veh is None else ("0" if veh == 0 else "1" if veh == 1 else "2+"),
    }


def report_latent_profiles(travelers, profiles, segment_spec=("user_status",), segment_fn=default_segments):
    """Mean latent score per dimension for each level of each segment key.

    Returns rows of {segment, level, n, <dimension>: mean}.  Persons without
    a profile are skipped; empty levels never appear (a warning is logged
    for keys with no members at all).
    """
    rows = []
    for key in segment_spec:
        groups = {}
        for t in travelers:
            profile = profiles.get(t.person_id)
            if profile is None:
                continue
            level = "all" if key == "all" else segment_fn(t).get(key)
            if level is None:
                continue
            groups.setdefault(level, []).append(profile.vector())
        if not groups:
            log.warning("segment %r has no members; omitted", key)
        for level in sorted(groups):
            mat = np.asarray(groups[level], dtype=float)
            row = {"segment": key, "level": level, "n": int(mat.shape[0])}
            row.update({d: float(m) for d, m in zip(LATENT_DIMENSIONS, mat.mean(axis=0))})
            rows.append(row)
    return rows


def write_segment_profiles(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["segment", "level", "n", *LATENT_DIMENSIONS])
        for r in rows:
            w.writerow([r["segment"], r["level"], r["n"], *[f"{r[d]:.4f}" for d in LATENT_DIMENSIONS]])


# -------------------------------------------------------------- output


def _fmt(v, digits=4):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.{digits}f}"


def _mean_metric(report, scenario, classifier, metric):
    vals = [v for v in report.fold_values(scenario, classifier, metric) if not math.isnan(v)]
    return float(np.mean(vals)) if vals else float("nan")


def _headline(report, scenario, classifier, metric):
    """Test-cell value when present, else the CV mean."""
    if report.metadata.get("include_test"):
        c = report.cell(scenario, classifier, TEST_FOLD)
        return c["metrics"][metric] if c["status"] == "ok" else float("nan")
    return _mean_metric(report, scenario, classifier, metric)


def improvement_table(baseline, sapa, metrics=METRIC_KEYS):
    """Rows: Baseline, SAPA, Relative Improvement (%), recomputed from the two metric maps."""
    rel = {}
    for m in metrics:
        b, s = baseline.get(m), sapa.get(m)
        rel[m] = None if b is None or s is None or b == 0 else relative_improvement(b, s)
    return [("Baseline", baseline), ("SAPA", sapa), ("Relative Improvement (%)", rel)]


def table3_rows(baseline, sapa, metrics=METRIC_KEYS):
    rows = []
    for name, vals in improvement_table(baseline, sapa, metrics):
        if name.startswith("Relative"):
            rows.append([name, *["" if vals[m] is None else format_improvement(vals[m]) for m in metrics]])
        else:
            rows.append([name, *[_fmt(vals.get(m)) for m in metrics]])
    return rows


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_report(report: AblationReport, out_dir, formats=("csv", "txt")):
    """Write table mirrors (CSV) and a text summary; returns written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    written = []
    has_pair = BASELINE in report.scenarios and FULL in report.scenarios
    primary = report.classifiers[0]

    if "csv" in formats:
        path = out / "cells.csv"
        rows = []
        for c in report.cells:
            m = c.get("metrics", {})
            rows.append([c["scenario"], c["classifier"], c["fold"], c["status"], c["n_train"], c["n_eval"]]
                        + [_fmt(m.get(k)) for k in METRIC_KEYS] + [c.get("error", "")])
        _write_csv(path, ["scenario", "classifier", "fold", "status", "n_train", "n_eval", *METRIC_KEYS, "error"],
                   rows)
        written.append(path)

        if has_pair:
            # overall comparison for the first classifier
            base = {m: _headline(report, BASELINE, primary, m) for m in METRIC_KEYS}
            sapa = {m: _headline(report, FULL, primary, m) for m in METRIC_KEYS}
            path = out / "table3_overall.csv"
            _write_csv(path, ["model", *METRIC_KEYS], table3_rows(base, sapa))
            written.append(path)

            # per-classifier boost
            path = out / "table4_classifiers.csv"
            rows = []
            for clf in report.classifiers:
                b = _headline(report, BASELINE, clf, "pr_auc")
                s = _headline(report, FULL, clf, "pr_auc")
                rel = relative_improvement(b, s) if b and not math.isnan(b) else None
                rows.append([CLASSIFIER_LABELS.get(clf, clf), _fmt(b), _fmt(s), _fmt(rel, 1)])
            _write_csv(path, ["classifier", "baseline_pr_auc", "sapa_pr_auc", "relative_improvement_pct"], rows)
            written.append(path)

        path = out / "table5_ablation.csv"
        rows = []
        for scenario in report.scenarios:
            row = [SCENARIO_LABELS.get(scenario, scenario)]
            for clf in report.classifiers:
                row += [_fmt(_mean_metric(report, scenario, clf, "pr_auc")), _fmt(_headline(report, scenario, clf,
                                                                                              "pr_auc"))]
            rows.append(row)
        header = ["configuration"]
        for clf in report.classifiers:
            header += [f"{clf}_cv_mean_pr_auc", f"{clf}_headline_pr_auc"]
        _write_csv(path, header, rows)
        written.append(path)

        if report.comparisons:
            path = out / "table6_significance.csv"
            rows = []
            for clf in report.classifiers:
                c = report.comparisons.get(clf, {})
                rows.append([CLASSIFIER_LABELS.get(clf, clf), _fmt(c.get("baseline_mean")), _fmt(c.get("full_mean")),
                             _fmt(c.get("wilcoxon_p")), _fmt(c.get("cohens_d"), 3)])
            _write_csv(path, ["classifier", "baseline_mean_pr_auc", "sapa_mean_pr_auc", "wilcoxon_p", "cohens_d"],
                       rows)
            written.append(path)

            path = out / "table8_folds.csv"
            rows = []
            for clf in report.classifiers:
                c = report.comparisons.get(clf, {})
                for i, (b, s) in enumerate(zip(c.get("baseline_folds", []), c.get("full_folds", []))):
                    rows.append([CLASSIFIER_LABELS.get(clf, clf), i + 1, _fmt(b), _fmt(s)])
            _write_csv(path, ["classifier", "fold", "baseline_pr_auc", "sapa_pr_auc"], rows)
            written.append(path)

        if report.importance:
            path = out / "importance.csv"
            rows = [[clf, cat, _fmt(imp["shares"][cat])] for clf, imp in sorted(report.importance.items())
                    for cat in FEATURE_CATEGORIES]
            _write_csv(path, ["classifier", "category", "share"], rows)
            written.append(path)

    if "txt" in formats:
        path = out / "summary.txt"
        path.write_text(summary_text(report), encoding="utf-8")
        written.append(path)
    if "json" in formats:
        path = out / "report.json"
        path.write_text(report.to_json(), encoding="utf-8")
        written.append(path)
    return written


def summary_text(report: AblationReport):
    lines = [f"Ablation summary (seed {report.metadata['seed']}, {report.metadata['k']}-fold CV"
             f"{' + held-out test' if report.metadata.get('include_test') else ''})", ""]
    failed = [c for c in report.cells if c["status"] != "ok"]
    lines.append(f"cells: {len(report.cells)} total, {len(failed)} failed")
    lines.append("")
    lines.append("Mean CV PR-AUC by configuration:")
    for scenario in report.scenarios:
        vals = "  ".join(f"{clf}={_fmt(_mean_metric(report, scenario, clf, 'pr_auc'))}" for clf in report.classifiers)
        lines.append(f"  {SCENARIO_LABELS.get(scenario, scenario):<40} {vals}")
    if BASELINE in report.scenarios:
        lines.append("")
        lines.append("PR-AUC change vs. observables-only baseline (CV means):")
        for scenario in report.scenarios:
            if scenario == BASELINE:
                continue
            parts = []
            for clf in report.classifiers:
                b = _mean_metric(report, BASELINE, clf, "pr_auc")
                s = _mean_metric(report, scenario, clf, "pr_auc")
                parts.append(f"{clf} {format_improvement(relative_improvement(b, s))}" if b and not math.isnan(b)
                             else f"{clf} n/a")
            lines.append(f"  {SCENARIO_LABELS.get(scenario, scenario):<40} {', '.join(parts)}")
    if BASELINE in report.scenarios and FULL in report.scenarios:
        lines.append("")
        where = "held-out test" if report.metadata.get("include_test") else "CV mean"
        lines.append(f"Overall ({report.classifiers[0]}, {where}):")
        for m in ("pr_auc", "roc_auc", "f1", "mcc"):
            b = _headline(report, BASELINE, report.classifiers[0], m)
            s_ = _headline(report, FULL, report.classifiers[0], m)
            if b and not (math.isnan(b) or math.isnan(s_)):
                lines.append("  " + improvement_line(b, s_, m.upper().replace("_", "-")))
    if report.comparisons:
        lines.append("")
        lines.append("Baseline vs. full model over CV folds (one-sided Wilcoxon signed-rank, pooled Cohen's d):")
        for clf in report.classifiers:
            c = report.comparisons.get(clf, {})
            if "baseline_mean" not in c:
                lines.append(f"  {clf}: unavailable ({c.get('error', 'missing')})")
                continue
            lines.append(f"  {clf}: {_fmt(c['baseline_mean'])} -> {_fmt(c['full_mean'])} "
                         f"({format_improvement(c['relative_improvement_pct'])}), "
                         f"p = {_fmt(c.get('wilcoxon_p'), 5)}, d = {_fmt(c.get('cohens_d'), 3)}")
    if report.importance:
        lines.append("")
        lines.append("Feature-importance share by category (split gain):")
        for clf, imp in sorted(report.importance.items()):
            shares = ", ".join(f"{cat} {100 * imp['shares'][cat]:.1f}%" for cat in FEATURE_CATEGORIES)
            lines.append(f"  {clf} [{imp['scenario']}]: {shares}")
    return "\n".join(lines) + "\n"


def improvement_line(baseline, sapa, label="PR-AUC"):
    """One summary line, e.g. 'PR-AUC: 0.1409 -> 0.2479 (+75.9%)'."""
    return f"{label}: {baseline:.4f} -> {sapa:.4f} ({format_improvement(relative_improvement(baseline, sapa))})"

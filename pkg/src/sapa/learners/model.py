"""Trained-model container, prediction, Platt calibration, importance and serialization."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from sapa.dimensions import FEATURE_CATEGORIES, feature_category
from sapa.learners._trees import predict_tree

FORMAT_VERSION = 1
_EPS = 1e-6


@dataclass
class TrainedModel:
    kind: str  # "gbdt" | "forest"
    trees: list
    columns: tuple
    base_score: float = 0.0
    learning_rate: float = 1.0
    calibration: tuple | None = None  # (slope, intercept) on the logit scale
    params: dict = field(default_factory=dict)

    @property
    def n_features(self):
        return len(self.columns)


def as_array(X, columns=None):
    """Return (float matrix, column tuple) from a FeatureMatrix-like or an array."""
    if hasattr(X, "values") and hasattr(X, "columns"):
        values = np.asarray(X.values, dtype=np.float64)
        cols = tuple(X.columns)
    else:
        values = np.asarray(X, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        cols = tuple(columns) if columns is not None else tuple(f"f{i}" for i in range(values.shape[1]))
    if len(cols) != values.shape[1]:
        raise ValueError(f"{len(cols)} column names for {values.shape[1]} columns")
    return np.ascontiguousarray(values), cols


def check_training_inputs(X, y):
    y = np.asarray(y).astype(np.float64).ravel()
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if not np.all(np.isfinite(X)):
        bad = np.where(~np.all(np.isfinite(X), axis=0))[0]
        raise ValueError(f"non-finite values in feature columns {bad.tolist()}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.shape[0]:
        raise ValueError("training labels contain a single class")
    return y


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _logit(p):
    p = np.clip(p, _EPS, 1.0 - _EPS)
    return np.log(p / (1.0 - p))


def raw_scores(model: TrainedModel, X, columns=None):
    """Uncalibrated probabilities."""
    values = _checked_matrix(model, X, columns)
    out = np.zeros(values.shape[0])
    if model.kind == "gbdt":
        out += model.base_score
        for nodes in model.trees:
            predict_tree(nodes, values, out, model.learning_rate)
        return _sigmoid(out)
    if not model.trees:
        return np.full(values.shape[0], model.base_score)
    for nodes in model.trees:
        predict_tree(nodes, values, out, 1.0)
    return out / len(model.trees)


def predict_proba(model: TrainedModel, X, columns=None):
    p = raw_scores(model, X, columns)
    if model.calibration is not None:
        slope, intercept = model.calibration
        p = _sigmoid(slope * _logit(p) + intercept)
    return p


def _checked_matrix(model, X, columns):
    if hasattr(X, "values") and hasattr(X, "columns"):
        cols = tuple(X.columns)
        if cols != model.columns:
            missing = [c for c in model.columns if c not in cols]
            extra = [c for c in cols if c not in model.columns]
            raise ValueError(
                f"column manifest mismatch: missing={missing} unexpected={extra}"
                + ("" if missing or extra else " (order differs)")
            )
        values = np.asarray(X.values, dtype=np.float64)
    else:
        values = np.asarray(X, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(1, -1)
        if columns is not None and tuple(columns) != model.columns:
            raise ValueError("column manifest mismatch for array input")
        if values.shape[1] != model.n_features:
            raise ValueError(f"expected {model.n_features} columns, got {values.shape[1]}")
    return np.ascontiguousarray(values)


def fit_platt(scores, labels):
    """Maximum-likelihood (slope, intercept) of p = sigmoid(a * logit(score) + b)."""
    z = _logit(np.asarray(scores, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64)

    def nll(theta):
        a, b = theta
        t = a * z + b
        # log(1 + e^t) - y t, stable
        loss = np.logaddexp(0.0, t) - y * t
        p = _sigmoid(t)
        grad = np.array([np.sum((p - y) * z), np.sum(p - y)])
        return loss.sum(), grad

    res = minimize(nll, x0=np.array([1.0, 0.0]), jac=True, method="L-BFGS-B")
    return float(res.x[0]), float(res.x[1])


def calibrate(model: TrainedModel, X_holdout, y_holdout, method="platt", columns=None) -> TrainedModel:
    if method != "platt":
        raise ValueError(f"unknown calibration method {method!r}")
    y = np.asarray(y_holdout).astype(np.float64).ravel()
    if y.min() == y.max():
        raise ValueError("calibration holdout contains a single class")
    scores = raw_scores(model, X_holdout, columns)
    return TrainedModel(
        kind=model.kind,
        trees=model.trees,
        columns=model.columns,
        base_score=model.base_score,
        learning_rate=model.learning_rate,
        calibration=fit_platt(scores, y),
        params=dict(model.params),
    )


def feature_importance(model: TrainedModel):
    """Total split gain per column plus category shares summing to 1 (or all 0)."""
    gains = np.zeros(model.n_features)
    for nodes in model.trees:
        internal = nodes[:, 2] >= 0
        np.add.at(gains, nodes[internal, 0].astype(np.int64), nodes[internal, 5])
    per_column = {c: float(g) for c, g in zip(model.columns, gains)}
    total = gains.sum()
    shares = {cat: 0.0 for cat in FEATURE_CATEGORIES}
    if total > 0:
        for c, g in per_column.items():
            shares[feature_category(c)] += g / total
    return per_column, shares


def to_json(model: TrainedModel) -> str:
    payload = {
        "format": "sapa-model",
        "version": FORMAT_VERSION,
        "kind": model.kind,
        "columns": list(model.columns),
        "base_score": model.base_score,
        "learning_rate": model.learning_rate,
        "calibration": list(model.calibration) if model.calibration is not None else None,
        "params": model.params,
        "trees": [nodes.tolist() for nodes in model.trees],
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def from_json(text: str) -> TrainedModel:
    payload = json.loads(text)
    if payload.get("format") != "sapa-model":
        raise ValueError("not a serialized sapa model")
    if payload["version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {payload['version']}")
    cal = payload["calibration"]
    return TrainedModel(
        kind=payload["kind"],
        trees=[np.asarray(t, dtype=np.float64).reshape(-1, 7) for t in payload["trees"]],
        columns=tuple(payload["columns"]),
        base_score=payload["base_score"],
        learning_rate=payload["learning_rate"],
        calibration=tuple(cal) if cal is not None else None,
        params=payload["params"],
    )


def digest(model: TrainedModel) -> str:
    return hashlib.sha256(to_json(model).encode()).hexdigest()

from sapa.learners.forest import ForestParams, train_forest
from sapa.learners.gbdt import GbdtParams, train_gbdt
from sapa.learners.model import (
    TrainedModel,
    calibrate,
    digest,
    feature_importance,
    from_json,
    predict_proba,
    raw_scores,
    to_json,
)

LEARNERS = ("gbdt", "forest")


def train(kind, X, y, params=None, columns=None):
    if kind == "gbdt":
        return train_gbdt(X, y, params, columns)
    if kind == "forest":
        return train_forest(X, y, params, columns)
    raise ValueError(f"unknown learner {kind!r}; expected one of {LEARNERS}")


__all__ = [
    "LEARNERS",
    "ForestParams",
    "GbdtParams",
    "TrainedModel",
    "calibrate",
    "digest",
    "feature_importance",
    "from_json",
    "predict_proba",
    "raw_scores",
    "to_json",
    "train",
    "train_forest",
    "train_gbdt",
]

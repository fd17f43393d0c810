"""Gradient-boosted trees on the weighted logistic loss (second-order boosting)."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from sapa.learners._trees import MODE_NEWTON, grow_tree, predict_tree, presort
from sapa.learners.model import TrainedModel, as_array, check_training_inputs


@dataclass(frozen=True)
class GbdtParams:
    n_estimators: int = 100
    max_depth: int = 6
    learning_rate: float = 0.1
    subsample: float = 0.8
    colsample: float = 0.8
    scale_pos_weight: float | None = None  # None -> neg_count / pos_count
    min_child_weight: float = 1.0
    reg_lambda: float = 1.0
    seed: int = 42

    def __post_init__(self):
        for name in ("learning_rate", "subsample", "colsample"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {value}")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.n_estimators < 0:
            raise ValueError("n_estimators must be >= 0")
        if self.scale_pos_weight is not None and self.scale_pos_weight <= 0:
            raise ValueError("scale_pos_weight must be > 0")


def train_gbdt(X, y, params: GbdtParams | None = None, columns=None) -> TrainedModel:
    params = params or GbdtParams()
    values, cols = as_array(X, columns)
    y = check_training_inputs(values, y)
    n, d = values.shape

    n_pos = y.sum()
    spw = params.scale_pos_weight if params.scale_pos_weight is not None else (n - n_pos) / n_pos
    w = np.where(y == 1, spw, 1.0)
    base_rate = float(np.sum(w * y) / np.sum(w))
    base_score = float(np.log(base_rate / (1.0 - base_rate)))

    sorted_idx, sorted_x = presort(values)
    n_cols = max(1, int(round(params.colsample * d)))
    F = np.full(n, base_score)
    trees = []
    for t in range(params.n_estimators):
        rng = np.random.default_rng([params.seed, t])
        if params.subsample < 1.0:
            active = rng.random(n) < params.subsample
        else:
            active = np.ones(n, dtype=bool)
        allowed = np.zeros(d, dtype=bool)
        if n_cols < d:
            allowed[rng.choice(d, size=n_cols, replace=False)] = True
        else:
            allowed[:] = True
        p = 1.0 / (1.0 + np.exp(-F))
        grad = (p - y) * w
        hess = p * (1.0 - p) * w
        nodes = grow_tree(sorted_idx, sorted_x, grad, hess, active, allowed, MODE_NEWTON,
                          params.max_depth, params.reg_lambda, params.min_child_weight, 0, -1)
        predict_tree(nodes, values, F, params.learning_rate)
        trees.append(nodes)

    recorded = asdict(params)
    recorded["scale_pos_weight"] = float(spw)
    return TrainedModel(
        kind="gbdt",
        trees=trees,
        columns=cols,
        base_score=base_score,
        learning_rate=params.learning_rate,
        params=recorded,
    )

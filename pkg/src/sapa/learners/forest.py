"""Class-weighted random forest of Gini trees."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from sapa.learners._trees import MODE_GINI, grow_tree, presort
from sapa.learners.model import TrainedModel, as_array, check_training_inputs


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    class_weight: str | None = "balanced"
    max_features: str | int | None = "sqrt"  # None -> all columns
    max_depth: int = 64
    bootstrap: bool = True
    seed: int = 42

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")


def _n_node_features(max_features, d):
    if max_features is None:
        return d
    if max_features == "sqrt":
        return max(1, int(np.sqrt(d)))
    return max(1, min(d, int(max_features)))


def train_forest(X, y, params: ForestParams | None = None, columns=None, sample_weight=None) -> TrainedModel:
    params = params or ForestParams()
    values, cols = as_array(X, columns)
    y = check_training_inputs(values, y)
    n, d = values.shape

    if params.class_weight == "balanced":
        counts = np.bincount(y.astype(np.int64), minlength=2)
        class_w = n / (2.0 * counts)
    else:
        class_w = np.ones(2)
    base_w = class_w[y.astype(np.int64)]
    if sample_weight is not None:
        base_w = base_w * np.asarray(sample_weight, dtype=np.float64)

    sorted_idx, sorted_x = presort(values)
    m = _n_node_features(params.max_features, d)
    allowed = np.ones(d, dtype=bool)
    trees = []
    for t in range(params.n_trees):
        rng = np.random.default_rng([params.seed, t])
        if params.bootstrap:
            counts = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)
        else:
            counts = np.ones(n)
        w = counts * base_w
        node_seed = int(rng.integers(0, 2**31 - 1))
        nodes = grow_tree(sorted_idx, sorted_x, w * y, w, counts > 0, allowed, MODE_GINI,
                          params.max_depth, 0.0, 0.0, m if m < d else 0, node_seed)
        trees.append(nodes)

    recorded = asdict(params)
    recorded["class_weights"] = class_w.tolist()
    return TrainedModel(kind="forest", trees=trees, columns=cols, base_score=float(y.mean()), params=recorded)

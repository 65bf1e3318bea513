"""Sentence-score ratio features and the overall-score regressors.

Three model families are provided: a CART regression tree, a bagged random
forest of CART trees, and k-nearest neighbours. Models serialise to a
self-describing JSON document.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from numba import njit

from .errors import (
    EmptyRole,
    EmptySequence,
    TargetOutOfRange,
    TooFewSamples,
    UnsupportedModelKind,
    UntrainedModel,
)
from .models import FEATURE_NAMES, CaseEvaluation, CorrelationResult, FeatureVector, Role
from .stats import kendall_tau_b

SCORE_MIN, SCORE_MAX = 0.0, 5.0
N_FEATURES = len(FEATURE_NAMES)

KINDS = ("decision_tree", "knn", "random_forest")
UNSUPPORTED_KINDS = ("svm", "support_vector_machine", "neural_network", "mlp", "gradient_boosting")

DEFAULT_HYPERPARAMETERS = {
    "decision_tree": {"max_depth": 5, "min_samples_leaf": 2},
    "random_forest": {
        "n_trees": 100,
        "max_features": math.ceil(N_FEATURES / 3),
        "max_depth": None,
        "min_samples_leaf": 1,
        "bootstrap": True,
    },
    "knn": {"k": 5},
}


# -- features -------------------------------------------------------------------------


def _ratios(scores: Sequence[float]) -> list[float]:
    n = len(scores)
    return [sum(1 for s in scores if s == v) / n for v in (0.0, 0.5, 1.0, -1.0)]


def features_from_scores(original: Sequence[float], predicted: Sequence[float]) -> FeatureVector:
    if not original:
        raise EmptyRole(Role.ORIGINAL.value)
    if not predicted:
        raise EmptyRole(Role.PREDICTED.value)
    return FeatureVector(*_ratios(list(original)), *_ratios(list(predicted)))


def extract_features(evaluation: CaseEvaluation) -> FeatureVector:
    return features_from_scores(
        [r.score for r in evaluation.rows_for(Role.ORIGINAL)],
        [r.score for r in evaluation.rows_for(Role.PREDICTED)],
    )


def average_features(per_iteration: Sequence[FeatureVector]) -> FeatureVector:
    if not per_iteration:
        raise EmptySequence("no feature vectors to average")
    columns = zip(*(fv.as_tuple() for fv in per_iteration))
    return FeatureVector(*(math.fsum(col) / len(per_iteration) for col in columns))


def normalize_kind(kind: str) -> str:
    k = kind.strip().lower().replace("-", "_").replace(" ", "_")
    k = {"dt": "decision_tree", "tree": "decision_tree", "rf": "random_forest", "forest": "random_forest",
         "k_nearest_neighbors": "knn", "nearest_neighbors": "knn"}.get(k, k)
    if k not in KINDS:
        raise UnsupportedModelKind(kind)
    return k


# -- CART kernel ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _grow_tree(X, y, samples, max_depth, min_leaf, n_try, feature_keys):
    """Grow one CART tree on ``X[samples]``.

    ``max_depth`` < 0 means unlimited. When ``n_try`` is smaller than the
    feature count, each node examines the ``n_try`` features with the
    smallest keys in its row of ``feature_keys``. Candidate features are
    scanned in index order and thresholds in ascending order, and a split
    must beat the incumbent strictly, so ties go to the lowest feature then
    lowest threshold.
    """
    m = samples.shape[0]
    d = X.shape[1]
    cap = 2 * m + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)

    idx = samples.copy()
    buf = np.empty(m, np.int64)
    stack_node = np.empty(cap, np.int64)
    stack_start = np.empty(cap, np.int64)
    stack_end = np.empty(cap, np.int64)
    stack_depth = np.empty(cap, np.int64)
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = m
    stack_depth[0] = 0
    top = 1
    n_nodes = 1
    vals = np.empty(m)
    ys = np.empty(m)

    while top > 0:
        top -= 1
        node = stack_node[top]
        start = stack_start[top]
        end = stack_end[top]
        depth = stack_depth[top]
        cnt = end - start

        total = 0.0
        for i in range(start, end):
            total += y[idx[i]]
        mean = total / cnt
        value[node] = mean

        if (max_depth >= 0 and depth >= max_depth) or cnt < 2 * min_leaf:
            continue

        if n_try < d:
            chosen = np.sort(np.argsort(feature_keys[node % feature_keys.shape[0]])[:n_try])
        else:
            chosen = np.arange(d)

        best_gain = 1e-12
        best_f = -1
        best_t = 0.0
        for f in chosen:
            for i in range(cnt):
                vals[i] = X[idx[start + i], f]
            order = np.argsort(vals[:cnt], kind="mergesort")
            for i in range(cnt):
                ys[i] = y[idx[start + order[i]]] - mean
            s_left = 0.0
            for i in range(1, cnt):
                s_left += ys[i - 1]
                if i < min_leaf or cnt - i < min_leaf:
                    continue
                lo = vals[order[i - 1]]
                hi = vals[order[i]]
                if not lo < hi:
                    continue
                gain = s_left * s_left * (1.0 / i + 1.0 / (cnt - i))
                if gain > best_gain * (1.0 + 1e-12) + 1e-15:
                    best_gain = gain
                    best_f = f
                    best_t = 0.5 * (lo + hi)

        if best_f < 0:
            continue

        # stable partition of idx[start:end] around the threshold
        n_left = 0
        for i in range(start, end):
            if X[idx[i], best_f] <= best_t:
                buf[n_left] = idx[i]
                n_left += 1
        k = n_left
        for i in range(start, end):
            if X[idx[i], best_f] > best_t:
                buf[k] = idx[i]
                k += 1
        for i in range(cnt):
            idx[start + i] = buf[i]

        feature[node] = best_f
        threshold[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        # push right first so the left child is processed first
        stack_node[top] = n_nodes + 1
        stack_start[top] = start + n_left
        stack_end[top] = end
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = n_nodes
        stack_start[top] = start
        stack_end[top] = start + n_left
        stack_depth[top] = depth + 1
        top += 1
        n_nodes += 2

    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@njit(cache=True, nogil=True)
def _tree_predict(feature, threshold, left, right, value, X):
    out = np.empty(X.shape[0])
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]
    return out


@dataclass(frozen=True)
class Tree:
    feature: tuple[int, ...]
    threshold: tuple[float, ...]
    left: tuple[int, ...]
    right: tuple[int, ...]
    value: tuple[float, ...]

    @classmethod
    def grow(cls, X, y, samples, max_depth, min_leaf, n_try, feature_keys) -> "Tree":
        arrays = _grow_tree(
            X, y, np.asarray(samples, dtype=np.int64),
            -1 if max_depth is None else int(max_depth), int(min_leaf), int(n_try), feature_keys,
        )
        f, t, l, r, v = (a.tolist() for a in arrays)
        return cls(tuple(f), tuple(t), tuple(l), tuple(r), tuple(v))

    @cached_property
    def _arrays(self):
        return (
            np.asarray(self.feature, dtype=np.int64),
            np.asarray(self.threshold, dtype=np.float64),
            np.asarray(self.left, dtype=np.int64),
            np.asarray(self.right, dtype=np.int64),
            np.asarray(self.value, dtype=np.float64),
        )

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _tree_predict(*self._arrays, X)

    @property
    def n_leaves(self) -> int:
        return sum(1 for f in self.feature if f < 0)

    def to_dict(self) -> dict:
        return {"feature": list(self.feature), "threshold": list(self.threshold),
                "left": list(self.left), "right": list(self.right), "value": list(self.value)}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(tuple(d["feature"]), tuple(float(v) for v in d["threshold"]), tuple(d["left"]),
                   tuple(d["right"]), tuple(float(v) for v in d["value"]))


# -- models ------------------------------------------------------------------------------


@dataclass
class RegressionModel:
    kind: str
    hyperparameters: dict
    seed: int
    state: dict | None = None
    trees: list[Tree] = field(default_factory=list)

    def predict_raw(self, X) -> np.ndarray:
        if self.state is None:
            raise UntrainedModel(f"{self.kind} model has not been trained")
        X = _as_matrix(X)
        if self.kind == "knn":
            train_X = np.asarray(self.state["X"], dtype=np.float64)
            train_Y = np.asarray(self.state["Y"], dtype=np.float64)
            k = min(int(self.hyperparameters["k"]), len(train_Y))
            out = np.empty(X.shape[0])
            for r, row in enumerate(X):
                dist = np.sqrt(((train_X - row) ** 2).sum(axis=1))
                nearest = np.argsort(dist, kind="stable")[:k]
                out[r] = train_Y[nearest].mean()
            return out
        per_tree = np.stack([t.predict(X) for t in self.trees])
        return per_tree.mean(axis=0)

    def predict_many(self, X) -> list[float]:
        return [float(v) for v in np.clip(self.predict_raw(X), SCORE_MIN, SCORE_MAX)]

    def tree_predictions(self, x) -> list[float]:
        X = _as_matrix([x])
        return [float(t.predict(X)[0]) for t in self.trees]

    def to_dict(self) -> dict:
        if self.state is None:
            raise UntrainedModel("cannot serialise an untrained model")
        state = dict(self.state)
        if self.kind != "knn":
            state["trees"] = [t.to_dict() for t in self.trees]
        return {
            "format": "radjudge-regression/1",
            "kind": self.kind,
            "hyperparameters": self.hyperparameters,
            "seed": self.seed,
            "features": list(FEATURE_NAMES),
            "state": state,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionModel":
        state = dict(d["state"])
        trees = [Tree.from_dict(t) for t in state.pop("trees", [])]
        return cls(d["kind"], dict(d["hyperparameters"]), int(d["seed"]), state, trees)

    @classmethod
    def from_json(cls, text: str) -> "RegressionModel":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "RegressionModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _as_matrix(X) -> np.ndarray:
    rows = [x.as_tuple() if isinstance(x, FeatureVector) else tuple(x) for x in X]
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), N_FEATURES)


def _grow_forest_tree(X, y, hp, seed, index) -> Tree:
    rng = np.random.default_rng([seed, index])
    n, d = X.shape
    samples = rng.integers(0, n, n) if hp["bootstrap"] else np.arange(n)
    keys = rng.random((2 * n + 1, d))
    return Tree.grow(X, y, samples, hp["max_depth"], hp["min_samples_leaf"], min(hp["max_features"], d), keys)


def train(
    kind: str,
    X: Sequence[FeatureVector] | np.ndarray,
    Y: Sequence[float],
    hyperparameters: dict | None = None,
    seed: int = 0,
    n_jobs: int = 1,
) -> RegressionModel:
    """Fit a model mapping feature vectors to overall scores in [0, 5].

    Forest trees draw from ``default_rng([seed, tree_index])``, so ``n_jobs``
    does not change the result.
    """
    kind = normalize_kind(kind)
    Xm = _as_matrix(X)
    y = np.asarray([float(v) for v in Y], dtype=np.float64)
    if Xm.shape[0] != y.shape[0]:
        raise TooFewSamples(f"X has {Xm.shape[0]} rows but Y has {y.shape[0]}")
    if y.shape[0] < 2:
        raise TooFewSamples("need at least two training samples")
    if np.any(y < SCORE_MIN) or np.any(y > SCORE_MAX):
        raise TargetOutOfRange("targets must lie in [0, 5]")
    hp = dict(DEFAULT_HYPERPARAMETERS[kind])
    hp.update(hyperparameters or {})
    model = RegressionModel(kind, hp, int(seed))

    if kind == "knn":
        if int(hp["k"]) < 1:
            raise ValueError("k must be >= 1")
        model.state = {"X": Xm.tolist(), "Y": y.tolist()}
    elif kind == "decision_tree":
        keys = np.zeros((1, Xm.shape[1]))
        model.trees = [Tree.grow(Xm, y, np.arange(len(y)), hp["max_depth"], hp["min_samples_leaf"], Xm.shape[1], keys)]
        model.state = {}
    else:
        n_trees = int(hp["n_trees"])
        if n_jobs > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                model.trees = list(pool.map(lambda i: _grow_forest_tree(Xm, y, hp, seed, i), range(n_trees)))
        else:
            model.trees = [_grow_forest_tree(Xm, y, hp, seed, i) for i in range(n_trees)]
        model.state = {}
    return model


def predict(model: RegressionModel, x: FeatureVector | Sequence[float]) -> float:
    return model.predict_many([x])[0]


def evaluate_model(model: RegressionModel, X, Y: Sequence[float]) -> CorrelationResult:
    return kendall_tau_b(model.predict_many(X), list(Y))


def leave_one_out(kind: str, X, Y: Sequence[float], hyperparameters: dict | None = None, seed: int = 0) -> list[float]:
    """Held-out prediction for each sample from a model trained on the rest."""
    Xm = _as_matrix(X)
    y = [float(v) for v in Y]
    preds = []
    for i in range(len(y)):
        keep = [j for j in range(len(y)) if j != i]
        model = train(kind, Xm[keep], [y[j] for j in keep], hyperparameters, seed)
        preds.append(model.predict_many(Xm[i:i + 1])[0])
    return preds


def load_training_rows(features: dict[str, FeatureVector], targets: dict[str, float]) -> tuple[list[str], list[FeatureVector], list[float]]:
    """Join features and targets on case id, keeping feature order."""
    ids = [cid for cid in features if cid in targets]
    return ids, [features[c] for c in ids], [targets[c] for c in ids]

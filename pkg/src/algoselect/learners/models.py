"""Tree, forest and gradient-boosted models over feature matrices.

Every fit imputes missing features with medians of the rows it is given,
sorts the rows canonically by content (so row order never matters) and
stores the medians with the model, so predictions reuse them.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..sampling import RngStream
from . import _kernels as K

MODEL_FORMAT_VERSION = 1
TASKS = ("regression", "classification")


class ModelFormatError(ValueError):
    pass


@dataclass
class Dataset:
    """Rows of features with a target and a group id per row.

    ``y`` holds floats for regression and class labels for classification.
    ``classes`` fixes the label vocabulary and its order (ties resolve to the
    lowest index); it defaults to the sorted distinct labels.
    """

    X: np.ndarray
    y: np.ndarray
    groups: np.ndarray
    task: str = "regression"
    classes: tuple | None = None
    feature_names: tuple | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2:
            raise ValueError("X must be 2-D")
        self.y = np.asarray(self.y, dtype=float if self.task == "regression" else object)
        self.groups = np.asarray(self.groups)
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if not (len(self.y) == len(self.groups) == self.X.shape[0]):
            raise ValueError("X, y and groups must have the same number of rows")
        if self.task == "classification":
            if self.classes is None:
                self.classes = tuple(sorted(set(self.y.tolist())))
            else:
                self.classes = tuple(self.classes)
                unknown = set(self.y.tolist()) - set(self.classes)
                if unknown:
                    raise ValueError(f"labels outside the class vocabulary: {sorted(unknown)}")
        elif not np.all(np.isfinite(self.y)):
            raise ValueError("regression targets must be finite")

    def __len__(self):
        return self.X.shape[0]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return replace(self, X=self.X[rows], y=self.y[rows], groups=self.groups[rows])

    def class_index(self) -> np.ndarray:
        lookup = {c: k for k, c in enumerate(self.classes)}
        return np.array([lookup[v] for v in self.y], dtype=np.int64)


@dataclass(frozen=True)
class TreeParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: float = 1.0
    learning_rate: float = 0.1
    subsample: float = 1.0
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 or None")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not 0 < self.features_per_split <= 1:
            raise ValueError("features_per_split must be in (0, 1]")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must be in (0, 1]")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TreeParams":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)

    def n_try(self, p: int) -> int:
        return max(1, int(self.features_per_split * p + 1e-9))


def impute_medians(X: np.ndarray) -> np.ndarray:
    """Column medians ignoring NaN; a column with no values gets 0."""
    X = np.asarray(X, dtype=float)
    med = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        col = X[:, j][~np.isnan(X[:, j])]
        if col.size:
            med[j] = float(np.median(col))
    return med


def apply_imputation(X: np.ndarray, medians: np.ndarray) -> np.ndarray:
    X = np.array(X, dtype=float, copy=True)
    mask = np.isnan(X)
    if mask.any():
        X[mask] = np.broadcast_to(medians, X.shape)[mask]
    return X


def _canonical_order(X: np.ndarray, target: np.ndarray) -> np.ndarray:
    # lexsort treats its last key as primary
    keys = [target] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def _depth_arg(params: TreeParams) -> int:
    return -1 if params.max_depth is None else int(params.max_depth)


@dataclass
class TrainedModel:
    """A fitted tree, forest or boosted ensemble plus its imputation medians."""

    kind: str
    task: str
    params: dict
    medians: np.ndarray
    classes: tuple | None
    feature_names: tuple | None
    # padded tree buffers, one row per tree
    F: np.ndarray
    T: np.ndarray
    L: np.ndarray
    R: np.ndarray
    V: np.ndarray
    sizes: np.ndarray
    init: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_scores: int = 1
    provenance: dict = field(default_factory=dict)

    @property
    def n_trees(self) -> int:
        return int(self.params["n_trees"])

    def _prepare(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.medians.size:
            raise ValueError(f"expected {self.medians.size} features, got {X.shape[1]}")
        return apply_imputation(X, self.medians)

    def scores(self, X, n_trees: int | None = None) -> np.ndarray:
        """Raw outputs: regression values, class votes (forest/tree) or boosted scores."""
        X = self._prepare(X)
        n = self.n_trees if n_trees is None else int(n_trees)
        if not 1 <= n <= self.n_trees:
            raise ValueError(f"n_trees must be in [1, {self.n_trees}]")
        if self.kind in ("tree", "forest"):
            if self.task == "regression":
                return K.forest_regress(X, self.F, self.T, self.L, self.R, self.V, n)
            return K.forest_votes(X, self.F, self.T, self.L, self.R, self.V, n)
        lr = float(self.params["learning_rate"])
        out = np.tile(self.init, (X.shape[0], 1))
        for s in range(n):
            for k in range(self.n_scores):
                t = s * self.n_scores + k
                leaves = K.apply_tree(X, self.F[t], self.T[t], self.L[t], self.R[t])
                out[:, k] += lr * self.V[t, leaves, 0]
        return out[:, 0] if self.task == "regression" else out

    def predict(self, X, n_trees: int | None = None) -> np.ndarray:
        s = self.scores(X, n_trees)
        if self.task == "regression":
            return s
        if self.kind == "gbt" and self.n_scores == 1:
            idx = (s[:, 0] > 0).astype(int)
        else:
            idx = np.argmax(s, axis=1)
        return np.asarray(self.classes, dtype=object)[idx]

    # serialization

    def to_dict(self) -> dict:
        trees = []
        for t in range(self.F.shape[0]):
            k = int(self.sizes[t])
            trees.append({
                "feature": self.F[t, :k].tolist(),
                "threshold": self.T[t, :k].tolist(),
                "left": self.L[t, :k].tolist(),
                "right": self.R[t, :k].tolist(),
                "value": self.V[t, :k].tolist(),
            })
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "task": self.task,
            "params": self.params,
            "medians": self.medians.tolist(),
            "classes": None if self.classes is None else list(self.classes),
            "feature_names": None if self.feature_names is None else list(self.feature_names),
            "init": self.init.tolist(),
            "n_scores": self.n_scores,
            "n_outputs": int(self.V.shape[2]),
            "trees": trees,
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedModel":
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model format version {d.get('format_version')!r}")
        trees = d["trees"]
        n_out = int(d["n_outputs"])
        cap = max(len(t["feature"]) for t in trees)
        n = len(trees)
        F = np.full((n, cap), -1, dtype=np.int64)
        T = np.zeros((n, cap))
        L = np.full((n, cap), -1, dtype=np.int64)
        R = np.full((n, cap), -1, dtype=np.int64)
        V = np.zeros((n, cap, n_out))
        sizes = np.zeros(n, dtype=np.int64)
        for i, t in enumerate(trees):
            k = len(t["feature"])
            F[i, :k] = t["feature"]
            T[i, :k] = t["threshold"]
            L[i, :k] = t["left"]
            R[i, :k] = t["right"]
            V[i, :k] = np.asarray(t["value"], dtype=float).reshape(k, n_out)
            sizes[i] = k
        return cls(
            kind=d["kind"], task=d["task"], params=dict(d["params"]),
            medians=np.asarray(d["medians"], dtype=float),
            classes=None if d["classes"] is None else tuple(d["classes"]),
            feature_names=None if d["feature_names"] is None else tuple(d["feature_names"]),
            F=F, T=T, L=L, R=R, V=V, sizes=sizes,
            init=np.asarray(d["init"], dtype=float), n_scores=int(d["n_scores"]),
            provenance=dict(d.get("provenance", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> "TrainedModel":
        return cls.from_dict(json.loads(text))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "TrainedModel":
        with open(path) as fh:
            return cls.from_json(fh.read())


def schema_hash(feature_names) -> str:
    return hashlib.sha256("\x1f".join(feature_names).encode()).hexdigest()[:16]


def _prepare_fit(data: Dataset):
    med = impute_medians(data.X)
    X = apply_imputation(data.X, med)
    if data.task == "classification":
        target = data.class_index()
        order = _canonical_order(X, target.astype(float))
        return med, np.ascontiguousarray(X[order]), None, target[order]
    order = _canonical_order(X, data.y)
    return med, np.ascontiguousarray(X[order]), np.ascontiguousarray(data.y[order]), None


def _params_dict(params: TreeParams, kind: str) -> dict:
    d = {"n_trees": params.n_trees, "max_depth": params.max_depth,
         "min_samples_leaf": params.min_samples_leaf}
    if kind == "gbt":
        d.update(learning_rate=params.learning_rate, subsample=params.subsample)
    else:
        d.update(features_per_split=params.features_per_split, bootstrap=params.bootstrap)
    return d


def _fit_bagged(data: Dataset, params: TreeParams, stream: RngStream, kind: str) -> TrainedModel:
    if len(data) == 0:
        raise ValueError("cannot fit on an empty dataset")
    med, X, y, cls = _prepare_fit(data)
    order = K.presort(X)
    n_classes = len(data.classes) if data.task == "classification" else 0
    if y is None:
        y = np.zeros(X.shape[0])
    if cls is None:
        cls = np.zeros(X.shape[0], dtype=np.int64)
    n = params.n_trees if kind == "forest" else 1
    bootstrap = params.bootstrap if kind == "forest" else False
    base = stream.seed64
    seeds = np.array([K.tree_seed(base, t) for t in range(n)], dtype=np.uint64)
    F, T, L, R, V, sizes = K.grow_forest(X, order, y, cls, n_classes, _depth_arg(params),
                                         params.min_samples_leaf, params.n_try(X.shape[1]), seeds, bootstrap)
    pd = _params_dict(params, kind)
    if kind == "tree":
        pd["n_trees"] = 1
        pd["bootstrap"] = False
    return TrainedModel(kind, data.task, pd, med, data.classes, data.feature_names,
                        F, T, L, R, V, sizes, provenance={"stream": str(stream)})


def fit_tree(data: Dataset, params: TreeParams, stream: RngStream) -> TrainedModel:
    """Single CART tree on all rows (no bootstrap); identical to a one-tree forest without bootstrap."""
    return _fit_bagged(data, params, stream, "tree")


def fit_forest(data: Dataset, params: TreeParams, stream: RngStream) -> TrainedModel:
    """Bagged CART forest; tree ``t`` draws from a seed that depends only on the stream and ``t``."""
    return _fit_bagged(data, params, stream, "forest")


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def fit_gbt(data: Dataset, params: TreeParams, stream: RngStream) -> TrainedModel:
    """Gradient-boosted trees.

    Regression uses squared loss with mean initialisation.  Classification uses
    logistic loss: a single score for two classes, one score per class
    (one-vs-rest) otherwise, with Newton-step leaf values.
    """
    if len(data) == 0:
        raise ValueError("cannot fit on an empty dataset")
    med, X, y, cls = _prepare_fit(data)
    m, p = X.shape
    order = K.presort(X)
    dummy_cls = np.zeros(m, dtype=np.int64)
    depth = _depth_arg(params)
    if data.task == "regression":
        targets = y[:, None]
        init = np.array([float(np.mean(y))])
    else:
        n_classes = len(data.classes)
        if n_classes == 2:
            targets = (cls == 1).astype(float)[:, None]
        else:
            targets = (cls[:, None] == np.arange(n_classes)[None, :]).astype(float)
        prior = np.clip(targets.mean(axis=0), 1e-6, 1 - 1e-6)
        init = np.log(prior / (1 - prior))
    n_scores = targets.shape[1]
    F_score = np.tile(init, (m, 1))
    lr = params.learning_rate
    n_sub = max(1, int(math.floor(params.subsample * m + 1e-9)))
    base = stream.seed64

    trees = []
    for s in range(params.n_trees):
        if n_sub < m:
            rng = np.random.Generator(np.random.Philox(key=K.tree_seed(base, s)))
            w = np.zeros(m)
            w[rng.permutation(m)[:n_sub]] = 1.0
        else:
            w = np.ones(m)
        for k in range(n_scores):
            if data.task == "regression":
                resid = targets[:, k] - F_score[:, k]
            else:
                prob = _sigmoid(F_score[:, k])
                resid = targets[:, k] - prob
            f, th, l, r, v, n_nodes = K.grow_tree(X, order, resid, dummy_cls, 0, w, depth,
                                                  params.min_samples_leaf, p, np.uint64(0))
            leaves = K.apply_tree(X, f, th, l, r)
            if data.task == "classification":
                hess = prob * (1 - prob)
                num = np.bincount(leaves, weights=w * resid, minlength=n_nodes)
                den = np.bincount(leaves, weights=w * hess, minlength=n_nodes)
                is_leaf = f < 0
                gamma = np.where(den > 1e-12, num / np.where(den > 1e-12, den, 1.0), 0.0)
                v = np.where(is_leaf, gamma, 0.0)[:, None]
            F_score[:, k] += lr * v[leaves, 0]
            trees.append((f, th, l, r, v, n_nodes))

    cap = max(t[5] for t in trees)
    n = len(trees)
    Fa = np.full((n, cap), -1, dtype=np.int64)
    Ta = np.zeros((n, cap))
    La = np.full((n, cap), -1, dtype=np.int64)
    Ra = np.full((n, cap), -1, dtype=np.int64)
    Va = np.zeros((n, cap, 1))
    sizes = np.zeros(n, dtype=np.int64)
    for i, (f, th, l, r, v, k) in enumerate(trees):
        Fa[i, :k], Ta[i, :k], La[i, :k], Ra[i, :k], Va[i, :k] = f, th, l, r, v
        sizes[i] = k
    return TrainedModel("gbt", data.task, _params_dict(params, "gbt"), med, data.classes,
                        data.feature_names, Fa, Ta, La, Ra, Va, sizes, init=init,
                        n_scores=n_scores, provenance={"stream": str(stream)})


LEARNERS = {"forest": fit_forest, "gbt": fit_gbt, "tree": fit_tree}


def fit(kind: str, data: Dataset, params: TreeParams, stream: RngStream) -> TrainedModel:
    try:
        return LEARNERS[kind](data, params, stream)
    except KeyError:
        raise ValueError(f"unknown learner {kind!r}") from None

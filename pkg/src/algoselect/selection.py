"""Regression, classification and pairwise-tournament selectors.

A selector is trained per (dimension, budget) cell on one row per problem
instance.  Every constituent model goes through nested leave-one-group-out
CV (groups are instance ids) to produce held-out selections for evaluation,
and is separately tuned by plain leave-one-group-out search and refit on all
rows for deployment.

Model keys double as stream labels: a regressor is keyed by its solver, a
classifier by ``"A|B|..."`` over the portfolio and a pairwise model by
``"A|B"``.  With two solvers the classifier and the single pairwise model
therefore see the same data and the same stream.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .learners import Dataset, TrainedModel, TreeParams, fit, logo_grid_search, nested_logo_cv
from .perfdata import PerformanceTable, label_best
from .sampling import RngStream

APPROACHES = ("regression", "classification", "pairwise")
BUNDLE_FORMAT_VERSION = 1


class SelectorError(ValueError):
    pass


@dataclass
class CellData:
    """One (dimension, budget) cell: instance rows, features and portfolio performance."""

    dimension: int
    budget: int
    keys: list[tuple[int, int]]
    X: np.ndarray
    groups: np.ndarray
    portfolio: tuple[str, ...]
    perf: np.ndarray
    labels: np.ndarray
    feature_names: tuple | None = None

    def __post_init__(self):
        if len(self.portfolio) < 2:
            raise SelectorError(f"portfolio needs at least 2 solvers, got {len(self.portfolio)}")
        m = len(self.keys)
        if self.X.shape[0] != m or self.perf.shape != (m, len(self.portfolio)) or len(self.labels) != m:
            raise SelectorError("cell arrays disagree on the number of rows or solvers")


def build_cell(features: dict, table: PerformanceTable, dimension: int, budget: int, portfolio,
               label_stream: RngStream, feature_names=None) -> CellData:
    """Assemble a cell; labels are re-derived within the portfolio with the same per-cell streams."""
    portfolio = tuple(portfolio)
    keys = table.instances(dimension)
    missing = [k for k in keys if (k[0], k[1], dimension) not in features]
    if missing:
        raise SelectorError(f"no features for {len(missing)} instances, e.g. {missing[0]}")
    X = np.array([features[(f, i, dimension)] for f, i in keys], dtype=float)
    perf = np.empty((len(keys), len(portfolio)))
    labels = []
    for r, (f, i) in enumerate(keys):
        g = table.group(f, i, dimension, budget, portfolio)
        perf[r] = [g[s] for s in portfolio]
        labels.append(label_best(g, label_stream.derive(f"{f}/{i}/{dimension}/{budget}"))[0])
    groups = np.array([i for _, i in keys])
    return CellData(dimension, budget, keys, X, groups, portfolio, perf,
                    np.array(labels, dtype=object), feature_names)


# selection rules -----------------------------------------------------------


def regression_rule(pred: np.ndarray, portfolio) -> np.ndarray:
    """Argmin of predicted log precision per row; ties go to the earliest solver."""
    pred = np.atleast_2d(pred)
    return np.asarray(portfolio, dtype=object)[np.argmin(pred, axis=1)]


def pairwise_rule(duels: dict, portfolio) -> tuple[str, np.ndarray]:
    """Tournament winner from ``{(a, b): winner}`` for one row.

    Most wins; ties are recounted over duels inside the tied set, and a
    remaining tie goes to the earliest solver in portfolio order.  Returns
    the winner and the full win-count vector.
    """
    portfolio = list(portfolio)
    pos = {s: k for k, s in enumerate(portfolio)}
    wins = np.zeros(len(portfolio), dtype=int)
    for (a, b), w in duels.items():
        if w not in (a, b):
            raise SelectorError(f"duel {a} vs {b} returned {w!r}")
        wins[pos[w]] += 1
    top = wins.max()
    tied = [s for s in portfolio if wins[pos[s]] == top]
    if len(tied) > 1:
        tied_set = set(tied)
        sub = {s: 0 for s in tied}
        for (a, b), w in duels.items():
            if a in tied_set and b in tied_set:
                sub[w] += 1
        best = max(sub.values())
        tied = [s for s in tied if sub[s] == best]
    return tied[0], wins


def pair_target(perf_a: float, perf_b: float, label: str, a: str, b: str):
    """Winner of a duel for training, or None when both tie and neither is the row's label."""
    if perf_a < perf_b:
        return a
    if perf_b < perf_a:
        return b
    return label if label in (a, b) else None


# models --------------------------------------------------------------------


@dataclass
class ConstantModel:
    """Stand-in for a duel with no training rows: always predicts ``label``."""

    label: str
    kind: str = "constant"

    def predict(self, X, n_trees=None):
        return np.full(np.atleast_2d(X).shape[0], self.label, dtype=object)

    def to_dict(self):
        return {"format_version": 1, "kind": "constant", "label": self.label}


def model_from_dict(d: dict):
    if d.get("kind") == "constant":
        return ConstantModel(d["label"])
    return TrainedModel.from_dict(d)


def model_keys(approach: str, portfolio) -> list[str]:
    portfolio = list(portfolio)
    if approach == "regression":
        return portfolio
    if approach == "classification":
        return ["|".join(portfolio)]
    if approach == "pairwise":
        return [f"{a}|{b}" for i, a in enumerate(portfolio) for b in portfolio[i + 1:]]
    raise SelectorError(f"unknown approach {approach!r}")


def model_dataset(cell: CellData, approach: str, key: str) -> tuple[Dataset | None, np.ndarray]:
    """Training rows for one constituent model and their row indices in the cell."""
    port = list(cell.portfolio)
    if approach == "regression":
        rows = np.arange(len(cell.keys))
        ds = Dataset(cell.X, cell.perf[:, port.index(key)], cell.groups,
                     feature_names=cell.feature_names)
        return ds, rows
    if approach == "classification":
        rows = np.arange(len(cell.keys))
        ds = Dataset(cell.X, cell.labels, cell.groups, task="classification", classes=cell.portfolio,
                     feature_names=cell.feature_names)
        return ds, rows
    a, b = key.split("|")
    ia, ib = port.index(a), port.index(b)
    targets = [pair_target(cell.perf[r, ia], cell.perf[r, ib], cell.labels[r], a, b)
               for r in range(len(cell.keys))]
    rows = np.array([r for r, t in enumerate(targets) if t is not None], dtype=int)
    if rows.size == 0:
        return None, rows
    ds = Dataset(cell.X[rows], np.array([targets[r] for r in rows], dtype=object), cell.groups[rows],
                 task="classification", classes=(a, b), feature_names=cell.feature_names)
    return ds, rows


@dataclass
class ModelOutcome:
    """Held-out predictions for every cell row plus the deployment model and CV report rows."""

    key: str
    heldout: np.ndarray
    model: object
    report: list[dict] = field(default_factory=list)


def train_model(cell: CellData, approach: str, key: str, learner: str, grid: list[dict],
                stream: RngStream) -> ModelOutcome:
    """Nested CV (for held-out predictions) and deployment fit of one constituent model."""
    ms = stream.derive(key)
    ds, rows = model_dataset(cell, approach, key)
    m = len(cell.keys)
    if ds is None:
        const = ConstantModel(key.split("|")[0])
        return ModelOutcome(key, const.predict(cell.X), const)
    res = nested_logo_cv(learner, ds, grid, ms.derive("cv"))
    by_group = {f.group: f.model for f in res.folds}
    chosen, _ = logo_grid_search(learner, ds, grid, ms.derive("deploy"))
    deploy = fit(learner, ds, TreeParams.from_dict(chosen), ms.derive("deploy").derive("refit"))
    deploy.provenance.update(chosen_by="logo", cv_stream=str(ms.derive("cv")))
    heldout = np.empty(m, dtype=object if ds.task == "classification" else float)
    for g in sorted(set(cell.groups.tolist())):
        sel = cell.groups == g
        # a group with no rows for this duel was never in its training data
        model = by_group.get(g, deploy)
        heldout[sel] = model.predict(cell.X[sel])
    report = [{"model": key, **r} for r in res.report_rows()]
    return ModelOutcome(key, heldout, deploy, report)


@dataclass
class SelectorModel:
    approach: str
    portfolio: tuple[str, ...]
    budget: int
    dimension: int
    learner: str
    models: dict

    def __post_init__(self):
        if self.approach not in APPROACHES:
            raise SelectorError(f"unknown approach {self.approach!r}")
        if len(self.portfolio) < 2:
            raise SelectorError("portfolio needs at least 2 solvers")
        expected = model_keys(self.approach, self.portfolio)
        if sorted(self.models) != sorted(expected):
            raise SelectorError(f"{self.approach} selector over {len(self.portfolio)} solvers needs "
                                f"{len(expected)} models, got {len(self.models)}")

    def select(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        preds = {k: m.predict(X) for k, m in self.models.items()}
        return combine(self.approach, self.portfolio, preds)

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        files = {}
        for n, key in enumerate(model_keys(self.approach, self.portfolio)):
            name = f"model_{n:03d}.json"
            with open(os.path.join(directory, name), "w") as fh:
                json.dump(self.models[key].to_dict(), fh, sort_keys=True)
            files[key] = name
        manifest = {"format_version": BUNDLE_FORMAT_VERSION, "approach": self.approach,
                    "portfolio": list(self.portfolio), "budget": self.budget,
                    "dimension": self.dimension, "learner": self.learner, "models": files}
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=1)

    @classmethod
    def load(cls, directory) -> "SelectorModel":
        with open(os.path.join(directory, "manifest.json")) as fh:
            man = json.load(fh)
        if man.get("format_version") != BUNDLE_FORMAT_VERSION:
            raise SelectorError(f"unsupported bundle version {man.get('format_version')!r}")
        models = {}
        for key, name in man["models"].items():
            with open(os.path.join(directory, name)) as fh:
                models[key] = model_from_dict(json.load(fh))
        return cls(man["approach"], tuple(man["portfolio"]), man["budget"], man["dimension"],
                   man["learner"], models)


def combine(approach: str, portfolio, preds: dict) -> np.ndarray:
    """Turn per-model predictions (arrays over rows) into selected solvers."""
    portfolio = list(portfolio)
    if approach == "regression":
        return regression_rule(np.column_stack([preds[s] for s in portfolio]), portfolio)
    if approach == "classification":
        out = np.asarray(preds["|".join(portfolio)], dtype=object)
        bad = set(out.tolist()) - set(portfolio)
        if bad:
            raise SelectorError(f"classifier predicted solvers outside the portfolio: {sorted(bad)}")
        return out
    keys = model_keys("pairwise", portfolio)
    n = len(next(iter(preds.values())))
    out = np.empty(n, dtype=object)
    for r in range(n):
        duels = {tuple(k.split("|")): preds[k][r] for k in keys}
        out[r] = pairwise_rule(duels, portfolio)[0]
    return out


def pairwise_wins(selector: SelectorModel, X) -> np.ndarray:
    """Win counts per row and solver for a pairwise selector."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    preds = {k: m.predict(X) for k, m in selector.models.items()}
    out = np.zeros((X.shape[0], len(selector.portfolio)), dtype=int)
    for r in range(X.shape[0]):
        duels = {tuple(k.split("|")): preds[k][r] for k in selector.models}
        out[r] = pairwise_rule(duels, selector.portfolio)[1]
    return out


def select_regression(models: dict, portfolio, X) -> np.ndarray:
    return combine("regression", portfolio, {s: models[s].predict(X) for s in portfolio})


def select_classification(model, portfolio, X) -> np.ndarray:
    return combine("classification", portfolio, {"|".join(portfolio): model.predict(X)})


def select_pairwise(models: dict, portfolio, X) -> np.ndarray:
    return combine("pairwise", portfolio, {k: models[k].predict(X) for k in model_keys("pairwise", portfolio)})


@dataclass
class TrainedSelector:
    selector: SelectorModel
    heldout_selection: np.ndarray
    cv_report: list[dict]


def train_selector(approach: str, cell: CellData, learner: str, grid: list[dict], stream: RngStream,
                   map_fn=map) -> TrainedSelector:
    """Train every constituent model of one approach on a cell.

    ``map_fn`` may be a parallel map; results are keyed, so the outcome does
    not depend on execution order.
    """
    if approach not in APPROACHES:
        raise SelectorError(f"unknown approach {approach!r}")
    if len(cell.portfolio) < 2:
        raise SelectorError("portfolio needs at least 2 solvers")
    keys = model_keys(approach, cell.portfolio)
    outcomes = list(map_fn(train_model, *zip(*[(cell, approach, k, learner, grid, stream) for k in keys])))
    by_key = {o.key: o for o in outcomes}
    selector = SelectorModel(approach, cell.portfolio, cell.budget, cell.dimension, learner,
                             {k: by_key[k].model for k in keys})
    heldout = combine(approach, cell.portfolio, {k: by_key[k].heldout for k in keys})
    report = [row for k in keys for row in by_key[k].report]
    return TrainedSelector(selector, heldout, report)

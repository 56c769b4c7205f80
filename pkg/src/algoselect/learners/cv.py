"""Nested leave-one-group-out cross-validation with grid search.

The outer loop holds out one group at a time.  Inside each outer training
split an inner leave-one-group-out loop scores every grid point; the point
with the best mean inner score is refit on the whole outer training split and
scored on the held-out group.  Imputation medians are recomputed by every fit
from its own training rows only.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from ..sampling import RngStream
from .metrics import f1_macro, r2
from .models import Dataset, TrainedModel, TreeParams, fit


def expand_grid(grid: dict) -> list[dict]:
    """Cartesian product of ``{name: [values]}`` in key-sorted, value-listed order."""
    keys = sorted(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def canonical_params(params: dict) -> str:
    return json.dumps(params, sort_keys=True, separators=(",", ":"))


def _score(data: Dataset, y_true, y_pred) -> float:
    if data.task == "regression":
        return r2(y_true, y_pred)
    return f1_macro(y_true, y_pred)


@dataclass
class OuterFold:
    group: object
    train_rows: np.ndarray
    test_rows: np.ndarray
    inner_splits: list[tuple[np.ndarray, np.ndarray]]
    inner_scores: dict[str, float]
    chosen: dict
    inner_score: float
    outer_score: float
    predictions: np.ndarray
    model: TrainedModel


@dataclass
class CVResult:
    folds: list[OuterFold] = field(default_factory=list)

    @property
    def outer_scores(self) -> list[float]:
        return [f.outer_score for f in self.folds]

    def predictions(self, n_rows: int) -> np.ndarray:
        """Held-out prediction for every row, assembled across outer folds."""
        out = np.empty(n_rows, dtype=object)
        for f in self.folds:
            out[f.test_rows] = f.predictions
        return out

    def report_rows(self):
        for f in self.folds:
            yield {"fold": f.group, "chosen_params": canonical_params(f.chosen),
                   "inner_score": f.inner_score, "outer_score": f.outer_score}


def _fit_and_predict_prefixes(kind, train: Dataset, test_X, params: dict, n_tree_values, stream):
    """Fit once with the largest tree count and predict with each prefix.

    Valid because tree ``t`` (forest) or stage ``t`` (boosting) never depends
    on the total count.
    """
    top = max(n_tree_values)
    model = fit(kind, train, TreeParams.from_dict({**params, "n_trees": top}), stream)
    # a single tree ignores n_trees
    return {n: model.predict(test_X, n_trees=min(n, model.n_trees)) for n in n_tree_values}


def _families(grid: list[dict]) -> dict[str, dict[int, str]]:
    """Group grid points that differ only in n_trees; one fit serves a family."""
    default_n = TreeParams().n_trees
    fam: dict[str, dict[int, str]] = {}
    for params in grid:
        rest = {k: v for k, v in params.items() if k != "n_trees"}
        fam.setdefault(canonical_params(rest), {})[params.get("n_trees", default_n)] = canonical_params(params)
    return fam


def logo_splits(groups: np.ndarray, rows: np.ndarray | None = None):
    """Leave-one-group-out (train, test) row-index pairs, groups in sorted order."""
    rows = np.arange(len(groups)) if rows is None else np.asarray(rows)
    g = np.asarray(groups)[rows]
    out = []
    for value in sorted(set(g.tolist())):
        out.append((value, rows[g != value], rows[g == value]))
    return out


def logo_grid_search(kind: str, data: Dataset, grid: list[dict], stream: RngStream) -> tuple[dict, float]:
    """Plain leave-one-group-out grid search; returns the best params and their mean score."""
    families = _families(grid)
    totals = {canonical_params(p): 0.0 for p in grid}
    splits = logo_splits(data.groups)
    for g, tr, te in splits:
        train, test = data.subset(tr), data.subset(te)
        for rest_key, members in families.items():
            out = _fit_and_predict_prefixes(kind, train, test.X, json.loads(rest_key), sorted(members),
                                            stream.derive(f"fold{g}").derive(rest_key))
            for n, k in members.items():
                totals[k] += _score(test, test.y, out[n])
    best = None
    for p in grid:
        k = canonical_params(p)
        if best is None or totals[k] > totals[best]:
            best = k
    return json.loads(best), totals[best] / len(splits)


def nested_logo_cv(kind: str, data: Dataset, grid: list[dict], stream: RngStream) -> CVResult:
    """Nested leave-one-group-out CV over ``data.groups``.

    Needs at least three groups so every inner loop has two.  The first grid
    point wins ties on the mean inner score.
    """
    if not grid:
        raise ValueError("empty hyperparameter grid")
    if len({canonical_params(p) for p in grid}) != len(grid):
        raise ValueError("duplicate grid points")
    n_groups = len(set(np.asarray(data.groups).tolist()))
    if n_groups < 3:
        raise ValueError(f"nested leave-one-group-out needs >= 3 groups, got {n_groups}")
    families = _families(grid)
    groups = np.asarray(data.groups)
    labels = sorted(set(groups.tolist()))
    pair_cache: dict[tuple, dict] = {}

    def pair_predictions(a, b):
        # the inner fit for (outer a, inner b) trains on exactly the rows of (outer b, inner a)
        key = (a, b) if a <= b else (b, a)
        if key not in pair_cache:
            tr = np.flatnonzero((groups != a) & (groups != b))
            va = np.flatnonzero((groups == a) | (groups == b))
            ps = stream.derive("inner").derive(f"{key[0]}|{key[1]}")
            train = data.subset(tr)
            preds = {}
            for rest_key, members in families.items():
                out = _fit_and_predict_prefixes(kind, train, data.X[va], json.loads(rest_key),
                                                sorted(members), ps.derive(rest_key))
                for n, full_key in members.items():
                    preds[full_key] = out[n]
            pair_cache[key] = (va, preds)
        return pair_cache[key]

    result = CVResult()
    for g, train_rows, test_rows in logo_splits(groups):
        fs = stream.derive(f"outer{g}")
        inner = [(tr, va) for _, tr, va in logo_splits(groups, train_rows)]
        scores = {canonical_params(p): 0.0 for p in grid}
        for h in labels:
            if h == g:
                continue
            va, preds = pair_predictions(g, h)
            sel = groups[va] == h
            val = data.subset(va[sel])
            for k in scores:
                scores[k] += _score(val, val.y, preds[k][sel])
        scores = {k: v / (len(labels) - 1) for k, v in scores.items()}
        best_key = None
        for p in grid:
            k = canonical_params(p)
            if best_key is None or scores[k] > scores[best_key]:
                best_key = k
        chosen = json.loads(best_key)
        model = fit(kind, data.subset(train_rows), TreeParams.from_dict(chosen), fs.derive("refit"))
        test = data.subset(test_rows)
        pred = model.predict(test.X)
        result.folds.append(OuterFold(
            group=g, train_rows=train_rows, test_rows=test_rows, inner_splits=inner,
            inner_scores=scores, chosen=chosen, inner_score=scores[best_key],
            outer_score=_score(test, test.y, pred), predictions=pred, model=model,
        ))
    return result

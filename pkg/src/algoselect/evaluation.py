"""Baselines, per-instance loss, hit rates and report files.

Losses are differences of capped log10 precisions, so two solvers that both
reach the cap count as equally good.  A selection is a hit when its loss is
0, which includes picking any of several tied-best solvers.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .perfdata import PerformanceTable

LOSS_SLACK = 1e-12
TUKEY_FENCE = 1.5


class EvaluationError(ValueError):
    pass


class ReportWriteError(OSError):
    pass


def vbs(table: PerformanceTable, key, budget: int, portfolio) -> tuple[set[str], float]:
    """Tied-best solvers of one instance ``(f, i, d)`` and their log precision."""
    f, i, d = key
    g = table.group(f, i, d, budget, portfolio)
    best = min(g.values())
    return {s for s, v in g.items() if v == best}, best


def sbs(table: PerformanceTable, budget: int, dimension: int, portfolio) -> str:
    """Solver with the lowest mean log precision over all instances; ties in portfolio order."""
    _, M = table.matrix(dimension, budget, list(portfolio))
    means = M.mean(axis=0)
    return list(portfolio)[int(np.argmin(means))]


def loss(selected: str, key, budget: int, table: PerformanceTable, portfolio) -> float:
    f, i, d = key
    if selected not in portfolio:
        raise EvaluationError(f"selected solver {selected!r} is not in the portfolio")
    _, best = vbs(table, key, budget, portfolio)
    value = table.log_precision(f, i, d, selected, budget) - best
    if value < -LOSS_SLACK:
        raise EvaluationError(f"negative loss {value} for {selected} on {key}")
    return max(value, 0.0)


def quartiles(values) -> tuple[float, float, float]:
    """Type-7 (linear interpolation) quartiles."""
    q = np.percentile(np.asarray(values, dtype=float), [25, 50, 75], method="linear")
    return float(q[0]), float(q[1]), float(q[2])


@dataclass
class BoxStats:
    n: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    mean: float
    whisker_low: float
    whisker_high: float
    outliers: tuple[float, ...]


def box_stats(values) -> BoxStats:
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise EvaluationError("no values to summarize")
    q1, med, q3 = quartiles(v)
    iqr = q3 - q1
    lo, hi = q1 - TUKEY_FENCE * iqr, q3 + TUKEY_FENCE * iqr
    inside = v[(v >= lo) & (v <= hi)]
    outl = tuple(float(x) for x in v[(v < lo) | (v > hi)])
    # interpolated quartiles can lie beyond the last non-outlier; whiskers never enter the box
    wl, wh = min(float(inside[0]), q1), max(float(inside[-1]), q3)
    return BoxStats(int(v.size), float(v[0]), q1, med, q3, float(v[-1]), float(v.mean()), wl, wh, outl)


@dataclass
class CellReport:
    """Evaluation of one selector (or standalone solver) on one (dimension, budget) cell."""

    approach: str
    learner: str
    dimension: int
    budget: int
    portfolio: tuple[str, ...]
    keys: list[tuple[int, int]]
    selections: list[str]
    losses: np.ndarray
    sbs: str
    sbs_mean_loss: float

    @property
    def mean_loss(self) -> float:
        return float(self.losses.mean())

    @property
    def vbs_hit_rate(self) -> float:
        return float(np.mean(self.losses == 0.0))

    @property
    def stats(self) -> BoxStats:
        return box_stats(self.losses)


def evaluate_selector(selections: dict, table: PerformanceTable, dimension: int, budget: int, portfolio,
                      approach: str = "", learner: str = "") -> CellReport:
    """Loss of held-out selections ``{(f, i): solver}`` on every instance of the cell."""
    portfolio = tuple(portfolio)
    keys = table.instances(dimension)
    missing = [k for k in keys if k not in selections]
    if missing:
        raise EvaluationError(f"selections miss {len(missing)} of {len(keys)} instances, e.g. {missing[0]}")
    sel = [selections[k] for k in keys]
    losses = np.array([loss(s, (f, i, dimension), budget, table, portfolio) for s, (f, i) in zip(sel, keys)])
    best = sbs(table, budget, dimension, portfolio)
    sbs_losses = [loss(best, (f, i, dimension), budget, table, portfolio) for f, i in keys]
    return CellReport(approach, learner, dimension, budget, portfolio, keys, sel, losses, best,
                      float(np.mean(sbs_losses)))


def standalone_reports(table: PerformanceTable, dimension: int, budget: int, portfolio) -> list[CellReport]:
    """Each portfolio solver as a constant selector, for side-by-side loss distributions."""
    keys = table.instances(dimension)
    return [evaluate_selector({k: s for k in keys}, table, dimension, budget, portfolio, "solver", s)
            for s in portfolio]


def _num(x: float) -> str:
    return repr(float(x))


def _open(path):
    try:
        return open(path, "w", newline="")
    except OSError as e:
        raise ReportWriteError(f"cannot write {path}: {e}") from e


BOXPLOT_COLUMNS = ["approach", "learner", "n", "min", "q1", "median", "q3", "max", "mean",
                   "whisker_low", "whisker_high", "outliers"]

REPORT_README = """\
Report files

boxplot_<dimension>_<budget>.csv
  One row per selector (approach, learner) and per standalone portfolio
  solver (approach = "solver", learner = solver name).  Values are loss
  statistics over instances: n, min, q1, median, q3, max, mean, the Tukey
  whisker ends (most extreme values within 1.5 IQR of the quartiles, but
  never inside the box) and the outliers beyond them, joined by ';'.  Quartiles use linear
  interpolation between order statistics.

heatmap.csv
  One row per (dimension, budget).  Columns after the first two are
  <learner>/<approach>; values are the percentage of instances on which the
  selector picked a solver with loss 0.

summary.txt
  Human-readable table: portfolio size, mean and median loss, hit rate and
  the single best solver with its mean loss, per cell and selector.
"""


def emit_reports(reports: list[CellReport], out_dir, learners=None, approaches=None) -> list[str]:
    """Write boxplot CSVs, the hit-rate heatmap, a summary and a column README."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise ReportWriteError(f"cannot create {out_dir}: {e}") from e
    selectors = [r for r in reports if r.approach != "solver"]
    if learners is None:
        learners = sorted({r.learner for r in selectors})
    if approaches is None:
        approaches = [a for a in ("regression", "classification", "pairwise") if a in {r.approach for r in selectors}]
    cells = sorted({(r.dimension, r.budget) for r in reports})
    written = []

    for d, b in cells:
        path = os.path.join(out_dir, f"boxplot_{d}_{b}.csv")
        rows = [r for r in reports if (r.dimension, r.budget) == (d, b)]
        rows.sort(key=lambda r: (r.approach == "solver", r.approach, r.learner))
        with _open(path) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(BOXPLOT_COLUMNS)
            for r in rows:
                s = r.stats
                w.writerow([r.approach, r.learner, s.n, _num(s.minimum), _num(s.q1), _num(s.median), _num(s.q3),
                            _num(s.maximum), _num(s.mean), _num(s.whisker_low), _num(s.whisker_high),
                            ";".join(_num(x) for x in s.outliers)])
        written.append(path)

    index = {(r.dimension, r.budget, r.learner, r.approach): r for r in selectors}
    path = os.path.join(out_dir, "heatmap.csv")
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dimension", "budget"] + [f"{lr}/{ap}" for lr in learners for ap in approaches])
        for d, b in cells:
            row = [d, b]
            for lr in learners:
                for ap in approaches:
                    r = index.get((d, b, lr, ap))
                    row.append("" if r is None else _num(round(100.0 * r.vbs_hit_rate, 6)))
            w.writerow(row)
    written.append(path)

    path = os.path.join(out_dir, "summary.txt")
    with _open(path) as fh:
        header = f"{'dim':>4} {'budget':>7} {'learner':<22} {'approach':<15} {'K':>2} " \
                 f"{'mean_loss':>10} {'median':>8} {'hit%':>7} {'sbs':<20} {'sbs_loss':>9}\n"
        fh.write(header)
        for r in sorted(reports, key=lambda r: (r.dimension, r.budget, r.approach == "solver", r.learner, r.approach)):
            s = r.stats
            fh.write(f"{r.dimension:>4} {r.budget:>7} {r.learner:<22} {r.approach:<15} {len(r.portfolio):>2} "
                     f"{r.mean_loss:>10.4f} {s.median:>8.4f} {100 * r.vbs_hit_rate:>7.2f} "
                     f"{r.sbs:<20} {r.sbs_mean_loss:>9.4f}\n")
    written.append(path)

    path = os.path.join(out_dir, "README.txt")
    with _open(path) as fh:
        fh.write(REPORT_README)
    written.append(path)
    return written

"""Performance table, best-solver labels and the complementarity filter."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .sampling import RngStream

log = logging.getLogger(__name__)

PRECISION_CAP = 1e-8


class NegativePrecisionError(ValueError):
    pass


def cap_and_log(p: float, cap: float = PRECISION_CAP) -> float:
    """log10 of the precision, floored at ``cap``."""
    if p < 0 or math.isnan(p):
        raise NegativePrecisionError(f"precision must be >= 0, got {p}")
    return math.log10(max(p, cap))


def aggregate_runs(precisions) -> float:
    """Lower median of the per-repetition precisions."""
    vals = sorted(float(v) for v in precisions)
    if not vals:
        raise ValueError("need at least one repetition")
    return vals[(len(vals) - 1) // 2]


@dataclass(frozen=True)
class PerfRow:
    function_id: int
    instance_id: int
    dimension: int
    solver: str
    budget: int
    aggregated_precision: float
    log_precision: float

    @property
    def key(self):
        return (self.function_id, self.instance_id, self.dimension, self.solver, self.budget)


@dataclass(frozen=True)
class LabelRow:
    function_id: int
    instance_id: int
    dimension: int
    budget: int
    best_solver: str
    was_tie: bool


class PerformanceTable:
    """Capped log precisions keyed by (function_id, instance_id, dimension, solver, budget)."""

    def __init__(self, rows):
        self.rows = sorted(rows, key=lambda r: r.key)
        self._index = {r.key: r for r in self.rows}

    def log_precision(self, function_id, instance_id, dimension, solver, budget) -> float:
        try:
            return self._index[(function_id, instance_id, dimension, solver, budget)].log_precision
        except KeyError:
            raise KeyError(
                f"missing performance cell f={function_id} i={instance_id} d={dimension} "
                f"solver={solver} budget={budget}"
            ) from None

    @property
    def solvers(self) -> list[str]:
        return sorted({r.solver for r in self.rows})

    def instances(self, dimension) -> list[tuple[int, int]]:
        return sorted({(r.function_id, r.instance_id) for r in self.rows if r.dimension == dimension})

    def group(self, function_id, instance_id, dimension, budget, solvers) -> dict[str, float]:
        return {s: self.log_precision(function_id, instance_id, dimension, s, budget) for s in solvers}

    def matrix(self, dimension, budget, solvers) -> tuple[list[tuple[int, int]], np.ndarray]:
        """(instances, array[instance, solver]) of log precisions."""
        keys = self.instances(dimension)
        M = np.array([[self.log_precision(f, i, dimension, s, budget) for s in solvers] for f, i in keys])
        return keys, M

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["function_id", "instance_id", "dimension", "solver", "budget",
                        "aggregated_precision", "log_precision"])
            for r in self.rows:
                w.writerow([r.function_id, r.instance_id, r.dimension, r.solver, r.budget,
                            f"{r.aggregated_precision:.16e}", f"{r.log_precision:.17g}"])

    @classmethod
    def read_csv(cls, path) -> "PerformanceTable":
        with open(path, newline="") as fh:
            rows = [
                PerfRow(int(r["function_id"]), int(r["instance_id"]), int(r["dimension"]), r["solver"],
                        int(r["budget"]), float(r["aggregated_precision"]), float(r["log_precision"]))
                for r in csv.DictReader(fh)
            ]
        return cls(rows)


def build_performance_table(trajectories, cap: float = PRECISION_CAP) -> PerformanceTable:
    """Median-aggregate repetitions per (instance, solver, budget) and cap-log them."""
    cells: dict[tuple, list[float]] = {}
    for t in trajectories:
        for budget, p in t.checkpoints.items():
            key = (t.problem.function_id, t.problem.instance_id, t.problem.dimension, t.solver, budget)
            cells.setdefault(key, []).append(p)
    rows = []
    for key, vals in cells.items():
        agg = aggregate_runs(vals)
        rows.append(PerfRow(*key, agg, cap_and_log(agg, cap)))
    return PerformanceTable(rows)


def label_best(group: dict[str, float], stream: RngStream) -> tuple[str, bool]:
    """Argmin solver of a row group; ties broken by a seeded uniform draw.

    The tied set is taken in sorted-name order before drawing, so the result
    does not depend on dict insertion order.
    """
    if not group:
        raise ValueError("empty row group")
    best = min(group.values())
    tied = sorted(s for s, v in group.items() if v == best)
    if len(tied) == 1:
        return tied[0], False
    return tied[int(stream.generator().integers(len(tied)))], True


def label_table(table: PerformanceTable, solvers, budgets, stream: RngStream) -> list[LabelRow]:
    """Label every (instance, budget) cell; each cell draws from its own derived stream."""
    out = []
    for d in sorted({r.dimension for r in table.rows}):
        for f, i in table.instances(d):
            for b in sorted(budgets):
                g = table.group(f, i, d, b, solvers)
                best, tie = label_best(g, stream.derive(f"{f}/{i}/{d}/{b}"))
                out.append(LabelRow(f, i, d, b, best, tie))
    return sorted(out, key=lambda r: (r.function_id, r.instance_id, r.dimension, r.budget))


def write_labels_csv(path, labels):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["function_id", "instance_id", "dimension", "budget", "best_solver", "was_tie"])
        for r in labels:
            w.writerow([r.function_id, r.instance_id, r.dimension, r.budget, r.best_solver, int(r.was_tie)])


def read_labels_csv(path) -> list[LabelRow]:
    with open(path, newline="") as fh:
        return [
            LabelRow(int(r["function_id"]), int(r["instance_id"]), int(r["dimension"]), int(r["budget"]),
                     r["best_solver"], r["was_tie"] == "1")
            for r in csv.DictReader(fh)
        ]


def filter_portfolio(labels, dimension: int, budget: int, solvers, threshold: float = 0.05) -> list[str]:
    """Keep solvers that are the (tie-broken) best on strictly more than ``threshold`` of instances.

    Returned in the order of ``solvers``.  If nobody passes, the most frequent
    winner is kept alone and a warning is logged.
    """
    cell = [r for r in labels if r.dimension == dimension and r.budget == budget]
    if not cell:
        raise ValueError(f"no labels for dimension={dimension}, budget={budget}")
    wins = Counter(r.best_solver for r in cell)
    keep = [s for s in solvers if wins[s] / len(cell) > threshold]
    if not keep:
        top = max(solvers, key=lambda s: (wins[s], -list(solvers).index(s)))
        log.warning("no solver wins > %.3g of instances at d=%d budget=%d; keeping %s alone",
                    threshold, dimension, budget, top)
        keep = [top]
    if len(keep) == 1:
        log.warning("portfolio at d=%d budget=%d has a single solver (%s)", dimension, budget, keep[0])
    return keep

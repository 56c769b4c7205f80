"""Stage implementations and the cached pipeline.

Output layout under the output directory::

    config.json                 frozen copy of the resolved configuration
    suite/manifest.csv
    features/features.csv
    collect/trajectories.csv    collect/runs.csv (evaluations used per run)
    collect/performance.csv
    collect/labels.csv          collect/portfolio.json
    train/cv_report.csv         train/selections.csv
    train/bundles/d<d>_b<b>/<learner>/<approach>/manifest.json + model files
    report/                     boxplot_<d>_<b>.csv, heatmap.csv, cells.csv,
                                losses.csv, summary.txt, README.txt
    .cache/<stage>.json         cache keys

A stage's cache key hashes the stage name, the config subtree it reads and
the bytes of its input files.  ``run_pipeline`` skips a stage when the stored
key matches and every output exists, unless a stage it depends on ran in the
same invocation.

Parallel work is split into independent seeded units (one per problem
instance for features and collection, one per constituent model for
training); results are merged by key, so ``threads`` never changes output.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import json
import logging
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager

import numpy as np

from .. import ela, evaluation, perfdata
from ..learners import resolve_grid
from ..problems import ProblemSpec, instantiate, suite_specs, write_suite_manifest
from ..sampling import RngStream, lhs_sample
from ..selection import CellData, SelectorModel, build_cell, combine, model_keys, train_model
from ..solvers import SolverConfig, run_solver
from .config import ExperimentConfig, MissingUpstreamError, SchemaMismatchError, hash_json

log = logging.getLogger(__name__)

STAGES = ("suite", "features", "collect", "train", "evaluate")
FEATURE_KEY_COLUMNS = ["function_id", "instance_id", "dimension"]
TRAJECTORY_COLUMNS = ["solver", "function_id", "instance_id", "dimension", "repetition", "budget", "precision"]
RUN_COLUMNS = ["solver", "function_id", "instance_id", "dimension", "repetition", "evaluations", "seed_path"]

STAGE_FILES = {
    "suite": (["suite/manifest.csv"], []),
    "features": (["features/features.csv"], ["suite/manifest.csv"]),
    "collect": (["collect/trajectories.csv", "collect/runs.csv", "collect/performance.csv",
                 "collect/labels.csv", "collect/portfolio.json"], ["suite/manifest.csv"]),
    "train": (["train/cv_report.csv", "train/selections.csv"],
              ["features/features.csv", "collect/performance.csv", "collect/portfolio.json"]),
    "evaluate": (["report/heatmap.csv", "report/summary.txt", "report/cells.csv", "report/losses.csv"],
                 ["train/selections.csv", "collect/performance.csv", "collect/portfolio.json"]),
}

STAGE_DEPS = {
    "suite": (),
    "features": ("suite",),
    "collect": ("suite",),
    "train": ("features", "collect"),
    "evaluate": ("train", "collect"),
}

STAGE_CONFIG_KEYS = {
    "suite": ("function_ids", "instance_ids", "dimensions"),
    "features": ("master_seed", "ela"),
    "collect": ("master_seed", "solvers", "budgets", "perfdata"),
    "train": ("master_seed", "learning"),
    "evaluate": ("learning",),
}


class Workspace:
    def __init__(self, out_dir, config: ExperimentConfig, threads: int = 1):
        self.out = os.path.abspath(out_dir)
        self.config = config
        self.threads = max(1, int(threads))
        self.master = RngStream(config.master_seed)

    def path(self, rel: str) -> str:
        return os.path.join(self.out, rel)

    def freeze_config(self):
        os.makedirs(self.out, exist_ok=True)
        with open(self.path("config.json"), "w") as fh:
            fh.write(self.config.to_json() + "\n")

    def require(self, stage: str):
        missing = [p for p in STAGE_FILES[stage][1] if not os.path.exists(self.path(p))]
        if missing:
            raise MissingUpstreamError(f"stage {stage!r} needs {', '.join(missing)} under {self.out}; "
                                       f"run the upstream stages first")

    def cache_key(self, stage: str) -> str:
        inputs = {p: _file_hash(self.path(p)) for p in STAGE_FILES[stage][1]}
        return hash_json({"stage": stage, "config": self.config.subtree(*STAGE_CONFIG_KEYS[stage]),
                          "inputs": inputs})

    def cached(self, stage: str) -> bool:
        rec = self.path(f".cache/{stage}.json")
        if not os.path.exists(rec) or any(not os.path.exists(self.path(p)) for p in STAGE_FILES[stage][0]):
            return False
        if any(not os.path.exists(self.path(p)) for p in STAGE_FILES[stage][1]):
            return False
        with open(rec) as fh:
            return json.load(fh).get("key") == self.cache_key(stage)

    def record(self, stage: str):
        os.makedirs(self.path(".cache"), exist_ok=True)
        with open(self.path(f".cache/{stage}.json"), "w") as fh:
            json.dump({"stage": stage, "key": self.cache_key(stage)}, fh, sort_keys=True)


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@contextmanager
def _mapper(threads: int):
    if threads <= 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=threads) as ex:
        yield functools.partial(ex.map, chunksize=1)


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else repr(float(x))


def _read_manifest(ws: Workspace) -> list[ProblemSpec]:
    with open(ws.path("suite/manifest.csv"), newline="") as fh:
        specs = [ProblemSpec(int(r["function_id"]), int(r["instance_id"]), int(r["dimension"]))
                 for r in csv.DictReader(fh)]
    return specs


# suite ---------------------------------------------------------------------


def stage_suite(ws: Workspace):
    c = ws.config.data
    specs = suite_specs(c["function_ids"], c["instance_ids"], c["dimensions"])
    os.makedirs(ws.path("suite"), exist_ok=True)
    write_suite_manifest(ws.path("suite/manifest.csv"), specs)


# features ------------------------------------------------------------------


def feature_unit(spec: ProblemSpec, n: int, repetitions: int, stream: RngStream) -> np.ndarray:
    """Median feature vector of one instance over independent LHS samples."""
    inst = instantiate(spec)
    lo, hi = inst.domain
    vecs = []
    for r in range(repetitions):
        X = lhs_sample(n, spec.dimension, (lo, hi), stream.derive(f"rep{r}"))
        vecs.append(ela.compute_features(ela.Sample(X, inst.raw(X))))
    return ela.aggregate_features(vecs).values


def stage_features(ws: Workspace):
    ws.require("features")
    specs = _read_manifest(ws)
    reps = ws.config.data["ela"]["repetitions"]
    fs = ws.master.derive("features")
    args = [(s, ws.config.sample_size(s.dimension), reps, fs.derive(f"{s.function_id}/{s.instance_id}/{s.dimension}"))
            for s in specs]
    with _mapper(ws.threads) as m:
        results = list(m(feature_unit, *zip(*args)))
    rows = sorted(((s.function_id, s.instance_id, s.dimension), v) for s, v in zip(specs, results))
    os.makedirs(ws.path("features"), exist_ok=True)
    write_features_csv(ws.path("features/features.csv"), rows)


def write_features_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FEATURE_KEY_COLUMNS + list(ela.FEATURE_NAMES))
        for key, values in rows:
            w.writerow(list(key) + [_fmt(v) for v in values])


def read_features_csv(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = FEATURE_KEY_COLUMNS + list(ela.FEATURE_NAMES)
        if header != expected:
            raise SchemaMismatchError(
                f"{path}: feature columns do not match the current schema "
                f"(file schema {ela_schema_hash(header[3:] if header else [])}, "
                f"expected {ela_schema_hash(ela.FEATURE_NAMES)})")
        out = {}
        for row in reader:
            key = tuple(int(x) for x in row[:3])
            out[key] = np.array([float(x) if x != "" else np.nan for x in row[3:]])
    return out


def ela_schema_hash(names) -> str:
    return hashlib.sha256("\x1f".join(names).encode()).hexdigest()[:16]


# collect -------------------------------------------------------------------


def collect_unit(spec: ProblemSpec, solvers: list[SolverConfig], budgets: list[int], repetitions: int,
                 stream: RngStream) -> tuple[list[tuple], list[tuple]]:
    """All solver runs on one instance.

    Returns checkpoint rows (solver, f, i, d, rep, budget, precision) and run
    rows (solver, f, i, d, rep, evaluations, seed_path).
    """
    inst = instantiate(spec)
    top = max(budgets)
    rows, runs = [], []
    key = (spec.function_id, spec.instance_id, spec.dimension)
    for cfg in solvers:
        for r in range(repetitions):
            t = run_solver(cfg, inst, top, budgets, stream.derive(cfg.name).derive(f"rep{r}"), repetition=r)
            for b in sorted(t.checkpoints):
                rows.append((cfg.name, *key, r, b, t.checkpoints[b]))
            runs.append((cfg.name, *key, r, t.evaluations, t.seed_path))
    return rows, runs


class _Traj:
    """Minimal trajectory view for building the performance table from CSV rows."""

    def __init__(self, solver, spec, checkpoints):
        self.solver, self.problem, self.checkpoints = solver, spec, checkpoints


def stage_collect(ws: Workspace):
    ws.require("collect")
    c = ws.config.data
    specs = _read_manifest(ws)
    solvers = ws.config.solver_configs()
    cs = ws.master.derive("collect")
    args = [(s, solvers, c["budgets"], c["perfdata"]["repetitions"],
             cs.derive(f"{s.function_id}/{s.instance_id}/{s.dimension}")) for s in specs]
    with _mapper(ws.threads) as m:
        chunks = list(m(collect_unit, *zip(*args)))
    rows = sorted(r for chunk, _ in chunks for r in chunk)
    os.makedirs(ws.path("collect"), exist_ok=True)
    with open(ws.path("collect/trajectories.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for r in rows:
            w.writerow(list(r[:6]) + [f"{r[6]:.16e}"])
    with open(ws.path("collect/runs.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        w.writerows(sorted(r for _, chunk in chunks for r in chunk))

    runs: dict[tuple, dict] = {}
    for solver, f, i, d, rep, b, p in rows:
        runs.setdefault((solver, f, i, d, rep), {})[b] = p
    trajs = [_Traj(k[0], ProblemSpec(k[1], k[2], k[3]), v) for k, v in sorted(runs.items())]
    table = perfdata.build_performance_table(trajs, c["perfdata"]["cap"])
    table.write_csv(ws.path("collect/performance.csv"))

    names = ws.config.solver_names
    labels = perfdata.label_table(table, names, c["budgets"], ws.master.derive("labels"))
    perfdata.write_labels_csv(ws.path("collect/labels.csv"), labels)

    wins = Counter(r.best_solver for r in labels)
    for s, n in wins.items():
        if n / len(labels) > 0.8:
            log.warning("solver %s is best on %.0f%% of (instance, budget) cells; selection has little to gain",
                        s, 100 * n / len(labels))
    cells = []
    for d in c["dimensions"]:
        for b in c["budgets"]:
            port = perfdata.filter_portfolio(labels, d, b, names, c["perfdata"]["threshold"])
            cell_wins = Counter(r.best_solver for r in labels if r.dimension == d and r.budget == b)
            cells.append({"dimension": d, "budget": b, "portfolio": port,
                          "wins": {s: cell_wins[s] for s in names}})
    with open(ws.path("collect/portfolio.json"), "w") as fh:
        json.dump({"threshold": c["perfdata"]["threshold"], "cells": cells}, fh, sort_keys=True, indent=1)


def read_portfolios(ws: Workspace) -> dict[tuple[int, int], tuple[str, ...]]:
    with open(ws.path("collect/portfolio.json")) as fh:
        data = json.load(fh)
    return {(c["dimension"], c["budget"]): tuple(c["portfolio"]) for c in data["cells"]}


# train ---------------------------------------------------------------------


def _cells(ws: Workspace):
    table = perfdata.PerformanceTable.read_csv(ws.path("collect/performance.csv"))
    features = read_features_csv(ws.path("features/features.csv"))
    portfolios = read_portfolios(ws)
    out = []
    for (d, b), port in sorted(portfolios.items()):
        if len(port) < 2:
            log.warning("skipping d=%d budget=%d: portfolio %s has fewer than 2 solvers", d, b, list(port))
            continue
        out.append(build_cell(features, table, d, b, port, ws.master.derive("labels"), ela.FEATURE_NAMES))
    return table, out


def stage_train(ws: Workspace):
    ws.require("train")
    lr = ws.config.data["learning"]
    _, cells = _cells(ws)
    units = []
    for cell in cells:
        for learner in lr["learners"]:
            grid = resolve_grid(lr["grids"][learner], cell.X.shape[1])
            stream = ws.master.derive("train").derive(f"{cell.dimension}/{cell.budget}").derive(learner)
            for approach in lr["approaches"]:
                for key in model_keys(approach, cell.portfolio):
                    units.append((cell, approach, key, learner, grid, stream))
    with _mapper(ws.threads) as m:
        outcomes = list(m(train_model, *zip(*units))) if units else []

    by_unit = {}
    for (cell, approach, key, learner, _, _), o in zip(units, outcomes):
        by_unit[(cell.dimension, cell.budget, learner, approach, key)] = o

    os.makedirs(ws.path("train"), exist_ok=True)
    report_rows, selection_rows = [], []
    for cell in cells:
        for learner in lr["learners"]:
            for approach in lr["approaches"]:
                keys = model_keys(approach, cell.portfolio)
                outs = {k: by_unit[(cell.dimension, cell.budget, learner, approach, k)] for k in keys}
                sel = SelectorModel(approach, cell.portfolio, cell.budget, cell.dimension, learner,
                                    {k: o.model for k, o in outs.items()})
                sel.save(ws.path(f"train/bundles/d{cell.dimension}_b{cell.budget}/{learner}/{approach}"))
                heldout = combine(approach, cell.portfolio, {k: o.heldout for k, o in outs.items()})
                for (f, i), s in zip(cell.keys, heldout):
                    selection_rows.append((cell.dimension, cell.budget, learner, approach, f, i, s))
                for k in keys:
                    for r in outs[k].report:
                        report_rows.append((cell.dimension, cell.budget, learner, approach, k, r["fold"],
                                            r["chosen_params"], r["inner_score"], r["outer_score"]))
    with open(ws.path("train/cv_report.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dimension", "budget", "learner", "approach", "model", "fold", "chosen_params",
                    "inner_score", "outer_score"])
        for r in report_rows:
            w.writerow(list(r[:7]) + [_fmt(r[7]), _fmt(r[8])])
    with open(ws.path("train/selections.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dimension", "budget", "learner", "approach", "function_id", "instance_id", "selected"])
        for r in sorted(selection_rows):
            w.writerow(r)


# evaluate ------------------------------------------------------------------


def read_selections(path) -> dict[tuple, dict]:
    out: dict[tuple, dict] = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            key = (int(r["dimension"]), int(r["budget"]), r["learner"], r["approach"])
            out.setdefault(key, {})[(int(r["function_id"]), int(r["instance_id"]))] = r["selected"]
    return out


def stage_evaluate(ws: Workspace):
    ws.require("evaluate")
    lr = ws.config.data["learning"]
    table = perfdata.PerformanceTable.read_csv(ws.path("collect/performance.csv"))
    portfolios = read_portfolios(ws)
    selections = read_selections(ws.path("train/selections.csv"))
    reports = []
    for (d, b, learner, approach), sel in sorted(selections.items()):
        reports.append(evaluation.evaluate_selector(sel, table, d, b, portfolios[(d, b)], approach, learner))
    for d, b in sorted({(k[0], k[1]) for k in selections}):
        reports.extend(evaluation.standalone_reports(table, d, b, portfolios[(d, b)]))
    out = ws.path("report")
    evaluation.emit_reports(reports, out, learners=lr["learners"], approaches=lr["approaches"])
    with open(os.path.join(out, "cells.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dimension", "budget", "learner", "approach", "k", "mean_loss", "vbs_hit_rate", "sbs",
                    "sbs_mean_loss"])
        for r in sorted(reports, key=lambda r: (r.dimension, r.budget, r.approach == "solver", r.learner, r.approach)):
            w.writerow([r.dimension, r.budget, r.learner, r.approach, len(r.portfolio), _fmt(r.mean_loss),
                        _fmt(r.vbs_hit_rate), r.sbs, _fmt(r.sbs_mean_loss)])
    with open(os.path.join(out, "losses.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dimension", "budget", "learner", "approach", "function_id", "instance_id", "selected", "loss"])
        for r in reports:
            if r.approach == "solver":
                continue
            for (f, i), s, l in zip(r.keys, r.selections, r.losses):
                w.writerow([r.dimension, r.budget, r.learner, r.approach, f, i, s, _fmt(l)])


# orchestration -------------------------------------------------------------

STAGE_FUNCS = {"suite": stage_suite, "features": stage_features, "collect": stage_collect,
               "train": stage_train, "evaluate": stage_evaluate}


def run_stage(ws: Workspace, stage: str):
    ws.freeze_config()
    STAGE_FUNCS[stage](ws)
    ws.record(stage)


def run_pipeline(ws: Workspace) -> dict[str, str]:
    """Run every stage in order; returns ``{stage: "ran" | "cached"}``."""
    ws.freeze_config()
    status = {}
    for stage in STAGES:
        upstream_ran = any(status[d] == "ran" for d in STAGE_DEPS[stage])
        if not upstream_ran and ws.cached(stage):
            status[stage] = "cached"
            log.info("stage %s: cache hit", stage)
            continue
        log.info("stage %s: running", stage)
        STAGE_FUNCS[stage](ws)
        ws.record(stage)
        status[stage] = "ran"
    return status


def load_cell(ws: Workspace, dimension: int, budget: int) -> CellData:
    """Rebuild one training cell from stage outputs (for inspection and tests)."""
    _, cells = _cells(ws)
    for c in cells:
        if (c.dimension, c.budget) == (dimension, budget):
            return c
    raise KeyError(f"no trained cell for d={dimension} budget={budget}")


__all__ = ["STAGES", "Workspace", "load_cell", "read_features_csv", "read_selections", "run_pipeline",
           "run_stage"]

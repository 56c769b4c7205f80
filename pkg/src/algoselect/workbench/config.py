"""Experiment configuration: one JSON document with a ``schema_version``."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

from ..learners import FOREST_GRID, GBT_GRID
from ..problems import CATALOG
from ..selection import APPROACHES
from ..solvers import SOLVER_NAMES, SolverConfig, SolverConfigError

SCHEMA_VERSION = 1
LEARNER_KINDS = ("forest", "gbt", "tree")


class WorkbenchError(Exception):
    """Base of the named workbench failures; ``code`` is the CLI exit status."""

    code = 1


class InvalidConfigError(WorkbenchError):
    code = 2


class MissingUpstreamError(WorkbenchError):
    code = 3


class SchemaMismatchError(WorkbenchError):
    code = 4


DEFAULT_CONFIG = {
    "schema_version": SCHEMA_VERSION,
    "master_seed": 20240601,
    "dimensions": [5, 20],
    "function_ids": list(range(1, 25)),
    "instance_ids": list(range(1, 11)),
    "budgets": [100, 250, 500, 1000, 2500, 5000, 10000],
    "solvers": [{"name": s, "hyperparameters": {}} for s in SOLVER_NAMES],
    "ela": {"sample_size": 1000, "sample_size_per_dim": None, "repetitions": 100},
    "perfdata": {"repetitions": 50, "cap": 1e-8, "threshold": 0.05},
    "learning": {
        "learners": ["forest", "gbt"],
        "approaches": list(APPROACHES),
        "grids": {"forest": FOREST_GRID, "gbt": GBT_GRID, "tree": {"max_depth": [None, 10], "min_samples_leaf": [1, 3]}},
    },
}

# reduced defaults that keep the full pipeline to tens of minutes on a desk machine
DESK_SCALE = {
    "dimensions": [2, 5],
    "budgets": [100, 250, 1000, 2500],
    "ela": {"sample_size": None, "sample_size_per_dim": 250, "repetitions": 10},
    "perfdata": {"repetitions": 10},
    "learning": {
        "grids": {
            "forest": {"n_trees": [50], "max_depth": [None], "min_samples_leaf": [1, 3],
                       "features_per_split": [1 / 3]},
            "gbt": {"n_trees": [50], "learning_rate": [0.1, 0.3], "max_depth": [3]},
        },
    },
}

_TOP_KEYS = set(DEFAULT_CONFIG) | {"output_dir"}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "grids":
            out[k] = _merge(out[k], v)
        elif k == "grids" and isinstance(v, dict):
            out[k] = {**out.get(k, {}), **copy.deepcopy(v)}
        else:
            out[k] = copy.deepcopy(v)
    return out


def _int_list(d: dict, key: str, lo: int, hi: int | None = None) -> list[int]:
    v = d[key]
    if not isinstance(v, list) or not v or not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
        raise InvalidConfigError(f"{key} must be a non-empty list of integers")
    if len(set(v)) != len(v):
        raise InvalidConfigError(f"{key} has duplicates")
    if min(v) < lo or (hi is not None and max(v) > hi):
        raise InvalidConfigError(f"{key} values must lie in [{lo}, {hi if hi is not None else 'inf'}]")
    return sorted(v)


@dataclass
class ExperimentConfig:
    data: dict

    @classmethod
    def from_dict(cls, raw: dict, desk_scale: bool = False) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise InvalidConfigError("config must be a JSON object")
        if "schema_version" in raw and raw["schema_version"] != SCHEMA_VERSION:
            raise InvalidConfigError(f"unsupported schema_version {raw['schema_version']!r}, expected {SCHEMA_VERSION}")
        unknown = set(raw) - _TOP_KEYS
        if unknown:
            raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
        base = _merge(DEFAULT_CONFIG, DESK_SCALE) if desk_scale else DEFAULT_CONFIG
        cfg = cls(_merge(base, raw))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, desk_scale: bool = False) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise InvalidConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise InvalidConfigError(f"config {path} is not valid JSON: {e}") from None
        return cls.from_dict(raw, desk_scale)

    def validate(self):
        d = self.data
        seed = d["master_seed"]
        if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
            raise InvalidConfigError("master_seed must be an integer in [0, 2**64)")
        d["dimensions"] = _int_list(d, "dimensions", 1)
        d["function_ids"] = _int_list(d, "function_ids", 1, max(CATALOG))
        d["instance_ids"] = _int_list(d, "instance_ids", 0)
        d["budgets"] = _int_list(d, "budgets", 1)
        if len(d["instance_ids"]) < 3:
            raise InvalidConfigError("nested leave-one-group-out CV needs at least 3 instance ids")
        names = []
        for s in d["solvers"]:
            if not isinstance(s, dict) or set(s) - {"name", "hyperparameters"} or "name" not in s:
                raise InvalidConfigError(f"bad solver entry {s!r}")
            try:
                SolverConfig(s["name"], dict(s.get("hyperparameters", {})))
            except SolverConfigError as e:
                raise InvalidConfigError(str(e)) from None
            names.append(s["name"])
        if len(set(names)) != len(names) or len(names) < 2:
            raise InvalidConfigError("solvers must be at least 2 distinct entries")
        ela = d["ela"]
        if set(ela) - {"sample_size", "sample_size_per_dim", "repetitions"}:
            raise InvalidConfigError(f"unknown ela keys: {sorted(set(ela) - {'sample_size', 'sample_size_per_dim', 'repetitions'})}")
        if (ela.get("sample_size") is None) == (ela.get("sample_size_per_dim") is None):
            raise InvalidConfigError("set exactly one of ela.sample_size and ela.sample_size_per_dim")
        if not isinstance(ela["repetitions"], int) or ela["repetitions"] < 1:
            raise InvalidConfigError("ela.repetitions must be a positive integer")
        for dim in d["dimensions"]:
            if self.sample_size(dim) < dim + 2:
                raise InvalidConfigError(f"ELA sample too small for dimension {dim}")
        pd = d["perfdata"]
        if set(pd) - {"repetitions", "cap", "threshold"}:
            raise InvalidConfigError("unknown perfdata keys")
        if not isinstance(pd["repetitions"], int) or pd["repetitions"] < 1:
            raise InvalidConfigError("perfdata.repetitions must be a positive integer")
        if not (isinstance(pd["cap"], (int, float)) and pd["cap"] > 0):
            raise InvalidConfigError("perfdata.cap must be > 0")
        if not (isinstance(pd["threshold"], (int, float)) and 0 <= pd["threshold"] < 1):
            raise InvalidConfigError("perfdata.threshold must be in [0, 1)")
        lr = d["learning"]
        if set(lr) - {"learners", "approaches", "grids"}:
            raise InvalidConfigError("unknown learning keys")
        for k in lr["learners"]:
            if k not in LEARNER_KINDS:
                raise InvalidConfigError(f"unknown learner {k!r}")
            grid = lr["grids"].get(k)
            if not isinstance(grid, dict) or not grid or not all(isinstance(v, list) and v for v in grid.values()):
                raise InvalidConfigError(f"grid for {k} must map names to non-empty lists")
        for a in lr["approaches"]:
            if a not in APPROACHES:
                raise InvalidConfigError(f"unknown approach {a!r}")
        if not lr["learners"] or not lr["approaches"]:
            raise InvalidConfigError("need at least one learner and one approach")

    # accessors

    @property
    def master_seed(self) -> int:
        return self.data["master_seed"]

    @property
    def solver_names(self) -> list[str]:
        return [s["name"] for s in self.data["solvers"]]

    def solver_configs(self) -> list[SolverConfig]:
        return [SolverConfig(s["name"], dict(s.get("hyperparameters", {}))) for s in self.data["solvers"]]

    def sample_size(self, dim: int) -> int:
        ela = self.data["ela"]
        if ela.get("sample_size") is not None:
            return int(ela["sample_size"])
        return int(ela["sample_size_per_dim"]) * dim

    def subtree(self, *keys) -> dict:
        return {k: self.data[k] for k in keys}

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=2)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        d = copy.deepcopy(self.data)
        d["master_seed"] = seed
        cfg = ExperimentConfig(d)
        cfg.validate()
        return cfg


def hash_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


__all__ = [
    "DEFAULT_CONFIG", "DESK_SCALE", "ExperimentConfig", "InvalidConfigError", "LEARNER_KINDS",
    "MissingUpstreamError", "SCHEMA_VERSION", "SchemaMismatchError", "WorkbenchError", "hash_json",
]

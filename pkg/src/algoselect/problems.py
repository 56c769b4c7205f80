"""Benchmark suite: 24 base functions in five groups with seeded instancing.

An instance evaluates ``f_opt + base(R @ (x - x_opt))``.  Every catalog base
attains its global minimum 0 at ``z = 0``, so ``x_opt`` is the optimum of
every instance and precision ``f - f_opt`` is non-negative.

The base formulas follow the BBOB noiseless definitions with the non-smooth
transformations (T_osz, T_asy) and boundary penalties left out.  Where the
BBOB optimum is not at the origin (Rosenbrock variants, Griewank-Rosenbrock,
Lunacek) the argument is shifted so that it is.  Two functions are replaced:

* id 5, linear slope (optimum on the boundary) -> weighted absolute sum
  ``sum 10^(i/(d-1)) |z_i|``, separable, non-smooth, optimum at 0.
* id 20, Schwefel ``x sin(sqrt|x|)`` (optimum only known numerically) ->
  Griewank on ``w = 120 z``, multimodal with weak global structure.

Separable functions (ids 1-5) and id 8 keep the identity rotation, the
rest get a seeded random rotation, mirroring which BBOB functions rotate.

==  ========================  ====================  ===========
id  name                      group                 rotated
==  ========================  ====================  ===========
1   sphere                    separable             no
2   ellipsoid_separable       separable             no
3   rastrigin_separable       separable             no
4   bueche_rastrigin          separable             no
5   abs_slope                 separable             no
6   attractive_sector         low_moderate_cond     yes
7   step_ellipsoid            low_moderate_cond     yes
8   rosenbrock                low_moderate_cond     no
9   rosenbrock_conditioned    low_moderate_cond     yes
10  ellipsoid                 high_cond_unimodal    yes
11  discus                    high_cond_unimodal    yes
12  bent_cigar                high_cond_unimodal    yes
13  sharp_ridge               high_cond_unimodal    yes
14  different_powers          high_cond_unimodal    yes
15  rastrigin                 multimodal_adequate   yes
16  weierstrass               multimodal_adequate   yes
17  schaffers_f7              multimodal_adequate   yes
18  schaffers_f7_illcond      multimodal_adequate   yes
19  griewank_rosenbrock       multimodal_adequate   yes
20  griewank_scaled           multimodal_weak       yes
21  gallagher_101             multimodal_weak       yes
22  gallagher_21              multimodal_weak       yes
23  katsuura                  multimodal_weak       yes
24  lunacek_bi_rastrigin      multimodal_weak       yes
==  ========================  ====================  ===========
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ._landscapes import base_rows, instance_rows

DOMAIN = (-5.0, 5.0)
GROUPS = (
    "separable",
    "low_moderate_cond",
    "high_cond_unimodal",
    "multimodal_adequate",
    "multimodal_weak",
)


class InvalidSpecError(ValueError):
    pass


class DimensionError(ValueError):
    pass


class BudgetExhaustedError(RuntimeError):
    pass


# --- raw building blocks -------------------------------------------------


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@lru_cache(maxsize=None)
def _exponents(d: int) -> np.ndarray:
    """i/(d-1) for i = 0..d-1 (all ones for d = 1)."""
    if d == 1:
        return _frozen(np.ones(1))
    return _frozen(np.arange(d) / (d - 1))


@lru_cache(maxsize=None)
def _conditioning(alpha: float, d: int) -> np.ndarray:
    """Diagonal of the BBOB Lambda^alpha matrix."""
    return _frozen(alpha ** (0.5 * _exponents(d)))


@lru_cache(maxsize=None)
def _gallagher_peaks(n_peaks: int, d: int):
    """Peak centres, weights and diagonal conditionings; fixed per (n_peaks, d)."""
    rng = np.random.Generator(np.random.Philox(key=1_000_003 * n_peaks + d))
    centres = rng.uniform(-4.9, 4.9, size=(n_peaks, d))
    centres[0] = 0.0
    weights = np.empty(n_peaks)
    weights[0] = 10.0
    weights[1:] = 1.1 + 8.0 * np.arange(n_peaks - 1) / (n_peaks - 2)
    alphas = 1000.0 ** (2.0 * rng.permutation(n_peaks - 1) / (n_peaks - 2))
    alphas = np.concatenate([[1000.0 if n_peaks > 21 else 1000.0 ** 2], alphas])
    cond = np.empty((n_peaks, d))
    for k, a in enumerate(alphas):
        cond[k] = rng.permutation(_conditioning(a, d)) / a ** 0.25
    centres.setflags(write=False)
    weights.setflags(write=False)
    cond.setflags(write=False)
    return centres, weights, cond

_NO_PEAKS = (_frozen(np.zeros((1, 1))), _frozen(np.zeros(1)), _frozen(np.zeros((1, 1))))
_PEAK_COUNT = {21: 101, 22: 21}


def _aux(function_id: int, d: int):
    n = _PEAK_COUNT.get(function_id)
    return _NO_PEAKS if n is None else _gallagher_peaks(n, d)


@dataclass(frozen=True)
class BaseFunction:
    function_id: int
    name: str
    group: str
    rotated: bool

    def fn(self, z) -> np.ndarray:
        """Base value of each row of ``z`` (already shifted and rotated)."""
        z = np.asarray(z, dtype=float)
        flat = np.ascontiguousarray(z.reshape(-1, z.shape[-1]))
        out = base_rows(self.function_id, flat, *_aux(self.function_id, flat.shape[1]))
        return out.reshape(z.shape[:-1])


_TABLE = [
    (1, "sphere", "separable", False),
    (2, "ellipsoid_separable", "separable", False),
    (3, "rastrigin_separable", "separable", False),
    (4, "bueche_rastrigin", "separable", False),
    (5, "abs_slope", "separable", False),
    (6, "attractive_sector", "low_moderate_cond", True),
    (7, "step_ellipsoid", "low_moderate_cond", True),
    (8, "rosenbrock", "low_moderate_cond", False),
    (9, "rosenbrock_conditioned", "low_moderate_cond", True),
    (10, "ellipsoid", "high_cond_unimodal", True),
    (11, "discus", "high_cond_unimodal", True),
    (12, "bent_cigar", "high_cond_unimodal", True),
    (13, "sharp_ridge", "high_cond_unimodal", True),
    (14, "different_powers", "high_cond_unimodal", True),
    (15, "rastrigin", "multimodal_adequate", True),
    (16, "weierstrass", "multimodal_adequate", True),
    (17, "schaffers_f7", "multimodal_adequate", True),
    (18, "schaffers_f7_illcond", "multimodal_adequate", True),
    (19, "griewank_rosenbrock", "multimodal_adequate", True),
    (20, "griewank_scaled", "multimodal_weak", True),
    (21, "gallagher_101", "multimodal_weak", True),
    (22, "gallagher_21", "multimodal_weak", True),
    (23, "katsuura", "multimodal_weak", True),
    (24, "lunacek_bi_rastrigin", "multimodal_weak", True),
]

CATALOG: dict[int, BaseFunction] = {row[0]: BaseFunction(*row) for row in _TABLE}


# --- instances -----------------------------------------------------------


@dataclass(frozen=True)
class ProblemSpec:
    function_id: int
    instance_id: int
    dimension: int

    def validate(self):
        if self.function_id not in CATALOG:
            raise InvalidSpecError(f"function_id must be in 1..24, got {self.function_id}")
        if self.instance_id < 0:
            raise InvalidSpecError(f"instance_id must be >= 0, got {self.instance_id}")
        if self.dimension < 2:
            raise InvalidSpecError(f"dimension must be >= 2, got {self.dimension}")

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.function_id, self.instance_id, self.dimension)


@dataclass
class EvaluationBudgetCounter:
    limit: int
    used: int = 0

    def __post_init__(self):
        if self.limit < 1:
            raise ValueError(f"budget limit must be positive, got {self.limit}")

    @property
    def remaining(self) -> int:
        return self.limit - self.used

    def charge(self, n: int = 1):
        if self.used + n > self.limit:
            raise BudgetExhaustedError(
                f"budget exhausted: {self.used} used, {n} requested, limit {self.limit}"
            )
        self.used += n


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    spec: ProblemSpec
    x_opt: np.ndarray
    f_opt: float
    rotation: np.ndarray
    domain: tuple[float, float] = DOMAIN

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    @property
    def base(self) -> BaseFunction:
        return CATALOG[self.spec.function_id]

    def raw(self, X) -> np.ndarray:
        """Uncounted batch evaluation of rows of ``X``; for samplers and tests."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[-1] != self.dimension:
            raise DimensionError(f"expected length {self.dimension}, got {X.shape[-1]}")
        f = self.rows(np.ascontiguousarray(X))
        return f[0] if single else f

    def rows(self, X: np.ndarray) -> np.ndarray:
        """Fused shift, rotation and base evaluation of a C-contiguous (n, d) float array."""
        fid = self.spec.function_id
        return instance_rows(fid, X, self.x_opt, self.rotation, self.f_opt, *_aux(fid, self.dimension))

    def evaluate(self, x, counter: EvaluationBudgetCounter):
        """Counted evaluation of one point (1-d) or a batch of rows (2-d)."""
        x = np.asarray(x, dtype=float)
        n = 1 if x.ndim == 1 else x.shape[0]
        if x.shape[-1] != self.dimension:
            raise DimensionError(f"expected length {self.dimension}, got {x.shape[-1]}")
        counter.charge(n)
        return self.raw(x)

    def precision(self, f_value):
        return precision(self, f_value)


def _instance_seed(spec: ProblemSpec) -> int:
    payload = f"algoselect-instance/{spec.function_id}/{spec.instance_id}/{spec.dimension}"
    return int.from_bytes(hashlib.sha256(payload.encode()).digest()[:16], "little")


def random_rotation(rng: np.random.Generator, d: int) -> np.ndarray:
    """Orthonormalize a standard-normal matrix (QR with sign fix)."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def instantiate(spec: ProblemSpec) -> ProblemInstance:
    spec.validate()
    d = spec.dimension
    if spec.instance_id == 0:
        x_opt, f_opt, rotation = np.zeros(d), 0.0, np.eye(d)
    else:
        rng = np.random.Generator(np.random.Philox(key=_instance_seed(spec)))
        x_opt = rng.uniform(-4.0, 4.0, size=d)
        f_opt = float(rng.uniform(-100.0, 100.0))
        rotation = random_rotation(rng, d) if CATALOG[spec.function_id].rotated else np.eye(d)
    x_opt.setflags(write=False)
    rotation.setflags(write=False)
    return ProblemInstance(spec, x_opt, f_opt, rotation)


def evaluate(instance: ProblemInstance, x, counter: EvaluationBudgetCounter):
    return instance.evaluate(x, counter)


def precision(instance: ProblemInstance, f_value):
    return f_value - instance.f_opt


def suite_specs(function_ids, instance_ids, dimensions) -> list[ProblemSpec]:
    return [
        ProblemSpec(f, i, d)
        for d in sorted(dimensions)
        for f in sorted(function_ids)
        for i in sorted(instance_ids)
    ]


def write_suite_manifest(path, specs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["function_id", "instance_id", "dimension", "f_opt", "x_opt"])
        for spec in specs:
            inst = instantiate(spec)
            w.writerow([
                spec.function_id,
                spec.instance_id,
                spec.dimension,
                f"{inst.f_opt:.17g}",
                ";".join(f"{v:.17g}" for v in inst.x_opt),
            ])

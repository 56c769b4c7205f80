"""Fixed-budget solver portfolio with best-so-far checkpoint recording.

Every solver minimizes through a :class:`_Tracker`, which owns the run's
evaluation counter, clamps nothing itself, and raises :class:`_Stop` once
the largest checkpoint budget is spent or precision 0 is reached.  A batch
that would overrun the budget is truncated before evaluation, so the
counter always ends at exactly ``max(checkpoints)`` (or at the early-stop
count).  Unreached checkpoints after an early stop are forward-filled.

Defaults (all keys are optional in a config):

* ``random_search``: ``batch=100`` uniform points per draw.
* ``one_plus_one_es``: ``sigma0=2.0``; 1/5th success rule every ``10 d``
  evaluations with factors ``exp(+-1/3)``.
* ``de``: ``pop_factor=10`` (population ``10 d``), rand/1/bin, ``F=0.5``,
  ``CR=0.9``.
* ``pso``: ``swarm=40``, ``inertia=0.72``, ``cognitive=social=1.49``,
  velocity clamp at half the domain width, global-best topology.
* ``nelder_mead_restart``: coefficients (1, 2, 0.5, 0.5), axis simplex with
  ``initial_step=1.0``; restarts from a fresh uniform point once the simplex
  diameter drops below ``restart_diameter=1e-12``.
* ``simple_cma``: (mu/mu_w, lambda)-CMA-ES with ``lambda = 4 + floor(3 ln d)``,
  rank-one and rank-mu covariance updates, cumulative step-size adaptation,
  ``sigma0=2.0``; restarts from a fresh uniform mean when the step size or
  conditioning degenerates.

All solvers clamp candidate points to the domain before evaluating them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .problems import EvaluationBudgetCounter, ProblemInstance, ProblemSpec
from .sampling import RngStream

PRECISION_SLACK = 1e-12

DEFAULTS: dict[str, dict[str, float]] = {
    "random_search": {"batch": 100},
    "one_plus_one_es": {"sigma0": 2.0},
    "de": {"pop_factor": 10, "F": 0.5, "CR": 0.9},
    "pso": {"swarm": 40, "inertia": 0.72, "cognitive": 1.49, "social": 1.49},
    "nelder_mead_restart": {
        "initial_step": 1.0,
        "alpha": 1.0,
        "gamma": 2.0,
        "rho": 0.5,
        "shrink": 0.5,
        "restart_diameter": 1e-12,
    },
    "simple_cma": {"sigma0": 2.0},
}
SOLVER_NAMES = tuple(DEFAULTS)


class SolverConfigError(ValueError):
    pass


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    name: str
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in DEFAULTS:
            raise SolverConfigError(f"unknown solver {self.name!r}; known: {', '.join(SOLVER_NAMES)}")
        unknown = set(self.hyperparameters) - set(DEFAULTS[self.name])
        if unknown:
            raise SolverConfigError(f"{self.name}: unknown hyperparameters {sorted(unknown)}")

    def resolved(self) -> dict:
        return {**DEFAULTS[self.name], **self.hyperparameters}


@dataclass
class RunTrajectory:
    solver: str
    problem: ProblemSpec
    repetition: int
    seed_path: str
    checkpoints: dict[int, float]
    evaluations: int


class _Stop(Exception):
    pass


class _Tracker:
    def __init__(self, instance: ProblemInstance, checkpoints):
        self.instance = instance
        self.checkpoints = sorted(checkpoints)
        self.counter = EvaluationBudgetCounter(self.checkpoints[-1])
        self.best = math.inf
        self.values: dict[int, float] = {}
        self._next = 0

    def __call__(self, X: np.ndarray) -> np.ndarray:
        room = self.counter.remaining
        X = X[:room]
        f = self.instance.evaluate(X, self.counter)
        p = f - self.instance.f_opt
        if np.any(p < -PRECISION_SLACK):
            raise TrajectoryError(f"negative precision {p.min()} on {self.instance.spec}")
        running = np.minimum.accumulate(np.concatenate([[self.best], np.maximum(p, 0.0)]))[1:]
        start = self.counter.used - len(X)
        while self._next < len(self.checkpoints) and self.checkpoints[self._next] <= self.counter.used:
            self.values[self.checkpoints[self._next]] = float(running[self.checkpoints[self._next] - start - 1])
            self._next += 1
        self.best = float(running[-1])
        if self.counter.remaining == 0 or self.best == 0.0:
            raise _Stop
        return f

    def one(self, x: np.ndarray) -> float:
        counter = self.counter
        counter.charge(1)
        inst = self.instance
        f = float(inst.rows(x.reshape(1, -1))[0])
        p = f - inst.f_opt
        if p < -PRECISION_SLACK:
            raise TrajectoryError(f"negative precision {p} on {inst.spec}")
        if p < self.best:
            self.best = max(p, 0.0)
        if self._next < len(self.checkpoints) and self.checkpoints[self._next] == counter.used:
            self.values[counter.used] = self.best
            self._next += 1
        if counter.used == counter.limit or self.best == 0.0:
            raise _Stop
        return f

    def finish(self) -> dict[int, float]:
        for b in self.checkpoints[self._next:]:
            self.values[b] = self.best
        return {b: self.values[b] for b in self.checkpoints}


# --- solvers -------------------------------------------------------------


def _random_search(obj, d, lo, hi, rng, hp, x0):
    if x0 is not None:
        obj(x0[None, :])
    batch = int(hp["batch"])
    while True:
        obj(rng.uniform(lo, hi, size=(batch, d)))


def _one_plus_one_es(obj, d, lo, hi, rng, hp, x0):
    x = rng.uniform(lo, hi, size=d) if x0 is None else x0.copy()
    fx = obj.one(x)
    sigma = float(hp["sigma0"])
    period = 10 * d
    successes = 0
    k = 0
    while True:
        for z in rng.standard_normal((period, d)):
            y = np.clip(x + sigma * z, lo, hi)
            fy = obj.one(y)
            if fy <= fx:
                x, fx = y, fy
                successes += 1
        k += period
        sigma *= math.exp(1.0 / 3.0) if successes / period > 0.2 else math.exp(-1.0 / 3.0)
        successes = 0


def _de(obj, d, lo, hi, rng, hp, x0):
    n = int(hp["pop_factor"]) * d
    F, CR = float(hp["F"]), float(hp["CR"])
    pop = rng.uniform(lo, hi, size=(n, d))
    if x0 is not None:
        pop[0] = x0
    fit = obj(pop)
    rows = np.arange(n)
    while True:
        keys = rng.random((n, n))
        keys[rows, rows] = np.inf
        r = np.argsort(keys, axis=1)[:, :3]
        mutant = pop[r[:, 0]] + F * (pop[r[:, 1]] - pop[r[:, 2]])
        cross = rng.random((n, d)) < CR
        cross[rows, rng.integers(0, d, size=n)] = True
        trial = np.clip(np.where(cross, mutant, pop), lo, hi)
        ft = obj(trial)
        better = ft <= fit
        pop[better] = trial[better]
        fit[better] = ft[better]


def _pso(obj, d, lo, hi, rng, hp, x0):
    n = int(hp["swarm"])
    w, c1, c2 = float(hp["inertia"]), float(hp["cognitive"]), float(hp["social"])
    vmax = 0.5 * (hi - lo)
    x = rng.uniform(lo, hi, size=(n, d))
    if x0 is not None:
        x[0] = x0
    v = rng.uniform(-vmax, vmax, size=(n, d))
    fx = obj(x)
    pbest, pf = x.copy(), fx.copy()
    g = int(np.argmin(pf))
    while True:
        r1 = rng.random((n, d))
        r2 = rng.random((n, d))
        v = w * v + c1 * r1 * (pbest - x) + c2 * r2 * (pbest[g] - x)
        v = np.clip(v, -vmax, vmax)
        x = np.clip(x + v, lo, hi)
        fx = obj(x)
        improved = fx < pf
        pbest[improved] = x[improved]
        pf[improved] = fx[improved]
        g = int(np.argmin(pf))


def _nelder_mead(obj, d, lo, hi, rng, hp, x0):
    alpha, gamma, rho, shrink = (float(hp[k]) for k in ("alpha", "gamma", "rho", "shrink"))
    step = float(hp["initial_step"])
    tol = float(hp["restart_diameter"])
    start = rng.uniform(lo, hi, size=d) if x0 is None else x0.copy()
    while True:
        simplex = np.vstack([start, np.clip(start + step * np.eye(d), lo, hi)])
        # an axis step clipped onto start would degenerate the simplex
        for i in range(d):
            if simplex[i + 1, i] == start[i]:
                simplex[i + 1, i] = start[i] - step
        fs = np.array([obj.one(p) for p in simplex])
        while True:
            order = np.argsort(fs, kind="stable")
            simplex, fs = simplex[order], fs[order]
            if np.max(np.linalg.norm(simplex[1:] - simplex[0], axis=1)) < tol:
                break
            centroid = simplex[:-1].mean(axis=0)
            xr = np.clip(centroid + alpha * (centroid - simplex[-1]), lo, hi)
            fr = obj.one(xr)
            if fs[0] <= fr < fs[-2]:
                simplex[-1], fs[-1] = xr, fr
            elif fr < fs[0]:
                xe = np.clip(centroid + gamma * (xr - centroid), lo, hi)
                fe = obj.one(xe)
                if fe < fr:
                    simplex[-1], fs[-1] = xe, fe
                else:
                    simplex[-1], fs[-1] = xr, fr
            else:
                if fr < fs[-1]:
                    xc = np.clip(centroid + rho * (xr - centroid), lo, hi)
                    fc = obj.one(xc)
                    accept = fc <= fr
                else:
                    xc = np.clip(centroid + rho * (simplex[-1] - centroid), lo, hi)
                    fc = obj.one(xc)
                    accept = fc < fs[-1]
                if accept:
                    simplex[-1], fs[-1] = xc, fc
                else:
                    simplex[1:] = simplex[0] + shrink * (simplex[1:] - simplex[0])
                    fs[1:] = obj(simplex[1:])
        start = rng.uniform(lo, hi, size=d)


def _cma(obj, d, lo, hi, rng, hp, x0):
    lam = 4 + int(math.floor(3 * math.log(d)))
    mu = lam // 2
    weights = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    weights /= weights.sum()
    mueff = 1.0 / np.sum(weights ** 2)
    cc = (4 + mueff / d) / (d + 4 + 2 * mueff / d)
    cs = (mueff + 2) / (d + mueff + 5)
    c1 = 2 / ((d + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((d + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (d + 1)) - 1) + cs
    chi_n = math.sqrt(d) * (1 - 1 / (4 * d) + 1 / (21 * d * d))

    mean = rng.uniform(lo, hi, size=d) if x0 is None else x0.copy()
    if x0 is not None:
        obj.one(mean)
    while True:
        sigma = float(hp["sigma0"])
        C = np.eye(d)
        pc = np.zeros(d)
        ps = np.zeros(d)
        B, Dg = np.eye(d), np.ones(d)
        gen = 0
        while True:
            gen += 1
            z = rng.standard_normal((lam, d))
            x = np.clip(mean + sigma * (z * Dg) @ B.T, lo, hi)
            f = obj(x)
            idx = np.argsort(f, kind="stable")[:mu]
            old = mean
            y = (x[idx] - old) / sigma
            mean = old + sigma * weights @ y
            ymean = weights @ y
            invsqrt = B @ np.diag(1.0 / Dg) @ B.T
            ps = (1 - cs) * ps + math.sqrt(cs * (2 - cs) * mueff) * invsqrt @ ymean
            hsig = np.linalg.norm(ps) / math.sqrt(1 - (1 - cs) ** (2 * gen)) / chi_n < 1.4 + 2 / (d + 1)
            pc = (1 - cc) * pc + hsig * math.sqrt(cc * (2 - cc) * mueff) * ymean
            C = (
                (1 - c1 - cmu) * C
                + c1 * (np.outer(pc, pc) + (1 - hsig) * cc * (2 - cc) * C)
                + cmu * (y.T * weights) @ y
            )
            sigma *= math.exp((cs / damps) * (np.linalg.norm(ps) / chi_n - 1))
            C = np.triu(C) + np.triu(C, 1).T
            ev, B = np.linalg.eigh(C)
            if not np.all(np.isfinite(ev)) or ev.min() <= 0 or ev.max() > 1e14 * ev.min():
                break
            Dg = np.sqrt(ev)
            if not math.isfinite(sigma) or sigma * Dg.max() < 1e-12 or sigma > 1e8:
                break
        mean = rng.uniform(lo, hi, size=d)


_SOLVERS = {
    "random_search": _random_search,
    "one_plus_one_es": _one_plus_one_es,
    "de": _de,
    "pso": _pso,
    "nelder_mead_restart": _nelder_mead,
    "simple_cma": _cma,
}


def run_solver(
    config: SolverConfig,
    instance: ProblemInstance,
    max_budget: int,
    checkpoints,
    stream: RngStream,
    repetition: int = 0,
    x0=None,
) -> RunTrajectory:
    """Run one solver and record best-so-far precision at each checkpoint.

    ``x0`` forces the first evaluated point (tests use it to inject the optimum).
    """
    cps = sorted(set(int(b) for b in checkpoints))
    if not cps:
        raise ValueError("checkpoints must be non-empty")
    if cps[0] < 1:
        raise ValueError(f"checkpoint budgets must be >= 1, got {cps[0]}")
    if cps[-1] > max_budget:
        raise ValueError(f"largest checkpoint {cps[-1]} exceeds max_budget {max_budget}")
    tracker = _Tracker(instance, cps)
    lo, hi = instance.domain
    x0 = None if x0 is None else np.asarray(x0, dtype=float)
    try:
        _SOLVERS[config.name](tracker, instance.dimension, lo, hi, stream.generator(), config.resolved(), x0)
    except _Stop:
        pass
    return RunTrajectory(
        solver=config.name,
        problem=instance.spec,
        repetition=repetition,
        seed_path=str(stream),
        checkpoints=tracker.finish(),
        evaluations=tracker.counter.used,
    )

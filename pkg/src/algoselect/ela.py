"""Cheap exploratory landscape analysis (ELA) features.

All features are computed from one sample ``(X, y)`` without extra function
evaluations.  Undefined values are ``nan`` (the not-available marker) and are
never dropped from the vector.  Schema, in order (38 entries):

=================================  =====================================
feature                            flacco counterpart
=================================  =====================================
distr_skewness                     ela_distr.skewness
distr_kurtosis                     ela_distr.kurtosis
distr_number_of_peaks              ela_distr.number_of_peaks
meta_lin_adj_r2                    ela_meta.lin_simple.adj_r2
meta_lin_intercept                 ela_meta.lin_simple.intercept
meta_lin_coef_min                  ela_meta.lin_simple.coef.min
meta_lin_coef_max                  ela_meta.lin_simple.coef.max
meta_lin_coef_max_by_min           ela_meta.lin_simple.coef.max_by_min
meta_lin_interact_adj_r2           ela_meta.lin_w_interact.adj_r2
meta_quad_adj_r2                   ela_meta.quad_simple.adj_r2
meta_quad_cond                     ela_meta.quad_simple.cond
meta_quad_interact_adj_r2          ela_meta.quad_w_interact.adj_r2
disp_ratio_mean_{02,05,10,25}      disp.ratio_mean_{02,05,10,25}
disp_ratio_median_{02,05,10,25}    disp.ratio_median_{02,05,10,25}
nbc_nn_nb_sd_ratio                 nbc.nn_nb.sd_ratio
nbc_nn_nb_mean_ratio               nbc.nn_nb.mean_ratio
nbc_nn_nb_cor                      nbc.nn_nb.cor
nbc_dist_ratio_coeff_var           nbc.dist_ratio.coeff_var
nbc_nb_fitness_cor                 nbc.nb_fitness.cor (see below)
ic_h_max                           ic.h.max
ic_eps_s                           ic.eps.s (raw epsilon, not log10)
ic_eps_max                         ic.eps.max (raw epsilon)
ic_eps_ratio                       ic.eps.ratio (raw epsilon)
ic_m0                              ic.m0
pca_expl_var_x_09                  pca.expl_var.cov_x
pca_expl_var_xy_09                 pca.expl_var.cov_init
pca_expl_var_first_pc_x            pca.expl_var_PC1.cov_x
pca_expl_var_first_pc_xy           pca.expl_var_PC1.cov_init
pca_expl_var_cor_x_09              pca.expl_var.cor_x
pca_expl_var_cor_xy_09             pca.expl_var.cor_init
pca_expl_var_first_pc_cor_x        pca.expl_var_PC1.cor_x
pca_expl_var_first_pc_cor_xy       pca.expl_var_PC1.cor_init
=================================  =====================================

Conventions that differ from flacco or need pinning down:

* ``distr_number_of_peaks`` counts strict local maxima (plateaus collapsed)
  of a Freedman-Diaconis histogram of ``y`` smoothed by a 3-bin moving average.
* Meta-model coefficient min/max use absolute values.  ``meta_quad_cond`` is
  ``max|q| / min|q|`` over the pure square-term coefficients.
* ``nbc_nb_fitness_cor`` is the Pearson correlation between each point's
  nearest-better distance and the rank of its ``y``.  "Better" means smaller
  ``(y, index)``, so ties in ``y`` are broken by row order.  The best point's
  nearest-better distance is its nearest-neighbour distance.
* Information content walks a greedy nearest-neighbour tour from the
  lowest-``y`` point over a geometric grid of 101 thresholds in [1e-5, 1e5].
  Symbols compare raw consecutive ``y`` differences to the threshold.
  ``ic_eps_s`` is the smallest threshold with entropy below 0.05;
  ``ic_eps_ratio`` the smallest with partial information at most half of
  ``ic_m0``.  ``ic_m0 = mu / (n - 1)`` where ``mu`` is the length of the
  sign string at threshold 0 after dropping zeros and collapsing repeats.

Invariant under ``y -> y + c`` (checked in tests): skewness, kurtosis,
number_of_peaks, every disp_*, every nbc_*, every ic_*, meta_*_adj_r2,
meta coefficient features, and the pca_*_x features.  The linear intercept
and the ``xy`` PCA features are not.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numba
import numpy as np

log = logging.getLogger(__name__)

NA = float("nan")
DISP_QUANTILES = (0.02, 0.05, 0.10, 0.25)
IC_EPSILONS = 10.0 ** np.linspace(-5, 5, 101)
IC_SETTLING = 0.05
RIDGE_LAMBDA = 1e-10

DISTR_NAMES = ("distr_skewness", "distr_kurtosis", "distr_number_of_peaks")
META_NAMES = (
    "meta_lin_adj_r2",
    "meta_lin_intercept",
    "meta_lin_coef_min",
    "meta_lin_coef_max",
    "meta_lin_coef_max_by_min",
    "meta_lin_interact_adj_r2",
    "meta_quad_adj_r2",
    "meta_quad_cond",
    "meta_quad_interact_adj_r2",
)
DISP_NAMES = tuple(
    f"disp_ratio_{stat}_{round(q * 100):02d}" for stat in ("mean", "median") for q in DISP_QUANTILES
)
NBC_NAMES = (
    "nbc_nn_nb_sd_ratio",
    "nbc_nn_nb_mean_ratio",
    "nbc_nn_nb_cor",
    "nbc_dist_ratio_coeff_var",
    "nbc_nb_fitness_cor",
)
IC_NAMES = ("ic_h_max", "ic_eps_s", "ic_eps_max", "ic_eps_ratio", "ic_m0")
PCA_NAMES = (
    "pca_expl_var_x_09",
    "pca_expl_var_xy_09",
    "pca_expl_var_first_pc_x",
    "pca_expl_var_first_pc_xy",
    "pca_expl_var_cor_x_09",
    "pca_expl_var_cor_xy_09",
    "pca_expl_var_first_pc_cor_x",
    "pca_expl_var_first_pc_cor_xy",
)
FEATURE_NAMES = DISTR_NAMES + META_NAMES + DISP_NAMES + NBC_NAMES + IC_NAMES + PCA_NAMES


class SampleError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise SampleError(f"X has {X.shape[0]} rows but y has {y.shape[0]} values")
        if np.isnan(X).any():
            raise SampleError("X contains NaN")
        if not np.isfinite(y).all():
            raise SampleError("y contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    names: tuple[str, ...] = FEATURE_NAMES

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.names),):
            raise ValueError(f"expected {len(self.names)} values, got shape {values.shape}")
        object.__setattr__(self, "values", values)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


def _finite_or_na(v) -> float:
    v = float(v)
    return v if math.isfinite(v) else NA


# --- distribution --------------------------------------------------------


def _number_of_peaks(y: np.ndarray) -> int:
    span = y.max() - y.min()
    if span == 0:
        return 1
    n = y.size
    q75, q25 = np.percentile(y, [75, 25])
    width = 2.0 * (q75 - q25) * n ** (-1.0 / 3.0)
    if width > 0:
        bins = int(min(n, max(1, math.ceil(span / width))))
    else:
        bins = int(math.ceil(math.log2(n))) + 1
    counts, _ = np.histogram(y, bins=bins)
    smooth = np.convolve(counts, np.ones(3) / 3.0, mode="same")
    # collapse plateaus, then count strict local maxima
    keep = np.concatenate([[True], smooth[1:] != smooth[:-1]])
    s = np.concatenate([[-np.inf], smooth[keep], [-np.inf]])
    return int(np.sum((s[1:-1] > s[:-2]) & (s[1:-1] > s[2:])))


def ela_distr(sample: Sample) -> dict[str, float]:
    y = sample.y
    if y.size < 4:
        raise SampleError("ela_distr needs at least 4 points")
    c = y - y.mean()
    m2 = np.mean(c ** 2)
    if m2 == 0:
        return dict(zip(DISTR_NAMES, (NA, NA, 1.0)))
    skew = np.mean(c ** 3) / m2 ** 1.5
    kurt = np.mean(c ** 4) / m2 ** 2 - 3.0
    return dict(zip(DISTR_NAMES, (float(skew), float(kurt), float(_number_of_peaks(y)))))


# --- meta-models ---------------------------------------------------------


def _least_squares(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank < A.shape[1]:
        log.info("singular meta-model design (rank %d < %d); ridge fallback", rank, A.shape[1])
        coef = np.linalg.solve(A.T @ A + RIDGE_LAMBDA * np.eye(A.shape[1]), A.T @ y)
    return coef


def _fit_adj_r2(A: np.ndarray, y: np.ndarray):
    n, cols = A.shape
    p = cols - 1
    coef = _least_squares(A, y)
    ss_tot = np.sum((y - y.mean()) ** 2)
    if n - p - 1 <= 0 or ss_tot == 0:
        return coef, NA
    r2 = 1.0 - np.sum((y - A @ coef) ** 2) / ss_tot
    return coef, _finite_or_na(1.0 - (1.0 - r2) * (n - 1) / (n - p - 1))


def _interactions(X: np.ndarray, include_squares: bool) -> np.ndarray:
    d = X.shape[1]
    cols = [X[:, i] * X[:, j] for i in range(d) for j in range(i if include_squares else i + 1, d)]
    return np.column_stack(cols) if cols else np.empty((X.shape[0], 0))


def _ratio(num, den) -> float:
    return _finite_or_na(num / den) if den != 0 else NA


def ela_meta(sample: Sample) -> dict[str, float]:
    X, y = sample.X, sample.y
    n, d = X.shape
    if n < d + 2:
        raise SampleError(f"ela_meta needs n >= d + 2, got n={n}, d={d}")
    ones = np.ones((n, 1))

    coef, lin_r2 = _fit_adj_r2(np.hstack([ones, X]), y)
    lin_abs = np.abs(coef[1:])
    _, lin_int_r2 = _fit_adj_r2(np.hstack([ones, X, _interactions(X, False)]), y)
    qcoef, quad_r2 = _fit_adj_r2(np.hstack([ones, X, X * X]), y)
    quad_abs = np.abs(qcoef[1 + d:])
    _, quad_int_r2 = _fit_adj_r2(np.hstack([ones, X, _interactions(X, True)]), y)

    return dict(zip(META_NAMES, (
        lin_r2,
        float(coef[0]),
        float(lin_abs.min()),
        float(lin_abs.max()),
        _ratio(lin_abs.max(), lin_abs.min()),
        lin_int_r2,
        quad_r2,
        _ratio(quad_abs.max(), quad_abs.min()),
        quad_int_r2,
    )))


# --- dispersion ----------------------------------------------------------


@numba.njit(cache=True)
def _distance_matrix(X):
    n, d = X.shape
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            acc = 0.0
            for k in range(d):
                t = X[i, k] - X[j, k]
                acc += t * t
            D[i, j] = D[j, i] = np.sqrt(acc)
    return D


@numba.njit(cache=True)
def _upper_values(D, idx):
    m = idx.size
    out = np.empty(m * (m - 1) // 2)
    k = 0
    for a in range(m):
        for b in range(a + 1, m):
            out[k] = D[idx[a], idx[b]]
            k += 1
    return out


def _pair_stats(D: np.ndarray, idx: np.ndarray):
    vals = _upper_values(D, np.ascontiguousarray(idx, dtype=np.int64))
    return vals.mean(), np.median(vals)


def dispersion(sample: Sample, quantiles=DISP_QUANTILES, *, _dist=None) -> dict[str, float]:
    n = sample.n
    D = _distance_matrix(np.ascontiguousarray(sample.X)) if _dist is None else _dist
    order = np.argsort(sample.y, kind="stable")
    all_mean, all_median = _pair_stats(D, np.arange(n))
    means, medians = [], []
    for q in quantiles:
        k = math.ceil(q * n - 1e-9)
        if k < 2:
            means.append(NA)
            medians.append(NA)
            continue
        # index order makes q with k = n reproduce the all-pairs statistics exactly
        m, med = _pair_stats(D, np.sort(order[:k]))
        means.append(_ratio(m, all_mean))
        medians.append(_ratio(med, all_median))
    names = [f"disp_ratio_{stat}_{round(q * 100):02d}" for stat in ("mean", "median") for q in quantiles]
    return dict(zip(names, means + medians))


# --- nearest-better clustering -------------------------------------------


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(np.sum(a * a) * np.sum(b * b))
    return _finite_or_na(np.sum(a * b) / den) if den > 0 else NA


def nbc(sample: Sample, *, _dist=None) -> dict[str, float]:
    n = sample.n
    if n < 3:
        raise SampleError("nbc needs at least 3 points")
    D = (_distance_matrix(np.ascontiguousarray(sample.X)) if _dist is None else _dist).copy()
    np.fill_diagonal(D, np.inf)
    nn = D.min(axis=1)

    order = np.argsort(sample.y, kind="stable")  # better = earlier in (y, index) order
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    better = rank[None, :] < rank[:, None]
    nb = np.where(better, D, np.inf).min(axis=1)
    nb[order[0]] = nn[order[0]]

    sd_nb = nb.std(ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = nn / nb
    ratios = ratios[np.isfinite(ratios)]
    cv = _ratio(ratios.std(ddof=1), ratios.mean()) if ratios.size > 1 else NA
    return dict(zip(NBC_NAMES, (
        _ratio(nn.std(ddof=1), sd_nb),
        _ratio(nn.mean(), nb.mean()),
        _pearson(nn, nb),
        cv,
        _pearson(nb, rank.astype(float)),
    )))


# --- information content -------------------------------------------------


@numba.njit(cache=True)
def _nn_tour(D, start):
    n = D.shape[0]
    visited = np.zeros(n, dtype=np.bool_)
    tour = np.empty(n, dtype=np.int64)
    cur = start
    for step in range(n):
        tour[step] = cur
        visited[cur] = True
        best = -1
        best_d = np.inf
        for j in range(n):
            if not visited[j] and D[cur, j] < best_d:
                best_d = D[cur, j]
                best = j
        cur = best
    return tour


def _pair_entropy(symbols: np.ndarray) -> np.ndarray:
    """Entropy (base 6) of consecutive unequal symbol pairs, one row per threshold."""
    a, b = symbols[:, :-1], symbols[:, 1:]
    total = a.shape[1]
    h = np.zeros(symbols.shape[0])
    for p in (-1, 0, 1):
        for q in (-1, 0, 1):
            if p == q:
                continue
            prob = np.sum((a == p) & (b == q), axis=1) / total
            with np.errstate(divide="ignore", invalid="ignore"):
                h -= np.where(prob > 0, prob * np.log(prob) / np.log(6.0), 0.0)
    return h


def _partial_information(symbols: np.ndarray) -> float:
    s = symbols[symbols != 0]
    if s.size == 0:
        return 0.0
    mu = 1 + int(np.sum(s[1:] != s[:-1]))
    return mu / (symbols.size)


def info_content(sample: Sample, epsilons=IC_EPSILONS, *, _dist=None) -> dict[str, float]:
    n = sample.n
    if n < 3:
        raise SampleError("info_content needs at least 3 points")
    D = _distance_matrix(np.ascontiguousarray(sample.X)) if _dist is None else _dist
    start = int(np.argmin(sample.y))
    tour = _nn_tour(np.ascontiguousarray(D), start)
    diff = np.diff(sample.y[tour])

    eps = np.asarray(epsilons, dtype=float)
    symbols = np.where(diff[None, :] > eps[:, None], 1, np.where(diff[None, :] < -eps[:, None], -1, 0))
    h = _pair_entropy(symbols)
    h_max = float(h.max())
    settled = np.flatnonzero(h < IC_SETTLING)
    eps_s = float(eps[settled[0]]) if settled.size else NA

    m0 = _partial_information(np.sign(diff).astype(np.int64))
    m = np.array([_partial_information(row) for row in symbols])
    half = np.flatnonzero(m <= 0.5 * m0)
    eps_ratio = float(eps[half[0]]) if half.size and m0 > 0 else NA

    return dict(zip(IC_NAMES, (h_max, eps_s, float(eps[int(np.argmax(h))]), eps_ratio, m0)))


# --- principal components ------------------------------------------------


def _pca_shares(M: np.ndarray, use_cor: bool):
    if use_cor:
        sd = M.std(axis=0)
        if np.any(sd == 0):
            return NA, NA
        C = np.corrcoef(M, rowvar=False)
    else:
        C = np.cov(M, rowvar=False)
    C = np.atleast_2d(C)
    ev = np.sort(np.linalg.eigvalsh(C))[::-1]
    ev = np.maximum(ev, 0.0)
    total = ev.sum()
    if total <= 0:
        return NA, NA
    share = np.cumsum(ev) / total
    k = int(np.searchsorted(share, 0.9 - 1e-12)) + 1
    return min(k, M.shape[1]) / M.shape[1], float(ev[0] / total)


def pca_features(sample: Sample) -> dict[str, float]:
    X, y = sample.X, sample.y
    if sample.n <= sample.d + 1:
        raise SampleError("pca_features needs n > d + 1")
    Xy = np.hstack([X, y[:, None]])
    x09, x1 = _pca_shares(X, False)
    xy09, xy1 = _pca_shares(Xy, False)
    cx09, cx1 = _pca_shares(X, True)
    cxy09, cxy1 = _pca_shares(Xy, True)
    return dict(zip(PCA_NAMES, (x09, xy09, x1, xy1, cx09, cxy09, cx1, cxy1)))


# --- full vector ---------------------------------------------------------


def _group(fn, names, *args, **kwargs) -> dict[str, float]:
    try:
        return fn(*args, **kwargs)
    except (SampleError, np.linalg.LinAlgError) as exc:
        log.info("feature group %s not available: %s", fn.__name__, exc)
        return dict.fromkeys(names, NA)


def compute_features(sample: Sample) -> FeatureVector:
    if sample.n < sample.d + 2:
        raise SampleError(f"sample needs n >= d + 2, got n={sample.n}, d={sample.d}")
    D = _distance_matrix(np.ascontiguousarray(sample.X))
    values: dict[str, float] = {}
    values.update(_group(ela_distr, DISTR_NAMES, sample))
    values.update(_group(ela_meta, META_NAMES, sample))
    values.update(_group(dispersion, DISP_NAMES, sample, _dist=D))
    values.update(_group(nbc, NBC_NAMES, sample, _dist=D))
    values.update(_group(info_content, IC_NAMES, sample, _dist=D))
    values.update(_group(pca_features, PCA_NAMES, sample))
    return FeatureVector(np.array([_finite_or_na(values[k]) for k in FEATURE_NAMES]))


def aggregate_features(vectors) -> FeatureVector:
    """Per-feature median over repetitions, ignoring NA.

    A feature that is NA in more than half of the repetitions stays NA.
    """
    vectors = list(vectors)
    if not vectors:
        raise ValueError("cannot aggregate an empty list of feature vectors")
    names = vectors[0].names
    if any(v.names != names for v in vectors):
        raise ValueError("feature vectors do not share one schema")
    M = np.vstack([v.values for v in vectors])
    na = np.isnan(M)
    out = np.full(M.shape[1], NA)
    ok = na.sum(axis=0) <= 0.5 * M.shape[0]
    for j in np.flatnonzero(ok):
        out[j] = np.median(M[~na[:, j], j])
    return FeatureVector(out, names)

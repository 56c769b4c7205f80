import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import ela_oracle
from algoselect import ela
from algoselect.ela import (
    FEATURE_NAMES,
    IC_EPSILONS,
    FeatureVector,
    Sample,
    SampleError,
    aggregate_features,
    compute_features,
    dispersion,
    ela_distr,
    ela_meta,
    info_content,
    nbc,
    pca_features,
)
from algoselect.problems import ProblemSpec, instantiate
from algoselect.sampling import RngStream, lhs_sample

# oracle values (tests/ela_oracle.py) on fixed seeded samples, frozen
SPHERE_NBC = {
    "nbc_nn_nb_sd_ratio": 0.750528448984426,
    "nbc_nn_nb_mean_ratio": 0.722243866317958,
    "nbc_nn_nb_cor": 0.586128251209684,
    "nbc_dist_ratio_coeff_var": 0.343535359588016,
    "nbc_nb_fitness_cor": 0.0713901025623191,
}
SPHERE_DISP = {
    "disp_ratio_mean_02": 0.142197125084615,
    "disp_ratio_mean_05": 0.159330760386831,
    "disp_ratio_mean_10": 0.258193918061804,
    "disp_ratio_mean_25": 0.452570037760021,
    "disp_ratio_median_02": 0.145318803981700,
    "disp_ratio_median_05": 0.174131020067113,
    "disp_ratio_median_10": 0.260954009367950,
    "disp_ratio_median_25": 0.445742487815074,
}
RASTRIGIN_IC = {
    "ic_h_max": 0.750605293513015,
    "ic_eps_s": 10 ** 2.2,
    "ic_eps_max": 10 ** 0.9,
    "ic_eps_ratio": 10 ** 1.4,
    "ic_m0": 71 / 149,
}


def seeded(fid, d, n, tag, iid=0):
    X = lhs_sample(n, d, (-5.0, 5.0), RngStream(2024).derive(tag))
    return Sample(X, instantiate(ProblemSpec(fid, iid, d)).raw(X))


def close(a, b, tol=1e-12):
    if math.isnan(a) or math.isnan(b):
        return math.isnan(a) and math.isnan(b)
    return abs(a - b) <= tol * max(1.0, abs(b))


# --- schema ---------------------------------------------------------------


def test_schema_length_and_uniqueness():
    assert len(FEATURE_NAMES) == 38
    assert len(set(FEATURE_NAMES)) == 38
    fv = compute_features(seeded(3, 2, 60, "schema"))
    assert fv.names == FEATURE_NAMES and fv.values.shape == (38,)


def test_feature_vector_access():
    fv = FeatureVector(np.arange(38.0))
    assert fv["distr_skewness"] == 0.0
    assert list(fv.as_dict())[5] == FEATURE_NAMES[5]
    with pytest.raises(ValueError):
        FeatureVector(np.zeros(3))


def test_sample_validation():
    with pytest.raises(SampleError):
        Sample(np.zeros((3, 2)), np.zeros(4))
    with pytest.raises(SampleError):
        Sample(np.array([[np.nan, 1.0]]), np.zeros(1))
    with pytest.raises(SampleError):
        Sample(np.zeros((2, 1)), np.array([1.0, np.inf]))
    with pytest.raises(SampleError):
        compute_features(Sample(np.zeros((3, 2)), np.zeros(3)))


# --- distribution -----------------------------------------------------------


def test_distr_symmetric():
    s = Sample(np.arange(4.0)[:, None], np.array([-2.0, -1.0, 1.0, 2.0]))
    assert ela_distr(s)["distr_skewness"] == 0.0


def test_distr_constant():
    out = ela_distr(Sample(np.arange(6.0)[:, None], np.full(6, 3.0)))
    assert math.isnan(out["distr_skewness"]) and math.isnan(out["distr_kurtosis"])
    assert out["distr_number_of_peaks"] == 1


def test_distr_normal_monte_carlo():
    y = RngStream(0).derive("normal").generator().standard_normal(1000)
    out = ela_distr(Sample(np.zeros((1000, 1)), y))
    assert abs(out["distr_skewness"]) < 0.2
    assert abs(out["distr_kurtosis"]) < 0.4
    c = y - y.mean()
    assert close(out["distr_skewness"], float(np.mean(c ** 3) / np.mean(c ** 2) ** 1.5))


def test_number_of_peaks_bimodal():
    rng = np.random.default_rng(3)
    y = np.concatenate([rng.normal(0, 1, 2000), rng.normal(20, 1, 2000)])
    assert ela_distr(Sample(np.zeros((4000, 1)), y))["distr_number_of_peaks"] == 2
    y1 = rng.normal(0, 1, 4000)
    assert ela_distr(Sample(np.zeros((4000, 1)), y1))["distr_number_of_peaks"] == 1


def test_distr_needs_four_points():
    with pytest.raises(SampleError):
        ela_distr(Sample(np.zeros((3, 1)), np.arange(3.0)))


# --- meta-models ------------------------------------------------------------


def test_meta_exact_linear():
    X = np.random.default_rng(0).uniform(-5, 5, (50, 3))
    out = ela_meta(Sample(X, 2.0 + X @ np.array([1.0, -3.0, 0.5])))
    assert close(out["meta_lin_adj_r2"], 1.0, 1e-10)
    assert close(out["meta_lin_intercept"], 2.0, 1e-10)
    assert close(out["meta_lin_coef_min"], 0.5, 1e-10)
    assert close(out["meta_lin_coef_max"], 3.0, 1e-10)
    assert close(out["meta_lin_coef_max_by_min"], 6.0, 1e-9)


def test_meta_exact_quadratic():
    X = lhs_sample(80, 3, (-5.0, 5.0), RngStream(4))
    X = X - X.mean(axis=0)
    out = ela_meta(Sample(X, (X * X).sum(1)))
    assert close(out["meta_quad_adj_r2"], 1.0, 1e-10)
    assert close(out["meta_quad_cond"], 1.0, 1e-9)
    assert close(out["meta_quad_interact_adj_r2"], 1.0, 1e-10)


def test_meta_quad_cond_ten():
    X = lhs_sample(60, 2, (-5.0, 5.0), RngStream(5))
    out = ela_meta(Sample(X, 10 * X[:, 0] ** 2 + X[:, 1] ** 2))
    assert close(out["meta_quad_cond"], 10.0, 1e-9)


def test_meta_interaction_term_detected():
    X = lhs_sample(60, 2, (-5.0, 5.0), RngStream(6))
    out = ela_meta(Sample(X, X[:, 0] * X[:, 1]))
    assert out["meta_lin_adj_r2"] < 0.2
    assert close(out["meta_lin_interact_adj_r2"], 1.0, 1e-10)


def test_meta_adjusted_r2_formula():
    rng = np.random.default_rng(8)
    X = rng.uniform(-1, 1, (30, 2))
    y = X[:, 0] + rng.normal(0, 0.5, 30)
    A = np.column_stack([np.ones(30), X])
    coef = np.linalg.solve(A.T @ A, A.T @ y)
    r2 = 1 - np.sum((y - A @ coef) ** 2) / np.sum((y - y.mean()) ** 2)
    want = 1 - (1 - r2) * 29 / (30 - 2 - 1)
    assert close(ela_meta(Sample(X, y))["meta_lin_adj_r2"], want, 1e-10)


def test_meta_singular_design_uses_ridge():
    X = np.column_stack([np.linspace(-1, 1, 20), np.linspace(-1, 1, 20)])
    out = ela_meta(Sample(X, X[:, 0] * 3.0))
    assert all(not math.isinf(v) for v in out.values())
    assert close(out["meta_lin_adj_r2"], 1.0, 1e-8)


# --- dispersion ---------------------------------------------------------------


def test_dispersion_sphere_oracle():
    s = seeded(1, 2, 100, "sphere")
    got = dispersion(s)
    ref = ela_oracle.dispersion(s.X.tolist(), s.y.tolist())
    for k, v in SPHERE_DISP.items():
        assert close(ref[k], v) and close(got[k], v), k
    assert got["disp_ratio_mean_02"] < 1


def test_dispersion_whole_sample_ratio_one():
    s = seeded(2, 3, 20, "whole")
    out = dispersion(s, quantiles=(1.0,))
    assert out == {"disp_ratio_mean_100": 1.0, "disp_ratio_median_100": 1.0}


def test_dispersion_duplicate_best_points():
    X = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 2.0], [3.0, 1.0], [2.0, 2.0]])
    out = dispersion(Sample(X, np.array([0.0, 0.0, 1.0, 2.0, 3.0])), quantiles=(0.4,))
    assert out["disp_ratio_mean_40"] == 0.0


def test_dispersion_too_few_best_points():
    out = dispersion(seeded(1, 2, 40, "few"))
    assert math.isnan(out["disp_ratio_mean_02"]) and math.isnan(out["disp_ratio_median_02"])
    assert not math.isnan(out["disp_ratio_mean_05"])


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_dispersion_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-5, 5, (rng.integers(10, 60), rng.integers(1, 4)))
    y = np.round(rng.normal(size=len(X)), 1)  # ties on purpose
    got = dispersion(Sample(X, y))
    ref = ela_oracle.dispersion(X.tolist(), y.tolist())
    assert all(close(got[k], ref[k], 1e-9) for k in ref)


# --- nearest-better ---------------------------------------------------------------


def test_nbc_sphere_oracle():
    s = seeded(1, 2, 100, "sphere")
    got = nbc(s)
    ref = ela_oracle.nbc(s.X.tolist(), s.y.tolist())
    for k, v in SPHERE_NBC.items():
        assert close(ref[k], v) and close(got[k], v), k


def test_nbc_even_grid_monotone():
    X = np.arange(10.0)[:, None]
    out = nbc(Sample(X, np.arange(10.0)))
    assert out["nbc_nn_nb_mean_ratio"] == 1.0


def test_nbc_minimal():
    out = nbc(Sample(np.array([[0.0], [1.0], [3.0]]), np.array([2.0, 1.0, 0.0])))
    assert all(math.isfinite(v) for v in out.values())


def test_nbc_ties_by_index():
    # equal y: the later row's nearest-better point is the earlier row
    X = np.array([[0.0], [1.0], [5.0], [6.5], [9.0]])
    y = np.array([1.0, 1.0, 0.0, 2.0, 1.0])
    ref = ela_oracle.nbc(X.tolist(), y.tolist())
    got = nbc(Sample(X, y))
    assert all(close(got[k], ref[k]) for k in ref)


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_nbc_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-5, 5, (rng.integers(5, 50), rng.integers(1, 4)))
    y = np.round(rng.normal(size=len(X)), 1)
    got = nbc(Sample(X, y))
    ref = ela_oracle.nbc(X.tolist(), y.tolist())
    assert all(close(got[k], ref[k], 1e-9) for k in ref)


# --- information content ---------------------------------------------------------------


def test_ic_rastrigin_oracle():
    s = seeded(15, 2, 150, "rastrigin")
    got = info_content(s)
    ref = ela_oracle.info_content(s.X.tolist(), s.y.tolist(), IC_EPSILONS.tolist())
    for k, v in RASTRIGIN_IC.items():
        assert close(ref[k], v) and close(got[k], v), k


def test_ic_constant():
    out = info_content(Sample(np.arange(8.0)[:, None], np.zeros(8)))
    assert out["ic_h_max"] == 0.0
    assert out["ic_eps_s"] == IC_EPSILONS[0]
    assert out["ic_m0"] == 0.0
    assert math.isnan(out["ic_eps_ratio"])


def test_ic_monotone_tour():
    X = np.arange(12.0)[:, None]
    out = info_content(Sample(X, X[:, 0] * 1.0))
    assert out["ic_h_max"] == 0.0
    # one run of equal nonzero symbols over n - 1 differences
    assert out["ic_m0"] == 1 / 11


@given(st.integers(0, 10_000))
@settings(max_examples=10, deadline=None)
def test_ic_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-5, 5, (rng.integers(3, 40), 2))
    y = rng.normal(scale=10 ** rng.uniform(-3, 3), size=len(X))
    got = info_content(Sample(X, y))
    ref = ela_oracle.info_content(X.tolist(), y.tolist(), IC_EPSILONS.tolist())
    assert all(close(got[k], ref[k], 1e-9) for k in ref)


# --- pca ---------------------------------------------------------------


def _svd_shares(M):
    s = np.linalg.svd(M - M.mean(0), compute_uv=False) ** 2
    share = np.cumsum(s) / s.sum()
    return (int(np.argmax(share >= 0.9 - 1e-12)) + 1) / M.shape[1], s[0] / s.sum()


def test_pca_matches_svd_route():
    s = seeded(10, 3, 90, "pca")
    out = pca_features(s)
    k, first = _svd_shares(s.X)
    assert out["pca_expl_var_x_09"] == k and close(out["pca_expl_var_first_pc_x"], first, 1e-10)
    Z = (s.X - s.X.mean(0)) / s.X.std(0)
    k, first = _svd_shares(Z)
    assert out["pca_expl_var_cor_x_09"] == k and close(out["pca_expl_var_first_pc_cor_x"], first, 1e-10)


def test_pca_dominant_axis():
    X = np.column_stack([np.linspace(-3, 3, 30), np.ones(30), np.full(30, 2.0)])
    out = pca_features(Sample(X, X[:, 0] ** 2))
    assert close(out["pca_expl_var_first_pc_x"], 1.0)
    assert math.isnan(out["pca_expl_var_cor_x_09"])


def test_pca_isotropic_monte_carlo():
    X = np.random.Generator(np.random.Philox(key=5)).standard_normal((5000, 2))
    out = pca_features(Sample(X, X[:, 0]))
    assert abs(out["pca_expl_var_first_pc_x"] - 0.5) < 0.05


@pytest.mark.parametrize("d", [2, 5, 10])
def test_pca_iid_columns(d):
    X = np.random.Generator(np.random.Philox(key=d)).uniform(-1, 1, (4000, d))
    out = pca_features(Sample(X, X.sum(1)))
    assert abs(out["pca_expl_var_x_09"] * d - math.ceil(0.9 * d)) <= 1


# --- full vector and aggregation ----------------------------------------------------


def test_compute_features_deterministic():
    s = seeded(21, 5, 250, "det", iid=3)
    a, b = compute_features(s), compute_features(s)
    assert a.values.tobytes() == b.values.tobytes()


INVARIANT = [n for n in FEATURE_NAMES if n.startswith(("distr_", "disp_", "nbc_", "ic_"))] + [
    "meta_lin_adj_r2", "meta_lin_coef_min", "meta_lin_coef_max", "meta_lin_coef_max_by_min",
    "meta_lin_interact_adj_r2", "meta_quad_adj_r2", "meta_quad_cond", "meta_quad_interact_adj_r2",
    "pca_expl_var_x_09", "pca_expl_var_first_pc_x", "pca_expl_var_cor_x_09", "pca_expl_var_first_pc_cor_x",
]


@pytest.mark.parametrize("fid", [1, 7, 15, 21])
def test_translation_invariance(fid):
    s = seeded(fid, 2, 120, f"shift{fid}", iid=1)
    base = compute_features(s)
    # shifts that are exact in binary keep the y differences exact as well
    shifted = compute_features(Sample(s.X, s.y + 64.0))
    for name in INVARIANT:
        a, b = base[name], shifted[name]
        assert (math.isnan(a) and math.isnan(b)) or abs(a - b) <= 1e-9 * max(1.0, abs(a)), name


def test_aggregate_single_and_median():
    v = FeatureVector(np.arange(38.0))
    assert aggregate_features([v]).values.tobytes() == v.values.tobytes()
    vs = [FeatureVector(np.full(38, x)) for x in (1.0, 100.0, 2.0)]
    assert (aggregate_features(vs).values == 2.0).all()


def test_aggregate_ignores_na():
    vals = [1.0, np.nan, 3.0, np.nan, 5.0]
    out = aggregate_features([FeatureVector(np.full(38, x)) for x in vals])
    assert (out.values == 3.0).all()


def test_aggregate_majority_na_stays_na():
    vals = [1.0, np.nan, np.nan]
    out = aggregate_features([FeatureVector(np.full(38, x)) for x in vals])
    assert np.isnan(out.values).all()


def test_aggregate_errors():
    with pytest.raises(ValueError):
        aggregate_features([])
    other = FeatureVector(np.zeros(2), ("a", "b"))
    with pytest.raises(ValueError):
        aggregate_features([FeatureVector(np.zeros(38)), other])


@given(st.lists(st.lists(st.one_of(st.floats(-1e6, 1e6), st.just(float("nan"))), min_size=38, max_size=38),
                min_size=1, max_size=7), st.randoms())
@settings(max_examples=50, deadline=None)
def test_aggregate_permutation_invariant(rows, rnd):
    vs = [FeatureVector(np.array(r)) for r in rows]
    perm = vs[:]
    rnd.shuffle(perm)
    assert aggregate_features(vs).values.tobytes() == aggregate_features(perm).values.tobytes()


def test_group_failure_becomes_na(monkeypatch):
    def broken(sample):
        raise np.linalg.LinAlgError("boom")

    monkeypatch.setattr(ela, "pca_features", broken)
    fv = ela.compute_features(seeded(1, 2, 30, "na"))
    assert all(math.isnan(fv[n]) for n in ela.PCA_NAMES)
    assert not math.isnan(fv["distr_skewness"])

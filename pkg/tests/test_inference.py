import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gxgmix.inference import (Thresholds, TraceTooShort, bhattacharyya_distance, calibrate_thresholds,
                              calibrated_epsilon, clustering_distance, d_E_min, d_E_min_assignment,
                              decide, euclidean_gene_distance, genotype_log_pmf, logit_mean_vector,
                              run_tests)
from gxgmix.mixture import MixtureState, canonical_order

from .helpers import synthetic_trace

# --- clustering distance -------------------------------------------------------


def test_clustering_hand_case():
    first = [{0, 1}, {2}]
    second = [{0}, {1}, {2}]
    assert clustering_distance(first, second) == pytest.approx(1 / 3)
    assert clustering_distance(second, first) == pytest.approx(1 / 3)
    # same partitions as label vectors
    assert clustering_distance([0, 0, 1], [0, 1, 2]) == pytest.approx(1 / 3)


partitions = st.lists(st.integers(0, 4), min_size=1, max_size=12)


@settings(max_examples=100, deadline=None)
@given(partitions)
def test_clustering_identity(labels):
    assert clustering_distance(labels, labels) == 0.0
    relabeled = [7 - c for c in labels]
    assert clustering_distance(labels, relabeled) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 12).flatmap(lambda n: st.tuples(st.lists(st.integers(0, 3), min_size=n, max_size=n),
                                                      st.lists(st.integers(0, 3), min_size=n, max_size=n))))
def test_clustering_range_symmetry_and_zero_iff_equal(pair):
    a, b = pair
    d = clustering_distance(a, b)
    assert 0.0 <= d <= 1.0
    assert d == clustering_distance(b, a)
    same = canonical_order(np.array(a)).tolist() == canonical_order(np.array(b)).tolist()
    assert (d == 0.0) == same


def test_clustering_universe_mismatch():
    with pytest.raises(ValueError):
        clustering_distance([0, 1], [0, 1, 1])


# --- logit and Euclidean distances ----------------------------------------------------


def _sigmoid(x):
    return 1 / (1 + np.exp(-np.asarray(x, float)))


def test_logit_mean_vector_values():
    np.testing.assert_allclose(logit_mean_vector(np.full((3, 4), 0.5)), 0.0)
    assert logit_mean_vector(np.array([[0.5, 0.9]]))[0] == pytest.approx(math.log(0.7 / 0.3))
    assert logit_mean_vector(np.array([[0.5, 0.9]]))[0] == pytest.approx(0.8473, abs=1e-4)
    with pytest.raises(ValueError):
        logit_mean_vector(np.array([[0.0, 0.0]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_logit_mean_vector_monotone(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.01, 0.9, (3, 4))
    q = p.copy()
    q[1, 2] += 0.05
    a, b = logit_mean_vector(p), logit_mean_vector(q)
    assert b[1] > a[1]
    assert np.array_equal(np.delete(a, 1), np.delete(b, 1))


def test_euclidean_three_four_five():
    control = MixtureState(0, 0, 1.0, np.zeros(0, int), np.array([0, 0]), np.array([[0.5]]))
    case = MixtureState(0, 1, 1.0, np.zeros(0, int), np.array([0, 1]), _sigmoid([[3.0], [4.0]]))
    assert euclidean_gene_distance(control, case) == pytest.approx(5.0)
    assert euclidean_gene_distance(control, control) == 0.0


# --- permutation-minimised distance ----------------------------------------------------------


def brute_force_min(v1, v2):
    best = np.inf
    for perm in itertools.permutations(range(len(v1))):
        d = v1 - v2[list(perm)]
        best = min(best, float(np.sqrt(np.sum(d * d))))
    return best


def test_d_E_min_examples():
    assert d_E_min([0.0, 1.0], [1.0, 0.0]) == 0.0
    v = np.array([0.3, -2.0, 5.0])
    assert d_E_min(v, v) == 0.0
    assert d_E_min(v, v[::-1]) == 0.0
    assert d_E_min([0.0, 1.0], [0.0, 2.0]) > 0


def test_d_E_min_zero_only_for_equal_multisets():
    assert d_E_min([1.0, 1.0, 2.0], [1.0, 2.0, 2.0]) > 0


@pytest.mark.parametrize("seed", range(50))
def test_d_E_min_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, 8))
    v1, v2 = rng.normal(0, 3, K), rng.normal(0, 3, K)
    oracle = brute_force_min(v1, v2)
    assert d_E_min(v1, v2) == oracle
    assert d_E_min_assignment(v1, v2) == oracle
    assert float(np.sqrt(np.sum((v1 - v2) ** 2))) >= oracle


def test_d_E_min_vector_entries():
    rng = np.random.default_rng(1)
    v1 = rng.standard_normal((4, 2))
    v2 = v1[[2, 0, 3, 1]] + 1e-3
    assert d_E_min(v1, v2) == pytest.approx(math.sqrt(8) * 1e-3)


def test_d_E_min_permutation_invariant():
    rng = np.random.default_rng(2)
    v1, v2 = rng.standard_normal(6), rng.standard_normal(6)
    base = d_E_min(v1, v2)
    assert d_E_min(v1[::-1], v2) == pytest.approx(base)
    assert d_E_min(v1, rng.permutation(v2)) == pytest.approx(base)


# --- Bhattacharyya / Hellinger oracle --------------------------------------------------------


def pair_enumeration_pmf(weights, probs):
    """Mixture pmf of count vectors by enumerating every chromosome-pair indicator configuration."""
    probs = np.atleast_2d(probs)
    L = probs.shape[1]
    pmf = {}
    for x in itertools.product((0, 1), repeat=2 * L):
        counts = tuple(x[2 * r] + x[2 * r + 1] for r in range(L))
        pr = 0.0
        for w, p in zip(weights, probs):
            pr += w * np.prod([p[r] ** x[2 * r + s] * (1 - p[r]) ** (1 - x[2 * r + s])
                               for r in range(L) for s in (0, 1)])
        pmf[counts] = pmf.get(counts, 0.0) + pr
    return np.array([pmf[c] for c in itertools.product(range(3), repeat=L)])


def test_count_pmf_matches_pair_enumeration():
    rng = np.random.default_rng(3)
    w = np.array([0.2, 0.5, 0.3])
    p = rng.uniform(0.05, 0.95, (3, 3))
    np.testing.assert_allclose(np.exp(genotype_log_pmf(w, p)), pair_enumeration_pmf(w, p), rtol=1e-12)


def test_bhattacharyya_values():
    h = ([0.5, 0.5], [[0.2, 0.7], [0.6, 0.1]])
    assert bhattacharyya_distance(h, h) == pytest.approx(0.0, abs=1e-7)
    assert bhattacharyya_distance(([1.0], [[0.0]]), ([1.0], [[1.0]])) == pytest.approx(1.0)
    # BC = sqrt(.49 * .09) + sqrt(.42 * .42) + sqrt(.09 * .49) = 0.84
    assert bhattacharyya_distance(([1.0], [[0.3]]), ([1.0], [[0.7]])) == pytest.approx(0.4)


def test_bhattacharyya_rejects_large_L():
    with pytest.raises(ValueError, match="too large"):
        bhattacharyya_distance(([1.0], np.full((1, 30), 0.5)), ([1.0], np.full((1, 30), 0.5)))


# --- decisions and thresholds ----------------------------------------------------------------


@pytest.mark.parametrize("prob, c, accept", [(0.230, 1, False), (0.554, 1, True), (0.511, 1, True),
                                             (0.502, 1, True), (0.118, 19, True), (0.04, 19, False),
                                             (0.5, 1, True)])
def test_decide(prob, c, accept):
    assert decide(prob, c) is accept


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0.01, 100), st.floats(0.01, 100))
def test_decide_monotone_in_c(prob, c1, c2):
    # a larger c lowers the acceptance bar 1 / (1 + c)
    lo, hi = sorted((c1, c2))
    if decide(prob, lo):
        assert decide(prob, hi)


def test_decide_validation():
    with pytest.raises(ValueError):
        decide(1.2, 1)
    with pytest.raises(ValueError):
        decide(0.5, 0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=100, max_size=300), st.floats(0.05, 0.95))
def test_calibrated_epsilon_mass(values, q):
    x = np.array(values) / 30.0  # atoms, like clustering distances
    eps = calibrated_epsilon(x, q)
    mass = np.mean(x < eps)
    assert mass >= q - 1e-12
    # no smaller atom would already reach q
    smaller = x[x < eps]
    if len(smaller):
        assert np.mean(x < smaller.max()) < q


def test_calibrated_epsilon_continuous_within_one_step():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(1000)
    eps = calibrated_epsilon(x, 0.55)
    assert 0.55 <= np.mean(x < eps) < 0.55 + 1 / 1000 + 1e-12


def _null_like_trace(rng, R=400, J=2):
    d_hat = rng.integers(0, 30, size=(R, J)) / 30
    d_E = rng.gamma(2.0, 1.0, size=(R, J))
    A = np.tile(np.eye(J), (R, 1, 1))
    A[:, 0, 1] = A[:, 1, 0] = rng.normal(0, 0.2, R)
    return synthetic_trace(d_hat, d_E, d_E * 0.8, A)


def test_calibrate_then_self_test_accepts():
    trace = _null_like_trace(np.random.default_rng(1))
    th = calibrate_thresholds(trace, 0.55)
    report = run_tests(trace, th)
    assert report.overall.posterior_prob >= 0.55
    assert report.overall.accept
    assert report.interactions[0]["test"].posterior_prob >= 0.55
    assert not report.genetic_effect and not report.interaction_detected


def test_calibrate_median():
    trace = synthetic_trace(np.zeros((101, 1)), np.arange(101.0))
    th = calibrate_thresholds(trace, 0.5)
    assert th.eps_euclid == pytest.approx(50.5)


def test_calibrate_short_trace():
    with pytest.raises(TraceTooShort):
        calibrate_thresholds(synthetic_trace(np.zeros((99, 1)), np.zeros(99)))
    with pytest.raises(ValueError):
        calibrate_thresholds(synthetic_trace(np.zeros((200, 1)), np.zeros(200)), q=1.0)


def test_per_gene_thresholds():
    rng = np.random.default_rng(2)
    trace = synthetic_trace(rng.uniform(size=(200, 2)) * [1, 0.1], rng.uniform(size=(200, 2)))
    th = calibrate_thresholds(trace, per_gene=True)
    assert th.eps_cluster_gene[1] < th.eps_cluster_gene[0]
    assert th.cluster_eps(1) == th.eps_cluster_gene[1]


def test_real_data_pattern_marks_genes_significant():
    R, J = 200, 5
    trace = synthetic_trace(np.full((R, J), 0.1), np.full((R, J), 30.0), np.full((R, J), 25.0))
    th = Thresholds(eps_cluster=0.2, eps_euclid=17.4, eps_interaction=0.1)
    report = run_tests(trace, th, c_cluster=1, c_confirm=19)
    assert all(g.clustering.accept for g in report.genes)
    assert all(not g.euclid.accept for g in report.genes)
    assert all(g.euclid_min is not None and not g.euclid_min.accept for g in report.genes)
    assert all(g.significant for g in report.genes)
    assert report.genetic_effect
    assert any("Euclidean threshold" in n for n in report.notes)


def test_permutation_min_retest_can_rescue():
    trace = synthetic_trace(np.full((200, 1), 0.1), np.full((200, 1), 30.0), np.full((200, 1), 1.0))
    report = run_tests(trace, Thresholds(0.2, 17.4, 0.1))
    assert not report.genes[0].euclid.accept and report.genes[0].euclid_min.accept
    assert not report.genes[0].significant


def test_clustering_rejection_is_significant_without_confirmation():
    trace = synthetic_trace(np.full((200, 1), 0.9), np.zeros((200, 1)))
    report = run_tests(trace, Thresholds(0.2, 17.4, 0.1))
    assert report.genes[0].significant and report.genes[0].euclid is None


def test_report_echoes_confirmation_threshold(tmp_path):
    trace = _null_like_trace(np.random.default_rng(3))
    report = run_tests(trace, calibrate_thresholds(trace), c_confirm=19)
    d = report.as_dict()
    assert d["confirm_threshold_prob"] == pytest.approx(0.05)
    assert d["overall"]["euclid"]["threshold_prob"] == pytest.approx(0.05)
    for g in d["genes"]:
        assert g["clustering"]["decision"] in ("accept", "reject")
    report.to_json(tmp_path / "r.json")
    assert "overall" in report.summary()


def test_dimension_mismatch():
    trace = synthetic_trace(np.zeros((200, 2)), np.zeros((200, 2)))
    with pytest.raises(ValueError, match="genes"):
        run_tests(trace, Thresholds(0.2, 1.0, 0.1, n_genes=3))


def test_thresholds_json_round_trip(tmp_path):
    th = Thresholds(0.233, 17.41, 0.166, eps_cluster_gene=[0.2, 0.2], n_records=20000, n_genes=2)
    th.to_json(tmp_path / "t.json")
    assert Thresholds.from_json(tmp_path / "t.json") == th

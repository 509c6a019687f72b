import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcens.errors import ArgumentError, ConditioningError, FitError
from mcens.features import FeatureSet, LabelSet, LogitSet
from mcens.scoring import (ClassStats, LinearHead, ScoreVector, auroc, energy_score, evaluate,
                           fit_class_stats, fpr_at_tpr, knn_score, mahalanobis_score, msp_score,
                           read_scores_csv, threshold_detect)


def _logits(rows):
    return LogitSet(np.array(rows, dtype=float), None)


# ------------------------------------------------------------------- MSP

def test_msp_examples():
    s = msp_score(_logits([[2, 2], [0, math.log(3)], [100, 0]])).scores
    assert s[0] == 0.5
    assert abs(s[1] - 0.75) < 1e-15
    assert abs(s[2] - 1) < 1e-12


def test_msp_shift_invariant(rng):
    L = rng.standard_normal((10, 4))
    a = msp_score(LogitSet(L, None)).scores
    b = msp_score(LogitSet(L + rng.standard_normal((10, 1)) * 5, None)).scores
    np.testing.assert_allclose(a, b, atol=1e-14)
    assert np.all((a >= 0.25 - 1e-15) & (a <= 1))


# ---------------------------------------------------------------- energy

def test_energy_examples():
    s = energy_score(_logits([[0, 0, 0], [1, 2, 3]])).scores
    assert abs(s[0] - math.log(3)) < 1e-15
    assert abs(s[1] - 3.40760596444438) < 1e-9


def test_energy_shift_adds_constant():
    # the shifted inputs are exact; only the final addition may round
    row = np.array([[0.5, -1.25, 2.0]])
    for c in (8.0, -3.0, 1e3):
        base = energy_score(LogitSet(row, None)).scores[0] + c
        shifted = energy_score(LogitSet(row + c, None)).scores[0]
        assert abs(shifted - base) <= 2 * math.ulp(base)


# ----------------------------------------------------------- mahalanobis

def test_mahalanobis_hand_values():
    stats = ClassStats.from_moments([[0.0, 0.0]], np.eye(2))
    z = FeatureSet(np.array([[3.0, 4.0], [0.0, 0.0]]), None)
    np.testing.assert_allclose(mahalanobis_score(z, stats).scores, [-25.0, 0.0], atol=1e-12)
    stats4 = ClassStats.from_moments([[1.0, 1.0]], 4 * np.eye(2))
    assert abs(mahalanobis_score(FeatureSet(np.array([[3.0, 1.0]]), None), stats4).scores[0] + 1.0) < 1e-12


def test_mahalanobis_score_nonpositive(rng):
    train = FeatureSet(rng.standard_normal((90, 3)), None)
    labels = LabelSet(train.sample_ids, np.repeat([0, 1, 2], 30))
    stats = fit_class_stats(train, labels)
    s = mahalanobis_score(FeatureSet(rng.standard_normal((50, 3)) * 3, None), stats).scores
    assert np.all(s <= 0)


def test_fit_class_stats_isotropic(rng):
    sigma = 1.7
    Z = np.vstack([rng.normal(m, sigma, (4000, 3)) for m in (-5.0, 0.0, 5.0)])
    y = np.repeat([0, 1, 2], 4000)
    stats = fit_class_stats(FeatureSet(Z, None), LabelSet([str(i) for i in range(len(y))], y), 0.0)
    np.testing.assert_allclose(stats.shared_cov, sigma ** 2 * np.eye(3), atol=0.1)
    np.testing.assert_allclose(stats.means[:, 0], [-5, 0, 5], atol=0.1)
    assert np.max(np.abs(stats.shared_cov @ stats.shared_cov_inv - np.eye(3))) < 1e-6


def test_fit_class_stats_shrinkage_blend(rng):
    Z = rng.standard_normal((40, 2)) @ np.array([[1.0, 0.8], [0.0, 0.6]])
    labels = LabelSet([str(i) for i in range(40)], np.repeat([0, 1], 20))
    raw = fit_class_stats(FeatureSet(Z, None), labels, 0.0).shared_cov
    shr = fit_class_stats(FeatureSet(Z, None), labels, 0.3).shared_cov
    np.testing.assert_allclose(shr, 0.7 * raw + 0.3 * np.diag(np.diag(raw)), atol=1e-14)


def test_fit_class_stats_degenerate_spread():
    Z = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]])
    labels = LabelSet(list("abcd"), [0, 0, 1, 1])
    with pytest.raises(ConditioningError):
        fit_class_stats(FeatureSet(Z, list("abcd")), labels, 0.1)


def test_fit_class_stats_single_sample_class():
    labels = LabelSet(list("abc"), [0, 0, 1])
    with pytest.raises(FitError):
        fit_class_stats(FeatureSet(np.random.default_rng(0).standard_normal((3, 2)), list("abc")), labels)


@given(st.integers(0, 10_000), st.floats(0.05, 0.95))
def test_mahalanobis_moving_toward_mean_never_lowers_score(seed, t):
    r = np.random.default_rng(seed)
    A = r.standard_normal((3, 3))
    stats = ClassStats.from_moments(r.standard_normal((1, 3)), A @ A.T + 0.5 * np.eye(3))
    z = r.standard_normal((1, 3)) * 4
    moved = z + t * (stats.means[0] - z)
    s0 = mahalanobis_score(FeatureSet(z, None), stats).scores[0]
    s1 = mahalanobis_score(FeatureSet(moved, None), stats).scores[0]
    assert s1 >= s0


# -------------------------------------------------------------------- KNN

def test_knn_examples():
    train = FeatureSet(np.array([[0.0, 0.0], [1.0, 0.0]]), None)
    assert knn_score(FeatureSet(np.array([[1.0, 0.0]]), None), train, 1, normalize=False).scores[0] == 0.0
    assert knn_score(FeatureSet(np.array([[0.0, 0.0]]), None), train, 2, normalize=False).scores[0] == -1.0


def _brute_knn(test, train, k):
    out = []
    for z in test.tolist():
        d = []
        for t in train.tolist():
            s = 0.0
            for a, b in zip(z, t):
                s += (a - b) * (a - b)
            d.append(s)
        out.append(-math.sqrt(sorted(d)[k - 1]))
    return out


@pytest.mark.parametrize("normalize", [False, True])
def test_knn_equals_brute_force(rng, normalize):
    from mcens.features import l2_normalize
    train = FeatureSet(rng.standard_normal((200, 6)), None)
    test = FeatureSet(rng.standard_normal((60, 6)), None)
    got = knn_score(test, train, 5, normalize=normalize).scores
    if normalize:
        train, test = l2_normalize(train), l2_normalize(test)
    assert got.tolist() == _brute_knn(test.data, train.data, 5)


def test_knn_k_too_large():
    train = FeatureSet(np.zeros((3, 2)) + np.arange(3)[:, None], None)
    with pytest.raises(ArgumentError):
        knn_score(train, train, 4, normalize=False)


# ------------------------------------------------------------- detection

def test_threshold_detect_strict():
    s = ScoreVector(["a", "b"], [1.0, 2.0], "MSP")
    assert threshold_detect(s, 1.5).tolist() == [False, True]
    assert threshold_detect(s, -math.inf).tolist() == [True, True]
    assert threshold_detect(s, 2.0).tolist() == [False, False]


@given(st.lists(st.integers(-5, 5), min_size=1, max_size=30))
def test_threshold_flip_exactly_at_score(vals):
    s = np.array(vals, dtype=float)
    for tau in set(vals):
        below = threshold_detect(s, tau - 1e-9)
        at = threshold_detect(s, float(tau))
        assert np.array_equal(below != at, s == tau)


def test_auroc_examples():
    assert auroc([0.9, 0.8], [0.1, 0.2]) == 1.0
    assert auroc([0.9, 0.4], [0.5, 0.1]) == 0.75
    assert auroc([1, 2, 3], [3, 2, 1]) == 0.5


def _pairwise_auroc(a, b):
    wins = sum(1.0 if x > y else 0.5 if x == y else 0.0 for x in a for y in b)
    return wins / (len(a) * len(b))


@given(st.lists(st.integers(0, 6), min_size=1, max_size=25), st.lists(st.integers(0, 6), min_size=1, max_size=25))
def test_auroc_pairwise_oracle_and_antisymmetry(a, b):
    assert abs(auroc(a, b) - _pairwise_auroc(a, b)) <= 1e-12
    assert auroc(a, b) + auroc(b, a) == 1.0


def test_auroc_antisymmetry_continuous(rng):
    for _ in range(50):
        a = rng.standard_normal(int(rng.integers(1, 300)))
        b = rng.standard_normal(int(rng.integers(1, 300))) + 0.3
        assert auroc(a, b) + auroc(b, a) == 1.0


def test_auroc_empty_side():
    with pytest.raises(ArgumentError):
        auroc([], [1.0])


def test_fpr_hand_sweep():
    id_scores = [0.05 * i for i in range(1, 21)]
    fpr, tau = fpr_at_tpr(id_scores, [0.0, 0.12], return_tau=True)
    assert abs(tau - 0.10) < 1e-15
    assert fpr == 0.5


def test_fpr_perfect_separation():
    assert fpr_at_tpr([5, 6, 7], [1, 2]) == 0.0


def test_fpr_identical_multisets(rng):
    s = rng.standard_normal(400)
    assert abs(fpr_at_tpr(s, s) - 0.95) <= 1 / 400


def test_evaluate_record():
    r = evaluate(ScoreVector(["a", "b"], [0.9, 0.8], "KNN"), ScoreVector(["c", "d"], [0.1, 0.2], "KNN"))
    assert r["metric"] == "KNN"
    assert (r["auroc"], r["fpr95"], r["n_id"], r["n_ood"]) == (1.0, 0.0, 2, 2)
    assert r["tau"] == 0.8


def test_score_vector_csv(tmp_path):
    sv = ScoreVector(["a", "b"], [0.5, -1.25], "ENERGY")
    sv.write_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text() == "id,score\na,0.5\nb,-1.25\n"
    back = read_scores_csv(tmp_path / "s.csv", "ENERGY")
    assert back.scores.tolist() == [0.5, -1.25]


def test_linear_head():
    head = LinearHead(np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([0.5, -0.5]))
    out = head.logits(FeatureSet(np.array([[1.0, 1.0]]), ["a"]))
    assert out.data.tolist() == [[1.5, 1.5]]

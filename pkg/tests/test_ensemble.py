import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcens.errors import ArgumentError
from mcens.features import FeatureSet
from mcens.ensemble import (DetectorDistribution, EnsembleSpec, average_detectors, average_features,
                            detector_loss_decomposition, ensemble_variance_decomposition, estimate_icc,
                            icc_shrinkage_factor, read_pairwise_sci, select_ensemble, selection_objective,
                            write_pairwise_sci)


def _dd(p):
    p = np.atleast_1d(np.asarray(p, dtype=float))
    return DetectorDistribution([f"x{i}" for i in range(p.size)], p)


# ------------------------------------------------------------- averaging

def test_average_features_examples(rng):
    Z = FeatureSet(rng.standard_normal((4, 3)), None)
    np.testing.assert_array_equal(average_features([Z, Z, Z]).data, Z.data)
    assert np.all(average_features([Z, Z.with_data(-Z.data)]).data == 0)
    members = [FeatureSet(rng.standard_normal((4, 3)), None) for _ in range(3)]
    avg = average_features(members).data
    for i, j in itertools.product(range(4), range(3)):
        assert abs(avg[i, j] - sum(m.data[i, j] for m in members) / 3) < 1e-12


def test_average_features_order_invariant(rng):
    members = [FeatureSet(rng.standard_normal((5, 2)), None) for _ in range(4)]
    ref = average_features(members).data
    for perm in itertools.permutations(range(4)):
        np.testing.assert_allclose(average_features([members[i] for i in perm]).data, ref, atol=1e-15)


def test_average_features_mismatch():
    a = FeatureSet(np.zeros((2, 2)), ["a", "b"])
    with pytest.raises(Exception):
        average_features([a, FeatureSet(np.zeros((2, 2)), ["b", "a"])])
    with pytest.raises(Exception):
        average_features([a, FeatureSet(np.zeros((2, 3)), ["a", "b"])])


# --------------------------------------------------------- decomposition

def test_decomposition_perfect_detector():
    r = detector_loss_decomposition(_dd([1.0, 0.0]), _dd([1.0, 0.0]), [0.5, 0.5])
    assert r["loss"] == r["bias_sq"] == r["variance"] == r["sigma_sq"] == r["direct_loss"] == 0.0


def test_decomposition_uniform_detector():
    r = detector_loss_decomposition(_dd(0.5), _dd(1.0), [1.0])
    assert (r["bias_sq"], r["variance"], r["sigma_sq"], r["loss"]) == (0.25, 0.25, 0.0, 0.5)
    assert r["direct_loss"] == 0.5


def test_decomposition_random_consistency(rng):
    for _ in range(100):
        w = rng.random(10)
        w /= w.sum()
        r = detector_loss_decomposition(_dd(rng.random(10)), _dd(rng.random(10)), w)
        assert abs(r["loss"] - r["direct_loss"]) <= 1e-12


def test_decomposition_weight_sum():
    with pytest.raises(ArgumentError):
        detector_loss_decomposition(_dd(0.5), _dd(0.5), [0.9])


def test_ensemble_variance_examples():
    r = ensemble_variance_decomposition([_dd(0.5), _dd(0.5)])
    assert r["ensemble_variance"][0] == 0.5 == r["member_variance_mean"][0]
    r = ensemble_variance_decomposition([_dd(1.0), _dd(0.0)])
    assert r["member_variance_mean"][0] == 0.0
    assert r["ensemble_variance"][0] == 0.5 == r["ensemble_variance_direct"][0]
    assert r["covariance_term"][0] == 1.0
    assert not r["upper_bound_holds"][0]
    with pytest.raises(ArgumentError):
        ensemble_variance_decomposition([_dd(0.3)])


@given(st.integers(0, 10_000), st.integers(2, 6))
def test_ensemble_variance_consistency_and_lower_bound(seed, M):
    r0 = np.random.default_rng(seed)
    res = ensemble_variance_decomposition([_dd(r0.random(20)) for _ in range(M)])
    np.testing.assert_allclose(res["ensemble_variance"], res["ensemble_variance_direct"], atol=1e-12, rtol=0)
    assert np.all(res["ensemble_variance"] >= res["member_variance_mean"] / M - 1e-12)


def test_average_detectors():
    avg = average_detectors([_dd([0.2, 1.0]), _dd([0.4, 0.0])])
    np.testing.assert_allclose(avg.p_positive, [0.3, 0.5])


def test_detector_probability_range():
    with pytest.raises(ArgumentError):
        _dd(1.5)


# ------------------------------------------------------------------- ICC

def test_icc_shrinkage_examples():
    assert icc_shrinkage_factor(7, 1.0) == 1.0
    assert icc_shrinkage_factor(4, 0.0) == 0.25
    assert abs(icc_shrinkage_factor(3, 0.5) - 2 / 3) < 1e-15
    with pytest.raises(ArgumentError):
        icc_shrinkage_factor(3, 1.5)


@given(st.integers(1, 20), st.floats(0, 1), st.floats(0, 1))
def test_icc_shrinkage_bounds_and_monotone(M, a, b):
    lo, hi = sorted((a, b))
    f_lo, f_hi = icc_shrinkage_factor(M, lo), icc_shrinkage_factor(M, hi)
    assert 1 / M - 1e-15 <= f_lo <= f_hi <= 1 + 1e-15


def test_estimate_icc_identical_and_noise(rng):
    Z = FeatureSet(rng.standard_normal((50, 4)), None)
    assert estimate_icc([Z, Z, Z]) == 1.0
    noise = [FeatureSet(rng.standard_normal((2500, 4)), None) for _ in range(3)]
    assert estimate_icc(noise) <= 0.05


def test_estimate_icc_monotone_in_noise(rng):
    signal = rng.standard_normal((400, 5))
    noise = [rng.standard_normal((400, 5)) for _ in range(3)]
    vals = [estimate_icc([FeatureSet(signal + s * n, None) for n in noise]) for s in (0.1, 0.5, 1.0, 3.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert 0 < vals[-1] < vals[0] < 1


def test_estimate_icc_needs_two():
    with pytest.raises(ArgumentError):
        estimate_icc([FeatureSet(np.zeros((2, 2)), None)])


# ------------------------------------------------------------- selection

def _sym(pairs):
    out = {}
    for (a, b), v in pairs.items():
        out[(a, b)] = out[(b, a)] = v
    return out


def test_select_pool_equals_M():
    spec = select_ensemble({"a": 0.3, "b": 0.1}, {("a", "b"): 0.5}, 2, 1.0)
    assert spec.member_ids == ("a", "b")


def test_select_tie_break():
    losses = dict.fromkeys("abcd", 0.1)
    sci = _sym({(a, b): 0.1 for a, b in itertools.combinations("abcd", 2)})
    sci.update(_sym({("a", "b"): 0.9}))
    assert select_ensemble(losses, sci, 2, 1.0).member_ids == ("a", "c")


def test_select_reference_objective():
    losses = {"CE": 0.2, "SupCon": 0.2, "SimCLR": 0.25}
    sci = _sym({("CE", "SupCon"): 0.203, ("CE", "SimCLR"): 0.091, ("SupCon", "SimCLR"): 0.107})
    spec = select_ensemble(losses, sci, 3, 1.0)
    assert set(spec.member_ids) == set(losses)
    assert abs(spec.objective - (0.65 / 3 + 2 * 0.401 / 6)) < 1e-12
    assert abs(spec.objective - 0.3503) < 1e-4


def _second_enumeration(losses, sci, M, lam):
    # reverse-ordered enumeration with explicit unordered pair sums
    best = None
    for subset in reversed(list(itertools.combinations(sorted(losses), M))):
        pair = sum(sci[(a, b)] + sci[(b, a)] for a, b in itertools.combinations(subset, 2))
        obj = sum(losses[m] for m in subset) / M + lam * pair / (M * (M - 1))
        key = (round(obj, 12), subset)
        if best is None or key <= best[0]:
            best = (key, subset)
    return best[1]


def test_select_matches_second_enumeration(rng):
    names = [f"m{i}" for i in range(7)]
    for _ in range(30):
        losses = {n: float(rng.random()) for n in names}
        sci = _sym({p: float(rng.random()) for p in itertools.combinations(names, 2)})
        M = int(rng.integers(2, 6))
        lam = float(rng.uniform(0, 3))
        assert select_ensemble(losses, sci, M, lam).member_ids == _second_enumeration(losses, sci, M, lam)


def test_select_asymmetric_table_uses_both_orders():
    sci = {("a", "b"): 0.2, ("b", "a"): 0.6}
    assert abs(selection_objective(("a", "b"), {"a": 0.0, "b": 0.0}, sci, 1.0) - 0.4) < 1e-15


def test_select_errors():
    with pytest.raises(ArgumentError):
        select_ensemble({"a": 0.1, "b": 0.1, "c": 0.1}, {("a", "b"): 0.1}, 2, 1.0)
    with pytest.raises(ArgumentError):
        select_ensemble({"a": 0.1, "b": 0.1}, {("a", "b"): 0.1}, 3, 1.0)


def test_ensemble_spec_invariants():
    with pytest.raises(ArgumentError):
        EnsembleSpec(("a",), 1.0)
    with pytest.raises(ArgumentError):
        EnsembleSpec(("a", "a"), 1.0)
    assert EnsembleSpec(("a", "b"), 0.5).M == 2


def test_pairwise_sci_csv(tmp_path):
    pairs = {("a", "b"): 0.25, ("b", "a"): 0.5}
    write_pairwise_sci(pairs, tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "id_a,id_b,sci"
    assert read_pairwise_sci(tmp_path / "p.csv") == pairs

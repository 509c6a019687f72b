import hashlib
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcens.errors import (AlignmentError, ArgumentError, BadMagicError, CsvParseError, DegenerateSampleError,
                          FormatError, NonFiniteError, TruncatedError, VersionMismatchError)
from mcens.features import (FeatureSet, LabelSet, LogitSet, align, features_to_bytes, l2_normalize,
                            parse_csv_features, read_csv_features, read_features, read_labels,
                            read_logits, write_csv_features, write_features, write_labels, write_logits)


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


# --------------------------------------------------------------- types

def test_feature_set_invariants():
    with pytest.raises(ArgumentError):
        FeatureSet(np.zeros((2, 2)), ["a", "a"])
    with pytest.raises(ArgumentError):
        FeatureSet(np.array([[1.0, np.nan]]), ["a"])
    with pytest.raises(ArgumentError):
        FeatureSet(np.zeros((0, 2)), [])


def test_feature_set_is_read_only():
    fs = FeatureSet(np.ones((2, 2)), ["a", "b"])
    with pytest.raises(ValueError):
        fs.data[0, 0] = 5.0


def test_label_set_range():
    with pytest.raises(ArgumentError):
        LabelSet(["a", "b"], [0, 3], K=2)
    assert LabelSet(["a", "b"], [0, 2]).K == 3


def test_align_reorders_and_reports_missing():
    a = FeatureSet(np.eye(3), ["x", "y", "z"])
    b = FeatureSet(np.eye(3)[::-1], ["z", "y", "x"])
    np.testing.assert_array_equal(align(a, b).data, np.eye(3))
    with pytest.raises(AlignmentError) as exc:
        align(a, FeatureSet(np.eye(3), ["x", "y", "w"]))
    assert set(exc.value.missing) == {"w", "z"}


# ----------------------------------------------------------- binary I/O

def test_roundtrip_small(tmp_path):
    fs = FeatureSet(_f32([[1.5, -2.0], [0.25, 3.0], [7.0, 8.0]]), ["a", "b", "c"])
    p = tmp_path / "x.feat"
    write_features(fs, p)
    back = read_features(p)
    assert back.sample_ids == fs.sample_ids
    np.testing.assert_array_equal(back.data, fs.data)


def test_roundtrip_large_stable_bytes(tmp_path, rng):
    fs = FeatureSet(rng.standard_normal((512, 128)), [f"s{i}" for i in range(512)])
    p1, p2 = tmp_path / "a.feat", tmp_path / "b.feat"
    write_features(fs, p1)
    write_features(fs, p2)
    assert hashlib.sha256(p1.read_bytes()).digest() == hashlib.sha256(p2.read_bytes()).digest()
    back = read_features(p1)
    np.testing.assert_array_equal(back.data, _f32(fs.data))
    # a second write of the re-read set reproduces the same bytes
    write_features(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_header_layout():
    fs = FeatureSet(_f32([[1.0, 2.0]]), ["id0"])
    buf = features_to_bytes(fs)
    magic, version, n, dim, idlen = struct.unpack_from("<4sIQQI", buf)
    assert (magic, version, n, dim, idlen) == (b"FEAT", 1, 1, 2, 3)
    assert buf[28:31] == b"id0"
    assert np.frombuffer(buf[31:], "<f4").tolist() == [1.0, 2.0]


def test_logits_use_their_own_magic(tmp_path):
    ls = LogitSet(_f32([[0.0, 1.0]]), ["a"])
    p = tmp_path / "x.logt"
    write_logits(ls, p)
    assert p.read_bytes()[:4] == b"LOGT"
    assert isinstance(read_logits(p), LogitSet)
    with pytest.raises(BadMagicError):
        read_features(p)


def _valid_bytes():
    return bytearray(features_to_bytes(FeatureSet(_f32([[1.0, 2.0], [3.0, 4.0]]), ["a", "b"])))


def test_bad_magic(tmp_path):
    buf = _valid_bytes()
    buf[:4] = b"XEAT"
    (tmp_path / "x").write_bytes(bytes(buf))
    with pytest.raises(BadMagicError):
        read_features(tmp_path / "x")


def test_version_mismatch(tmp_path):
    buf = _valid_bytes()
    buf[4:8] = struct.pack("<I", 2)
    (tmp_path / "x").write_bytes(bytes(buf))
    with pytest.raises(VersionMismatchError):
        read_features(tmp_path / "x")


@pytest.mark.parametrize("cut", [2, 10, 30, 33])
def test_truncated(tmp_path, cut):
    buf = _valid_bytes()
    (tmp_path / "x").write_bytes(bytes(buf[:cut]))
    with pytest.raises(TruncatedError):
        read_features(tmp_path / "x")


def test_non_finite_payload(tmp_path):
    buf = _valid_bytes()
    buf[-4:] = struct.pack("<f", float("inf"))
    (tmp_path / "x").write_bytes(bytes(buf))
    with pytest.raises(NonFiniteError):
        read_features(tmp_path / "x")


def test_trailing_bytes(tmp_path):
    (tmp_path / "x").write_bytes(bytes(_valid_bytes()) + b"\0")
    with pytest.raises(FormatError):
        read_features(tmp_path / "x")


def test_error_classes_are_distinct():
    kinds = {BadMagicError, VersionMismatchError, TruncatedError, NonFiniteError}
    assert len(kinds) == 4
    assert all(issubclass(k, FormatError) for k in kinds)


# -------------------------------------------------------------------- CSV

def test_csv_parse_basic():
    fs = parse_csv_features("id,f0,f1\na,1,2\nb,3,4")
    assert fs.sample_ids == ("a", "b")
    np.testing.assert_array_equal(fs.data, [[1, 2], [3, 4]])


def test_csv_ragged_row_names_line():
    with pytest.raises(CsvParseError) as exc:
        parse_csv_features("id,f0,f1\na,1,2\nb,3\n")
    assert exc.value.line == 3
    assert "line 3" in str(exc.value)


def test_csv_non_numeric_names_line():
    with pytest.raises(CsvParseError) as exc:
        parse_csv_features("id,f0\na,1\nb,2\nc,x\n")
    assert exc.value.line == 4


def test_csv_cross_format(tmp_path, rng):
    fs = FeatureSet(rng.standard_normal((20, 5)), [f"s{i}" for i in range(20)])
    write_features(fs, tmp_path / "x.feat")
    from_bin = read_features(tmp_path / "x.feat")
    write_csv_features(from_bin, tmp_path / "x.csv")
    back = read_csv_features(tmp_path / "x.csv")
    np.testing.assert_array_equal(back.data, from_bin.data)
    np.testing.assert_allclose(back.data, fs.data, rtol=2 ** -23, atol=0)


def test_labels_roundtrip(tmp_path):
    ls = LabelSet(["a", "b", "c"], [2, 0, 1])
    write_labels(ls, tmp_path / "l.csv")
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "id,label"
    back = read_labels(tmp_path / "l.csv")
    assert back.sample_ids == ls.sample_ids
    assert back.labels.tolist() == [2, 0, 1]


# ------------------------------------------------------------- normalize

def test_l2_normalize_examples():
    np.testing.assert_allclose(l2_normalize(FeatureSet(np.array([[3.0, 4.0]]), ["a"])).data, [[0.6, 0.8]],
                               atol=1e-15)
    unit = FeatureSet(np.array([[1.0, 0.0], [0.0, 1.0]]), ["a", "b"])
    np.testing.assert_allclose(l2_normalize(unit).data, unit.data, atol=1e-12)


def test_l2_normalize_norm_scan(rng):
    fs = FeatureSet(rng.standard_normal((100, 16)), None)
    norms = np.linalg.norm(l2_normalize(fs).data, axis=1)
    assert np.all(np.abs(norms - 1) <= 1e-9)


def test_l2_normalize_zero_row_names_id():
    with pytest.raises(DegenerateSampleError) as exc:
        l2_normalize(FeatureSet(np.array([[1.0, 0.0], [0.0, 0.0]]), ["ok", "bad"]))
    assert exc.value.sample_id == "bad"
    assert "bad" in str(exc.value)


@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_l2_normalize_idempotent_and_scale_invariant(seed, c):
    Z = np.random.default_rng(seed).standard_normal((6, 4))
    fs = FeatureSet(Z, None)
    n1 = l2_normalize(fs)
    np.testing.assert_allclose(l2_normalize(n1).data, n1.data, atol=1e-12)
    np.testing.assert_allclose(l2_normalize(FeatureSet(c * Z, None)).data, n1.data, atol=1e-12)

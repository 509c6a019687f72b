"""Feature, label and logit sets plus their on-disk formats.

Binary layout (little-endian), shared by feature (``FEAT``) and logit
(``LOGT``) files::

    magic    4 bytes   b"FEAT" | b"LOGT"
    version  u32       1
    n        u64       number of rows
    dim      u64       number of columns
    idlen    u32       byte length of the id block
    ids      idlen     newline-separated UTF-8 sample ids
    values   n*dim     IEEE-754 binary32, row-major

Values are held in memory as float64; writing rounds them to float32.
"""
import csv
import io
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (AlignmentError, ArgumentError, BadMagicError, CsvParseError,
                     DegenerateSampleError, FormatError, NonFiniteError, TruncatedError,
                     VersionMismatchError)

FEAT_MAGIC = b"FEAT"
LOGT_MAGIC = b"LOGT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQQI")


def _freeze(a):
    a = np.array(a, dtype=np.float64, copy=True, order="C")
    a.setflags(write=False)
    return a


def _check_ids(ids, n):
    ids = tuple(str(i) for i in ids)
    if len(ids) != n:
        raise ArgumentError(f"expected {n} sample ids, got {len(ids)}")
    if len(set(ids)) != n:
        seen, dup = set(), None
        for i in ids:
            if i in seen:
                dup = i
                break
            seen.add(i)
        raise ArgumentError(f"sample ids must be unique (duplicate {dup!r})")
    for i in ids:
        if not i or "\n" in i or "\r" in i:
            raise ArgumentError(f"invalid sample id {i!r}")
    return ids


@dataclass(frozen=True)
class FeatureSet:
    """``n x dim`` penultimate-layer features keyed by sample id."""

    data: np.ndarray
    sample_ids: tuple = field(default=())

    def __post_init__(self):
        data = _freeze(self.data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ArgumentError(f"feature data must be a non-empty 2-D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ArgumentError("feature data contains non-finite values")
        ids = self.sample_ids
        if ids is None or len(ids) == 0:
            ids = [str(i) for i in range(data.shape[0])]
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "sample_ids", _check_ids(ids, data.shape[0]))

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def dim(self):
        return self.data.shape[1]

    def index(self):
        return {sid: i for i, sid in enumerate(self.sample_ids)}

    def select(self, ids):
        """Rows for ``ids`` in the given order."""
        idx = self.index()
        missing = [i for i in ids if i not in idx]
        if missing:
            raise AlignmentError(f"{len(missing)} ids not present: {missing[:10]}", missing)
        rows = [idx[i] for i in ids]
        return type(self)(self.data[rows], [self.sample_ids[r] for r in rows])

    def exclude(self, ids):
        drop = set(ids)
        keep = [i for i in self.sample_ids if i not in drop]
        return self.select(keep)

    def with_data(self, data):
        return type(self)(data, self.sample_ids)


class LogitSet(FeatureSet):
    """``n x K`` classifier outputs keyed by sample id."""

    @property
    def K(self):
        return self.dim


@dataclass(frozen=True)
class LabelSet:
    sample_ids: tuple
    labels: np.ndarray
    K: int = None

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64, copy=True)
        if labels.ndim != 1:
            raise ArgumentError("labels must be 1-D")
        ids = _check_ids(self.sample_ids, labels.size)
        if labels.size and labels.min() < 0:
            raise ArgumentError("labels must be nonnegative class indices")
        K = self.K
        if K is None:
            K = int(labels.max()) + 1 if labels.size else 0
        if labels.size and labels.max() >= K:
            raise ArgumentError(f"label {labels.max()} out of range for K={K}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "K", int(K))

    def __len__(self):
        return self.labels.size

    def select(self, ids):
        idx = {sid: i for i, sid in enumerate(self.sample_ids)}
        missing = [i for i in ids if i not in idx]
        if missing:
            raise AlignmentError(f"{len(missing)} ids have no label: {missing[:10]}", missing)
        return LabelSet(list(ids), self.labels[[idx[i] for i in ids]], self.K)


def align(a, b):
    """Reorder ``b`` to ``a``'s id order; both must hold the same id set."""
    if a.sample_ids == b.sample_ids:
        return b
    ia, ib = set(a.sample_ids), set(b.sample_ids)
    missing = sorted(ia ^ ib)
    if missing:
        raise AlignmentError(f"sample ids differ between sets ({len(missing)} unmatched): {missing[:10]}",
                             missing)
    return b.select(a.sample_ids)


# ---------------------------------------------------------------- binary I/O

def _encode(fs, magic):
    ids = "\n".join(fs.sample_ids).encode("utf-8")
    payload = fs.data.astype("<f4").tobytes(order="C")
    if not np.all(np.isfinite(fs.data.astype(np.float32))):
        raise ArgumentError("values overflow binary32")
    return _HEADER.pack(magic, FORMAT_VERSION, fs.n, fs.dim, len(ids)) + ids + payload


def _decode(buf, magic, cls):
    if len(buf) < 4:
        raise TruncatedError("file shorter than magic")
    if buf[:4] != magic:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {magic!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedError("truncated header")
    _, version, n, dim, idlen = _HEADER.unpack_from(buf)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"unsupported version {version}, expected {FORMAT_VERSION}")
    off = _HEADER.size
    need = off + idlen + 4 * n * dim
    if len(buf) < need:
        raise TruncatedError(f"truncated payload: {len(buf)} bytes, need {need}")
    if len(buf) > need:
        raise FormatError(f"{len(buf) - need} trailing bytes after payload")
    try:
        ids = bytes(buf[off:off + idlen]).decode("utf-8").split("\n") if idlen else []
    except UnicodeDecodeError as e:
        raise FormatError(f"id block is not valid UTF-8: {e}") from None
    if len(ids) != n:
        raise FormatError(f"id block holds {len(ids)} ids, header says {n}")
    values = np.frombuffer(buf, dtype="<f4", count=n * dim, offset=off + idlen)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise NonFiniteError(f"non-finite value in row {bad // dim} ({ids[bad // dim]!r})")
    if n == 0 or dim == 0:
        raise FormatError("empty feature set")
    return cls(values.astype(np.float64).reshape(n, dim), ids)


def _write(fs, path, magic):
    data = _encode(fs, magic)
    with open(path, "wb") as f:
        f.write(data)


def _read(path, magic, cls):
    with open(path, "rb") as f:
        return _decode(f.read(), magic, cls)


def write_features(fs, path):
    _write(fs, path, FEAT_MAGIC)


def read_features(path):
    """Read a ``FEAT`` file into a :class:`FeatureSet`."""
    return _read(path, FEAT_MAGIC, FeatureSet)


def write_logits(ls, path):
    _write(ls, path, LOGT_MAGIC)


def read_logits(path):
    return _read(path, LOGT_MAGIC, LogitSet)


def features_to_bytes(fs):
    return _encode(fs, LOGT_MAGIC if isinstance(fs, LogitSet) else FEAT_MAGIC)


# ------------------------------------------------------------------- CSV I/O

def read_csv_features(path):
    """Parse a numeric CSV whose first column is ``id``.

    Errors carry the 1-based line number of the offending row.
    """
    with open(path, newline="", encoding="utf-8") as f:
        text = f.read()
    return parse_csv_features(text)


def parse_csv_features(text):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise CsvParseError("empty CSV", line=1) from None
    if not header or header[0].strip() != "id":
        raise CsvParseError("first column must be 'id'", line=1)
    width = len(header)
    if width < 2:
        raise CsvParseError("no feature columns", line=1)
    ids, rows = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != width:
            raise CsvParseError(f"line {lineno}: expected {width} cells, got {len(row)}", line=lineno)
        try:
            values = [float(c) for c in row[1:]]
        except ValueError:
            raise CsvParseError(f"line {lineno}: non-numeric cell", line=lineno) from None
        if not all(np.isfinite(values)):
            raise CsvParseError(f"line {lineno}: non-finite value", line=lineno)
        ids.append(row[0])
        rows.append(values)
    if not rows:
        raise CsvParseError("no data rows", line=2)
    return FeatureSet(np.array(rows), ids)


def write_csv_features(fs, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id"] + [f"f{j}" for j in range(fs.dim)])
        for sid, row in zip(fs.sample_ids, fs.data):
            w.writerow([sid] + [repr(float(x)) for x in row])


def read_labels(path, K=None):
    ids, labels = [], []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["id", "label"]:
            raise CsvParseError("label file header must be 'id,label'", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise CsvParseError(f"line {lineno}: expected 2 cells", line=lineno)
            try:
                labels.append(int(row[1]))
            except ValueError:
                raise CsvParseError(f"line {lineno}: label is not an integer", line=lineno) from None
            ids.append(row[0])
    return LabelSet(ids, labels, K)


def write_labels(ls, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "label"])
        for sid, y in zip(ls.sample_ids, ls.labels):
            w.writerow([sid, int(y)])


# ------------------------------------------------------------- transforms

def l2_normalize(fs):
    """Scale every row to unit Euclidean norm.

    Raises
    ------
    DegenerateSampleError
        If a row has zero norm; the error names the sample id.
    """
    norms = np.linalg.norm(fs.data, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        sid = fs.sample_ids[zero[0]]
        raise DegenerateSampleError(f"sample {sid!r} has zero norm", sid)
    return fs.with_data(fs.data / norms[:, None])


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path

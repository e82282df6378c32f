"""Dense linear-algebra kernels shared by the masking, pruning, and decoder
modules: scaled dot-product alignment, numerically stable row softmax,
pairwise cosine similarity, min-max normalization, and rotary position
embedding. All functions are pure and thread-safe.

Matrices are 2-d float64 numpy arrays, row-major. Masks use the ``NEG_INF``
sentinel (IEEE negative infinity) for fully blocked entries; the softmax
maps those to exactly 0. Data matrices must be finite everywhere.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from asaprune import _kernels
from asaprune.errors import ConfigError, MatrixFormatError, ShapeError

NEG_INF = float("-inf")

MATRIX_MAGIC = b"ASAPMAT1"
_HEADER = struct.Struct("<8sQQ")


def as_matrix(x, *, allow_neg_inf: bool = False) -> np.ndarray:
    """Coerce to a C-contiguous 2-d float64 array and validate entries.

    NaN and positive infinity are always rejected; negative infinity is
    allowed only for mask matrices (``allow_neg_inf=True``).
    """
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got {arr.ndim}-d")
    if np.isnan(arr).any() or np.isposinf(arr).any():
        raise ValueError("matrix entries must be finite (no NaN or +inf)")
    if not allow_neg_inf and np.isneginf(arr).any():
        raise ValueError("matrix entries must be finite (-inf is reserved for masks)")
    return arr


def as_vector(x) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"expected a 1-d vector, got {arr.ndim}-d")
    if not np.isfinite(arr).all():
        raise ValueError("vector entries must be finite")
    return arr


def scaled_alignment(q, k) -> np.ndarray:
    """Pre-softmax alignment: ``q @ k.T`` scaled by 1/sqrt(feature dim).

    The scale uses the column count of ``q`` (the per-head dimension when
    called per head). Row counts may differ; the result is rows(q) x rows(k).
    Backend-independent: the matmul always goes through BLAS.
    """
    qm = as_matrix(q)
    km = as_matrix(k)
    if qm.shape[1] != km.shape[1]:
        raise ShapeError(
            f"alignment operands need equal feature dims, got {qm.shape[1]} and {km.shape[1]}"
        )
    if qm.shape[1] == 0:
        raise ShapeError("alignment needs at least one feature dimension")
    return (qm @ km.T) / np.sqrt(float(qm.shape[1]))


def softmax_rows(scores) -> np.ndarray:
    """Row-wise softmax with the row maximum subtracted before exponentiation.

    ``NEG_INF`` entries come out as exactly 0. A row that is entirely
    ``NEG_INF`` has no valid distribution and raises ValueError.
    """
    s = as_matrix(scores, allow_neg_inf=True)
    return _kernels.softmax_rows(s)


def masked_softmax_rows(scores, mask) -> np.ndarray:
    """Equivalent to ``softmax_rows(scores + mask)``, fused on the compiled backend."""
    s = as_matrix(scores, allow_neg_inf=True)
    m = as_matrix(mask, allow_neg_inf=True)
    if s.shape != m.shape:
        raise ShapeError(f"scores {s.shape} and mask {m.shape} differ in shape")
    return _kernels.add_softmax_rows(s, m)


def cosine_similarity(h) -> np.ndarray:
    """Pairwise cosine similarity between rows, exactly symmetric.

    Values are clipped into [-1, 1] and the diagonal is exactly 1 for
    nonzero rows. An all-zero row gets similarity 0 against everything,
    itself included, so it can never anchor or join a merge.
    """
    return _kernels.cosine_similarity(as_matrix(h))


def min_max_normalize(x, epsilon: float = 1e-6) -> np.ndarray:
    """Map a vector into [0, 1): ``(x - min) / (max - min + epsilon)``.

    A constant vector maps to all zeros; the maximum lands strictly below 1.
    """
    if epsilon <= 0.0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    v = as_vector(x)
    if v.size == 0:
        raise ShapeError("cannot normalize an empty vector")
    lo = v.min()
    hi = v.max()
    return (v - lo) / (hi - lo + epsilon)


@dataclass(frozen=True)
class RopeParams:
    """Rotary embedding configuration: even head dimension and frequency base."""

    head_dim: int
    base: float = 10000.0

    def __post_init__(self):
        if self.head_dim < 2 or self.head_dim % 2 != 0:
            raise ConfigError(f"head_dim must be even and >= 2, got {self.head_dim}")
        if self.base <= 0.0:
            raise ConfigError(f"base must be positive, got {self.base}")

    def inverse_frequencies(self) -> np.ndarray:
        exponents = np.arange(0, self.head_dim, 2, dtype=np.float64) / self.head_dim
        return self.base ** -exponents


def rope_apply(x, params: RopeParams, start_position: int = 0) -> np.ndarray:
    """Rotate each row by its position's angle; row i sits at start_position + i.

    Adjacent dimension pairs (2p, 2p+1) rotate together by
    ``position * base**(-2p/head_dim)``. Rotations are orthogonal, so row
    norms are preserved, and alignment scores between rotated vectors depend
    only on relative position.
    """
    xm = as_matrix(x)
    positions = np.arange(start_position, start_position + xm.shape[0], dtype=np.float64)
    return _rope(xm, positions, params)


def rope_apply_at(x, params: RopeParams, positions) -> np.ndarray:
    """Like rope_apply but with an explicit (possibly non-contiguous) position per row."""
    xm = as_matrix(x)
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    if pos.ndim != 1 or pos.shape[0] != xm.shape[0]:
        raise ShapeError(f"need one position per row, got {pos.shape} for {xm.shape[0]} rows")
    return _rope(xm, pos, params)


def _rope(xm: np.ndarray, positions: np.ndarray, params: RopeParams) -> np.ndarray:
    if xm.shape[1] != params.head_dim:
        raise ShapeError(f"input has {xm.shape[1]} columns, RopeParams expect {params.head_dim}")
    return _kernels.rope_rotate(xm, positions, params.inverse_frequencies())


def backend_name() -> str:
    """Name of the kernel backend selected at import (``compiled`` or ``python``)."""
    return _kernels.active_backend()


# ---------------------------------------------------------------------------
# Shared binary matrix format
#
# magic "ASAPMAT1", two u64 little-endian dims (rows, cols), then rows*cols
# IEEE-754 float32 little-endian values in row-major order.
# ---------------------------------------------------------------------------


def write_matrix(fp: BinaryIO, matrix) -> None:
    m = as_matrix(matrix)
    with np.errstate(over="ignore"):
        payload = m.astype("<f4")
    if m.size and not np.isfinite(payload).all():
        raise ValueError("matrix entries are not representable in float32")
    fp.write(_HEADER.pack(MATRIX_MAGIC, m.shape[0], m.shape[1]))
    fp.write(payload.tobytes(order="C"))


def read_matrix(fp: BinaryIO) -> np.ndarray:
    header = fp.read(_HEADER.size)
    if len(header) < _HEADER.size:
        raise MatrixFormatError(
            f"truncated header at offset {len(header)}: need {_HEADER.size} bytes"
        )
    magic, rows, cols = _HEADER.unpack(header)
    if magic != MATRIX_MAGIC:
        raise MatrixFormatError(f"bad magic at offset 0: expected {MATRIX_MAGIC!r}, got {magic!r}")
    expected = rows * cols * 4
    payload = fp.read(expected)
    if len(payload) < expected:
        raise MatrixFormatError(
            f"payload truncated at offset {_HEADER.size + len(payload)}: "
            f"need {expected} payload bytes, found {len(payload)}"
        )
    trailing = fp.read(1)
    if trailing:
        raise MatrixFormatError(f"trailing data at offset {_HEADER.size + expected}")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(rows, cols)
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        idx = int(bad[0])
        raise MatrixFormatError(
            f"non-finite value at offset {_HEADER.size + 4 * idx} (element index {idx})"
        )
    return data


def save_matrix(path, matrix) -> None:
    with open(path, "wb") as fp:
        write_matrix(fp, matrix)


def load_matrix(path) -> np.ndarray:
    try:
        with open(path, "rb") as fp:
            return read_matrix(fp)
    except MatrixFormatError as exc:
        raise MatrixFormatError(f"{path}: {exc}") from None

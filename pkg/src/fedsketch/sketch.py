"""Count sketch tables over real vectors.

A :class:`HashFamily` fixes ``t`` index hashes ``[d] -> [m]`` and ``t`` sign
hashes ``[d] -> {+1, -1}``. :func:`compress` folds a length-``d`` vector into a
``t x m`` :class:`SketchTable`; tables built from the same family add and scale
linearly, which is what lets a server average device sketches without ever
seeing the vectors behind them.

Hashes come from a splitmix64-style avalanche of
``(master_seed, round_tag, row, coord)``. Signs are the low bit of one mixed
stream. Bucket indices rank a second stream (a seeded permutation of the
coordinates) and reduce the rank modulo ``m``: every bucket holds ``d // m`` or
``d // m + 1`` coordinates, and for ``m >= d`` a row is collision-free, so the
sketch becomes lossless. Nothing here is cryptographic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionError, IncompatibleSketchError, ParameterError

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

# stream salts, so index and sign bits never share a mixed word
_INDEX_STREAM = 0
_SIGN_STREAM = 1


def _mix_int(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps modulo 2**64, same as _mix_int
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a digest of ``data``."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK
    return h


@dataclass(frozen=True)
class HashFamily:
    """Seeded index and sign hashes for a ``t x m`` count sketch of ``R^d``.

    Two families with equal fields produce identical hashes, so sketches built
    from either can be added together.
    """

    master_seed: int
    round_tag: int
    t: int
    m: int
    d: int

    def __post_init__(self):
        for name in ("t", "m", "d"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ParameterError(f"{name} must be a positive integer, got {value!r}")
        if self.round_tag < 0:
            raise ParameterError(f"round_tag must be nonnegative, got {self.round_tag}")

    def _stream(self, row: int, stream: int) -> np.ndarray:
        key = _mix_int(self.master_seed + _GAMMA)
        key = _mix_int(key ^ (self.round_tag & _MASK))
        key = _mix_int(key ^ (((2 * row + stream + 1) * _GAMMA) & _MASK))
        coords = np.arange(1, self.d + 1, dtype=np.uint64)
        return _mix_array(np.uint64(key) + coords * np.uint64(_GAMMA))

    @cached_property
    def buckets(self) -> np.ndarray:
        """``t x d`` array of bucket indices, ``buckets[j, i] = h_j(i)``."""
        out = np.empty((self.t, self.d), dtype=np.int64)
        for j in range(self.t):
            # rank of each coord's mixed key = a seeded permutation of [d];
            # reducing the rank mod m fills every bucket to floor/ceil(d/m)
            keys = self._stream(j, _INDEX_STREAM)
            rank = np.empty(self.d, dtype=np.int64)
            rank[np.argsort(keys, kind="stable")] = np.arange(self.d)
            out[j] = rank % self.m
        out.flags.writeable = False
        return out

    @cached_property
    def signs(self) -> np.ndarray:
        """``t x d`` array of +1.0 / -1.0, ``signs[j, i] = sign_j(i)``."""
        out = np.empty((self.t, self.d), dtype=np.float64)
        for j in range(self.t):
            low_bit = self._stream(j, _SIGN_STREAM) & np.uint64(1)
            out[j] = np.where(low_bit == 0, 1.0, -1.0)
        out.flags.writeable = False
        return out

    @cached_property
    def fingerprint(self) -> int:
        """Stable FNV-1a digest of ``(master_seed, round_tag, t, m, d)``."""
        fields = (self.master_seed, self.round_tag, self.t, self.m, self.d)
        payload = b"".join(struct.pack("<Q", v & _MASK) for v in fields)
        return fnv1a64(payload)

    def _check(self, row: int, coord: int) -> None:
        if not 0 <= row < self.t:
            raise IndexError(f"row {row} out of range [0, {self.t})")
        if not 0 <= coord < self.d:
            raise IndexError(f"coord {coord} out of range [0, {self.d})")

    def hash_index(self, row: int, coord: int) -> int:
        self._check(row, coord)
        return int(self.buckets[row, coord])

    def hash_sign(self, row: int, coord: int) -> int:
        self._check(row, coord)
        return int(self.signs[row, coord])


def derive_family(master_seed: int, round: int, t: int, m: int, d: int) -> HashFamily:
    """Hash family for one protocol round; every party in that round derives the same one."""
    if round < 0:
        raise ParameterError(f"round must be nonnegative, got {round}")
    return HashFamily(int(master_seed), int(round), t, m, d)


def hash_index(f: HashFamily, row: int, coord: int) -> int:
    return f.hash_index(row, coord)


def hash_sign(f: HashFamily, row: int, coord: int) -> int:
    return f.hash_sign(row, coord)


@dataclass(frozen=True, eq=False)
class SketchTable:
    """A ``t x m`` count-sketch accumulator tagged with its family's fingerprint."""

    values: np.ndarray
    family_fingerprint: int

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionError(f"sketch values must be 2-D, got shape {values.shape}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def t(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def nbytes(self) -> int:
        return self.t * self.m * 8

    def __add__(self, other: "SketchTable") -> "SketchTable":
        return table_add(self, other)

    def __sub__(self, other: "SketchTable") -> "SketchTable":
        return table_sub(self, other)

    def __mul__(self, c: float) -> "SketchTable":
        return table_scale(self, c)

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, SketchTable):
            return NotImplemented
        return (
            self.family_fingerprint == other.family_fingerprint
            and self.values.shape == other.values.shape
            and bool(np.array_equal(self.values, other.values))
        )

    __hash__ = None


def zero_table(f: HashFamily) -> SketchTable:
    return SketchTable(np.zeros((f.t, f.m)), f.fingerprint)


def compress(x, f: HashFamily) -> SketchTable:
    """Count sketch of ``x``: ``values[j, b] = sum over h_j(i) = b of sign_j(i) * x[i]``.

    Each bucket is summed in ascending coordinate order.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (f.d,):
        raise DimensionError(f"expected vector of length {f.d}, got shape {x.shape}")
    # flat cell ids are row-major, so bincount visits each cell's terms in coord order
    cells = (f.buckets + (np.arange(f.t) * f.m)[:, None]).ravel()
    weights = (f.signs * x).ravel()
    values = np.bincount(cells, weights=weights, minlength=f.t * f.m).reshape(f.t, f.m)
    return SketchTable(values, f.fingerprint)


def _require_match(a: SketchTable, b: SketchTable) -> None:
    if a.family_fingerprint != b.family_fingerprint or a.values.shape != b.values.shape:
        raise IncompatibleSketchError(
            f"sketch fingerprints differ: {a.family_fingerprint:#x} vs {b.family_fingerprint:#x}"
        )


def _require_family(s: SketchTable, f: HashFamily) -> None:
    if s.family_fingerprint != f.fingerprint or s.values.shape != (f.t, f.m):
        raise IncompatibleSketchError(
            f"table fingerprint {s.family_fingerprint:#x} does not match family {f.fingerprint:#x}"
        )


def table_add(a: SketchTable, b: SketchTable) -> SketchTable:
    _require_match(a, b)
    return SketchTable(a.values + b.values, a.family_fingerprint)


def table_sub(a: SketchTable, b: SketchTable) -> SketchTable:
    _require_match(a, b)
    return SketchTable(a.values - b.values, a.family_fingerprint)


def table_scale(a: SketchTable, c: float) -> SketchTable:
    return SketchTable(a.values * float(c), a.family_fingerprint)


def table_mean(tables, weights=None) -> SketchTable:
    """Weighted average of compatible tables, accumulated in the order given."""
    tables = list(tables)
    if not tables:
        raise ParameterError("cannot average an empty list of tables")
    if weights is None:
        weights = [1.0] * len(tables)
    total = 0.0
    acc = np.zeros_like(tables[0].values)
    for table, w in zip(tables, weights):
        _require_match(tables[0], table)
        acc += w * table.values
        total += w
    return SketchTable(acc / total, tables[0].family_fingerprint)


def row_estimates(s: SketchTable, f: HashFamily) -> np.ndarray:
    """``t x d`` array of per-row signed bucket reads ``sign_j(i) * S[j, h_j(i)]``."""
    _require_family(s, f)
    return f.signs * np.take_along_axis(s.values, f.buckets, axis=1)


def point_query_all(s: SketchTable, f: HashFamily) -> np.ndarray:
    """Median-of-rows estimate for every coordinate.

    For even ``t`` the median is the mean of the two middle row reads.
    """
    return np.median(row_estimates(s, f), axis=0)


def point_query(s: SketchTable, f: HashFamily, coord: int) -> float:
    _require_family(s, f)
    if not 0 <= coord < f.d:
        raise IndexError(f"coord {coord} out of range [0, {f.d})")
    reads = f.signs[:, coord] * s.values[np.arange(f.t), f.buckets[:, coord]]
    return float(np.median(reads))


def l2_estimate(s: SketchTable) -> float:
    """Median over rows of the row's squared norm, an estimate of ``||x||^2``."""
    return float(np.median(np.sum(s.values**2, axis=1)))

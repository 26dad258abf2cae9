"""Decompressors that turn a count sketch back into a vector estimate.

``privix``   median point query of every coordinate; unbiased.
``heavymix`` keep ``heavy_budget`` coordinates that look heavy in the sketch,
             zero the rest; biased.
``heaprix``  heavymix plus privix of what heavymix left behind; unbiased with
             lower variance than privix alone.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import DimensionError, IncompatibleSketchError, MissingOracleError, ParameterError
from .sketch import (
    HashFamily,
    SketchTable,
    _require_family,
    _require_match,
    compress,
    derive_family,
    fnv1a64,
    l2_estimate,
    point_query_all,
    row_estimates,
    table_sub,
)

_FILL_TAG = fnv1a64(b"heavymix-fill")
_RESIDUAL_SALT = fnv1a64(b"heaprix-residual")
_SEED_MASK = (1 << 64) - 1


class Kind(str, enum.Enum):
    PRIVIX = "privix"
    HEAVYMIX = "heavymix"
    HEAPRIX = "heaprix"


class ValueMode(str, enum.Enum):
    ORACLE = "oracle"  # values on the kept support are read from the exact vector
    ESTIMATE = "estimate"  # values on the kept support are the sketch's point queries


class FillMode(str, enum.Enum):
    RANKED = "ranked"  # top up the heavy set with the largest remaining |estimate|
    RANDOM = "random"  # top up uniformly at random among non-heavy coordinates


@dataclass(frozen=True)
class CompressorSpec:
    kind: Kind
    m: int
    t: int
    heavy_budget: int = 1
    value_mode: ValueMode = ValueMode.ORACLE
    fill: FillMode = FillMode.RANKED

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "value_mode", ValueMode(self.value_mode))
        object.__setattr__(self, "fill", FillMode(self.fill))
        if self.m < 1 or self.t < 1:
            raise ParameterError(f"sketch needs m >= 1 and t >= 1, got m={self.m}, t={self.t}")
        if self.kind is not Kind.PRIVIX and self.heavy_budget < 1:
            raise ParameterError(f"heavy_budget must be >= 1, got {self.heavy_budget}")

    def check_dimension(self, d: int) -> None:
        if self.kind is not Kind.PRIVIX and self.heavy_budget > d:
            raise ParameterError(f"heavy_budget {self.heavy_budget} exceeds dimension {d}")


@dataclass(frozen=True, eq=False)
class EstimateVector:
    values: np.ndarray
    support: Optional[np.ndarray] = None

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def privix(s: SketchTable, f: HashFamily) -> EstimateVector:
    return EstimateVector(point_query_all(s, f))


def heavy_support(
    s: SketchTable,
    f: HashFamily,
    heavy_budget: int,
    fill: FillMode = FillMode.RANKED,
) -> tuple[np.ndarray, np.ndarray]:
    """Pick the kept coordinates; returns ``(support, point_queries)``.

    Heavy means ``g_hat[i]**2 >= l2_hat / heavy_budget``. An overfull heavy set is
    cut to the ``heavy_budget`` largest ``|g_hat|`` (ties to the lower index);
    an underfull one is topped up per ``fill``. The support is sorted.
    """
    if not 1 <= heavy_budget <= f.d:
        raise ParameterError(f"heavy_budget must be in [1, {f.d}], got {heavy_budget}")
    g_hat = point_query_all(s, f)
    threshold = l2_estimate(s) / heavy_budget
    magnitude = np.abs(g_hat)
    order = np.argsort(-magnitude, kind="stable")
    heavy = order[g_hat[order] ** 2 >= threshold]
    if heavy.size >= heavy_budget:
        chosen = heavy[:heavy_budget]
    else:
        need = heavy_budget - heavy.size
        light = order[heavy.size:]
        if FillMode(fill) is FillMode.RANKED:
            extra = light[:need]
        else:
            rng = np.random.default_rng([f.fingerprint, _FILL_TAG])
            extra = rng.choice(np.sort(light), size=need, replace=False)
        chosen = np.concatenate([heavy, extra])
    return np.sort(chosen), g_hat


def heavymix(
    s: SketchTable,
    f: HashFamily,
    heavy_budget: int,
    value_source=None,
    value_mode: Optional[ValueMode] = None,
    fill: FillMode = FillMode.RANKED,
) -> EstimateVector:
    """Sparse estimate supported on the sketch's apparent heavy hitters.

    ``value_mode`` defaults to ORACLE when ``value_source`` is given and to
    ESTIMATE otherwise.
    """
    if value_mode is None:
        value_mode = ValueMode.ESTIMATE if value_source is None else ValueMode.ORACLE
    value_mode = ValueMode(value_mode)
    if value_mode is ValueMode.ORACLE:
        if value_source is None:
            raise MissingOracleError("ORACLE value mode needs the exact vector")
        value_source = np.asarray(value_source, dtype=np.float64)
        if value_source.shape != (f.d,):
            raise DimensionError(f"value_source must have length {f.d}, got {value_source.shape}")
    support, g_hat = heavy_support(s, f, heavy_budget, fill)
    source = value_source if value_mode is ValueMode.ORACLE else g_hat
    out = np.zeros(f.d)
    out[support] = source[support]
    return EstimateVector(out, support)


def residual_family(f: HashFamily) -> HashFamily:
    """A family independent of ``f`` with the same geometry and round."""
    return HashFamily((f.master_seed + _RESIDUAL_SALT) & _SEED_MASK, f.round_tag, f.t, f.m, f.d)


def heaprix_device(
    x,
    f: HashFamily,
    heavy_budget: int,
    fill: FillMode = FillMode.RANKED,
    residual: Optional[HashFamily] = None,
) -> EstimateVector:
    """HEAVYMIX of ``x`` (exact values) plus PRIVIX of the sketched residual.

    By default the residual is sketched with ``f`` itself. The kept support then
    depends on the same hashes as the residual's errors, which leaves a small
    bias. Passing an independent ``residual`` family (see :func:`residual_family`)
    makes the estimate unbiased.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (f.d,):
        raise DimensionError(f"expected vector of length {f.d}, got shape {x.shape}")
    g = f if residual is None else residual
    if (g.t, g.m, g.d) != (f.t, f.m, f.d):
        raise IncompatibleSketchError("residual family must have the same geometry")
    heavy = heavymix(compress(x, f), f, heavy_budget, x, ValueMode.ORACLE, fill)
    rest = privix(compress(x - heavy.values, g), g)
    return EstimateVector(heavy.values + rest.values)


def heaprix_server(
    s: SketchTable,
    s_tilde: SketchTable,
    f: HashFamily,
    heavy_budget: int,
    fill: FillMode = FillMode.RANKED,
) -> EstimateVector:
    """Reconstruction from an averaged sketch ``s`` and the averaged heavy-part sketch ``s_tilde``.

    No party holds the averaged vector, so the heavy part uses ESTIMATE values.
    """
    _require_match(s, s_tilde)
    _require_family(s, f)
    heavy = heavymix(s, f, heavy_budget, None, ValueMode.ESTIMATE, fill)
    residual = privix(table_sub(s, s_tilde), f)
    return EstimateVector(heavy.values + residual.values)


class MedianReadout(NamedTuple):
    """Which rows the median of one table picked, per coordinate.

    Applying the readout to any table of the same family is linear in that
    table, and applying it to the table it came from gives its median decode.
    """

    lo: np.ndarray
    hi: np.ndarray

    def apply(self, s: SketchTable, f: HashFamily) -> np.ndarray:
        rows = row_estimates(s, f)
        cols = np.arange(f.d)
        return (rows[self.lo, cols] + rows[self.hi, cols]) * 0.5


def median_readout(s: SketchTable, f: HashFamily) -> MedianReadout:
    rows = row_estimates(s, f)
    order = np.argsort(rows, axis=0, kind="stable")
    return MedianReadout(order[(f.t - 1) // 2], order[f.t // 2])


def privix_share(s_own: SketchTable, s: SketchTable, f: HashFamily) -> EstimateVector:
    """One party's share of ``privix(s)`` when ``s`` averages the parties' tables.

    Reads ``s_own`` with the rows the median of ``s`` picked, so the weighted
    average of all shares equals ``privix(s)``.
    """
    _require_match(s_own, s)
    return EstimateVector(median_readout(s, f).apply(s_own, f))


def heaprix_share(
    s_own: SketchTable,
    s: SketchTable,
    s_tilde: SketchTable,
    f: HashFamily,
    heavy_budget: int,
    fill: FillMode = FillMode.RANKED,
) -> EstimateVector:
    """One party's share of ``heaprix_server(s, s_tilde)``; shares average to it.

    The party's heavy part is its own table read on the support chosen from
    ``s``; its residual is its table minus the sketch of that heavy part, read
    with the rows the median of ``s - s_tilde`` picked. For a lossless sketch
    the share is exactly the party's own vector.
    """
    _require_match(s_own, s)
    _require_match(s, s_tilde)
    support, _ = heavy_support(s, f, heavy_budget, fill)
    head = median_readout(s, f).apply(s_own, f)
    heavy = np.zeros(f.d)
    heavy[support] = head[support]
    residual = median_readout(table_sub(s, s_tilde), f).apply(table_sub(s_own, compress(heavy, f)), f)
    return EstimateVector(heavy + residual)


def heaprix_decode(s: SketchTable, f: HashFamily, heavy_budget: int, fill: FillMode = FillMode.RANKED) -> EstimateVector:
    """HEAPRIX reconstruction from a single table, with its own heavy part as ``s_tilde``."""
    heavy = heavymix(s, f, heavy_budget, None, ValueMode.ESTIMATE, fill)
    return heaprix_server(s, compress(heavy.values, f), f, heavy_budget, fill)


def apply_compressor(spec: CompressorSpec, x, f: HashFamily) -> np.ndarray:
    """Sketch ``x`` with ``f`` and decode it with ``spec.kind``."""
    x = np.asarray(x, dtype=np.float64)
    if spec.kind is Kind.PRIVIX:
        return privix(compress(x, f), f).values
    if spec.kind is Kind.HEAVYMIX:
        source = x if spec.value_mode is ValueMode.ORACLE else None
        return heavymix(compress(x, f), f, spec.heavy_budget, source, spec.value_mode, spec.fill).values
    return heaprix_device(x, f, spec.heavy_budget, spec.fill).values


def sample_errors(spec: CompressorSpec, x, trials: int, seed: int) -> np.ndarray:
    """``trials x d`` array of ``C(x) - x``, one fresh hash family per trial."""
    x = np.asarray(x, dtype=np.float64)
    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")
    spec.check_dimension(x.size)
    out = np.empty((trials, x.size))
    for trial in range(trials):
        family = derive_family(seed, trial, spec.t, spec.m, x.size)
        out[trial] = apply_compressor(spec, x, family) - x
    return out


class CompressorStats(NamedTuple):
    mean_error: np.ndarray
    mean_squared_error: float


def compressor_stats(spec: CompressorSpec, x, trials: int, seed: int = 0) -> CompressorStats:
    """Monte Carlo per-coordinate bias and ``E||C(x) - x||^2`` over fresh families."""
    errors = sample_errors(spec, x, trials, seed)
    return CompressorStats(errors.mean(axis=0), float(np.mean(np.sum(errors**2, axis=1))))

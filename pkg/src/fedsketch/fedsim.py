"""Single-process simulation of sketched federated optimization.

One round ``r`` of every algorithm here runs in two phases:

1. Devices decode the averaged sketch(es) left by round ``r - 1`` and step the
   global model, ``x <- x - gamma * Phi``. Round 0 has nothing to decode.
   FedSKETCHGATE devices also update their correction vectors at this point,
   ``c_j <- c_j - (Phi - Phi_j) / tau``, where ``Phi_j`` is device ``j``'s own
   decoded contribution (see :class:`Readout`).
2. Sampled devices run ``tau`` local SGD steps from the global model and upload
   a sketch of ``x_start - x_end``; the server averages the tables. The HEAPRIX
   variant adds a second exchange that averages sketches of the heavy part.

All devices and the server share one hash family per round, derived from
``(master_seed, r)``. Aggregation runs in ascending device order, so a run is a
pure function of its configuration and seed.
"""

from __future__ import annotations

import enum
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .compressors import (
    CompressorSpec,
    ValueMode,
    heaprix_decode,
    heaprix_server,
    heaprix_share,
    heavymix,
    privix,
    privix_share,
)
from .errors import ConfigError, DimensionError, ParameterError
from .problems import Partition, Problem, stochastic_grad
from .sketch import HashFamily, SketchTable, compress, derive_family, table_mean

_SEED_MASK = (1 << 64) - 1


class Algorithm(str, enum.Enum):
    FEDSKETCH = "fedsketch"
    FEDSKETCHGATE = "fedsketchgate"
    FEDSGD = "fedsgd"


class Variant(str, enum.Enum):
    PRIVIX = "privix"
    HEAPRIX = "heaprix"
    IDENTITY = "identity"  # pass-through, no sketching


class Readout(str, enum.Enum):
    """How a FedSKETCHGATE device decodes its own stored table into ``Phi_j``.

    SHARED reads ``S_j`` with the median rows (and heavy support) that the
    server's decode of the averaged ``S`` selected. That readout is linear, so
    the ``Phi_j`` average to ``Phi`` and the corrections keep summing to zero.
    OWN decodes ``S_j`` on its own. Median decoding is not linear, so the
    corrections then pick up a nonzero mean that never decays and biases
    every local step.
    """

    SHARED = "shared"
    OWN = "own"


@dataclass(frozen=True)
class FedConfig:
    p: int
    k: int
    R: int
    tau: int
    eta: float
    gamma: float = 1.0
    b: Optional[int] = None  # None: full local shard each step
    algorithm: Algorithm = Algorithm.FEDSKETCH
    variant: Variant = Variant.PRIVIX
    sketch: Optional[CompressorSpec] = None
    master_seed: int = 0
    uniform_sampling: bool = True  # False: sample device j with probability n_j / n
    readout: Readout = Readout.SHARED  # FedSKETCHGATE only

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "readout", Readout(self.readout))
        errors = []
        if self.p < 1:
            errors.append(f"fed.p must be >= 1, got {self.p}")
        if not 1 <= self.k <= max(self.p, 1):
            errors.append(f"fed.k must satisfy 1 <= k <= p={self.p}, got {self.k}")
        if self.algorithm is Algorithm.FEDSKETCHGATE and self.k != self.p:
            errors.append(f"fed.k must equal p={self.p} for fedsketchgate, got {self.k}")
        if self.R < 0:
            errors.append(f"fed.R must be >= 0, got {self.R}")
        if self.tau < 1:
            errors.append(f"fed.tau must be >= 1, got {self.tau}")
        if not self.eta > 0:
            errors.append(f"fed.eta must be > 0, got {self.eta}")
        if not self.gamma > 0:
            errors.append(f"fed.gamma must be > 0, got {self.gamma}")
        if self.b is not None and self.b < 1:
            errors.append(f"fed.b must be >= 1, got {self.b}")
        if self.sketched and self.sketch is None:
            errors.append(f"sketch settings are required for the {self.variant.value} variant")
        if self.variant is Variant.HEAPRIX and self.sketch is not None and self.sketch.heavy_budget < 1:
            errors.append("sketch.heavy_budget must be >= 1 for heaprix")
        if errors:
            raise ConfigError(errors)

    @property
    def effective_variant(self) -> Variant:
        return Variant.IDENTITY if self.algorithm is Algorithm.FEDSGD else self.variant

    @property
    def sketched(self) -> bool:
        return self.effective_variant is not Variant.IDENTITY

    @property
    def exchanges(self) -> int:
        return 2 if self.effective_variant is Variant.HEAPRIX else 1

    def message_bytes(self, d: int) -> int:
        """Bytes one device uploads (and downloads) per round."""
        if not self.sketched:
            return d * 8
        return self.exchanges * self.sketch.t * self.sketch.m * 8


@dataclass
class DeviceState:
    index: int
    shard: np.ndarray
    rng: np.random.Generator
    correction: np.ndarray
    stored_table: Optional[SketchTable] = None  # S_j of the previous round
    stored_delta: Optional[np.ndarray] = None  # delta_j of the previous round (identity only)


@dataclass
class RoundTrace:
    round: int
    model_norm: float
    loss: float
    grad_norm: float
    bytes_uplink: int
    bytes_downlink: int
    wall_time: float
    participants: int = 0
    accuracy: Optional[float] = None
    model: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class _Pending:
    family: Optional[HashFamily]
    table: Optional[SketchTable] = None
    heavy_table: Optional[SketchTable] = None
    vector: Optional[np.ndarray] = None


@dataclass
class SimState:
    model: np.ndarray
    devices: List[DeviceState]
    weights: np.ndarray
    server_rng: np.random.Generator
    round: int = 0
    pending: Optional[_Pending] = None
    keep_models: bool = False
    debug: bool = False


def _stream(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed & _SEED_MASK, spawn_key=key))


def init_state(
    config: FedConfig,
    problem: Problem,
    partition: Partition,
    x0=None,
    keep_models: bool = False,
    debug: bool = False,
) -> SimState:
    if partition.p != config.p:
        raise ConfigError(f"fed.p={config.p} but the partition has {partition.p} shards")
    if config.algorithm is Algorithm.FEDSKETCHGATE:
        sizes = {s.size for s in partition.shards}
        if len(sizes) != 1:
            raise ConfigError("fedsketchgate needs equally sized shards (q_j = 1/p)")
    if config.sketched:
        config.sketch.check_dimension(problem.d)
    model = np.zeros(problem.d) if x0 is None else np.array(x0, dtype=np.float64)
    if model.shape != (problem.d,):
        raise DimensionError(f"initial model must have length {problem.d}")
    devices = [
        DeviceState(j, shard, _stream(config.master_seed, 0, j), np.zeros(problem.d))
        for j, shard in enumerate(partition.shards)
    ]
    weights = np.full(config.p, 1.0 / config.p) if config.uniform_sampling else partition.weights
    return SimState(model, devices, weights, _stream(config.master_seed, 1), keep_models=keep_models, debug=debug)


def sample_devices(p: int, k: int, q, rng: np.random.Generator) -> np.ndarray:
    """``k`` independent draws from ``{0..p-1}`` with probabilities ``q`` (a multiset)."""
    q = np.asarray(q, dtype=np.float64)
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if q.shape != (p,) or np.any(q < 0) or not np.isclose(q.sum(), 1.0, rtol=0, atol=1e-9):
        raise ParameterError("q must be a length-p probability vector")
    return rng.choice(p, size=k, replace=True, p=q)


def local_sgd(model, device: DeviceState, problem: Problem, tau: int, eta: float, b: Optional[int], correction=None):
    """``tau`` steps of ``x <- x - eta (g - c)``; returns ``(x_final, x_start - x_final)``."""
    if tau < 1:
        raise ParameterError(f"tau must be >= 1, got {tau}")
    start = np.asarray(model, dtype=np.float64)
    x = start.copy()
    for _ in range(tau):
        g = stochastic_grad(problem, device.shard, x, b, device.rng, full_pass=b is None)
        if correction is not None:
            g = g - correction
        x = x - eta * g
    return x, start - x


def _decode(pending: _Pending, config: FedConfig) -> np.ndarray:
    variant = config.effective_variant
    if variant is Variant.IDENTITY:
        return pending.vector
    if variant is Variant.PRIVIX:
        return privix(pending.table, pending.family).values
    return heaprix_server(
        pending.table, pending.heavy_table, pending.family, config.sketch.heavy_budget, config.sketch.fill
    ).values


def _snapshot(state: SimState, problem: Problem, r: int, up: int, down: int, started: float, participants: int) -> RoundTrace:
    x = state.model
    return RoundTrace(
        round=r,
        model_norm=float(np.linalg.norm(x)),
        loss=problem.loss(x),
        grad_norm=float(np.linalg.norm(problem.full_grad(x))),
        bytes_uplink=up,
        bytes_downlink=down,
        wall_time=time.perf_counter() - started,
        participants=participants,
        accuracy=problem.accuracy(x),
        model=x.copy() if state.keep_models else None,
    )


def _own_estimate(dev: DeviceState, pending: _Pending, config: FedConfig) -> np.ndarray:
    variant = config.effective_variant
    if variant is Variant.IDENTITY:
        return dev.stored_delta
    f, s_j = pending.family, dev.stored_table
    hb, fill = config.sketch.heavy_budget, config.sketch.fill
    if config.readout is Readout.SHARED:
        if variant is Variant.PRIVIX:
            return privix_share(s_j, pending.table, f).values
        return heaprix_share(s_j, pending.table, pending.heavy_table, f, hb, fill).values
    if variant is Variant.PRIVIX:
        return privix(s_j, f).values
    return heaprix_decode(s_j, f, hb, fill).values


def _apply_pending(state: SimState, config: FedConfig, gate: bool) -> None:
    if state.pending is None:
        return
    phi = _decode(state.pending, config)
    if gate:
        for dev in state.devices:
            own = _own_estimate(dev, state.pending, config)
            dev.correction = dev.correction - (phi - own) / config.tau
    state.model = state.model - config.gamma * phi
    state.pending = None


def _round(state: SimState, config: FedConfig, problem: Problem, r: int, gate: bool):
    started = time.perf_counter()
    if r != state.round:
        raise ParameterError(f"expected round {state.round}, got {r}")
    if r >= config.R:
        raise ParameterError(f"round {r} is past R={config.R}")
    _apply_pending(state, config, gate)

    if gate:
        multiset = np.arange(config.p)
    else:
        multiset = sample_devices(config.p, config.k, state.weights, state.server_rng)
    counts = sorted(Counter(int(j) for j in multiset).items())
    variant = config.effective_variant
    family = None
    if config.sketched:
        family = derive_family(config.master_seed, r, config.sketch.t, config.sketch.m, problem.d)

    deltas, tables, mult = [], [], []
    for j, count in counts:
        dev = state.devices[j]
        _, delta = local_sgd(
            state.model, dev, problem, config.tau, config.eta, config.b, dev.correction if gate else None
        )
        deltas.append(delta)
        mult.append(float(count))
        if variant is Variant.IDENTITY:
            if gate:
                dev.stored_delta = delta
            continue
        table = compress(delta, family)
        tables.append(table)
        if gate:
            dev.stored_table = table

    if variant is Variant.IDENTITY:
        total = sum(mult)
        avg = np.zeros(problem.d)
        for w, delta in zip(mult, deltas):
            avg += w * delta
        state.pending = _Pending(None, vector=avg / total)
    else:
        avg_table = table_mean(tables, mult)
        if state.debug:
            mean_delta = sum(w * dl for w, dl in zip(mult, deltas)) / sum(mult)
            direct = compress(mean_delta, family).values
            if not np.allclose(avg_table.values, direct, rtol=1e-9, atol=1e-12):
                raise AssertionError(f"round {r}: averaged sketch differs from sketch of averaged delta")
        heavy_table = None
        if variant is Variant.HEAPRIX:
            heavy = heavymix(
                avg_table, family, config.sketch.heavy_budget, None, ValueMode.ESTIMATE, config.sketch.fill
            ).values
            # every participant sketches the same broadcast heavy part
            heavy_table = table_mean([compress(heavy, family) for _ in counts], mult)
        state.pending = _Pending(family, avg_table, heavy_table)

    per_device = config.message_bytes(problem.d)
    volume = per_device * len(counts)
    state.round += 1
    return state.model, _snapshot(state, problem, r, volume, volume, started, len(counts))


def fedsketch_round(state: SimState, config: FedConfig, problem: Problem, r: int):
    """One FedSKETCH (or FedSGD) round; returns ``(global model, trace)``.

    The trace describes the model the round's devices started from.
    """
    if config.algorithm is Algorithm.FEDSKETCHGATE:
        raise ConfigError("use fedsketchgate_round for fedsketchgate")
    return _round(state, config, problem, r, gate=False)


def fedsketchgate_round(state: SimState, config: FedConfig, problem: Problem, r: int):
    """One FedSKETCHGATE round: full participation plus gradient-tracking corrections."""
    if config.k != config.p:
        raise ConfigError(f"fed.k must equal p={config.p} for fedsketchgate, got {config.k}")
    return _round(state, config, problem, r, gate=True)


def finalize(state: SimState, config: FedConfig, problem: Problem) -> RoundTrace:
    """Apply the last round's pending update and describe the resulting model."""
    started = time.perf_counter()
    _apply_pending(state, config, gate=False)
    return _snapshot(state, problem, state.round, 0, 0, started, 0)


def run(
    config: FedConfig,
    problem: Problem,
    partition: Partition,
    x0=None,
    keep_models: bool = False,
    debug: bool = False,
) -> List[RoundTrace]:
    """Run ``config.R`` rounds; returns ``R + 1`` traces (rounds ``0..R``), or none if ``R = 0``.

    Trace ``r`` describes the global model ``x^(r)`` and the traffic of round
    ``r``; trace ``R`` is the final model after the last update.
    """
    state = init_state(config, problem, partition, x0, keep_models, debug)
    step = fedsketchgate_round if config.algorithm is Algorithm.FEDSKETCHGATE else fedsketch_round
    traces = []
    for r in range(config.R):
        _, trace = step(state, config, problem, r)
        traces.append(trace)
    if config.R:
        traces.append(finalize(state, config, problem))
    return traces

"""Finite-sum objectives split across devices.

The global objective is ``f(x) = sum_j q_j F_j(x)`` with ``q_j = n_j / n``.
Every problem here is a mean of per-sample losses over a fixed pool of samples,
so ``f`` is the mean over all samples and ``F_j`` the mean over device ``j``'s
shard. Shards are integer index arrays into that pool.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DimensionError, ParameterError


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    classes: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise DimensionError(f"X must be n x d and y length n, got {self.X.shape} and {self.y.shape}")
        if self.X.shape[0] == 0:
            raise ParameterError("empty dataset")
        if self.classes < 2:
            raise ParameterError(f"need at least 2 classes, got {self.classes}")
        if self.y.min() < 0 or self.y.max() >= self.classes:
            raise ParameterError(f"labels must lie in [0, {self.classes})")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def features(self) -> int:
        return self.X.shape[1]


@dataclass
class Partition:
    """Disjoint shards covering ``n`` samples, one per device."""

    shards: list
    n: int

    def __post_init__(self):
        self.shards = [np.asarray(s, dtype=np.int64) for s in self.shards]
        if not self.shards:
            raise ParameterError("partition needs at least one shard")
        if any(s.size == 0 for s in self.shards):
            raise ParameterError("every device needs at least one sample")
        merged = np.sort(np.concatenate(self.shards))
        if merged.size != self.n or not np.array_equal(merged, np.arange(self.n)):
            raise ParameterError("shards must be disjoint and cover every sample")

    @property
    def p(self) -> int:
        return len(self.shards)

    @property
    def weights(self) -> np.ndarray:
        sizes = np.array([s.size for s in self.shards], dtype=np.float64)
        return sizes / self.n


class Problem:
    """Base class: a mean of per-sample losses over ``n`` samples in ``R^d``.

    Subclasses implement :meth:`loss` and :meth:`batch_grad` for an index array
    that may contain repeats (a with-replacement mini-batch).
    """

    d: int
    n: int
    smoothness_L: Optional[float] = None
    pl_constant: Optional[float] = None
    optimum_value: Optional[float] = None

    def _indices(self, shard) -> np.ndarray:
        if shard is None:
            return np.arange(self.n)
        return np.asarray(shard, dtype=np.int64)

    def loss(self, x, shard=None) -> float:
        raise NotImplementedError

    def batch_grad(self, x, idx) -> np.ndarray:
        raise NotImplementedError

    def full_grad(self, x, shard=None) -> np.ndarray:
        return self.batch_grad(x, self._indices(shard))

    def sample_grads(self, x, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        return np.stack([self.batch_grad(x, idx[i : i + 1]) for i in range(idx.size)])

    def accuracy(self, x, shard=None) -> Optional[float]:
        return None


def _random_orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


class QuadraticProblem(Problem):
    """Device ``j`` sees ``F_j(x) = 1/2 (x - b_j)^T A_j (x - b_j)``.

    Sample ``s`` on device ``j`` has loss ``1/2 sum_i lam_i w_si z_i^2`` with
    ``z = Q_j^T (x - b_j)``; the weights ``w`` average to exactly one per device,
    so the shard mean is ``F_j``. Every per-sample gradient vanishes at ``b_j``.
    """

    def __init__(self, eigenvalues, bases, centers, weights, device_of):
        self.eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
        self.bases = list(bases)
        self.centers = np.asarray(centers, dtype=np.float64)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.device_of = np.asarray(device_of, dtype=np.int64)
        self.d = self.eigenvalues.size
        self.n = self.weights.shape[0]
        self.smoothness_L = float(self.eigenvalues.max())
        self.pl_constant = float(self.eigenvalues.min())
        counts = np.bincount(self.device_of, minlength=len(self.bases)).astype(np.float64)
        self._q = counts / self.n
        self.optimum = self._solve_optimum()
        self.optimum_value = self.loss(self.optimum)

    def hessian(self, device: int) -> np.ndarray:
        Q = self.bases[device]
        return (Q * self.eigenvalues) @ Q.T

    def _solve_optimum(self) -> np.ndarray:
        A = np.zeros((self.d, self.d))
        rhs = np.zeros(self.d)
        for j, q in enumerate(self._q):
            Aj = self.hessian(j)
            A += q * Aj
            rhs += q * (Aj @ self.centers[j])
        return np.linalg.solve(A, rhs)

    def _groups(self, idx):
        devices = self.device_of[idx]
        for j in np.unique(devices):
            yield j, idx[devices == j]

    def loss(self, x, shard=None) -> float:
        idx = self._indices(shard)
        x = np.asarray(x, dtype=np.float64)
        total = 0.0
        for j, members in self._groups(idx):
            z = self.bases[j].T @ (x - self.centers[j])
            wbar = self.weights[members].sum(axis=0)
            total += 0.5 * float(np.sum(self.eigenvalues * wbar * z * z))
        return total / idx.size

    def batch_grad(self, x, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        x = np.asarray(x, dtype=np.float64)
        g = np.zeros(self.d)
        for j, members in self._groups(idx):
            Q = self.bases[j]
            z = Q.T @ (x - self.centers[j])
            wsum = self.weights[members].sum(axis=0)
            g += Q @ (self.eigenvalues * wsum * z)
        return g / idx.size

    def sample_grads(self, x, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        out = np.empty((idx.size, self.d))
        devices = self.device_of[idx]
        for j in np.unique(devices):
            rows = np.flatnonzero(devices == j)
            Q = self.bases[j]
            z = Q.T @ (np.asarray(x, dtype=np.float64) - self.centers[j])
            out[rows] = (self.weights[idx[rows]] * (self.eigenvalues * z)) @ Q.T
        return out


def make_quadratic(
    d: int,
    n_per_device: int,
    p: int,
    cond: float,
    heterogeneity: float,
    seed: int = 0,
    center=None,
) -> tuple[QuadraticProblem, Partition]:
    """Synthetic strongly convex problem with Hessian spectra in ``[1, cond]``.

    ``heterogeneity = 0`` gives every device the same ``F_j`` (shared
    eigenbasis, shared center). Any positive value gives each device its own
    random eigenbasis and shifts centers to ``center + heterogeneity * offset_j``.
    """
    if cond < 1:
        raise ParameterError(f"cond must be >= 1, got {cond}")
    if heterogeneity < 0:
        raise ParameterError(f"heterogeneity must be >= 0, got {heterogeneity}")
    if d < 1 or p < 1 or n_per_device < 1:
        raise ParameterError("d, p and n_per_device must be positive")
    rng = np.random.default_rng(seed)
    eigenvalues = np.geomspace(1.0, cond, d) if d > 1 else np.array([1.0])
    base_center = rng.standard_normal(d) if center is None else np.asarray(center, dtype=np.float64)
    if base_center.shape != (d,):
        raise DimensionError(f"center must have length {d}")
    shared = _random_orthogonal(rng, d)
    bases, centers, weights = [], [], []
    for _ in range(p):
        if heterogeneity > 0:
            bases.append(_random_orthogonal(rng, d))
            centers.append(base_center + heterogeneity * rng.standard_normal(d))
        else:
            bases.append(shared)
            centers.append(base_center.copy())
        w = rng.uniform(0.5, 1.5, size=(n_per_device, d))
        weights.append(w / w.mean(axis=0))
    device_of = np.repeat(np.arange(p), n_per_device)
    problem = QuadraticProblem(eigenvalues, bases, np.stack(centers), np.concatenate(weights), device_of)
    shards = [np.arange(j * n_per_device, (j + 1) * n_per_device) for j in range(p)]
    return problem, Partition(shards, p * n_per_device)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class LogisticProblem(Problem):
    """Multinomial logistic regression with an L2 penalty ``reg/2 ||x||^2``.

    The model is a flattened ``features x classes`` weight matrix.
    """

    def __init__(self, dataset: Dataset, reg: float = 1e-4):
        self.dataset = dataset
        self.reg = float(reg)
        self.features = dataset.features
        self.classes = dataset.classes
        self.d = self.features * self.classes
        self.n = dataset.n
        gram_top = np.linalg.eigvalsh(dataset.X.T @ dataset.X / dataset.n)[-1]
        # softmax cross-entropy Hessian w.r.t. logits is bounded by I/2
        self.smoothness_L = 0.5 * float(gram_top) + self.reg
        self.pl_constant = self.reg

    def _weights(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.d,):
            raise DimensionError(f"expected model of length {self.d}, got {x.shape}")
        return x.reshape(self.features, self.classes)

    def loss(self, x, shard=None) -> float:
        W = self._weights(x)
        idx = self._indices(shard)
        logits = self.dataset.X[idx] @ W
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1))
        nll = log_norm - shifted[np.arange(idx.size), self.dataset.y[idx]]
        return float(nll.mean()) + 0.5 * self.reg * float(np.dot(x, x))

    def batch_grad(self, x, idx) -> np.ndarray:
        W = self._weights(x)
        idx = np.asarray(idx, dtype=np.int64)
        Xb = self.dataset.X[idx]
        P = _softmax(Xb @ W)
        P[np.arange(idx.size), self.dataset.y[idx]] -= 1.0
        G = Xb.T @ P / idx.size + self.reg * W
        return G.ravel()

    def sample_grads(self, x, idx) -> np.ndarray:
        W = self._weights(x)
        idx = np.asarray(idx, dtype=np.int64)
        Xb = self.dataset.X[idx]
        P = _softmax(Xb @ W)
        P[np.arange(idx.size), self.dataset.y[idx]] -= 1.0
        G = Xb[:, :, None] * P[:, None, :] + self.reg * W[None]
        return G.reshape(idx.size, self.d)

    def accuracy(self, x, shard=None) -> float:
        W = self._weights(x)
        idx = self._indices(shard)
        predicted = np.argmax(self.dataset.X[idx] @ W, axis=1)
        return float(np.mean(predicted == self.dataset.y[idx]))


def make_logistic(d: int, n: int, classes: int, seed: int = 0, separation: float = 6.0) -> Dataset:
    """Gaussian class-conditional features with unit noise and balanced labels.

    Class means are random directions of length ``separation``.
    """
    if n < 1:
        raise ParameterError("empty dataset: n must be >= 1")
    if classes < 2:
        raise ParameterError(f"need at least 2 classes, got {classes}")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((classes, d))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    y = rng.permutation(np.arange(n) % classes)
    X = means[y] + rng.standard_normal((n, d))
    return Dataset(X, y, classes)


def _sample_count(data: Union[Dataset, int]) -> int:
    return data if isinstance(data, (int, np.integer)) else data.n


def partition_homogeneous(data: Union[Dataset, int], p: int, seed: int = 0) -> Partition:
    """Uniformly random split into ``p`` shards of near-equal size."""
    n = _sample_count(data)
    if p < 1 or p > n:
        raise ParameterError(f"need 1 <= p <= n, got p={p}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return Partition([np.sort(s) for s in np.array_split(perm, p)], n)


def partition_heterogeneous(dataset: Dataset, p: int, classes_per_device: int, seed: int = 0) -> Partition:
    """Label-skewed split: device ``j`` only holds samples from at most ``classes_per_device`` labels.

    The ``p * classes_per_device`` slots are dealt labels round-robin, then
    shuffled; each label's samples are split evenly over the slots holding it.
    """
    n = dataset.n
    if p < 1 or p > n:
        raise ParameterError(f"need 1 <= p <= n, got p={p}, n={n}")
    if classes_per_device < 1:
        raise ParameterError(f"classes_per_device must be >= 1, got {classes_per_device}")
    slots = p * classes_per_device
    present = np.unique(dataset.y)
    if slots < present.size:
        raise ParameterError(
            f"{p} devices x {classes_per_device} classes cannot cover {present.size} labels"
        )
    rng = np.random.default_rng(seed)
    slot_labels = rng.permutation(present[np.arange(slots) % present.size])
    slot_members = [[] for _ in range(slots)]
    for label in present:
        holders = np.flatnonzero(slot_labels == label)
        members = rng.permutation(np.flatnonzero(dataset.y == label))
        for slot, chunk in zip(holders, np.array_split(members, holders.size)):
            slot_members[slot].append(chunk)
    shards = []
    for j in range(p):
        chunks = [c for s in range(j * classes_per_device, (j + 1) * classes_per_device) for c in slot_members[s]]
        shards.append(np.sort(np.concatenate(chunks)))
    return Partition(shards, n)


def stochastic_grad(problem: Problem, shard, model, b: Optional[int], rng: np.random.Generator, full_pass: bool = False) -> np.ndarray:
    """Mean gradient over a size-``b`` mini-batch drawn with replacement from ``shard``.

    ``full_pass=True`` (or ``b=None``) uses the whole shard, deterministically.
    """
    shard = np.asarray(shard, dtype=np.int64)
    if full_pass or b is None:
        return problem.full_grad(model, shard)
    if not 1 <= b <= shard.size:
        raise ParameterError(f"batch size {b} outside [1, {shard.size}]")
    picks = shard[rng.integers(0, shard.size, size=b)]
    return problem.batch_grad(model, picks)


def gradient_variance(problem: Problem, shard, model) -> float:
    """Per-sample variance ``mean_s ||grad_s - grad||^2`` over ``shard``; a batch of ``b`` has ``1/b`` of it."""
    grads = problem.sample_grads(model, np.asarray(shard, dtype=np.int64))
    return float(np.mean(np.sum((grads - grads.mean(axis=0)) ** 2, axis=1)))


def load_csv(path, classes: Optional[int] = None, label_column: int = -1) -> Dataset:
    """Read feature columns plus an integer label column; a header row is optional."""
    with open(path, newline="") as handle:
        rows = [row for row in csv.reader(handle) if row and any(cell.strip() for cell in row)]
    if not rows:
        raise ParameterError(f"{path}: no data rows")
    try:
        [float(cell) for cell in rows[0]]
    except ValueError:
        rows = rows[1:]
        if not rows:
            raise ParameterError(f"{path}: header but no data rows")
    width = len(rows[0])
    if width < 2:
        raise ParameterError(f"{path}: need at least one feature column and a label column")
    for lineno, row in enumerate(rows, start=1):
        if len(row) != width:
            raise DimensionError(f"{path}: data row {lineno} has {len(row)} columns, expected {width}")
    try:
        table = np.array([[float(cell) for cell in row] for row in rows])
    except ValueError as exc:
        raise ParameterError(f"{path}: non-numeric cell ({exc})") from None
    labels = table[:, label_column]
    if not np.all(labels == np.round(labels)) or labels.min() < 0:
        raise ParameterError(f"{path}: labels must be nonnegative integers")
    labels = labels.astype(np.int64)
    if classes is None:
        classes = max(2, int(labels.max()) + 1)
    elif labels.max() >= classes:
        raise ParameterError(f"{path}: label {labels.max()} out of range for {classes} classes")
    features = np.delete(table, label_column % width, axis=1)
    return Dataset(features, labels, classes)

"""Closed-form quantities from the convergence and privacy theory.

Order-of-magnitude constants are fixed at 1: sketch accuracy ``mu^2 = e / m``
and row count ``t = ceil(ln(d R / delta))``. Both can be overridden through
``TheoryParams.sketch_mu2`` and the ``constant`` argument of :func:`sketch_rows`.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Optional

from .errors import ParameterError


class Variant(str, enum.Enum):
    PRIVIX = "privix"
    HEAPRIX = "heaprix"


class Regime(str, enum.Enum):
    NONCONVEX = "nonconvex"
    PL = "pl"
    CONVEX = "convex"


def sketch_mu2(m: int) -> float:
    return math.e / m


def omega_for(variant: Variant, m: int, d: int, mu2: Optional[float] = None) -> float:
    """Compression variance factor: ``mu^2 d`` for PRIVIX, ``max(mu^2 d - 1, 0)`` for HEAPRIX."""
    if m < 1 or d < 1:
        raise ParameterError(f"need m >= 1 and d >= 1, got m={m}, d={d}")
    if m > d:
        warnings.warn(f"m={m} > d={d}: the sketch is larger than the vector it compresses", stacklevel=2)
    base = (sketch_mu2(m) if mu2 is None else mu2) * d
    if Variant(variant) is Variant.PRIVIX:
        return base
    return max(base - 1.0, 0.0)


def induced_delta(delta_biased: float, delta_unbiased: float) -> float:
    """Second-moment factor of ``C1(x) + C2(x - C1(x))`` for biased ``C1`` and unbiased ``C2``."""
    return delta_unbiased + (1.0 - delta_unbiased) / delta_biased


def stepsize_lhs(eta, gamma, tau, L, omega, k) -> float:
    return tau**2 * L**2 * eta**2 + (omega / k + 1.0) * eta * gamma * L * tau


def stepsize_ok(eta, gamma, tau, L, omega, k, rtol: float = 1e-12) -> bool:
    """True iff ``tau^2 L^2 eta^2 + (omega/k + 1) eta gamma L tau <= 1``.

    ``rtol`` absorbs rounding when ``eta`` sits exactly on the boundary.
    """
    return stepsize_lhs(eta, gamma, tau, L, omega, k) <= 1.0 + rtol


def max_stable_eta(gamma, tau, L, omega, k) -> float:
    """Largest ``eta`` with :func:`stepsize_ok`, the positive root of the quadratic condition."""
    b = (omega / k + 1.0) * gamma
    # rationalized root; the textbook form cancels badly when b is large
    return 2.0 / (L * tau * (b + math.sqrt(b * b + 4.0)))


@dataclass
class TheoryParams:
    L: float
    k: int
    tau: int
    omega: Optional[float] = None
    R: Optional[int] = None
    gamma: Optional[float] = None
    pl_constant: Optional[float] = None
    sigma2: Optional[float] = None
    d: Optional[int] = None
    m: Optional[int] = None
    t: Optional[int] = None
    p: Optional[int] = None
    eta: Optional[float] = None
    delta_fail: Optional[float] = None
    variant: Variant = Variant.PRIVIX
    sketch_mu2: Optional[float] = None

    @property
    def kappa(self) -> Optional[float]:
        if self.pl_constant is None:
            return None
        return self.L / self.pl_constant

    def resolved_omega(self) -> float:
        if self.omega is not None:
            return self.omega
        if self.m is None or self.d is None:
            raise ParameterError("TheoryParams needs omega, or both m and d to derive it")
        return omega_for(self.variant, self.m, self.d, self.sketch_mu2)


def recommended_lr(regime: Regime, params: TheoryParams) -> tuple[float, float]:
    """Local and global learning rates ``(eta, gamma)`` from the convergence-rate results.

    ``gamma`` defaults to ``k``. If that ``eta`` violates the step-size
    condition (possible for the nonconvex choice when ``R`` is small) it is
    clipped to :func:`max_stable_eta`, with a warning, since the rate only holds
    under that condition.
    """
    regime = Regime(regime)
    if params.L is None or params.L <= 0 or params.k < 1 or params.tau < 1:
        raise ParameterError("recommended_lr needs L > 0, k >= 1 and tau >= 1")
    omega = params.resolved_omega()
    gamma = float(params.k if params.gamma is None else params.gamma)
    a = omega / params.k + 1.0
    if regime is Regime.NONCONVEX:
        if params.R is None or params.R < 1:
            raise ParameterError("the nonconvex step size needs R >= 1")
        eta = math.sqrt(params.k / (params.R * params.tau * a)) / (params.L * gamma)
    else:
        eta = 1.0 / (2.0 * params.L * a * params.tau * gamma)
    if not stepsize_ok(eta, gamma, params.tau, params.L, omega, params.k):
        warnings.warn("rate-derived step size violates the stability condition; clipping", stacklevel=2)
        eta = max_stable_eta(gamma, params.tau, params.L, omega, params.k)
    return eta, gamma


def convex_regularizer(k: int, tau: int) -> float:
    """Weight ``phi`` of the ``phi/2 ||x||^2`` term that makes a convex objective ``phi``-PL."""
    return 1.0 / math.sqrt(k * tau)


def sketch_rows(d: float, R: int, delta_fail: float, constant: float = 1.0) -> int:
    """Rows needed for a failure probability ``delta_fail`` union-bounded over ``R`` rounds."""
    if d <= 0 or R <= 0 or delta_fail <= 0:
        raise ParameterError("sketch_rows needs positive d, R and delta_fail")
    return max(1, math.ceil(constant * math.log(d * R / delta_fail)))


def privacy_term(t, m, l, sigma, C, alpha) -> float:
    return alpha * C**2 * m * (m - 1) * (1.0 + math.log(l - m)) / (sigma**2 * (l - 2))


def privacy_epsilon(t: int, m: int, l: int, sigma: float, C: float, alpha: float) -> Optional[float]:
    """Differential-privacy level of a ``t x m`` count sketch of a length-``l`` input.

    Returns ``None`` when the side condition ``q <= 1/2 - 1/alpha`` fails.
    The bound assumes the sketched entries are i.i.d. ``N(0, sigma^2)`` and
    bounded by ``C`` with high probability; nothing here can check that.

    The factor ``m (m - 1) (1 + ln(l - m))`` grows with ``m`` only while the
    sketch is well shorter than the input (up to about ``m = 0.8 l``).

    Example:
        One row of two buckets over ``l = 1000`` entries, ``sigma = 10``,
        ``C = 1``, ``alpha = 4``:

        >>> round(privacy_epsilon(1, 2, 1000, 10.0, 1.0, 4.0), 13)
        0.0006335269969
    """
    if not (m >= 2 and l > m and l > 2):
        raise ParameterError(f"need l > m >= 2 and l > 2, got l={l}, m={m}")
    if t < 1 or sigma <= 0 or alpha <= 0 or C <= 0:
        raise ParameterError("need t >= 1 and positive sigma, C, alpha")
    q = privacy_term(t, m, l, sigma, C, alpha)
    if q > 0.5 - 1.0 / alpha:
        return None
    return t * math.log1p(q)

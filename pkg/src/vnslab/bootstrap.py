"""Exponent iteration for the decay bootstrap and a tabulated Gronwall lemma.

The iteration improves a pair ``(alpha_n, beta_n)``: ``alpha_n`` is the
energy decay exponent and ``beta_n`` the exponent gained by the weighted
dissipation.  After two seeding passes (``beta = 1/2`` then
``beta = 1 - eps``) the general step is

    alpha_{n+1} = (beta_n + 3/2)(1 + eps)/2
    beta_{n+1}  = (beta_n + 3/2)(1 - eps)/2

whose fixed points are ``alpha = 3/2`` and ``beta = (3/2)(1-eps)/(1+eps)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .diagnostics import ProbeReport


@dataclass(frozen=True)
class BootstrapSequence:
    eps: float
    alpha: np.ndarray  # alpha[0] is alpha_1
    beta: np.ndarray

    @property
    def n_max(self) -> int:
        return self.alpha.size

    @property
    def alpha_limit(self) -> float:
        return 1.5

    @property
    def beta_limit(self) -> float:
        return 1.5 * (1 - self.eps) / (1 + self.eps)


def iterate_exponents(eps: float, n_max: int = 200) -> BootstrapSequence:
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if n_max < 2:
        raise ValueError("n_max must be at least 2")
    alpha = np.empty(n_max)
    beta = np.empty(n_max)
    alpha[0], beta[0] = 1.0, 0.5
    alpha[1], beta[1] = 1.0 + eps, 1.0 - eps
    for n in range(1, n_max - 1):
        s = (beta[n] + 1.5) / 2
        alpha[n + 1] = s * (1 + eps)
        beta[n + 1] = s * (1 - eps)
    return BootstrapSequence(eps, alpha, beta)


def source_growth(alpha: float, beta: float) -> tuple[float, float]:
    """Time-growth exponents of the two source integrals in the energy estimate.

    The transport source grows like ``t^g7`` and the Brinkman source like
    ``t^g5`` (zero when bounded).
    """
    q = alpha - 2 * beta - 1.5
    g7 = q + 1 if (beta < 1 and q > -1) else 0.0
    g5 = max(0.0, 2 * alpha - beta - 1.5)
    return g7, g5


def decay_exponent_check(alpha: float, beta: float) -> float:
    """Energy exponent allowed by the sources: ``alpha - max(0, g7, g5)``."""
    g7, g5 = source_growth(alpha, beta)
    return alpha - max(0.0, g7, g5)


@dataclass(frozen=True)
class GronwallCase:
    """``y(t) + int_s^t gt2 y <= y(s) + int_s^t beta`` tabulated on ``t``."""

    t: np.ndarray
    gt2: np.ndarray
    beta: np.ndarray
    y0: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be strictly increasing with at least two nodes")
        if self.y0 < 0:
            raise ValueError("y0 must be nonnegative")
        for name in ("gt2", "beta"):
            if np.shape(getattr(self, name)) != t.shape:
                raise ValueError(f"{name} must be tabulated on the time grid")


def gronwall_bound(case: GronwallCase) -> np.ndarray:
    """``y0 e^{-G(t)} + e^{-G(t)} int_0^t e^{G} beta`` with ``G = int gt2``."""
    G = cumulative_trapezoid(case.gt2, case.t, initial=0.0)
    inner = cumulative_trapezoid(np.exp(G) * case.beta, case.t, initial=0.0)
    return np.exp(-G) * (case.y0 + inner)


def verify_gronwall(case: GronwallCase, y, rtol: float = 1e-8) -> ProbeReport:
    """Check the integral hypothesis on every pair ``s < t``, then the conclusion.

    The hypothesis on all pairs is equivalent to ``A(t) = y + int gt2 y - int beta``
    being nonincreasing.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != np.shape(case.t):
        raise ValueError("series must live on the case grid")
    integ_y = cumulative_trapezoid(case.gt2 * y, case.t, initial=0.0)
    integ_b = cumulative_trapezoid(case.beta, case.t, initial=0.0)
    A = y + integ_y - integ_b
    scale = max(float(np.abs(y).max()), float(np.abs(integ_y).max()),
                float(np.abs(integ_b).max()), 1e-300)
    # largest violation A(t) - A(s) over s < t
    running_min = np.minimum.accumulate(A)
    violation = float((A - running_min).max())
    hyp_ok = violation <= rtol * scale
    bound = gronwall_bound(case)
    excess = float((y - bound).max())
    bscale = max(float(np.abs(bound).max()), 1e-300)
    concl_ok = excess <= rtol * max(bscale, scale)
    return ProbeReport("gronwall", float(violation), float(rtol * scale), bool(hyp_ok and concl_ok),
                       rtol, f"hypothesis {'ok' if hyp_ok else 'violated'}; "
                             f"conclusion excess {excess:.3g}")

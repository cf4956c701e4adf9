"""Demonstration that the time-reversed heat problem is severely unstable.

The truncated sine-series solution on (0, pi) has L2 norm
sqrt((pi/2) * sum f_n^2 exp(2 n^2 T)), so any mode content at order n is
amplified by exp(n^2 T).  The demo is computation-only: norms and growth
ratios, no time stepping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ResolutionError

# exp argument beyond which a float64 overflows
_EXP_LIMIT = 700.0


@dataclass(frozen=True)
class FourierProfile:
    """Sine-series coefficients f_n, n = 1..N, of a profile on (0, pi)."""

    coefficients: np.ndarray
    N: int

    def __post_init__(self):
        object.__setattr__(self, "coefficients", np.asarray(self.coefficients, dtype=float))
        if self.N < 1 or len(self.coefficients) != self.N:
            raise ValueError(f"need N >= 1 coefficients, got N={self.N}")


def sine_coefficients(samples: np.ndarray, n_modes: int) -> FourierProfile:
    """f_n = (2/pi) * integral of f(x) sin(nx) dx by composite trapezoid.

    samples: values of f at x_k = k*pi/M, k = 0..M (uniform, endpoints
    included).  Requires at least 4*n_modes samples as an aliasing guard.
    """
    samples = np.asarray(samples, dtype=float)
    if n_modes < 1:
        raise ValueError(f"n_modes must be >= 1, got {n_modes}")
    if samples.size < 4 * n_modes:
        raise ResolutionError(
            f"{samples.size} samples insufficient for N={n_modes} (need >= {4 * n_modes})"
        )
    x = np.linspace(0.0, math.pi, samples.size)
    coeffs = np.empty(n_modes)
    for n in range(1, n_modes + 1):
        coeffs[n - 1] = (2.0 / math.pi) * np.trapezoid(samples * np.sin(n * x), x)
    return FourierProfile(coefficients=coeffs, N=n_modes)


def truncated_norm_at_T(profile: FourierProfile, T: float) -> float:
    """L2(0, pi) norm of the truncated series solution at time T.

    Returns +inf when the leading exponent 2 N^2 T would overflow float64,
    rather than a garbage value.
    """
    if T < 0:
        raise ValueError(f"T must be nonnegative, got {T}")
    if 2.0 * profile.N**2 * T > _EXP_LIMIT:
        return math.inf
    n = np.arange(1, profile.N + 1)
    total = np.sum(profile.coefficients**2 * np.exp(2.0 * n**2 * T))
    return math.sqrt(0.5 * math.pi * total)


def growth_table(profile: FourierProfile, times) -> list[dict]:
    """Norm and growth ratio ||u(T)|| / ||u(0)|| at each requested time."""
    base = truncated_norm_at_T(profile, 0.0)
    rows = []
    for T in times:
        norm = truncated_norm_at_T(profile, T)
        rows.append(
            {
                "N": profile.N,
                "T": T,
                "norm": norm,
                "growth_ratio": norm / base if base > 0 else math.inf,
            }
        )
    return rows

"""Quadratic fit/extrapolation of quotes and assembly of the forward problem.

The three past trading days (t = -2*tau, -tau, 0, with tau = 1/255 years)
determine quadratic polynomials for the option bid, option ask, and implied
volatility.  Evaluating those polynomials on (0, 2*tau] supplies boundary
data and the diffusion coefficient for the dimensionless forward problem on
(0,1) x (0, 2*tau).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InconsistentSeries, InvalidBoundary, RangeError
from .market import TAU, MarketSnapshot

SIGMA_FLOOR = 1e-4


@dataclass(frozen=True)
class Quadratic:
    """q(t) = c0 + c1*t + c2*t^2 with t in years."""

    c0: float
    c1: float
    c2: float

    def __call__(self, t: float) -> float:
        return self.c0 + t * (self.c1 + t * self.c2)


@dataclass(frozen=True)
class DimensionlessProblem:
    """Forward-in-time problem data on (0,1) x (0, 2*tau).

    The diffusion coefficient is sigma(t)^2 * A(x) with
    A(x) = (255/2) * [x*(s_a0 - s_b0) + s_b0]^2 / (s_a0 - s_b0)^2.
    Boundary data are the extrapolated option bid (x=0) and ask (x=1);
    the initial condition is linear between them at t=0.
    """

    option_id: str
    date: int
    s_b0: float
    s_a0: float
    strike: float
    sigma_fn: Quadratic
    ub_fn: Quadratic
    ua_fn: Quadratic
    tau: float = TAU

    def g(self, x: float) -> float:
        """Linear initial condition between the t=0 bid and ask."""
        ub0 = self.ub_fn(0.0)
        ua0 = self.ua_fn(0.0)
        return (ua0 - ub0) * x + ub0

    def coefficient(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        """sigma(t)^2 * A(x) on a meshgrid of x (axis 0) and t (axis 1)."""
        sig = np.array([max(self.sigma_fn(tj), SIGMA_FLOOR) for tj in np.atleast_1d(t)])
        a = a_coefficient_vec(np.atleast_1d(x), self.s_b0, self.s_a0)
        return np.outer(a, sig**2)


def fit_quadratic(values, tau: float = TAU) -> Quadratic:
    """Interpolating quadratic through samples at t = -2*tau, -tau, 0.

    The 3x3 Vandermonde system at distinct nodes is always solvable, and the
    closed form below is exact at the nodes up to rounding.
    """
    v_m2, v_m1, v_0 = (float(v) for v in values)
    if not all(np.isfinite([v_m2, v_m1, v_0])):
        raise DomainError("fit_quadratic requires finite samples")
    # Solve for q(t) = c0 + c1 t + c2 t^2 given q(0), q(-tau), q(-2tau).
    c0 = v_0
    c2 = (v_0 - 2.0 * v_m1 + v_m2) / (2.0 * tau * tau)
    c1 = (3.0 * v_0 - 4.0 * v_m1 + v_m2) / (2.0 * tau)
    return Quadratic(c0, c1, c2)


def extrapolate(q: Quadratic, t: float, tau: float = TAU) -> float:
    """Evaluate a fitted quadratic; valid only on [-2*tau, 2*tau]."""
    if t < -2.0 * tau - 1e-15 or t > 2.0 * tau + 1e-15:
        raise RangeError(f"t={t} outside [-2tau, 2tau] with tau={tau}")
    return q(t)


def a_coefficient(x: float, s_b0: float, s_a0: float) -> float:
    """Dimensionless diffusion profile (255/2)*[x(s_a-s_b)+s_b]^2/(s_a-s_b)^2."""
    if not 0 < s_b0 < s_a0:
        raise DomainError(f"require 0 < s_b0 < s_a0, got {s_b0}, {s_a0}")
    spread = s_a0 - s_b0
    return 127.5 * (x * spread + s_b0) ** 2 / spread**2


def a_coefficient_vec(x: np.ndarray, s_b0: float, s_a0: float) -> np.ndarray:
    if not 0 < s_b0 < s_a0:
        raise DomainError(f"require 0 < s_b0 < s_a0, got {s_b0}, {s_a0}")
    spread = s_a0 - s_b0
    return 127.5 * (x * spread + s_b0) ** 2 / spread**2


def assemble_problem(
    day_minus2: MarketSnapshot,
    day_minus1: MarketSnapshot,
    day0: MarketSnapshot,
    nt_check: int = 16,
) -> DimensionlessProblem:
    """Build the forward problem from three consecutive validated snapshots.

    nt_check: number of time intervals at which the extrapolated boundary
    data is checked for consistency (u_b < u_a and sigma > 0).  The solver
    only reads boundary values at grid nodes, so the check is nodal too.
    """
    days = (day_minus2, day_minus1, day0)
    ids = {s.option_id for s in days}
    if len(ids) != 1:
        raise InconsistentSeries(f"mixed option ids: {sorted(ids)}")
    if day_minus1.date != day_minus2.date + 1 or day0.date != day_minus1.date + 1:
        raise InconsistentSeries(
            f"non-consecutive days: {day_minus2.date}, {day_minus1.date}, {day0.date}"
        )

    ub_fn = fit_quadratic([s.u_b for s in days])
    ua_fn = fit_quadratic([s.u_a for s in days])
    sigma_fn = fit_quadratic([s.ivol for s in days])

    if not ub_fn(0.0) < ua_fn(0.0):
        raise InvalidBoundary(f"{day0.option_id}@{day0.date}: u_b(0) >= u_a(0)")
    for t in np.linspace(0.0, 2.0 * TAU, nt_check + 1):
        if ub_fn(t) >= ua_fn(t):
            raise InvalidBoundary(f"{day0.option_id}@{day0.date}: boundary crossed at t={t:.6g}")
        if sigma_fn(t) <= 0:
            raise InvalidBoundary(f"{day0.option_id}@{day0.date}: sigma <= 0 at t={t:.6g}")

    return DimensionlessProblem(
        option_id=day0.option_id,
        date=day0.date,
        s_b0=day0.s_b,
        s_a0=day0.s_a,
        strike=day0.strike,
        sigma_fn=sigma_fn,
        ub_fn=ub_fn,
        ua_fn=ua_fn,
    )

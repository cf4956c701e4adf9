"""Regularized forward-in-time solve of the parabolic problem.

The PDE residual R u = u_t + b(x,t) u_xx is discretized on a rectangular
grid over (0,1) x (0,T).  The objective is the squared residual plus
beta times a discrete H^2 norm of u, both with trapezoidal area weights.
Minimization runs over u = F + w, where F interpolates the boundary and
initial data exactly and w vanishes on the x=0, x=1, t=0 grid lines, so
the data constraints hold to machine precision by construction.  The
reduced normal equations are solved by preconditioned conjugate gradient.

Production problems use b = sigma(t)^2 * A(x) on horizon T = 2*tau; the
general-coefficient form is retained for manufactured-solution checks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, DomainError, NonFiniteValue
from .market import TAU
from .preprocess import DimensionlessProblem

log = logging.getLogger(__name__)

DEFAULT_BETA = 0.01
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 5000


@dataclass(frozen=True)
class Grid:
    """Uniform grid with nodes x_i = i*hx (i=0..nx), t_j = j*ht (j=0..nt)."""

    nx: int
    nt: int
    T: float

    def __post_init__(self):
        if self.nx < 4 or self.nt < 4:
            raise ConfigError(f"grid needs nx, nt >= 4, got {self.nx}, {self.nt}")
        if self.T <= 0:
            raise ConfigError(f"grid horizon must be positive, got {self.T}")

    @property
    def hx(self) -> float:
        return 1.0 / self.nx

    @property
    def ht(self) -> float:
        return self.T / self.nt

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nx + 1)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx + 1, self.nt + 1)


@dataclass
class GridFunction:
    """Node values of a function on a grid, indexed (i, j) = (x, t)."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ConfigError(
                f"grid function shape {self.values.shape} != grid shape {self.grid.shape}"
            )


@dataclass
class CoefficientField:
    """Samples b(x_i, t_j) of the diffusion coefficient, b >= b0 > 0."""

    b: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        if self.b.shape != self.grid.shape:
            raise ConfigError("coefficient shape does not match grid")
        if not np.all(np.isfinite(self.b)):
            raise NonFiniteValue("coefficient field contains non-finite values")
        if self.b.min() <= 0:
            raise DomainError(f"coefficient must be strictly positive, min={self.b.min():.3g}")

    @classmethod
    def constant(cls, value: float, grid: Grid) -> "CoefficientField":
        return cls(np.full(grid.shape, value), grid)

    @classmethod
    def from_problem(cls, problem: DimensionlessProblem, grid: Grid) -> "CoefficientField":
        return cls(problem.coefficient(grid.x, grid.t), grid)


@dataclass
class RegularizedSolution:
    """Minimizer of the regularized objective plus run diagnostics."""

    u: GridFunction
    beta: float
    j_value: float
    residual_norm: float
    cg_iterations: int
    est_tau: float
    est_2tau: float
    converged: bool
    j_history: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Discrete operators.  Grid values flatten row-major: index = i*(nt+1) + j.
# ---------------------------------------------------------------------------

def _d1(n: int, h: float) -> sp.csr_matrix:
    """First derivative: central inside, one-sided at both ends."""
    d = sp.lil_matrix((n + 1, n + 1))
    for i in range(1, n):
        d[i, i - 1] = -0.5 / h
        d[i, i + 1] = 0.5 / h
    d[0, 0], d[0, 1] = -1.0 / h, 1.0 / h
    d[n, n - 1], d[n, n] = -1.0 / h, 1.0 / h
    return d.tocsr()


def _d2(n: int, h: float, interior_only: bool = False) -> sp.csr_matrix:
    """Second derivative: central inside; ends reuse the adjacent stencil.

    With interior_only the boundary rows are zero (used by the residual,
    which is only accumulated at interior x nodes).
    """
    d = sp.lil_matrix((n + 1, n + 1))
    c = 1.0 / (h * h)
    for i in range(1, n):
        d[i, i - 1], d[i, i], d[i, i + 1] = c, -2.0 * c, c
    if not interior_only:
        d[0, 0], d[0, 1], d[0, 2] = c, -2.0 * c, c
        d[n, n - 2], d[n, n - 1], d[n, n] = c, -2.0 * c, c
    return d.tocsr()


def _dt_forward(n: int, h: float) -> sp.csr_matrix:
    """Forward time difference, one-sided (backward) at the last row."""
    d = sp.lil_matrix((n + 1, n + 1))
    for j in range(n):
        d[j, j], d[j, j + 1] = -1.0 / h, 1.0 / h
    d[n, n - 1], d[n, n] = -1.0 / h, 1.0 / h
    return d.tocsr()


def _trapezoid_weights(grid: Grid) -> np.ndarray:
    """Flattened 2-D trapezoidal quadrature weights (area elements)."""
    wx = np.full(grid.nx + 1, grid.hx)
    wx[0] = wx[-1] = 0.5 * grid.hx
    wt = np.full(grid.nt + 1, grid.ht)
    wt[0] = wt[-1] = 0.5 * grid.ht
    return np.outer(wx, wt).ravel()


class _GridOperators:
    """Grid-dependent sparse structure, cached so repeated production solves
    on the same grid only pay for the coefficient-dependent parts."""

    def __init__(self, grid: Grid):
        self.grid = grid
        ix = sp.identity(grid.nx + 1, format="csr")
        it = sp.identity(grid.nt + 1, format="csr")
        mask = np.ones(grid.nx + 1)
        mask[0] = mask[-1] = 0.0
        interior = sp.diags(np.outer(mask, np.ones(grid.nt + 1)).ravel())
        self.ut_part = (interior @ sp.kron(ix, _dt_forward(grid.nt, grid.ht))).tocsr()
        self.uxx_part = (interior @ sp.kron(_d2(grid.nx, grid.hx, interior_only=True), it)).tocsr()
        self.smats = _sobolev_matrices(grid)
        self.qw = _trapezoid_weights(grid)
        q = sp.diags(self.qw)
        n = (grid.nx + 1) * (grid.nt + 1)
        self.penalty = sum((s.T @ q @ s for s in self.smats), sp.csr_matrix((n, n))).tocsr()

    def residual_matrix(self, b: np.ndarray) -> sp.csr_matrix:
        return (self.ut_part + sp.diags(b.ravel()) @ self.uxx_part).tocsr()


_GRID_OP_CACHE: dict[Grid, _GridOperators] = {}


def _grid_operators(grid: Grid) -> _GridOperators:
    ops = _GRID_OP_CACHE.get(grid)
    if ops is None:
        if len(_GRID_OP_CACHE) > 16:
            _GRID_OP_CACHE.clear()
        ops = _GRID_OP_CACHE[grid] = _GridOperators(grid)
    return ops


def _residual_matrix(coeff: CoefficientField) -> sp.csr_matrix:
    """Sparse matrix of the discrete residual R_h u = u_t + b u_xx.

    Rows at x-boundary nodes are zero: the x-second-difference stencil does
    not fit there and the residual is accumulated over interior-x nodes.
    """
    return _grid_operators(coeff.grid).residual_matrix(coeff.b)


def _sobolev_matrices(grid: Grid) -> list[sp.csr_matrix]:
    """Operators whose weighted squared sums form the discrete H^2 norm:
    u, u_x, u_t, u_xx, u_xt, u_tt."""
    ix = sp.identity(grid.nx + 1, format="csr")
    it = sp.identity(grid.nt + 1, format="csr")
    dx1 = _d1(grid.nx, grid.hx)
    dt1 = _d1(grid.nt, grid.ht)
    dx2 = _d2(grid.nx, grid.hx)
    dt2 = _d2(grid.nt, grid.ht)
    n = (grid.nx + 1) * (grid.nt + 1)
    return [
        sp.identity(n, format="csr"),
        sp.kron(dx1, it, format="csr"),
        sp.kron(ix, dt1, format="csr"),
        sp.kron(dx2, it, format="csr"),
        sp.kron(dx1, dt1, format="csr"),
        sp.kron(ix, dt2, format="csr"),
    ]


class Objective:
    """Quadratic objective J(u) = |R_h u|_Q^2 + beta * |u|_{H^2,Q}^2.

    Values are computed in sum-of-squares form (quadrature weights times
    squared stencil outputs), which is far better conditioned than the
    bilinear form u'Hu when the coefficient b is large.
    """

    def __init__(self, coeff: CoefficientField, beta: float):
        if not 0 < beta < 1:
            raise ConfigError(f"beta must lie in (0,1), got {beta}")
        self.grid = coeff.grid
        self.beta = beta
        ops = _grid_operators(self.grid)
        self.qw = ops.qw
        self.smats = ops.smats
        self.rmat = ops.residual_matrix(coeff.b)
        self._residual_h = (self.rmat.T @ sp.diags(self.qw) @ self.rmat).tocsr()
        self.h = (self._residual_h + beta * ops.penalty).tocsr()
        self.h = ((self.h + self.h.T) * 0.5).tocsr()

    def value(self, u: np.ndarray) -> float:
        v = u.ravel()
        total = self._weighted_sq(self.rmat @ v)
        for s in self.smats:
            total += self.beta * self._weighted_sq(s @ v)
        return total

    def _weighted_sq(self, vec: np.ndarray) -> float:
        return float(np.dot(self.qw, vec * vec))

    def gradient(self, u: np.ndarray) -> np.ndarray:
        """Gradient of J with respect to every node value (raw, unconstrained)."""
        return 2.0 * (self.h @ u.ravel()).reshape(self.grid.shape)

    def residual_sq(self, u: np.ndarray) -> float:
        return self._weighted_sq(self.rmat @ u.ravel())


def residual_operator(u: GridFunction, coeff: CoefficientField) -> GridFunction:
    """Discrete residual R_h u on the grid (zero on x-boundary rows)."""
    r = _residual_matrix(coeff) @ u.values.ravel()
    return GridFunction(r.reshape(u.grid.shape), u.grid)


def functional_value(u: GridFunction, coeff: CoefficientField, beta: float) -> float:
    """Raw objective value at u (no constraint handling)."""
    return Objective(coeff, beta).value(u.values)


def functional_gradient(u: GridFunction, coeff: CoefficientField, beta: float) -> np.ndarray:
    """Analytic gradient of the raw objective; oracle-checked in tests."""
    return Objective(coeff, beta).gradient(u.values)


def lift_from_data(psi0: np.ndarray, psi1: np.ndarray, z: np.ndarray, grid: Grid) -> GridFunction:
    """Feasible extension interpolating the boundary and initial data.

    F(x,t) = psi0(t)(1-x) + psi1(t)x + [z(x) - psi0(0)(1-x) - psi1(0)x].
    Requires corner compatibility z(0)=psi0(0), z(1)=psi1(0); for linear z
    this reduces to F = x*(psi1 - psi0) + psi0.
    """
    x = grid.x
    lin = np.outer(1.0 - x, psi0) + np.outer(x, psi1)
    bubble = z - ((1.0 - x) * psi0[0] + x * psi1[0])
    return GridFunction(lin + bubble[:, None], grid)


def feasible_lift(problem: DimensionlessProblem, grid: Grid) -> GridFunction:
    """Feasible extension F(x,t) = x(u_a(t) - u_b(t)) + u_b(t) on the grid."""
    psi0 = np.array([problem.ub_fn(tj) for tj in grid.t])
    psi1 = np.array([problem.ua_fn(tj) for tj in grid.t])
    z = np.array([problem.g(xi) for xi in grid.x])
    return lift_from_data(psi0, psi1, z, grid)


def _free_mask(grid: Grid) -> np.ndarray:
    """Boolean mask of unconstrained nodes: interior x, t > 0."""
    m = np.zeros(grid.shape, dtype=bool)
    m[1:-1, 1:] = True
    return m.ravel()


def minimize(
    coeff: CoefficientField,
    psi0: np.ndarray,
    psi1: np.ndarray,
    z: np.ndarray,
    grid: Grid,
    beta: float = DEFAULT_BETA,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> RegularizedSolution:
    """Minimize the regularized objective over u = F + w by conjugate gradient.

    w vanishes on the x=0, x=1 and t=0 grid lines, so every iterate matches
    the boundary/initial data exactly.  CG runs on the reduced normal
    equations with an incomplete-LU preconditioner (Jacobi fallback) and
    stops when the relative gradient norm drops below tol.
    """
    psi0 = np.asarray(psi0, dtype=float)
    psi1 = np.asarray(psi1, dtype=float)
    z = np.asarray(z, dtype=float)
    if not (np.all(np.isfinite(psi0)) and np.all(np.isfinite(psi1)) and np.all(np.isfinite(z))):
        raise NonFiniteValue("boundary/initial data contains non-finite values")

    obj = Objective(coeff, beta)
    f = lift_from_data(psi0, psi1, z, grid).values.ravel()
    free = _free_mask(grid)
    a = obj.h[free][:, free].tocsc()

    # Residual and Sobolev stencil outputs of the lift, computed once; all
    # later evaluations add small-increment terms to these, which avoids the
    # catastrophic cancellation of forming u'Hu at production coefficients.
    qw = obj.qw
    r_f = obj.rmat @ f
    s_f = [s @ f for s in obj.smats]
    b = -(obj.rmat.T @ (qw * r_f) + beta * sum(s.T @ (qw * sfk) for s, sfk in zip(obj.smats, s_f)))[free]

    n_full = f.size

    def j_at(w_free: np.ndarray) -> tuple[float, float]:
        """Objective and residual-part value at u = F + P w."""
        uw = np.zeros(n_full)
        uw[free] = w_free
        r_tot = r_f + obj.rmat @ uw
        res_sq = float(np.dot(qw, r_tot * r_tot))
        total = res_sq
        for s, sfk in zip(obj.smats, s_f):
            s_tot = sfk + s @ uw
            total += beta * float(np.dot(qw, s_tot * s_tot))
        return total, res_sq

    precond = _make_preconditioner(a)

    # Preconditioned CG on the reduced normal equations A w = b.
    w = np.zeros(a.shape[0])
    r = b.copy()
    zv = precond(r)
    p = zv.copy()
    rz = float(r @ zv)
    b_norm = float(np.linalg.norm(b))
    j0, res_sq = j_at(w)
    j_history = [j0]
    converged = b_norm == 0.0
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if converged:
            iterations -= 1
            break
        ap = a @ p
        pap = float(p @ ap)
        if pap <= 0 or not np.isfinite(pap):
            raise NonFiniteValue("conjugate gradient lost positive definiteness")
        alpha = rz / pap
        w += alpha * p
        r -= alpha * ap
        j_val, res_sq = j_at(w)
        if not np.isfinite(j_val):
            raise NonFiniteValue("objective became non-finite during CG")
        if j_val > j_history[-1]:
            # Finite-precision stall: keep the previous (better) iterate.
            w -= alpha * p
            j_val, res_sq = j_at(w)
            j_history.append(j_val)
            converged = True
            break
        j_history.append(j_val)
        if np.linalg.norm(r) <= tol * b_norm:
            converged = True
            break
        zv = precond(r)
        rz_new = float(r @ zv)
        p = zv + (rz_new / rz) * p
        rz = rz_new
    else:
        log.warning("CG hit max_iter=%d (rel grad %.3g)", max_iter, np.linalg.norm(r) / b_norm)

    u_full = f.copy()
    u_full[free] += w
    u = GridFunction(u_full.reshape(grid.shape), grid)
    est_tau, est_2tau = extract_estimates_from_values(u, grid.T / 2.0)
    return RegularizedSolution(
        u=u,
        beta=beta,
        j_value=j_history[-1],
        residual_norm=float(np.sqrt(max(res_sq, 0.0))),
        cg_iterations=iterations,
        est_tau=est_tau,
        est_2tau=est_2tau,
        converged=converged,
        j_history=j_history,
    )


def _make_preconditioner(a: sp.csc_matrix):
    """Complete-LU preconditioner (grids are small); Jacobi fallback."""
    try:
        lu = spla.splu(a)
        return lu.solve
    except RuntimeError:  # pragma: no cover - singular pivot
        inv_diag = 1.0 / a.diagonal()
        return lambda r: inv_diag * r


def solve_problem(
    problem: DimensionlessProblem,
    grid: Grid | None = None,
    beta: float = DEFAULT_BETA,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> RegularizedSolution:
    """Solve the production forward problem on horizon T = 2*tau."""
    if grid is None:
        grid = Grid(nx=32, nt=16, T=2.0 * problem.tau)
    coeff = CoefficientField.from_problem(problem, grid)
    psi0 = np.array([problem.ub_fn(tj) for tj in grid.t])
    psi1 = np.array([problem.ua_fn(tj) for tj in grid.t])
    z = np.array([problem.g(xi) for xi in grid.x])
    return minimize(coeff, psi0, psi1, z, grid, beta=beta, tol=tol, max_iter=max_iter)


def _interp_at(u: GridFunction, x: float, t: float) -> float:
    """Bilinear interpolation; degenerates to a node read on grid lines."""
    g = u.grid
    fx = x / g.hx
    ft = t / g.ht
    i = min(int(np.floor(fx)), g.nx - 1)
    j = min(int(np.floor(ft)), g.nt - 1)
    ax = fx - i
    at = ft - j
    v = u.values
    return float(
        (1 - ax) * (1 - at) * v[i, j]
        + ax * (1 - at) * v[i + 1, j]
        + (1 - ax) * at * v[i, j + 1]
        + ax * at * v[i + 1, j + 1]
    )


def extract_estimates_from_values(u: GridFunction, tau: float) -> tuple[float, float]:
    return _interp_at(u, 0.5, tau), _interp_at(u, 0.5, 2.0 * tau)


def extract_estimates(sol: RegularizedSolution, tau: float = TAU) -> tuple[float, float]:
    """Forecasts u(1/2, tau) and u(1/2, 2*tau) from the minimizer."""
    return extract_estimates_from_values(sol.u, tau)


# ---------------------------------------------------------------------------
# Manufactured-solution and convergence experiments.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManufacturedCase:
    """Closed-form exact solution v(x,t) = e^{pi^2 t} sin(pi x) of
    v_t + v_xx = 0 with homogeneous Dirichlet data."""

    T: float = 0.1

    def exact(self, grid: Grid) -> np.ndarray:
        x = grid.x[:, None]
        t = grid.t[None, :]
        return np.exp(np.pi**2 * t) * np.sin(np.pi * x)

    def boundary(self, grid: Grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        psi0 = np.zeros(grid.nt + 1)
        psi1 = np.zeros(grid.nt + 1)
        z = np.sin(np.pi * grid.x)
        return psi0, psi1, z


def relative_l2_error(u: np.ndarray, ref: np.ndarray, grid: Grid, t_max: float | None = None) -> float:
    """Trapezoid-weighted relative L2 distance, optionally restricted to t <= t_max."""
    w = _trapezoid_weights(grid).reshape(grid.shape)
    if t_max is not None:
        keep = grid.t <= t_max + 1e-12
        w = w[:, keep]
        u = u[:, keep]
        ref = ref[:, keep]
    num = np.sqrt(np.sum(w * (u - ref) ** 2))
    den = np.sqrt(np.sum(w * ref**2))
    return float(num / den)


def run_manufactured(grid: Grid | None = None, beta: float = 1e-6) -> tuple[RegularizedSolution, float]:
    """Solve the manufactured case and return (solution, relative L2 error)."""
    case = ManufacturedCase()
    if grid is None:
        grid = Grid(nx=64, nt=64, T=case.T)
    coeff = CoefficientField.constant(1.0, grid)
    psi0, psi1, z = case.boundary(grid)
    sol = minimize(coeff, psi0, psi1, z, grid, beta=beta)
    err = relative_l2_error(sol.u.values, case.exact(grid), grid)
    return sol, err


def convergence_experiment(
    noise_levels,
    grid: Grid | None = None,
    seed: int = 20240801,
) -> list[dict]:
    """Noise-vs-error study with the regularization schedule beta = nu^2.

    Boundary data is perturbed by independent uniform[-nu, nu] noise at the
    time nodes (t=0 left unperturbed to preserve the corner compatibility
    with the initial condition).  Errors are measured on t <= T - T/4.

    The default grid refines time twice as much as space: the forward time
    difference is first-order, and on a square grid its truncation error
    floor hides the noise response below nu ~ 1e-2.
    """
    case = ManufacturedCase()
    if grid is None:
        grid = Grid(nx=64, nt=128, T=case.T)
    coeff = CoefficientField.constant(1.0, grid)
    psi0, psi1, z = case.boundary(grid)
    exact = case.exact(grid)
    t_max = grid.T - grid.T / 4.0

    rows = []
    for nu in noise_levels:
        if nu < 0 or nu >= 1:
            raise ConfigError(f"noise level must lie in [0, 1), got {nu}")
        rng = np.random.default_rng([seed, int(round(nu * 1e9))])
        d0 = rng.uniform(-nu, nu, grid.nt + 1)
        d1 = rng.uniform(-nu, nu, grid.nt + 1)
        d0[0] = d1[0] = 0.0
        beta = nu * nu if nu > 0 else 1e-6
        sol = minimize(coeff, psi0 + d0, psi1 + d1, z, grid, beta=beta)
        err = relative_l2_error(sol.u.values, exact, grid, t_max=t_max)
        rows.append(
            {"nu": nu, "beta": beta, "error": err, "cg_iterations": sol.cg_iterations}
        )
    return rows

"""Full-order PDE solvers on the unit square and the parameter-to-state map.

Four benchmark problems share the grid conventions of :mod:`opinv.grf`:

* Darcy flow: ``-div(exp(m) grad u) = f`` with zero Dirichlet walls and a
  piecewise-constant source banded in the y coordinate.
* Heat with unknown source location: ``u_t - lap u = f(x; chi, t)`` with zero
  Neumann walls, zero initial state, and a Gaussian bump source switched off
  after a cutoff time; the state is kept at two snapshot times.
* Heat with unknown source field: ``u_t - lap u = exp(-t) m(x)`` with zero
  Dirichlet walls, fixed oscillatory initial state; state kept at t=1.
* Reaction-diffusion transport of an unknown initial state by a fixed
  divergence-free velocity, zero-flux walls, Crank-Nicolson in time.

Diffusion under Neumann walls and the advection term both use node-centered
finite-volume stencils (half cells at the walls) whose weighted column sums
vanish, so the trapezoid-rule mass ``w.T u`` is conserved exactly by the time
steppers up to linear-solver roundoff.
"""

from __future__ import annotations

import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from opinv.grf import Field, Grid2D, KLBasis, sample_field


class SolverError(RuntimeError):
    """A linear solve failed or produced an untrustworthy solution."""


# ---------------------------------------------------------------------------
# discrete operators


def _interior_index(grid: Grid2D):
    """Flat index (into all nodes) of the interior nodes, x-major."""
    ii, jj = np.meshgrid(np.arange(1, grid.nx - 1), np.arange(1, grid.ny - 1),
                         indexing="ij")
    return (ii * grid.ny + jj).ravel()


def dirichlet_laplacian(grid: Grid2D) -> sp.csr_matrix:
    """5-point Laplacian on interior nodes; boundary values are pinned to 0."""
    nx, ny = grid.nx - 2, grid.ny - 2
    ex, ey = np.ones(nx), np.ones(ny)
    d2x = sp.diags([ex[:-1], -2 * ex, ex[:-1]], [-1, 0, 1]) / grid.hx**2
    d2y = sp.diags([ey[:-1], -2 * ey, ey[:-1]], [-1, 0, 1]) / grid.hy**2
    return (sp.kron(d2x, sp.eye(ny)) + sp.kron(sp.eye(nx), d2y)).tocsr()


def _stiffness_1d(n: int, h: float) -> sp.csr_matrix:
    """Symmetric FV stiffness for zero-flux walls: unit conductance faces."""
    main = np.full(n, 2.0 / h)
    main[0] = main[-1] = 1.0 / h
    off = np.full(n - 1, -1.0 / h)
    return sp.diags([off, main, off], [-1, 0, 1]).tocsr()


def _weights_1d(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    return w


def neumann_laplacian(grid: Grid2D) -> sp.csr_matrix:
    """Node-centered FV Laplacian with zero-flux walls, acting on all nodes.

    Equals the ghost-point 5-point stencil; with D = diag(trapezoid weights)
    it is -D^{-1} K for a symmetric stiffness K, so w.T lap = 0 exactly.
    """
    Kx = _stiffness_1d(grid.nx, grid.hx)
    Ky = _stiffness_1d(grid.ny, grid.hy)
    Dx = sp.diags(_weights_1d(grid.nx, grid.hx))
    Dy = sp.diags(_weights_1d(grid.ny, grid.hy))
    K = sp.kron(Kx, Dy) + sp.kron(Dx, Ky)
    winv = 1.0 / grid.trapezoid_weights()
    return (-sp.diags(winv) @ K).tocsr()


def advection_operator(grid: Grid2D, v1: np.ndarray, v2: np.ndarray) -> sp.csr_matrix:
    """Conservative central discretization of u -> div(v u) on all nodes.

    Face fluxes average the two adjacent nodal flux densities; wall-normal
    fluxes are dropped, which is exact when v is tangential at the walls.
    Weighted column sums vanish, so w.T A = 0 exactly.
    """
    nx, ny = grid.nx, grid.ny
    wx, wy = _weights_1d(nx, grid.hx), _weights_1d(ny, grid.hy)
    rows, cols, vals = [], [], []

    def idx(i, j):
        return i * ny + j

    # x-faces between (i, j) and (i+1, j); face length wy_j
    for i in range(nx - 1):
        for j in range(ny):
            c = 0.5 * wy[j]
            a, b = idx(i, j), idx(i + 1, j)
            for node, vel in ((a, v1[i, j]), (b, v1[i + 1, j])):
                rows += [a, b]
                cols += [node, node]
                vals += [c * vel, -c * vel]
    # y-faces between (i, j) and (i, j+1); face length wx_i
    for i in range(nx):
        for j in range(ny - 1):
            c = 0.5 * wx[i]
            a, b = idx(i, j), idx(i, j + 1)
            for node, vel in ((a, v2[i, j]), (b, v2[i, j + 1])):
                rows += [a, b]
                cols += [node, node]
                vals += [c * vel, -c * vel]

    A = sp.csr_matrix((vals, (rows, cols)), shape=(grid.n_nodes, grid.n_nodes))
    winv = 1.0 / grid.trapezoid_weights()
    return (sp.diags(winv) @ A).tocsr()


# ---------------------------------------------------------------------------
# Darcy flow


@dataclass(frozen=True)
class DarcyProblem:
    """-div(exp(m) grad u) = f, u = 0 on the boundary.

    The source is constant on three horizontal bands of the y coordinate:
    ``levels[0]`` for y <= edges[0], ``levels[1]`` for edges[0] < y <=
    edges[1], ``levels[2]`` above.
    """

    grid: Grid2D
    levels: tuple = (1000.0, 2000.0, 3000.0)
    edges: tuple = (4.0 / 6.0, 5.0 / 6.0)

    def source_values(self) -> np.ndarray:
        _, Y = self.grid.mesh()
        f = np.full_like(Y, self.levels[0])
        f[Y > self.edges[0]] = self.levels[1]
        f[Y > self.edges[1]] = self.levels[2]
        return f.ravel()


def solve_darcy(problem: DarcyProblem, m: Field) -> Field:
    """Solve the Darcy problem for log-conductivity field m.

    5-point finite volumes with harmonic averaging of exp(m) at the faces;
    raises SolverError if the direct solve leaves a relative residual above
    1e-10 or the coefficient field overflows.
    """
    g = problem.grid
    if m.grid != g:
        raise ValueError("field grid does not match problem grid")
    with np.errstate(over="ignore"):
        a = np.exp(m.as_matrix())
    if not np.all(np.isfinite(a)):
        raise SolverError("exp(m) overflowed")

    def harm(p, q):
        return 2.0 * p * q / (p + q)

    ax = harm(a[:-1, :], a[1:, :])  # face (i,j)-(i+1,j), shape (nx-1, ny)
    ay = harm(a[:, :-1], a[:, 1:])  # face (i,j)-(i,j+1), shape (nx, ny-1)

    nxi, nyi = g.nx - 2, g.ny - 2
    n_int = nxi * nyi
    ii, jj = np.meshgrid(np.arange(1, g.nx - 1), np.arange(1, g.ny - 1), indexing="ij")
    aE = ax[ii, jj] / g.hx**2
    aW = ax[ii - 1, jj] / g.hx**2
    aN = ay[ii, jj] / g.hy**2
    aS = ay[ii, jj - 1] / g.hy**2

    def k(i, j):  # interior flat index
        return (i - 1) * nyi + (j - 1)

    kk = k(ii, jj).ravel()
    diag = (aE + aW + aN + aS).ravel()
    rows = [kk]
    cols = [kk]
    vals = [diag]
    # couple to interior neighbors only; boundary neighbors hold u = 0
    east = ii < g.nx - 2
    rows.append(k(ii, jj)[east].ravel()); cols.append(k(ii + 1, jj)[east].ravel())
    vals.append(-aE[east].ravel())
    west = ii > 1
    rows.append(k(ii, jj)[west].ravel()); cols.append(k(ii - 1, jj)[west].ravel())
    vals.append(-aW[west].ravel())
    north = jj < g.ny - 2
    rows.append(k(ii, jj)[north].ravel()); cols.append(k(ii, jj + 1)[north].ravel())
    vals.append(-aN[north].ravel())
    south = jj > 1
    rows.append(k(ii, jj)[south].ravel()); cols.append(k(ii, jj - 1)[south].ravel())
    vals.append(-aS[south].ravel())

    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_int, n_int),
    )
    b = problem.source_values()[_interior_index(g)]
    try:
        u_int = spla.splu(A.tocsc()).solve(b)
    except RuntimeError as err:
        raise SolverError(f"sparse LU failed: {err}") from err
    res = np.linalg.norm(A @ u_int - b) / np.linalg.norm(b)
    if not np.isfinite(res) or res > 1e-10:
        raise SolverError(f"Darcy solve residual {res:.3e} above 1e-10")

    u = np.zeros(g.n_nodes)
    u[_interior_index(g)] = u_int
    return Field(g, u)


# ---------------------------------------------------------------------------
# heat equations (implicit Euler)


@lru_cache(maxsize=16)
def _neumann_heat_solver(nx: int, ny: int, dt: float):
    """Factorized (D + dt K) for one backward-Euler step with zero-flux walls."""
    g = Grid2D(nx, ny)
    Kx = _stiffness_1d(nx, g.hx)
    Ky = _stiffness_1d(ny, g.hy)
    Dx = sp.diags(_weights_1d(nx, g.hx))
    Dy = sp.diags(_weights_1d(ny, g.hy))
    K = sp.kron(Kx, Dy) + sp.kron(Dx, Ky)
    D = sp.kron(Dx, Dy)
    lu = spla.splu((D + dt * K).tocsc())
    w = g.trapezoid_weights()
    return lu, w


@lru_cache(maxsize=16)
def _dirichlet_heat_solver(nx: int, ny: int, dt: float):
    g = Grid2D(nx, ny)
    L = dirichlet_laplacian(g)
    A = sp.eye(L.shape[0], format="csc") - dt * L
    return spla.splu(A.tocsc())


def march_heat_neumann(grid: Grid2D, u0: np.ndarray, source_at, dt: float,
                       n_steps: int, snap_steps=()) -> dict:
    """Backward-Euler march of u_t = lap u + s with zero-flux walls.

    ``source_at(t)`` returns the flat source at time t (or None for no
    source).  Returns {step: flat values} for the requested snapshot steps,
    always including the final step.
    """
    lu, w = _neumann_heat_solver(grid.nx, grid.ny, dt)
    snaps = {}
    u = np.asarray(u0, dtype=float).copy()
    want = set(snap_steps) | {n_steps}
    for n in range(1, n_steps + 1):
        rhs = u.copy()
        s = source_at(n * dt) if source_at is not None else None
        if s is not None:
            rhs += dt * s
        u = lu.solve(w * rhs)
        if n in want:
            snaps[n] = u.copy()
    return snaps


def march_heat_dirichlet(grid: Grid2D, u0: np.ndarray, source_at, dt: float,
                         n_steps: int) -> np.ndarray:
    """Backward-Euler march with zero Dirichlet walls; returns final values.

    ``u0`` holds all nodes; only its interior part enters (walls pinned at 0).
    """
    lu = _dirichlet_heat_solver(grid.nx, grid.ny, dt)
    interior = _interior_index(grid)
    u = np.asarray(u0, dtype=float).ravel()[interior].copy()
    for n in range(1, n_steps + 1):
        rhs = u.copy()
        s = source_at(n * dt) if source_at is not None else None
        if s is not None:
            rhs += dt * np.asarray(s).ravel()[interior]
        u = lu.solve(rhs)
    full = np.zeros(grid.n_nodes)
    full[interior] = u
    return full


@dataclass(frozen=True)
class HeatSourceLocProblem:
    """Heat equation driven by a Gaussian bump at unknown center chi.

    Source ``(strength / (2 pi width^2)) exp(-|chi - x|^2 / (2 width^2))``
    is active for t <= t_cutoff (inclusive at the cutoff step) and zero
    afterwards; walls are zero-flux and the initial state is zero.  The state
    is recorded at obs_times, both of which must land on step boundaries of
    the unit-horizon step size 1/n_steps.
    """

    grid: Grid2D
    strength: float = 5.0
    width: float = 0.1
    t_cutoff: float = 0.05
    obs_times: tuple = (0.05, 0.15)
    n_steps: int = 100

    def source_values(self, chi) -> np.ndarray:
        X, Y = self.grid.mesh()
        r2 = (X - chi[0]) ** 2 + (Y - chi[1]) ** 2
        amp = self.strength / (2.0 * math.pi * self.width**2)
        return (amp * np.exp(-r2 / (2.0 * self.width**2))).ravel()


def solve_heat_loc(problem: HeatSourceLocProblem, chi) -> tuple:
    """States at the two observation times for source center chi."""
    chi = np.asarray(chi, dtype=float).ravel()
    if chi.size != 2:
        raise ValueError("chi must be a 2-vector")
    dt = 1.0 / problem.n_steps
    steps = []
    for t in problem.obs_times:
        k = t / dt
        if abs(k - round(k)) > 1e-9:
            raise ValueError(f"observation time {t} not on a step boundary")
        steps.append(int(round(k)))
    src = problem.source_values(chi)

    def source_at(t):
        return src if t <= problem.t_cutoff + 1e-12 else None

    snaps = march_heat_neumann(problem.grid, np.zeros(problem.grid.n_nodes),
                               source_at, dt, max(steps), snap_steps=steps)
    return tuple(Field(problem.grid, snaps[k]) for k in steps)


@dataclass(frozen=True)
class HeatSourceFieldProblem:
    """Heat equation driven by exp(-t) m(x), zero Dirichlet walls.

    The nominal initial state is ``amplitude sin(x) sin(y)`` (radians, no pi
    factor); because it does not vanish at the walls, it is imposed at the
    interior nodes while the walls hold u = 0 for t > 0.
    """

    grid: Grid2D
    t_final: float = 1.0
    n_steps: int = 50
    amplitude: float = 100.0

    def initial_values(self) -> np.ndarray:
        X, Y = self.grid.mesh()
        return (self.amplitude * np.sin(X) * np.sin(Y)).ravel()


def solve_heat_field(problem: HeatSourceFieldProblem, m: Field,
                     u0: np.ndarray | None = None) -> Field:
    """State at t_final for source field m (u0 override for verification)."""
    g = problem.grid
    if m.grid != g:
        raise ValueError("field grid does not match problem grid")
    dt = problem.t_final / problem.n_steps
    mv = m.values

    def source_at(t):
        return math.exp(-t) * mv

    start = problem.initial_values() if u0 is None else u0
    final = march_heat_dirichlet(g, start, source_at, dt, problem.n_steps)
    return Field(g, final)


# ---------------------------------------------------------------------------
# reaction-diffusion transport


@dataclass(frozen=True)
class ReactionDiffusionProblem:
    """u_t = kappa lap u - v . grad u with zero-flux walls, u(0) = m.

    v = (sin(pi x) cos(pi y), -cos(pi x) sin(pi y)) is divergence-free and
    tangential at the walls, so v . grad u = div(v u) and the conservative
    central discretization keeps the discrete mass exactly.
    """

    grid: Grid2D
    kappa: float = 1.0 / 30.0
    t_final: float = 1.0
    dt: float = 0.02

    def velocity(self):
        X, Y = self.grid.mesh()
        v1 = np.sin(math.pi * X) * np.cos(math.pi * Y)
        v2 = -np.cos(math.pi * X) * np.sin(math.pi * Y)
        return v1, v2


@lru_cache(maxsize=8)
def _rd_stepper(nx: int, ny: int, kappa: float, dt: float):
    g = Grid2D(nx, ny)
    prob = ReactionDiffusionProblem(g, kappa=kappa, dt=dt)
    v1, v2 = prob.velocity()
    A = kappa * neumann_laplacian(g) - advection_operator(g, v1, v2)
    n = g.n_nodes
    M_im = (sp.eye(n) - 0.5 * dt * A).tocsc()
    M_ex = (sp.eye(n) + 0.5 * dt * A).tocsr()
    return spla.splu(M_im), M_ex


def solve_reaction_diffusion(problem: ReactionDiffusionProblem, m0: Field) -> Field:
    """Crank-Nicolson march of the initial state m0 to t_final."""
    g = problem.grid
    if m0.grid != g:
        raise ValueError("field grid does not match problem grid")
    n_steps = problem.t_final / problem.dt
    if abs(n_steps - round(n_steps)) > 1e-9:
        raise ValueError("dt must divide t_final")
    lu, M_ex = _rd_stepper(g.nx, g.ny, problem.kappa, problem.dt)
    u = m0.values.copy()
    for _ in range(int(round(n_steps))):
        u = lu.solve(M_ex @ u)
    return Field(g, u)


# ---------------------------------------------------------------------------
# parameter-to-state map and evaluation accounting


class EvalLedger:
    """Thread-safe tally of full-order forward evaluations by category."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts: dict[str, int] = {}

    def add(self, category: str, n: int = 1) -> None:
        with self._lock:
            self._counts[category] = self._counts.get(category, 0) + n

    def count(self, category: str) -> int:
        return self._counts.get(category, 0)

    @property
    def counts(self) -> dict:
        with self._lock:
            return dict(self._counts)

    def total(self) -> int:
        with self._lock:
            return sum(self._counts.values())


def forward_map(problem, basis: KLBasis | None, zeta, ledger: EvalLedger | None = None,
                category: str = "forward"):
    """Full-order parameter-to-state map; one ledger tick per call.

    For field-valued parameters ``zeta`` holds KL coefficients realized on
    ``basis``; for the source-location problem ``zeta`` is the center chi
    itself and ``basis`` is ignored.  Returns the problem's state: a Field,
    or a tuple of snapshot Fields for the source-location problem.
    """
    if isinstance(problem, HeatSourceLocProblem):
        run = lambda: solve_heat_loc(problem, zeta)  # noqa: E731
    elif isinstance(problem, DarcyProblem):
        run = lambda: solve_darcy(problem, sample_field(basis, zeta))  # noqa: E731
    elif isinstance(problem, HeatSourceFieldProblem):
        run = lambda: solve_heat_field(problem, sample_field(basis, zeta))  # noqa: E731
    elif isinstance(problem, ReactionDiffusionProblem):
        run = lambda: solve_reaction_diffusion(problem, sample_field(basis, zeta))  # noqa: E731
    else:
        raise TypeError(f"unknown problem type {type(problem).__name__}")
    if ledger is not None:
        ledger.add(category)
    return run()


def parallel_map(fn, items, workers: int | None = None) -> list:
    """Order-preserving map, threaded when workers > 1.

    Worker count falls back to the OPINV_WORKERS environment variable, then
    to 1 (sequential).  Results are returned in input order either way, so
    runs stay reproducible.
    """
    if workers is None:
        workers = int(os.environ.get("OPINV_WORKERS", "1"))
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))

"""Scalar Poisson solves: weak Neumann pressure, weak Dirichlet pressure in
three far-field branches, the reference harmonic function q0, and the
translation potentials with their harmonic fields.

Far-field branches ("far modes"):
  NATURAL_NEUMANN -- no essential condition anywhere (pressure of the
                     normal-trace decomposition);
  ZERO_DIRICHLET  -- p = 0 ghosts on obstacle and far boundary (decaying class);
  FREE_CONSTANT   -- p = 0 on the obstacle, p = lambda on the far boundary,
                     realized as p = p0 + lambda * q0 with a Galerkin lambda.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation, GeometryError
from .fieldops import (AXES, BoundaryPolicy, FaceField, ScalarField,
                       boundary_table, gradient, sample_analytic, _sl)
from .geometry import GridTopology, NoObstacle
from .linsolve import LinearOperator, SolveOptions, cg_solve

NATURAL_NEUMANN = "natural_neumann"
ZERO_DIRICHLET = "zero_dirichlet"
FREE_CONSTANT = "free_constant"
FAR_MODES = (NATURAL_NEUMANN, ZERO_DIRICHLET, FREE_CONSTANT)


class PressureSolution:
    """Pressure field with its boundary policy and far-field constant."""

    def __init__(self, p: ScalarField, lam: float, stats, bc: BoundaryPolicy,
                 far_mode: str):
        self.p = p
        self.lam = float(lam)
        self.stats = stats
        self.bc = bc
        self.far_mode = far_mode

    def grad(self) -> FaceField:
        return gradient(self.p, self.bc)


# ---------------------------------------------------------------------------
# Matrix-free Laplacians
# ---------------------------------------------------------------------------

def _interior_flux_div(topo, grid, acc):
    dx = topo.dx
    for axis in AXES:
        fi = topo.face_interior[axis][tuple(_sl(axis, slice(1, -1)))]
        d = (grid[tuple(_sl(axis, slice(1, None)))]
             - grid[tuple(_sl(axis, slice(0, -1)))]) * (fi / dx)
        acc[tuple(_sl(axis, slice(0, -1)))] += d / dx
        acc[tuple(_sl(axis, slice(1, None)))] -= d / dx
    return acc


def _dirichlet_ghost_div(topo, grid, acc, which):
    # ghost value 0: each Dirichlet face adds -p_fluid/dx^2 to the divergence
    dx = topo.dx
    for axis in AXES:
        tab = boundary_table(topo, which, axis)
        if len(tab["sign"]) == 0:
            continue
        np.add.at(acc, tab["fluid"], -grid[tab["fluid"]] / dx ** 2)
    return acc


def _face_count_per_cell(topo, masks):
    cnt = np.zeros((topo.n,) * 3)
    for axis in AXES:
        m = masks[axis].astype(float)
        cnt += m[tuple(_sl(axis, slice(0, -1)))]
        cnt += m[tuple(_sl(axis, slice(1, None)))]
    return cnt


def build_laplacian(topo: GridTopology, obstacle: str, far: str) -> LinearOperator:
    """Weak-form Laplacian A p = -dx^3 div(grad p) with the given closures.

    `obstacle` and `far` are "neumann" (face dropped) or "dirichlet"
    (zero-ghost one-sided stencil).  Inhomogeneous data enters through the
    right-hand side builders below.
    """
    if obstacle not in ("neumann", "dirichlet") or far not in ("neumann", "dirichlet"):
        raise ContractViolation("laplacian closures must be neumann or dirichlet")
    dx = topo.dx
    vol = dx ** 3

    def apply_fn(flat):
        grid = topo.scatter_cells(flat)
        acc = np.zeros((topo.n,) * 3)
        _interior_flux_div(topo, grid, acc)
        if obstacle == "dirichlet":
            _dirichlet_ghost_div(topo, grid, acc, "obstacle")
        if far == "dirichlet":
            _dirichlet_ghost_div(topo, grid, acc, "far")
        return -vol * topo.gather_cells(acc)

    masks = [topo.face_interior[a].copy() for a in AXES]
    if obstacle == "dirichlet":
        masks = [masks[a] | topo.face_obstacle[a] for a in AXES]
    if far == "dirichlet":
        masks = [masks[a] | topo.face_far[a] for a in AXES]
    diag = topo.gather_cells(_face_count_per_cell(topo, masks)) * (vol / dx ** 2)
    return LinearOperator(topo.n_cells, apply_fn, diagonal=diag, symmetric=True)


def _cached(topo, key, builder):
    cache = topo.__dict__.setdefault("_sp_cache", {})
    if key not in cache:
        cache[key] = builder()
    return cache[key]


# ---------------------------------------------------------------------------
# Right-hand sides
# ---------------------------------------------------------------------------

def _rhs_weak_form(topo, u: FaceField, boundary_classes) -> np.ndarray:
    """b_c = (u, grad phi_c) for the test gradients of the given closure.

    Equals -dx^3 * div(u) with boundary faces outside `boundary_classes`
    zeroed first.
    """
    dx = topo.dx
    grids = u.grids()
    acc = np.zeros((topo.n,) * 3)
    for axis in AXES:
        g = grids[axis]
        keep = topo.face_interior[axis].copy()
        for cls in boundary_classes:
            keep |= (topo.face_obstacle[axis] if cls == "obstacle"
                     else topo.face_far[axis])
        g = np.where(keep, g, 0.0)
        acc += (g[tuple(_sl(axis, slice(1, None)))]
                - g[tuple(_sl(axis, slice(0, -1)))]) / dx
    return -dx ** 3 * topo.gather_cells(acc)


def _rhs_dirichlet_data(topo, which, values_fn) -> np.ndarray:
    """Ghost-data lift: each Dirichlet face adds dx * g to its fluid cell."""
    dx = topo.dx
    acc = np.zeros((topo.n,) * 3)
    for axis in AXES:
        tab = boundary_table(topo, which, axis)
        if len(tab["sign"]) == 0:
            continue
        g = values_fn(axis, tab["ghost_pts"])
        np.add.at(acc, tab["fluid"], np.asarray(g, dtype=float) * dx)
    return topo.gather_cells(acc)


def _rhs_flux_data(topo, which, flux_fn) -> np.ndarray:
    """Prescribed-gradient lift: face with axis-gradient g adds dx^2*sign*g... """
    dx = topo.dx
    acc = np.zeros((topo.n,) * 3)
    for axis in AXES:
        tab = boundary_table(topo, which, axis)
        if len(tab["sign"]) == 0:
            continue
        g = np.asarray(flux_fn(axis, tab["face_pts"]), dtype=float)
        np.add.at(acc, tab["fluid"], tab["sign"] * g * dx ** 2)
    return topo.gather_cells(acc)


def uniform_face_inner(topo, a: FaceField, b: FaceField) -> float:
    """Solver-side pairing: uniform dx^3 weight on every active face."""
    tot = 0.0
    for ca, cb in zip(a.comps, b.comps):
        tot += float(np.sum(ca * cb))
    return tot * topo.dx ** 3


# ---------------------------------------------------------------------------
# Solves
# ---------------------------------------------------------------------------

def solve_weak_neumann(u: FaceField, opts: SolveOptions | None = None) -> PressureSolution:
    """(grad p, grad phi) = (u, grad phi) with natural conditions everywhere.

    The constant nullspace is deflated; the returned p is mean-zero.
    """
    topo = u.topo
    A = _cached(topo, ("lap", "neumann", "neumann"),
                lambda: build_laplacian(topo, "neumann", "neumann"))
    b = _rhs_weak_form(topo, u, boundary_classes=())
    const = np.full(topo.n_cells, 1.0 / np.sqrt(topo.n_cells))
    opts = opts or SolveOptions()
    run = SolveOptions(rel_tol=opts.rel_tol, abs_tol=opts.abs_tol,
                       max_iters=opts.max_iters, deflation=[const])
    x, stats = cg_solve(A, b, run)
    return PressureSolution(ScalarField(topo, x), 0.0, stats,
                            BoundaryPolicy.neumann(), NATURAL_NEUMANN)


def solve_q0(topo: GridTopology, opts: SolveOptions | None = None) -> PressureSolution:
    """Harmonic reference function: 0 on obstacle ghosts, 1 on far ghosts."""
    if isinstance(topo.spec.obstacle, NoObstacle):
        raise GeometryError("q0 requires a nonempty obstacle")

    def build():
        A = _cached(topo, ("lap", "dirichlet", "dirichlet"),
                    lambda: build_laplacian(topo, "dirichlet", "dirichlet"))
        b = _rhs_dirichlet_data(topo, "far", lambda axis, pts: np.ones(len(pts)))
        x, stats = cg_solve(A, b, opts or SolveOptions())
        bc = BoundaryPolicy(("dirichlet", 0.0), ("dirichlet", 1.0))
        return PressureSolution(ScalarField(topo, x), 0.0, stats, bc, ZERO_DIRICHLET)

    if opts is None:
        return _cached(topo, ("q0",), build)
    return build()


def q0_obstacle_flux(topo, q0_sol: PressureSolution) -> float:
    """Discrete surface sum of dq0/dnu over the obstacle (nu out of the fluid)."""
    g = q0_sol.grad()
    grids = g.grids()
    dx = topo.dx
    tot = 0.0
    for axis in AXES:
        tab = boundary_table(topo, "obstacle", axis)
        if len(tab["sign"]) == 0:
            continue
        tot += float(np.sum(tab["sign"] * grids[axis][tab["faces"]])) * dx ** 2
    return tot


def solve_weak_dirichlet(u: FaceField, far: str,
                         opts: SolveOptions | None = None) -> PressureSolution:
    """Dirichlet-branch pressure; FREE_CONSTANT adds the lambda * q0 direction.

    lambda is the Galerkin projection of the defect onto grad q0:
      lambda = [(u, grad q0) - (grad p0, grad q0)] / (grad q0, grad q0),
    computed in the solver's uniform pairing; p = p0 + lambda q0 then carries
    ghost values 0 on the obstacle and lambda on the far boundary.
    """
    topo = u.topo
    if far not in (ZERO_DIRICHLET, FREE_CONSTANT):
        raise ContractViolation(f"far mode {far!r} not valid for the Dirichlet branch")
    if far == FREE_CONSTANT and isinstance(topo.spec.obstacle, NoObstacle):
        raise GeometryError("FREE_CONSTANT requires a nonempty obstacle")
    A = _cached(topo, ("lap", "dirichlet", "dirichlet"),
                lambda: build_laplacian(topo, "dirichlet", "dirichlet"))
    b = _rhs_weak_form(topo, u, boundary_classes=("obstacle", "far"))
    x, stats = cg_solve(A, b, opts or SolveOptions())
    p0 = ScalarField(topo, x)
    if far == ZERO_DIRICHLET:
        return PressureSolution(p0, 0.0, stats, BoundaryPolicy.dirichlet(0.0, 0.0),
                                ZERO_DIRICHLET)

    q0 = solve_q0(topo, None)
    gq0 = q0.grad()
    gq0_sq = uniform_face_inner(topo, gq0, gq0)
    if gq0_sq <= 0.0:
        raise ContractViolation("(grad q0, grad q0) vanished with a nonempty obstacle")
    gp0 = gradient(p0, BoundaryPolicy.dirichlet(0.0, 0.0))
    lam = (uniform_face_inner(topo, u, gq0)
           - uniform_face_inner(topo, gp0, gq0)) / gq0_sq
    p = ScalarField(topo, p0.values + lam * q0.p.values)
    bc = BoundaryPolicy(("dirichlet", 0.0), ("dirichlet", lam))
    return PressureSolution(p, lam, stats, bc, FREE_CONSTANT)


def solve_pressure(u: FaceField, far: str,
                   opts: SolveOptions | None = None) -> PressureSolution:
    if far == NATURAL_NEUMANN:
        return solve_weak_neumann(u, opts)
    return solve_weak_dirichlet(u, far, opts)


# ---------------------------------------------------------------------------
# Translation potentials
# ---------------------------------------------------------------------------

def translation_harmonics(topo: GridTopology, j: int,
                          opts: SolveOptions | None = None) -> dict:
    """Potentials and harmonic fields attached to the translation e_j.

    q: obstacle Neumann data dq/dnu = e_j . nu, far decay (zero ghosts);
    h = e_j - grad q has exactly zero normal component on obstacle faces.
    pi: obstacle Dirichlet data x . e_j, far decay; k = e_j - grad pi.
    """
    if isinstance(topo.spec.obstacle, NoObstacle):
        raise GeometryError("translation harmonics require a nonempty obstacle")
    j = int(j)
    if j not in AXES:
        raise ContractViolation(f"axis j = {j} outside 0..2")
    opts = opts or SolveOptions()

    # dq/dnu = e_j.nu on the obstacle means the face gradient equals
    # delta_{j,axis} irrespective of orientation.
    def flux_fn(axis, pts):
        return np.full(len(pts), 1.0 if axis == j else 0.0)

    A_mixed = _cached(topo, ("lap", "neumann", "dirichlet"),
                      lambda: build_laplacian(topo, "neumann", "dirichlet"))
    b_q = _rhs_flux_data(topo, "obstacle", flux_fn)
    xq, stats_q = cg_solve(A_mixed, b_q, opts)
    bc_q = BoundaryPolicy(("flux", flux_fn), ("dirichlet", 0.0))
    q = PressureSolution(ScalarField(topo, xq), 0.0, stats_q, bc_q, ZERO_DIRICHLET)

    def dir_fn(axis, pts):
        return pts[:, j]

    A_dir = _cached(topo, ("lap", "dirichlet", "dirichlet"),
                    lambda: build_laplacian(topo, "dirichlet", "dirichlet"))
    b_pi = _rhs_dirichlet_data(topo, "obstacle", dir_fn)
    xpi, stats_pi = cg_solve(A_dir, b_pi, opts)
    bc_pi = BoundaryPolicy(("dirichlet", dir_fn), ("dirichlet", 0.0))
    pi = PressureSolution(ScalarField(topo, xpi), 0.0, stats_pi, bc_pi, ZERO_DIRICHLET)

    ej = sample_analytic("uniform", {"axis": j}, topo)
    h = ej - q.grad()
    k = ej - pi.grad()
    return {"q": q, "h": h, "pi": pi, "k": k}

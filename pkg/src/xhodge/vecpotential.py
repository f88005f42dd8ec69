"""Regularized vector-potential solves.

The potential lives on edges; its curl reproduces the rotational face field.
The operator realizes the bilinear form

    a(w, v) = (rot w, rot v) + (div w, div v)

with rot: edges -> faces and div: edges -> nodes, both with natural closures
at the far boundary.  Essential obstacle conditions are imposed by masking
edge unknowns:

  V flavor (w x nu = 0): edges touching the obstacle surface are fixed to 0;
  X flavor (w . nu = 0): edges sticking out of obstacle-boundary faces into
                         the fluid are fixed to 0.

The right-hand side (u, rot .) is the exact transpose pairing, so it is
orthogonal to the operator kernel to round-off, and div w vanishes with the
solver residual rather than being imposed.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation
from .fieldops import (AXES, CYCLIC, EdgeField, FaceField, _sl,
                       boundary_table, curl_edge_to_face)
from .geometry import GridTopology, _edge_shape
from .linsolve import LinearOperator, SolveOptions, cg_solve, orthonormalize, project_out

X_FLAVOR = "x"
V_FLAVOR = "v"


class VectorPotentialSolution:
    def __init__(self, w: EdgeField, stats, div_norm, kernel_components):
        self.w = w
        self.stats = stats
        self.div_norm = float(div_norm)
        self.kernel_components = kernel_components

    def rot(self) -> FaceField:
        return curl_edge_to_face(self.w)


def flavor_edge_mask(topo: GridTopology, flavor: str):
    """Boolean per-axis masks of edge unknowns fixed to zero by the flavor."""
    if flavor == V_FLAVOR:
        return [topo.edge_surface[a].copy() for a in AXES]
    if flavor != X_FLAVOR:
        raise ContractViolation(f"unknown potential flavor {flavor!r}")
    masks = [np.zeros(_edge_shape(topo.n, a), dtype=bool) for a in AXES]
    for axis in AXES:
        tab = boundary_table(topo, "obstacle", axis)
        sign = tab["sign"]
        if len(sign) == 0:
            continue
        fi, fj, fk = tab["faces"]
        e_axis = fi if axis == 0 else (fj if axis == 1 else fk)
        e_axis = e_axis - (sign > 0)
        others = [a for a in AXES if a != axis]
        for d1 in (0, 1):
            for d2 in (0, 1):
                idx = [None, None, None]
                idx[axis] = e_axis
                t1, t2 = others
                base = [fi, fj, fk]
                idx[t1] = base[t1] + d1
                idx[t2] = base[t2] + d2
                masks[axis][tuple(idx)] = True
    return masks


def _edge_dof_masks(topo, flavor):
    """free = active and not flavor-constrained, per axis (grid-shaped)."""
    constrained = flavor_edge_mask(topo, flavor)
    free = [topo.edge_active[a] & ~constrained[a] for a in AXES]
    return free, constrained


def _gauge_node_mask(topo, flavor):
    """Nodes where the divergence gauge term is counted.

    A node belongs to the gauge set iff the gradient of a hat function at
    that node lives entirely on unconstrained edges; otherwise the gauge
    cannot act there and counting the divergence would trade an irremovable
    boundary defect against curl misfit.  Concretely: drop every endpoint of
    every constrained edge.
    """
    _, constrained = _edge_dof_masks(topo, flavor)
    bad = np.zeros((topo.n + 1,) * 3, dtype=bool)
    for axis in AXES:
        c = constrained[axis]
        bad[tuple(_sl(axis, slice(0, -1)))] |= c
        bad[tuple(_sl(axis, slice(1, None)))] |= c
    return topo.node_active & ~bad


def _curl_e2f_grids(topo, egrids):
    """rot: edge grids -> face grids, masked to active faces."""
    dx = topo.dx
    out = []
    for axis in AXES:
        t1, t2 = CYCLIC[axis]
        d1 = (egrids[t2][tuple(_sl(t1, slice(1, None)))]
              - egrids[t2][tuple(_sl(t1, slice(0, -1)))])
        d2 = (egrids[t1][tuple(_sl(t2, slice(1, None)))]
              - egrids[t1][tuple(_sl(t2, slice(0, -1)))])
        g = (d1 - d2) / dx
        g[~topo.face_active[axis]] = 0.0
        out.append(g)
    return out


def _curl_e2f_transpose(topo, fgrids):
    """Exact transpose of _curl_e2f_grids (face grids -> edge grids)."""
    dx = topo.dx
    acc = [np.zeros(_edge_shape(topo.n, a)) for a in AXES]
    for axis in AXES:
        t1, t2 = CYCLIC[axis]
        g = fgrids[axis] / dx
        acc[t2][tuple(_sl(t1, slice(1, None)))] += g
        acc[t2][tuple(_sl(t1, slice(0, -1)))] -= g
        acc[t1][tuple(_sl(t2, slice(1, None)))] -= g
        acc[t1][tuple(_sl(t2, slice(0, -1)))] += g
    return acc


def _div_e2n_grids(topo, egrids, node_mask=None):
    """div: edge grids -> node grid, truncated stencils at boundaries."""
    dx = topo.dx
    d = np.zeros((topo.n + 1,) * 3)
    for axis in AXES:
        g = egrids[axis] / dx
        d[tuple(_sl(axis, slice(0, -1)))] += g
        d[tuple(_sl(axis, slice(1, None)))] -= g
    d[~(topo.node_active if node_mask is None else node_mask)] = 0.0
    return d


def _div_e2n_transpose(topo, dgrid):
    dx = topo.dx
    acc = []
    for axis in AXES:
        acc.append((dgrid[tuple(_sl(axis, slice(0, -1)))]
                    - dgrid[tuple(_sl(axis, slice(1, None)))]) / dx)
    return acc


def _stencil_face_counts(topo):
    """#active faces in the curl stencil of each edge (0..4), per axis."""
    from .geometry import _edge_face_pair_views
    counts = []
    for axis in AXES:
        t1, t2 = CYCLIC[axis]
        c = np.zeros(_edge_shape(topo.n, axis), dtype=np.int8)
        for fam, trans in ((t2, t1), (t1, t2)):
            lo, hi = _edge_face_pair_views(topo.n, axis, fam, trans,
                                           topo.face_active[fam])
            c += lo
            c += hi
        counts.append(c)
    return counts


def assemble_curlcurl_operator(topo: GridTopology, flavor: str) -> LinearOperator:
    """Matrix-free a(w, .) on active unconstrained edges; SPD up to its kernel."""
    cache = topo.__dict__.setdefault("_vp_cache", {})
    if flavor in cache:
        return cache[flavor]
    free, _ = _edge_dof_masks(topo, flavor)
    gauge_nodes = _gauge_node_mask(topo, flavor)
    dx = topo.dx
    vol = dx ** 3
    n_edges = topo.n_edges

    def apply_fn(flat):
        comps = _split(flat, n_edges)
        egrids = topo.scatter_edges(comps)
        for a in AXES:
            egrids[a][~free[a]] = 0.0
        f = _curl_e2f_grids(topo, egrids)
        acc = _curl_e2f_transpose(topo, f)
        d = _div_e2n_grids(topo, egrids, gauge_nodes)
        dacc = _div_e2n_transpose(topo, d)
        out = []
        for a in AXES:
            y = (acc[a] + dacc[a]) * vol
            y[~free[a]] = 0.0
            out.append(y)
        g = topo.gather_edges(out)
        return np.concatenate(g)

    counts = _stencil_face_counts(topo)
    diag = []
    for a in AXES:
        nodes = gauge_nodes.astype(float)
        ncnt = (nodes[tuple(_sl(a, slice(0, -1)))]
                + nodes[tuple(_sl(a, slice(1, None)))])
        d = (counts[a].astype(float) + ncnt) * (vol / dx ** 2)
        d[~free[a]] = 1.0
        d[d == 0.0] = 1.0
        diag.append(d.reshape(-1)[topo.edge_index[a]])
    op = LinearOperator(sum(n_edges), apply_fn, diagonal=np.concatenate(diag),
                        symmetric=True)
    op.flavor = flavor
    cache[flavor] = op
    return op


def _split(flat, counts):
    out = []
    s = 0
    for c in counts:
        out.append(flat[s:s + c])
        s += c
    return out


def curl_pairing_rhs(topo, u: FaceField, flavor: str) -> np.ndarray:
    """b = dx^3 * (transpose curl applied to u), zeroed on constrained edges."""
    free, _ = _edge_dof_masks(topo, flavor)
    fgrids = u.grids()
    fgrids = [np.where(topo.face_active[a], fgrids[a], 0.0) for a in AXES]
    acc = _curl_e2f_transpose(topo, fgrids)
    out = []
    for a in AXES:
        y = acc[a] * topo.dx ** 3
        y[~free[a]] = 0.0
        out.append(y)
    return np.concatenate(topo.gather_edges(out))


def solve_vector_potential(u: FaceField, flavor: str, deflation_basis=(),
                           opts: SolveOptions | None = None,
                           x0=None) -> VectorPotentialSolution:
    """Solve a(w, .) = (u, rot .); divergence-freeness of w is checked, not imposed.

    `deflation_basis` holds numerically estimated kernel fields (flat edge
    vectors or EdgeFields).  The right-hand side must be orthogonal to them;
    a relative component above 1e-6 signals a broken basis.
    """
    topo = u.topo
    A = assemble_curlcurl_operator(topo, flavor)
    b = curl_pairing_rhs(topo, u, flavor)

    basis = []
    for v in deflation_basis:
        basis.append(np.concatenate(v.comps) if isinstance(v, EdgeField) else
                     np.asarray(v, dtype=float))
    basis = orthonormalize(basis)
    bnorm = np.linalg.norm(b)
    if basis and bnorm > 0:
        comp = max(abs(float(np.sum(q * b))) for q in basis)
        if comp > 1e-6 * bnorm:
            raise ContractViolation(
                f"rhs has component {comp / bnorm:.2e} along the deflation basis; "
                "kernel estimate looks broken")

    opts = opts or SolveOptions()
    run = SolveOptions(rel_tol=opts.rel_tol, abs_tol=opts.abs_tol,
                       max_iters=opts.max_iters, deflation=basis)
    x, stats = cg_solve(A, b, run, x0=x0)

    w = EdgeField(topo, _split(x, topo.n_edges))
    div_norm = edge_divergence_norm(topo, w, flavor)
    kern = [abs(float(np.sum(q * x))) for q in basis]
    return VectorPotentialSolution(w, stats, div_norm, kern)


def edge_divergence_norm(topo, w: EdgeField, flavor=None) -> float:
    """sqrt(sum dx^3 (div w)^2) over interior (gauge) nodes.

    Divergence-freeness is an interior statement; nodes whose hat-function
    gradients leave the constrained space carry no discrete meaning for it.
    """
    mask = None if flavor is None else _gauge_node_mask(topo, flavor)
    d = _div_e2n_grids(topo, w.grids(), mask)
    return float(np.sqrt(np.sum(d * d) * topo.dx ** 3))

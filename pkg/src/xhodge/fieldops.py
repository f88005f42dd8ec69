"""Staggered-grid field containers and discrete vector calculus.

Layout (MAC): scalars at cell centers, vector fields at face centers,
circulations at edge centers.  With single-valued ghost-cell boundary data the
interior identities div(curl E) = 0 and curl(grad p) = 0 hold to round-off.

Two kinds of quadrature weights coexist on purpose:
  * solver/weak forms use the uniform finite-volume weight dx^3 per entity;
  * reported L2/Lr norms use dual-volume weights (half on domain-boundary
    faces) so that constants integrate exactly.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation, GeometryError
from .geometry import AXES, GridTopology

CYCLIC = {0: (1, 2), 1: (2, 0), 2: (0, 1)}


# ---------------------------------------------------------------------------
# Field containers
# ---------------------------------------------------------------------------

def _check_finite(arr, what):
    if not np.isfinite(arr).all():
        raise ContractViolation(f"{what} contains non-finite values")


class ScalarField:
    kind = "cell"

    def __init__(self, topo: GridTopology, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (topo.n_cells,):
            raise ContractViolation(
                f"scalar field length {values.shape} != fluid cell count {topo.n_cells}")
        _check_finite(values, "scalar field")
        self.topo = topo
        self.values = values

    def grid(self):
        return self.topo.scatter_cells(self.values)

    @staticmethod
    def from_grid(topo, grid):
        return ScalarField(topo, topo.gather_cells(np.asarray(grid, dtype=float)))

    def copy(self):
        return ScalarField(self.topo, self.values.copy())

    def __add__(self, other):
        _same_kind(self, other)
        return ScalarField(self.topo, self.values + other.values)

    def __sub__(self, other):
        _same_kind(self, other)
        return ScalarField(self.topo, self.values - other.values)

    def __mul__(self, s):
        return ScalarField(self.topo, self.values * float(s))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


class _VectorField:
    def __init__(self, topo, comps, counts, what):
        comps = [np.asarray(c, dtype=float) for c in comps]
        for a, c in enumerate(comps):
            if c.shape != (counts[a],):
                raise ContractViolation(
                    f"{what} component {a} length {c.shape} != active count {counts[a]}")
            _check_finite(c, what)
        self.topo = topo
        self.comps = comps

    def copy(self):
        return type(self)(self.topo, [c.copy() for c in self.comps])

    def __add__(self, other):
        _same_kind(self, other)
        return type(self)(self.topo, [a + b for a, b in zip(self.comps, other.comps)])

    def __sub__(self, other):
        _same_kind(self, other)
        return type(self)(self.topo, [a - b for a, b in zip(self.comps, other.comps)])

    def __mul__(self, s):
        return type(self)(self.topo, [c * float(s) for c in self.comps])

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


class FaceField(_VectorField):
    kind = "face"

    def __init__(self, topo, comps):
        super().__init__(topo, comps, topo.n_faces, "face field")

    def grids(self):
        return self.topo.scatter_faces(self.comps)

    @staticmethod
    def from_grids(topo, grids):
        return FaceField(topo, topo.gather_faces([np.asarray(g, float) for g in grids]))

    @staticmethod
    def zeros(topo):
        return FaceField(topo, [np.zeros(m) for m in topo.n_faces])


class EdgeField(_VectorField):
    kind = "edge"

    def __init__(self, topo, comps):
        super().__init__(topo, comps, topo.n_edges, "edge field")

    def grids(self):
        return self.topo.scatter_edges(self.comps)

    @staticmethod
    def from_grids(topo, grids):
        return EdgeField(topo, topo.gather_edges([np.asarray(g, float) for g in grids]))

    @staticmethod
    def zeros(topo):
        return EdgeField(topo, [np.zeros(m) for m in topo.n_edges])


def _same_kind(a, b):
    if a.topo is not b.topo:
        raise ContractViolation("fields live on different topologies")
    if a.kind != b.kind:
        raise ContractViolation(f"entity kinds differ: {a.kind} vs {b.kind}")


# ---------------------------------------------------------------------------
# Boundary-condition policy for the scalar gradient
# ---------------------------------------------------------------------------

def _eval_data(data, axis, pts):
    if callable(data):
        return np.asarray(data(axis, pts), dtype=float)
    return np.full(len(pts), float(data))


class BoundaryPolicy:
    """Per-boundary-class closure for the gradient at boundary faces.

    Each of `obstacle` and `far` is one of
      ("neumann", None)    -- homogeneous natural: gradient 0 at the face;
      ("dirichlet", g)     -- one-sided ghost, value g at the ghost cell center;
      ("flux", g)          -- prescribed axis-gradient g at the face.
    g may be a scalar or a callable (axis, points) -> values.
    """

    def __init__(self, obstacle=("neumann", None), far=("neumann", None)):
        for name, spec in (("obstacle", obstacle), ("far", far)):
            if spec[0] not in ("neumann", "dirichlet", "flux"):
                raise ContractViolation(f"unknown {name} policy {spec[0]!r}")
        self.obstacle = obstacle
        self.far = far

    @staticmethod
    def neumann():
        return BoundaryPolicy()

    @staticmethod
    def dirichlet(obstacle=0.0, far=0.0):
        return BoundaryPolicy(("dirichlet", obstacle), ("dirichlet", far))

    def ghost_values(self, topo, which, axis):
        """Dirichlet ghost values for one face class, or None."""
        mode, data = getattr(self, which)
        if mode != "dirichlet":
            return None
        tab = boundary_table(topo, which, axis)
        return _eval_data(data, axis, tab["ghost_pts"])


def boundary_table(topo, which, axis):
    """Index tables for one boundary-face class of one axis family."""
    cache = topo.__dict__.setdefault("_btab_cache", {})
    key = (which, axis)
    tab = cache.get(key)
    if tab is not None:
        return tab
    idx = topo.obstacle_faces[axis] if which == "obstacle" else topo.far_faces[axis]
    sign = topo.face_sign[axis][tuple(idx.T)] if len(idx) else np.zeros(0, dtype=np.int8)
    fluid = idx.copy()
    ghost = idx.copy()
    if len(idx):
        fluid[:, axis] += np.where(sign > 0, -1, 0)
        ghost[:, axis] += np.where(sign > 0, 0, -1)
    ghost_pts = np.empty((len(idx), 3))
    face_pts = np.empty((len(idx), 3))
    dx, L = topo.dx, topo.L
    for a in AXES:
        if a == axis:
            face_pts[:, a] = idx[:, a] * dx - L if len(idx) else 0
            ghost_pts[:, a] = (ghost[:, a] + 0.5) * dx - L if len(idx) else 0
        else:
            face_pts[:, a] = (idx[:, a] + 0.5) * dx - L if len(idx) else 0
            ghost_pts[:, a] = face_pts[:, a]
    tab = {"faces": tuple(idx.T), "sign": sign, "fluid": tuple(fluid.T),
           "ghost_pts": ghost_pts, "face_pts": face_pts}
    cache[key] = tab
    return tab


# ---------------------------------------------------------------------------
# Discrete operators
# ---------------------------------------------------------------------------

def gradient(p: ScalarField, bc: BoundaryPolicy) -> FaceField:
    """Centered difference across interior faces; boundary faces per policy."""
    topo = p.topo
    dx = topo.dx
    grid = p.grid()
    out = []
    for axis in AXES:
        g = np.zeros(topo.face_active[axis].shape)
        sl_in = [slice(None)] * 3
        sl_in[axis] = slice(1, -1)
        d = (grid[tuple(_sl(axis, slice(1, None)))] -
             grid[tuple(_sl(axis, slice(0, -1)))]) / dx
        g[tuple(sl_in)] = d
        g[~topo.face_interior[axis]] = 0.0
        for which in ("obstacle", "far"):
            mode, data = getattr(bc, which)
            tab = boundary_table(topo, which, axis)
            if len(tab["sign"]) == 0:
                continue
            if mode == "neumann":
                vals = 0.0
            elif mode == "dirichlet":
                gv = _eval_data(data, axis, tab["ghost_pts"])
                vals = tab["sign"] * (gv - grid[tab["fluid"]]) / dx
            else:  # flux
                vals = _eval_data(data, axis, tab["face_pts"])
            g[tab["faces"]] = vals
        out.append(g)
    return FaceField.from_grids(topo, out)


def _sl(axis, s):
    v = [slice(None)] * 3
    v[axis] = s
    return v


def divergence(F: FaceField) -> ScalarField:
    """Signed flux sum over each FLUID cell divided by dx (all faces counted)."""
    topo = F.topo
    grids = F.grids()
    acc = np.zeros((topo.n,) * 3)
    for axis in AXES:
        g = grids[axis]
        acc += (g[tuple(_sl(axis, slice(1, None)))] -
                g[tuple(_sl(axis, slice(0, -1)))]) / topo.dx
    return ScalarField.from_grid(topo, acc)


def curl_face_to_edge(F: FaceField) -> EdgeField:
    """MAC circulation of a face field, on edges with complete stencils."""
    topo = F.topo
    n, dx = topo.n, topo.dx
    grids = F.grids()
    out = []
    for axis in AXES:
        t1, t2 = CYCLIC[axis]
        lo2, hi2 = _edge_face_pair_values(n, axis, t2, t1, grids[t2])
        lo1, hi1 = _edge_face_pair_values(n, axis, t1, t2, grids[t1])
        val = ((hi2 - lo2) - (hi1 - lo1)) / dx
        val[~topo.edge_curl_ok[axis]] = 0.0
        out.append(val)
    return EdgeField.from_grids(topo, out)


def curl_edge_to_face(E: EdgeField) -> FaceField:
    """MAC circulation of an edge field, on all active faces."""
    topo = E.topo
    dx = topo.dx
    grids = E.grids()
    out = []
    for axis in AXES:
        t1, t2 = CYCLIC[axis]
        # d/dt1 of E_t2: edges of family t2 sit at t1-nodes around t1-cells
        d1 = _node_pair_diff(grids[t2], t1) / dx
        d2 = _node_pair_diff(grids[t1], t2) / dx
        val = d1 - d2
        val[~topo.face_active[axis]] = 0.0
        out.append(val)
    return FaceField.from_grids(topo, out)


def _node_pair_diff(grid, axis):
    return grid[tuple(_sl(axis, slice(1, None)))] - grid[tuple(_sl(axis, slice(0, -1)))]


def _edge_face_pair_values(n, edge_axis, fam, trans, face_grid):
    big_shape = np.array(face_grid.shape)
    big_shape[trans] += 2
    big = np.zeros(tuple(big_shape))
    big[tuple(_sl(trans, slice(1, -1)))] = face_grid
    eshape = list(face_grid.shape)
    eshape[trans] += 1

    def view(offset):
        idx = []
        for a in AXES:
            if a == trans:
                idx.append(slice(offset, offset + eshape[a]))
            else:
                idx.append(slice(0, eshape[a]))
        return big[tuple(idx)]

    return view(0), view(1)


# ---------------------------------------------------------------------------
# Inner products and norms
# ---------------------------------------------------------------------------

def _weights(field):
    topo = field.topo
    if field.kind == "cell":
        return [np.full(topo.n_cells, topo.cell_weight)]
    if field.kind == "face":
        return [topo.face_weight[a].reshape(-1)[topo.face_index[a]] for a in AXES]
    return [topo.edge_weight[a].reshape(-1)[topo.edge_index[a]] for a in AXES]


def _flat_parts(field):
    if field.kind == "cell":
        return [field.values]
    return field.comps


def inner_product(a, b) -> float:
    """Volume-weighted L2 pairing; fields must share topology and kind."""
    _same_kind(a, b)
    tot = 0.0
    for wa, pa, pb in zip(_weights(a), _flat_parts(a), _flat_parts(b)):
        tot += float(np.sum(wa * pa * pb))
    return tot


def lr_norm(a, r) -> float:
    """(sum w |a|^r)^(1/r); r = inf gives the max norm."""
    if r == np.inf or r == "inf":
        return max((float(np.max(np.abs(p))) if p.size else 0.0)
                   for p in _flat_parts(a))
    r = float(r)
    if not r > 1.0:
        raise ContractViolation(f"Lr exponent r = {r} outside (1, inf]")
    tot = 0.0
    for wa, pa in zip(_weights(a), _flat_parts(a)):
        tot += float(np.sum(wa * np.abs(pa) ** r))
    return tot ** (1.0 / r)


def l2_norm(a) -> float:
    return np.sqrt(max(inner_product(a, a), 0.0))


# ---------------------------------------------------------------------------
# Analytic samplers
# ---------------------------------------------------------------------------

def sample_analytic(kind, params, topo):
    """Sample a named analytic field at cell or face centers."""
    if kind == "uniform":
        return _sample_uniform(topo, params)
    if kind == "ball_q0":
        return _sample_ball_q0(topo, params)
    if kind == "ball_grad_q0":
        return _sample_ball_grad_q0(topo, params)
    if kind == "biot_savart_loop":
        return _sample_biot_savart(topo, params)
    if kind == "solenoidal_bump":
        return _sample_solenoidal_bump(topo, params)
    if kind == "gradient_bump":
        return _sample_gradient_bump(topo, params)
    raise GeometryError(f"unknown analytic field kind {kind!r}")


def _sample_uniform(topo, params):
    vec = np.asarray(params.get("vector", _unit(params.get("axis", 2))), dtype=float)
    grids = []
    for axis in AXES:
        g = np.full(topo.face_active[axis].shape, vec[axis])
        g[~topo.face_active[axis]] = 0.0
        grids.append(g)
    return FaceField.from_grids(topo, grids)


def _unit(axis):
    v = np.zeros(3)
    v[int(axis)] = 1.0
    return v


def _sample_ball_q0(topo, params):
    a = float(params.get("a", 1.0))
    c = np.asarray(params.get("center", (0.0, 0.0, 0.0)), dtype=float)
    x, y, z = topo.cell_centers()
    r = np.sqrt((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2)
    r = np.maximum(r, 1e-300)
    return ScalarField.from_grid(topo, 1.0 - a / r)


def _sample_ball_grad_q0(topo, params):
    a = float(params.get("a", 1.0))
    c = np.asarray(params.get("center", (0.0, 0.0, 0.0)), dtype=float)
    grids = []
    for axis in AXES:
        x, y, z = topo.face_centers(axis)
        rel = (x - c[0], y - c[1], z - c[2])
        r3 = (rel[0] ** 2 + rel[1] ** 2 + rel[2] ** 2) ** 1.5
        r3 = np.maximum(r3, 1e-300)
        g = np.broadcast_to(a * rel[axis] / r3, topo.face_active[axis].shape).copy()
        g[~topo.face_active[axis]] = 0.0
        grids.append(g)
    return FaceField.from_grids(topo, grids)


def biot_savart(points, center, axis, radius, segments):
    """Unit-current loop field by midpoint quadrature over `segments` pieces."""
    center = np.asarray(center, dtype=float)
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    e1 = np.cross(axis, _unit(np.argmin(np.abs(axis))))
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    th = (np.arange(segments) + 0.5) * (2 * np.pi / segments)
    src = center + radius * (np.outer(np.cos(th), e1) + np.outer(np.sin(th), e2))
    dl = (2 * np.pi * radius / segments) * (-np.outer(np.sin(th), e1)
                                            + np.outer(np.cos(th), e2))
    points = np.asarray(points, dtype=float)
    out = np.zeros_like(points)
    chunk = max(1, int(2.0e7 // max(segments, 1)))
    for s in range(0, len(points), chunk):
        pts = points[s:s + chunk]
        rel = pts[:, None, :] - src[None, :, :]
        dist2 = np.sum(rel * rel, axis=-1)
        if np.min(dist2) < (1e-9 * radius) ** 2:
            raise GeometryError("biot_savart sample point lies on the loop")
        inv = dist2 ** -1.5
        cross = np.cross(np.broadcast_to(dl, rel.shape), rel)
        out[s:s + chunk] = np.sum(cross * inv[..., None], axis=1) / (4 * np.pi)
    return out


def _sample_biot_savart(topo, params):
    radius = float(params.get("radius", 1.0))
    center = params.get("center", (0.0, 0.0, 0.0))
    axis = params.get("axis", (0.0, 0.0, 1.0))
    segments = int(params.get("segments", 256))
    grids = []
    for fax in AXES:
        x, y, z = topo.face_centers(fax)
        shape = topo.face_active[fax].shape
        pts = np.stack([np.broadcast_to(x, shape).ravel(),
                        np.broadcast_to(y, shape).ravel(),
                        np.broadcast_to(z, shape).ravel()], axis=1)
        act = topo.face_active[fax].ravel()
        vals = np.zeros(len(pts))
        vals[act] = biot_savart(pts[act], center, axis, radius, segments)[:, fax]
        grids.append(vals.reshape(shape))
    return FaceField.from_grids(topo, grids)


def _gauss(x, y, z, center, width):
    r2 = (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2
    return np.exp(-0.5 * r2 / width ** 2)


def _sample_solenoidal_bump(topo, params):
    """Discrete curl of a Gaussian edge potential: exactly divergence-free."""
    center = np.asarray(params.get("center", (0.0, 0.0, 0.0)), dtype=float)
    width = float(params.get("width", 0.5))
    direction = np.asarray(params.get("axis", (0.0, 0.0, 1.0)), dtype=float)
    amp = float(params.get("amplitude", 1.0))
    grids = []
    for eax in AXES:
        x, y, z = topo.edge_centers(eax)
        g = amp * direction[eax] * _gauss(x, y, z, center, width)
        g = np.broadcast_to(g, topo.edge_active[eax].shape).copy()
        g[~topo.edge_active[eax]] = 0.0
        grids.append(g)
    return curl_edge_to_face(EdgeField.from_grids(topo, grids))


def _sample_gradient_bump(topo, params):
    """Discrete gradient of a Gaussian cell bump (zero-ghost closure)."""
    center = np.asarray(params.get("center", (0.0, 0.0, 0.0)), dtype=float)
    width = float(params.get("width", 0.5))
    amp = float(params.get("amplitude", 1.0))
    x, y, z = topo.cell_centers()
    p = ScalarField.from_grid(topo, amp * _gauss(x, y, z, center, width))
    return gradient(p, BoundaryPolicy.dirichlet(0.0, 0.0))


# ---------------------------------------------------------------------------
# Diagnostic helpers
# ---------------------------------------------------------------------------

def component_gradient_norm(F: FaceField, r=2.0) -> float:
    """Lr norm of one-sided differences of every component along every axis.

    Differences are taken between pairs of active same-family faces; this is
    the declared discrete choice for gradient-magnitude diagnostics.
    """
    topo = F.topo
    dx = topo.dx
    tot = 0.0
    r = float(r)
    grids = F.grids()
    for fax in AXES:
        g = grids[fax]
        act = topo.face_active[fax]
        for d in AXES:
            hi = tuple(_sl(d, slice(1, None)))
            lo = tuple(_sl(d, slice(0, -1)))
            both = act[hi] & act[lo]
            diff = (g[hi] - g[lo]) / dx
            tot += float(np.sum((np.abs(diff) ** r) * both) * dx ** 3)
    return tot ** (1.0 / r)


def restrict_to_ball(F: FaceField, radius, center=(0.0, 0.0, 0.0)) -> FaceField:
    """Zero all face values outside |x - center| <= radius."""
    topo = F.topo
    c = np.asarray(center, dtype=float)
    grids = []
    for axis in AXES:
        x, y, z = topo.face_centers(axis)
        r2 = (x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2
        keep = np.broadcast_to(r2 <= radius ** 2, topo.face_active[axis].shape)
        g = F.grids()[axis].copy()
        g[~keep] = 0.0
        grids.append(g)
    return FaceField.from_grids(topo, grids)


def mask_flavor_faces(F: FaceField, flavor) -> FaceField:
    """Impose the flavor boundary condition on a face field by masking.

    "x" zeroes normal components on obstacle-boundary faces.  "v" zeroes
    tangential components next to the obstacle: a face of axis a is masked if
    an adjacent cell touches the obstacle along some other axis d != a.
    """
    topo = F.topo
    grids = [g.copy() for g in F.grids()]
    if flavor == "x":
        for axis in AXES:
            grids[axis][topo.face_obstacle[axis]] = 0.0
    elif flavor == "v":
        touch = _obstacle_touch_directions(topo)
        for axis in AXES:
            tangent = np.zeros((topo.n,) * 3, dtype=bool)
            for d in AXES:
                if d != axis:
                    tangent |= touch[d]
            padded = np.zeros((topo.n + 2,) * 3, dtype=bool)
            padded[1:-1, 1:-1, 1:-1] = tangent
            lo = padded[tuple(_sl(axis, slice(0, -1)))]
            hi = padded[tuple(_sl(axis, slice(1, None)))]
            sl = [slice(1, -1)] * 3
            sl[axis] = slice(None)
            mask = (lo | hi)[tuple(sl)] & ~topo.face_obstacle[axis]
            grids[axis][mask] = 0.0
    else:
        raise ContractViolation(f"unknown flavor {flavor!r}")
    return FaceField.from_grids(topo, grids)


def _obstacle_touch_directions(topo):
    """touch[d][cell]: fluid cell has an obstacle face-neighbor along axis d."""
    fluid = topo.cell_fluid
    obst = ~fluid
    touch = []
    for axis in AXES:
        t = np.zeros_like(fluid)
        for s in (1, -1):
            shifted = np.roll(obst, s, axis=axis)
            # roll wraps around; wrapped entries are outside the box, not obstacle
            edge = [slice(None)] * 3
            edge[axis] = 0 if s == 1 else -1
            shifted[tuple(edge)] = False
            t |= fluid & shifted
        touch.append(t)
    return touch

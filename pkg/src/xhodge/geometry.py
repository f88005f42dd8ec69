"""Computational domain: a cube [-L, L]^3 minus an obstacle, as a classified MAC grid.

Cells are classified FLUID/OBSTACLE by the sign of the obstacle's signed
distance at cell centers.  Faces, edges and nodes derive activity masks from
the cell classification.  The resulting topology is immutable and shared by
all field containers and solvers.
"""

from __future__ import annotations

import numpy as np

from .errors import GeometryError

AXES = (0, 1, 2)


# ---------------------------------------------------------------------------
# Obstacle shapes
# ---------------------------------------------------------------------------

class Ball:
    def __init__(self, center=(0.0, 0.0, 0.0), radius=1.0):
        if radius <= 0:
            raise GeometryError("ball radius must be positive")
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def signed_distance(self, pts):
        return np.linalg.norm(pts - self.center, axis=-1) - self.radius

    def bounding_radius(self):
        return float(np.linalg.norm(self.center)) + self.radius

    def core_loops(self):
        return []

    def descriptor(self):
        return {"kind": "ball", "center": list(self.center), "radius": self.radius}


class SolidTorus:
    """Solid torus around `axis` through `center`; tube radius r_min < R_maj."""

    def __init__(self, center=(0.0, 0.0, 0.0), axis=(0.0, 0.0, 1.0),
                 major_radius=1.2, minor_radius=0.5):
        if minor_radius <= 0 or major_radius <= 0:
            raise GeometryError("torus radii must be positive")
        if minor_radius >= major_radius:
            raise GeometryError("torus requires minor_radius < major_radius")
        self.center = np.asarray(center, dtype=float)
        axis = np.asarray(axis, dtype=float)
        nrm = np.linalg.norm(axis)
        if nrm == 0:
            raise GeometryError("torus axis must be nonzero")
        self.axis = axis / nrm
        self.major_radius = float(major_radius)
        self.minor_radius = float(minor_radius)

    def signed_distance(self, pts):
        rel = pts - self.center
        z = rel @ self.axis
        perp = rel - np.multiply.outer(z, self.axis)
        rho = np.linalg.norm(perp, axis=-1)
        return np.sqrt((rho - self.major_radius) ** 2 + z * z) - self.minor_radius

    def bounding_radius(self):
        return float(np.linalg.norm(self.center)) + self.major_radius + self.minor_radius

    def core_loops(self):
        return [(self.center.copy(), self.axis.copy(), self.major_radius)]

    def descriptor(self):
        return {"kind": "solid_torus", "center": list(self.center),
                "axis": list(self.axis), "major_radius": self.major_radius,
                "minor_radius": self.minor_radius}


class Union:
    def __init__(self, parts):
        parts = list(parts)
        if not parts:
            raise GeometryError("union of zero shapes; use NoObstacle instead")
        self.parts = parts

    def signed_distance(self, pts):
        d = self.parts[0].signed_distance(pts)
        for p in self.parts[1:]:
            d = np.minimum(d, p.signed_distance(pts))
        return d

    def bounding_radius(self):
        return max(p.bounding_radius() for p in self.parts)

    def core_loops(self):
        loops = []
        for p in self.parts:
            loops.extend(p.core_loops())
        return loops

    def descriptor(self):
        return {"kind": "union", "parts": [p.descriptor() for p in self.parts]}


class NoObstacle:
    def signed_distance(self, pts):
        return np.full(pts.shape[:-1], np.inf)

    def bounding_radius(self):
        return 0.0

    def core_loops(self):
        return []

    def descriptor(self):
        return {"kind": "none"}


def shape_from_descriptor(desc):
    kind = desc.get("kind")
    if kind == "ball":
        return Ball(desc["center"], desc["radius"])
    if kind == "solid_torus":
        return SolidTorus(desc["center"], desc["axis"],
                          desc["major_radius"], desc["minor_radius"])
    if kind == "union":
        return Union([shape_from_descriptor(p) for p in desc["parts"]])
    if kind == "none":
        return NoObstacle()
    raise GeometryError(f"unknown obstacle kind {kind!r}")


class DomainSpec:
    """Half-width L, cells per axis n, and the obstacle shape."""

    def __init__(self, L, n, obstacle=None):
        self.L = float(L)
        self.n = int(n)
        self.obstacle = obstacle if obstacle is not None else NoObstacle()
        if self.n < 8:
            raise GeometryError(f"n = {self.n} < 8 is below the supported resolution")
        if self.L <= 0:
            raise GeometryError("L must be positive")
        dx = 2.0 * self.L / self.n
        if not isinstance(self.obstacle, NoObstacle):
            if self.obstacle.bounding_radius() + 2.0 * dx >= self.L:
                raise GeometryError(
                    "obstacle touches the box boundary: extent "
                    f"{self.obstacle.bounding_radius():.3f} + 2*dx >= L = {self.L}")

    @property
    def dx(self):
        return 2.0 * self.L / self.n

    def descriptor(self):
        return {"L": self.L, "n": self.n, "obstacle": self.obstacle.descriptor()}

    @staticmethod
    def from_descriptor(desc):
        return DomainSpec(desc["L"], desc["n"], shape_from_descriptor(desc["obstacle"]))


# ---------------------------------------------------------------------------
# Grid topology
# ---------------------------------------------------------------------------

def _face_shape(n, axis):
    s = [n, n, n]
    s[axis] += 1
    return tuple(s)


def _edge_shape(n, axis):
    s = [n + 1, n + 1, n + 1]
    s[axis] -= 1
    return tuple(s)


class GridTopology:
    """Classified staggered grid: cell mask, face/edge/node activity, boundary data.

    Face arrays are indexed so that face (i, j, k) of axis 0 separates cells
    (i-1, j, k) and (i, j, k); i = 0 and i = n lie on the box surface.  All
    arrays are immutable (writeable flag cleared).
    """

    def __init__(self, spec: DomainSpec):
        self.spec = spec
        self.n = spec.n
        self.L = spec.L
        self.dx = spec.dx
        n, L, dx = self.n, self.L, self.dx

        ax1 = (np.arange(n) + 0.5) * dx - L
        self.cell_coords = ax1                      # per-axis cell-center coordinates
        self.node_coords = np.arange(n + 1) * dx - L

        cx, cy, cz = np.meshgrid(ax1, ax1, ax1, indexing="ij")
        centers = np.stack([cx, cy, cz], axis=-1)
        sd = spec.obstacle.signed_distance(centers)
        self.cell_fluid = sd > 0.0
        if not self.cell_fluid.any():
            raise GeometryError("no FLUID cells: obstacle fills the whole box")

        fluid = self.cell_fluid
        pad = np.zeros([n + 2] * 3, dtype=bool)
        pad[1:-1, 1:-1, 1:-1] = fluid
        obst = np.zeros([n + 2] * 3, dtype=bool)
        obst[1:-1, 1:-1, 1:-1] = ~fluid

        # Face masks per axis: interior (fluid|fluid), obstacle boundary
        # (fluid|obstacle), far boundary (fluid|outside-box).
        self.face_interior = []
        self.face_obstacle = []
        self.face_far = []
        self.face_active = []
        self.face_sign = []       # outward (out of fluid) normal = sign * e_axis
        for axis in AXES:
            lo = [slice(1, -1)] * 3
            hi = [slice(1, -1)] * 3
            lo[axis] = slice(0, -1)
            hi[axis] = slice(1, None)
            f_lo = pad[tuple(lo)]     # cell on the low side of each face
            f_hi = pad[tuple(hi)]
            o_lo = obst[tuple(lo)]
            o_hi = obst[tuple(hi)]
            interior = f_lo & f_hi
            obstacle = (f_lo & o_hi) | (f_hi & o_lo)
            far = (f_lo ^ f_hi) & ~(o_lo | o_hi)
            sign = np.zeros(_face_shape(n, axis), dtype=np.int8)
            sign[f_lo & ~f_hi] = 1     # fluid below, normal points up/outward
            sign[f_hi & ~f_lo] = -1
            self.face_interior.append(interior)
            self.face_obstacle.append(obstacle)
            self.face_far.append(far)
            self.face_active.append(interior | obstacle | far)
            self.face_sign.append(sign)

        # Edge masks: an axis-a edge touches the 2x2 block of cells around it.
        self.edge_active = []
        self.edge_surface = []     # touches both fluid and obstacle cells
        self.edge_curl_ok = []     # all 4 surrounding faces active (complete stencil)
        for axis in AXES:
            t1, t2 = [a for a in AXES if a != axis]
            sl = [slice(None)] * 3
            sl[axis] = slice(1, -1)
            padf = pad[tuple(sl)]
            pado = obst[tuple(sl)]
            nf = np.zeros(_edge_shape(n, axis), dtype=np.int8)
            no = np.zeros(_edge_shape(n, axis), dtype=np.int8)
            for d1 in (0, 1):
                for d2 in (0, 1):
                    blk = [slice(None)] * 3
                    blk[t1] = slice(d1, d1 + n + 1)
                    blk[t2] = slice(d2, d2 + n + 1)
                    nf += padf[tuple(blk)]
                    no += pado[tuple(blk)]
            self.edge_active.append(nf > 0)
            self.edge_surface.append((nf > 0) & (no > 0))

        self.edge_strict_interior = []   # curl stencil made of interior faces only
        for axis in AXES:
            # The curl stencil of an axis-a edge uses the two transverse face
            # families, each adjacent across the other transverse direction.
            t1, t2 = [a for a in AXES if a != axis]
            ok = np.ones(_edge_shape(n, axis), dtype=bool)
            strict = np.ones(_edge_shape(n, axis), dtype=bool)
            for fam, trans in ((t1, t2), (t2, t1)):
                lo, hi = _edge_face_pair_views(n, axis, fam, trans, self.face_active[fam])
                ok &= lo & hi
                slo, shi = _edge_face_pair_views(n, axis, fam, trans,
                                                 self.face_interior[fam])
                strict &= slo & shi
            self.edge_curl_ok.append(ok)
            self.edge_strict_interior.append(strict)

        # Node activity and fluid-cell adjacency counts (for diagnostics weights).
        nodal = np.zeros((n + 1, n + 1, n + 1), dtype=np.int8)
        for di in (0, 1):
            for dj in (0, 1):
                for dk in (0, 1):
                    nodal += pad[di:di + n + 1, dj:dj + n + 1, dk:dk + n + 1]
        self.node_fluid_count = nodal
        self.node_active = nodal > 0

        # Boundary face index lists + normals.
        self.obstacle_faces = []   # per axis: integer index arrays (i, j, k)
        self.far_faces = []
        self.obstacle_face_normals = []  # smoothed normals at obstacle face centers
        eps = 1e-6 * dx
        for axis in AXES:
            idx = np.argwhere(self.face_obstacle[axis])
            self.obstacle_faces.append(idx)
            self.far_faces.append(np.argwhere(self.face_far[axis]))
            if idx.size:
                pts = self._face_centers(axis, idx)
                grad = np.empty((len(idx), 3))
                for a in AXES:
                    step = np.zeros(3)
                    step[a] = eps
                    grad[:, a] = (spec.obstacle.signed_distance(pts + step)
                                  - spec.obstacle.signed_distance(pts - step)) / (2 * eps)
                nrm = np.linalg.norm(grad, axis=1)
                nrm[nrm == 0] = 1.0
                # outward from the fluid = into the obstacle = -grad(sdf)
                self.obstacle_face_normals.append(-grad / nrm[:, None])
            else:
                self.obstacle_face_normals.append(np.zeros((0, 3)))

        # Flat index maps (C-order positions of active entries).
        self.cell_index = np.flatnonzero(fluid.ravel())
        self.face_index = [np.flatnonzero(self.face_active[a].ravel()) for a in AXES]
        self.edge_index = [np.flatnonzero(self.edge_active[a].ravel()) for a in AXES]
        self.n_cells = self.cell_index.size
        self.n_faces = [ix.size for ix in self.face_index]
        self.n_edges = [ix.size for ix in self.edge_index]

        # Public L2 weights: full dual volume inside, half on domain boundary faces.
        self.cell_weight = dx ** 3
        self.face_weight = []
        for axis in AXES:
            w = np.zeros(_face_shape(n, axis))
            w[self.face_interior[axis]] = dx ** 3
            w[self.face_obstacle[axis] | self.face_far[axis]] = 0.5 * dx ** 3
            self.face_weight.append(w)
        self.edge_weight = [self._edge_weight(axis) for axis in AXES]

        for arrs in (self.face_interior, self.face_obstacle, self.face_far,
                     self.face_active, self.face_sign, self.edge_active,
                     self.edge_surface, self.edge_curl_ok, self.face_weight,
                     self.edge_weight):
            for arr in arrs:
                arr.setflags(write=False)
        self.cell_fluid.setflags(write=False)
        self.node_active.setflags(write=False)

    def _edge_weight(self, axis):
        n = self.n
        t1, t2 = [a for a in AXES if a != axis]
        pad = np.zeros([n + 2] * 3, dtype=np.int8)
        pad[1:-1, 1:-1, 1:-1] = self.cell_fluid
        sl = [slice(None)] * 3
        sl[axis] = slice(1, -1)
        padf = pad[tuple(sl)]
        cnt = np.zeros(_edge_shape(n, axis), dtype=np.int8)
        for d1 in (0, 1):
            for d2 in (0, 1):
                blk = [slice(None)] * 3
                blk[t1] = slice(d1, d1 + n + 1)
                blk[t2] = slice(d2, d2 + n + 1)
                cnt += padf[tuple(blk)]
        return cnt * (self.dx ** 3 / 4.0)

    def _face_centers(self, axis, idx):
        n, dx, L = self.n, self.dx, self.L
        pts = np.empty((len(idx), 3))
        for a in AXES:
            if a == axis:
                pts[:, a] = idx[:, a] * dx - L
            else:
                pts[:, a] = (idx[:, a] + 0.5) * dx - L
        return pts

    # -- entity center coordinate grids -------------------------------------

    def face_centers(self, axis):
        """Coordinate arrays (3 broadcastable 3D arrays) of axis-face centers."""
        coords = []
        for a in AXES:
            c = self.node_coords if a == axis else self.cell_coords
            shape = [1, 1, 1]
            shape[a] = -1
            coords.append(c.reshape(shape))
        return coords

    def edge_centers(self, axis):
        coords = []
        for a in AXES:
            c = self.cell_coords if a == axis else self.node_coords
            shape = [1, 1, 1]
            shape[a] = -1
            coords.append(c.reshape(shape))
        return coords

    def cell_centers(self):
        c = self.cell_coords
        return c.reshape(-1, 1, 1), c.reshape(1, -1, 1), c.reshape(1, 1, -1)

    # -- flat <-> grid scatter/gather ----------------------------------------

    def scatter_cells(self, flat):
        out = np.zeros(self.n ** 3)
        out[self.cell_index] = flat
        return out.reshape((self.n,) * 3)

    def gather_cells(self, grid):
        return grid.reshape(-1)[self.cell_index].copy()

    def scatter_faces(self, comps):
        out = []
        for axis in AXES:
            g = np.zeros(_face_shape(self.n, axis)).reshape(-1)
            g[self.face_index[axis]] = comps[axis]
            out.append(g.reshape(_face_shape(self.n, axis)))
        return out

    def gather_faces(self, grids):
        return [grids[a].reshape(-1)[self.face_index[a]].copy() for a in AXES]

    def scatter_edges(self, comps):
        out = []
        for axis in AXES:
            g = np.zeros(_edge_shape(self.n, axis)).reshape(-1)
            g[self.edge_index[axis]] = comps[axis]
            out.append(g.reshape(_edge_shape(self.n, axis)))
        return out

    def gather_edges(self, grids):
        return [grids[a].reshape(-1)[self.edge_index[a]].copy() for a in AXES]

    @property
    def fluid_fraction(self):
        return self.cell_fluid.sum() / self.n ** 3


def _onehot(axis):
    v = np.zeros(3, dtype=int)
    v[axis] = 1
    return v


def _edge_face_pair_views(n, edge_axis, face_axis, trans, face_active):
    """Activity of the two face-(face_axis) neighbors of each edge-(edge_axis).

    The edge at node-position along `trans` sees faces at trans-offsets -1, 0.
    Returns (low, high) boolean arrays shaped like the edge array; out-of-range
    faces count as inactive.
    """
    eshape = _edge_shape(n, edge_axis)
    big = np.zeros(np.array(face_active.shape) + 2 * _onehot(trans), dtype=bool)
    sl = [slice(None)] * 3
    sl[trans] = slice(1, -1)
    big[tuple(sl)] = face_active

    def view(offset):
        out = np.empty(eshape, dtype=bool)
        idx = []
        for a in AXES:
            if a == trans:
                idx.append(slice(offset, offset + eshape[a]))
            else:
                idx.append(slice(0, eshape[a]))
        return big[tuple(idx)]

    return view(0), view(1)


def build_domain(spec: DomainSpec) -> GridTopology:
    """Classify the grid for `spec`; deterministic for a fixed spec."""
    return GridTopology(spec)


def surface_measure(topo: GridTopology):
    """Raw and normal-projected boundary areas.

    The raw staircase area over-counts curved surfaces; the projected area
    weights each face by |axis . smoothed normal| and converges to the true
    area under refinement.
    """
    dx2 = topo.dx ** 2
    obstacle_raw = sum(len(ix) for ix in topo.obstacle_faces) * dx2
    far_area = sum(len(ix) for ix in topo.far_faces) * dx2
    projected = 0.0
    for axis in AXES:
        nrm = topo.obstacle_face_normals[axis]
        if len(nrm):
            projected += np.abs(nrm[:, axis]).sum() * dx2
    return {"obstacle_area": obstacle_raw,
            "obstacle_area_projected": projected,
            "far_area": far_area}

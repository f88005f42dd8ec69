"""Decomposition pipelines u = h + rot w + grad p, diagnostics, harmonic-space
dimension estimation, and div-rot inequality probes.

The harmonic part is always the residual h = u - rot w - grad p; its harmonic
character (small divergence, curl and boundary traces) is measured and
reported, never enforced.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation, SolverError
from .fieldops import (AXES, BoundaryPolicy, FaceField, ScalarField,
                       boundary_table, component_gradient_norm,
                       curl_face_to_edge, divergence, gradient, inner_product,
                       l2_norm, lr_norm, mask_flavor_faces, restrict_to_ball,
                       sample_analytic, _sl)
from .geometry import GridTopology, NoObstacle
from .linsolve import SolveOptions
from .scalarpotential import (FREE_CONSTANT, NATURAL_NEUMANN, ZERO_DIRICHLET,
                              solve_pressure)
from .vecpotential import (V_FLAVOR, X_FLAVOR, edge_divergence_norm,
                           solve_vector_potential)

NORMAL_HARMONIC = "normal"
TANGENTIAL_HARMONIC = "tangential"


# ---------------------------------------------------------------------------
# Result containers
# ---------------------------------------------------------------------------

class HodgeParts:
    """The triple (h, w, p) with the far-field constant and branch labels."""

    def __init__(self, h, w, p, lam, flavor, far_mode, rot_w, grad_p):
        self.h = h
        self.w = w
        self.p = p
        self.lam = float(lam)
        self.flavor = flavor
        self.far_mode = far_mode
        self.rot_w = rot_w
        self.grad_p = grad_p

    def reconstruct(self) -> FaceField:
        return self.h + self.rot_w + self.grad_p

    def pressure_policy(self) -> BoundaryPolicy:
        if self.far_mode == NATURAL_NEUMANN:
            return BoundaryPolicy.neumann()
        return BoundaryPolicy(("dirichlet", 0.0), ("dirichlet", self.lam))


class DiagnosticsReport:
    """Flat bag of residual norms, trace sums, orthogonality products and
    stability ratios for one decomposition run."""

    _float_keys = None

    def __init__(self, **kw):
        self.__dict__.update(kw)

    def to_dict(self):
        keys = ["n", "L", "flavor", "far_mode", "lam",
                "u_norm", "h_norm", "rotw_norm", "gradp_norm",
                "reconstruction_rel_err", "div_h_rel", "rot_h_rel",
                "div_w_norm",
                "trace_normal_total", "trace_normal_obstacle", "trace_normal_far",
                "trace_tangential_obstacle",
                "ortho_h_gradp", "ortho_h_rotw", "ortho_gradp_rotw",
                "p_iterations", "p_residual", "w_iterations", "w_residual"]
        out = {}
        for k in keys:
            out[k] = getattr(self, k)
        for r in sorted(self.stability_ratio):
            out[f"stability_r{r:g}"] = self.stability_ratio[r]
        return out


class HarmonicBasisEstimate:
    def __init__(self, flavor, far_mode, dimension, basis, singular_values):
        self.flavor = flavor
        self.far_mode = far_mode
        self.dimension = int(dimension)
        self.basis = list(basis)
        self.singular_values = list(singular_values)


# ---------------------------------------------------------------------------
# Trace and orthogonality diagnostics
# ---------------------------------------------------------------------------

def boundary_flux(F: FaceField, which: str) -> float:
    """Signed sum of F . nu over one boundary patch (nu out of the fluid)."""
    topo = F.topo
    grids = F.grids()
    tot = 0.0
    for axis in AXES:
        tab = boundary_table(topo, which, axis)
        if len(tab["sign"]) == 0:
            continue
        tot += float(np.sum(tab["sign"] * grids[axis][tab["faces"]]))
    return tot * topo.dx ** 2


def normal_trace_pairing(h: FaceField, q: ScalarField) -> float:
    """Discrete weak trace <gamma_nu h, q> = (h, grad q)_interior + (div h, q).

    The interior-face pairing and the full divergence differ exactly by the
    boundary flux of h weighted by near-boundary values of q.
    """
    gq = gradient(q, BoundaryPolicy.neumann())
    tot = 0.0
    for axis in AXES:
        keep = h.topo.face_interior[axis]
        gh = h.grids()[axis]
        gg = gq.grids()[axis]
        tot += float(np.sum(np.where(keep, gh * gg, 0.0))) * h.topo.dx ** 3
    tot += inner_product(divergence(h), q)
    return tot


def obstacle_surface_traces(F: FaceField):
    """RMS normal and tangential traces of F on the obstacle surface.

    The full vector is reconstructed at each obstacle face center (own normal
    component plus averaged tangential neighbors) and split against the
    smoothed signed-distance normal; axis-aligned staircase normals would make
    these diagnostics meaningless for curved obstacles.
    Returns (normal_rms, tangential_rms, magnitude_rms).
    """
    topo = F.topo
    grids = F.grids()
    n2 = t2 = m2 = 0.0
    count = 0
    for axis in AXES:
        tab = boundary_table(topo, "obstacle", axis)
        m = len(tab["sign"])
        if m == 0:
            continue
        fluid = tab["fluid"]
        vec = np.zeros((m, 3))
        vec[:, axis] = grids[axis][tab["faces"]]
        for t in AXES:
            if t == axis:
                continue
            g = grids[t]
            vlo = g[fluid]
            hi = list(fluid)
            hi[t] = fluid[t] + 1
            vhi = g[tuple(hi)]
            vec[:, t] = 0.5 * (vlo + vhi)
        nu = topo.obstacle_face_normals[axis]
        ncomp = np.sum(vec * nu, axis=1)
        tang = vec - ncomp[:, None] * nu
        n2 += float(np.sum(ncomp ** 2))
        t2 += float(np.sum(tang ** 2))
        m2 += float(np.sum(vec ** 2))
        count += m
    if count == 0:
        return 0.0, 0.0, 0.0
    return (np.sqrt(n2 / count), np.sqrt(t2 / count), np.sqrt(m2 / count))


def tangential_surface_rms(h: FaceField) -> float:
    return obstacle_surface_traces(h)[1]


def _rms_volume(F: FaceField) -> float:
    w = sum(float(np.sum(wt)) for wt in
            (F.topo.face_weight[a].reshape(-1)[F.topo.face_index[a]] for a in AXES))
    return l2_norm(F) / np.sqrt(max(w, 1e-300))


def _safe_ratio(a, b):
    return a / b if b > 0 else 0.0


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------

def _run_decomposition(u, flavor, far_mode, w_deflation, opts, r_list):
    topo = u.topo
    try:
        p_sol = solve_pressure(u, far_mode, opts)
    except SolverError as e:
        raise SolverError(f"pressure stage: {e}", e.stats) from e
    try:
        w_flavor = V_FLAVOR if flavor == NORMAL_HARMONIC else X_FLAVOR
        w_sol = solve_vector_potential(u, w_flavor, w_deflation, opts)
    except SolverError as e:
        raise SolverError(f"vector-potential stage: {e}", e.stats) from e

    grad_p = p_sol.grad()
    if far_mode == NATURAL_NEUMANN:
        # The weak Neumann problem carries the natural condition
        # dp/dnu = u.nu; the flux-consistent reconstruction realizes it
        # exactly, so the residual h has zero normal trace on both boundaries
        # instead of inheriting u's boundary fluxes.
        grad_p = _with_boundary_fluxes_from(grad_p, u)
    rot_w = w_sol.rot()
    h = u - rot_w - grad_p
    parts = HodgeParts(h, w_sol.w, p_sol.p, p_sol.lam, flavor, far_mode,
                       rot_w, grad_p)
    report = diagnose(u, parts, p_sol, w_sol, r_list)
    return parts, report


def _with_boundary_fluxes_from(grad_p: FaceField, u: FaceField) -> FaceField:
    topo = grad_p.topo
    gg = [g.copy() for g in grad_p.grids()]
    ug = u.grids()
    for axis in AXES:
        bnd = topo.face_obstacle[axis] | topo.face_far[axis]
        gg[axis][bnd] = ug[axis][bnd]
    return FaceField.from_grids(topo, gg)


def decompose_normal(u: FaceField, opts: SolveOptions | None = None,
                     w_deflation=(), r_list=(2.0,)):
    """Normal-trace pipeline: Neumann pressure, tangential-zero potential."""
    return _run_decomposition(u, NORMAL_HARMONIC, NATURAL_NEUMANN,
                              w_deflation, opts, r_list)


def decompose_tangential(u: FaceField, far: str,
                         opts: SolveOptions | None = None,
                         w_deflation=(), r_list=(2.0,)):
    """Tangential-trace pipeline: Dirichlet-branch pressure, normal-zero potential."""
    if far not in (ZERO_DIRICHLET, FREE_CONSTANT):
        raise ContractViolation(
            f"tangential pipeline needs a Dirichlet far mode, got {far!r}")
    return _run_decomposition(u, TANGENTIAL_HARMONIC, far, w_deflation, opts, r_list)


def diagnose(u, parts: HodgeParts, p_sol=None, w_sol=None, r_list=(2.0,)):
    """Assemble the diagnostics report for a (possibly reloaded) decomposition."""
    topo = u.topo
    h, rot_w, grad_p = parts.h, parts.rot_w, parts.grad_p
    u_norm = l2_norm(u)
    h_norm = l2_norm(h)
    rotw_norm = l2_norm(rot_w)
    gradp_norm = l2_norm(grad_p)
    recon = parts.reconstruct()
    rec_err = _safe_ratio(l2_norm(recon - u), u_norm)

    div_h = l2_norm(divergence(h))
    rot_h = l2_norm(curl_face_to_edge(h))
    h_rms = _rms_volume(h)
    area_o = sum(len(ix) for ix in topo.obstacle_faces) * topo.dx ** 2
    area_f = sum(len(ix) for ix in topo.far_faces) * topo.dx ** 2
    flux_o = boundary_flux(h, "obstacle")
    flux_f = boundary_flux(h, "far")

    def patch_rel(flux, area):
        return _safe_ratio(abs(flux), max(area, 1e-300) * max(h_rms, 1e-300))

    ortho = {}
    for key, (a, b, na, nb) in {
        "ortho_h_gradp": (h, grad_p, h_norm, gradp_norm),
        "ortho_h_rotw": (h, rot_w, h_norm, rotw_norm),
        "ortho_gradp_rotw": (grad_p, rot_w, gradp_norm, rotw_norm),
    }.items():
        ortho[key] = _safe_ratio(abs(inner_product(a, b)), na * nb) \
            if na > 0 and nb > 0 else 0.0

    stability = {}
    for r in r_list:
        r = float(r)
        num = (lr_norm(h, r) + _edge_component_gradient_norm(parts.w, r)
               + lr_norm(grad_p, r))
        stability[r] = _safe_ratio(num, lr_norm(u, r))

    return DiagnosticsReport(
        n=topo.n, L=topo.L, flavor=parts.flavor, far_mode=parts.far_mode,
        lam=parts.lam,
        u_norm=u_norm, h_norm=h_norm, rotw_norm=rotw_norm, gradp_norm=gradp_norm,
        reconstruction_rel_err=rec_err,
        div_h_rel=_safe_ratio(div_h, u_norm),
        rot_h_rel=_safe_ratio(rot_h, u_norm),
        div_w_norm=(w_sol.div_norm if w_sol is not None
                    else edge_divergence_norm(
                        topo, parts.w,
                        V_FLAVOR if parts.flavor == NORMAL_HARMONIC else X_FLAVOR)),
        trace_normal_total=patch_rel(flux_o + flux_f, area_o + area_f),
        trace_normal_obstacle=patch_rel(flux_o, area_o) if area_o else 0.0,
        trace_normal_far=patch_rel(flux_f, area_f),
        trace_tangential_obstacle=_safe_ratio(tangential_surface_rms(h),
                                              max(h_rms, 1e-300)),
        **ortho,
        stability_ratio=stability,
        p_iterations=(p_sol.stats.iterations if p_sol else -1),
        p_residual=(p_sol.stats.rel_residual if p_sol else np.nan),
        w_iterations=(w_sol.stats.iterations if w_sol else -1),
        w_residual=(w_sol.stats.rel_residual if w_sol else np.nan),
    )


def _edge_component_gradient_norm(w, r=2.0):
    """One-sided component differences of the edge potential, Lr, uniform weights."""
    topo = w.topo
    dx = topo.dx
    grids = w.grids()
    tot = 0.0
    r = float(r)
    for eax in AXES:
        g = grids[eax]
        act = topo.edge_active[eax]
        for d in AXES:
            hi = tuple(_sl(d, slice(1, None)))
            lo = tuple(_sl(d, slice(0, -1)))
            both = act[hi] & act[lo]
            diff = (g[hi] - g[lo]) / dx
            tot += float(np.sum((np.abs(diff) ** r) * both) * dx ** 3)
    return tot ** (1.0 / r)


# ---------------------------------------------------------------------------
# Harmonic-dimension estimation
# ---------------------------------------------------------------------------

def build_probe_suite(topo: GridTopology, n_probes: int, seed: int):
    """Deterministic probe fields: uniforms, obstacle-flux monopoles, core-loop
    fields for each handle, then random solenoidal bumps."""
    rng = np.random.default_rng(seed)
    probes = []
    for axis in AXES:
        probes.append(("uniform_e%d" % axis,
                       sample_analytic("uniform", {"axis": axis}, topo)))
    shape = topo.spec.obstacle
    if not isinstance(shape, NoObstacle):
        for k, center in enumerate(_shape_centers(shape)):
            probes.append((f"monopole_{k}",
                           sample_analytic("ball_grad_q0",
                                           {"a": 1.0, "center": center}, topo)))
        for k, (center, axis, radius) in enumerate(shape.core_loops()):
            probes.append((f"core_loop_{k}",
                           sample_analytic("biot_savart_loop",
                                           {"center": center, "axis": axis,
                                            "radius": radius, "segments": 128},
                                           topo)))
    i = 0
    while len(probes) < n_probes:
        center = rng.uniform(-0.5 * topo.L, 0.5 * topo.L, size=3)
        width = topo.L * rng.uniform(0.08, 0.2)
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        probes.append((f"bump_{i}",
                       sample_analytic("solenoidal_bump",
                                       {"center": center, "width": width,
                                        "axis": direction}, topo)))
        i += 1
    return probes


def _shape_centers(shape):
    if hasattr(shape, "parts"):
        out = []
        for p in shape.parts:
            out.extend(_shape_centers(p))
        return out
    return [np.asarray(shape.center, dtype=float)]


def interior_l2(F: FaceField) -> float:
    """L2 norm over interior faces only (boundary layers excluded)."""
    topo = F.topo
    tot = 0.0
    grids = F.grids()
    for axis in AXES:
        keep = topo.face_interior[axis]
        tot += float(np.sum(np.where(keep, grids[axis] ** 2, 0.0)))
    return np.sqrt(tot * topo.dx ** 3)


HARMONIC_QUALITY_CAP = 1e-3


def estimate_harmonic_dimension(topo: GridTopology, flavor: str,
                                far: str = ZERO_DIRICHLET, n_probes: int = 8,
                                svd_tol: float = 0.05, seed: int = 42,
                                opts: SolveOptions | None = None,
                                rel_floor: float = 1e-5,
                                quality_factor: float = 10.0) -> HarmonicBasisEstimate:
    """Probe the decomposition pipeline and rank-estimate the residual space.

    Residuals whose interior mass is below rel_floor of their probe are
    discarded as pipeline zeros.  Survivors count as harmonic only if their
    scaled div/rot defect dx*(||div h|| + ||rot h||)/||h|| is small in an
    absolute sense (HARMONIC_QUALITY_CAP) or within quality_factor of the best
    candidate: genuine discrete-harmonic residuals sit at solver tolerance,
    truncation junk sits orders of magnitude above it.  The dimension is the
    numerical rank of the normalized residuals' L2 Gram matrix at svd_tol.
    """
    if n_probes < 8:
        raise ContractViolation(f"n_probes = {n_probes} < 8")
    probes = build_probe_suite(topo, n_probes, seed)
    cands = []
    for name, u in probes:
        if flavor == NORMAL_HARMONIC:
            parts, rep = decompose_normal(u, opts)
        else:
            parts, rep = decompose_tangential(u, far, opts)
        hn = l2_norm(parts.h)
        if interior_l2(parts.h) < rel_floor * max(rep.u_norm, 1e-300):
            continue
        quality = topo.dx * (l2_norm(divergence(parts.h))
                             + l2_norm(curl_face_to_edge(parts.h))) / max(hn, 1e-300)
        cands.append((name, parts.h, hn, quality))

    if cands:
        best = min(c[3] for c in cands)
        if best > HARMONIC_QUALITY_CAP:
            cands = []
        else:
            cap = max(quality_factor * best, HARMONIC_QUALITY_CAP)
            cands = [c for c in cands if c[3] <= cap]
    if not cands:
        return HarmonicBasisEstimate(flavor, far, 0, [], [])

    normalized = [c[1] * (1.0 / c[2]) for c in cands]
    m = len(normalized)
    gram = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            gram[i, j] = gram[j, i] = inner_product(normalized[i], normalized[j])
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1]
    svals = np.sqrt(np.maximum(evals[order], 0.0))
    if svals[0] <= 0:
        return HarmonicBasisEstimate(flavor, far, 0, [], list(svals))
    dim = int(np.sum(svals >= svd_tol * svals[0]))

    basis = []
    for k in range(dim):
        acc = None
        for i in range(m):
            term = normalized[i] * float(evecs[i, order[k]])
            acc = term if acc is None else acc + term
        nrm = l2_norm(acc)
        if nrm > 0:
            basis.append(acc * (1.0 / nrm))
    basis = _l2_orthonormalize(basis)
    basis = [_canonical_sign(topo, b) for b in basis]
    return HarmonicBasisEstimate(flavor, far, len(basis), basis, list(svals))


def _l2_orthonormalize(fields):
    out = []
    for f in fields:
        g = f
        for q in out:
            g = g - q * inner_product(q, g)
        nrm = l2_norm(g)
        if nrm > 1e-10:
            out.append(g * (1.0 / nrm))
    return out


def _canonical_sign(topo, field):
    loops = topo.spec.obstacle.core_loops() if not isinstance(
        topo.spec.obstacle, NoObstacle) else []
    if loops:
        circ = threading_circulation(field, default_threading_loop(topo))
        if abs(circ) > 1e-12 and circ < 0:
            return field * -1.0
        if abs(circ) > 1e-12:
            return field
    mono = sample_analytic("ball_grad_q0",
                           {"a": 1.0, "center": _probe_center(topo)}, topo)
    if inner_product(field, mono) < 0:
        return field * -1.0
    return field


def _probe_center(topo):
    shape = topo.spec.obstacle
    if isinstance(shape, NoObstacle):
        return (0.0, 0.0, 0.0)
    return _shape_centers(shape)[0]


# ---------------------------------------------------------------------------
# Circulation along a threading loop
# ---------------------------------------------------------------------------

def interpolate_face_field(F: FaceField, pts):
    """Component-wise trilinear interpolation on each staggered sub-grid."""
    topo = F.topo
    n, dx, L = topo.n, topo.dx, topo.L
    pts = np.asarray(pts, dtype=float)
    out = np.zeros_like(pts)
    grids = F.grids()
    for axis in AXES:
        g = grids[axis]
        idx = np.empty_like(pts)
        for a in AXES:
            if a == axis:
                idx[:, a] = (pts[:, a] + L) / dx          # node-aligned
            else:
                idx[:, a] = (pts[:, a] + L) / dx - 0.5    # center-aligned
        base = np.floor(idx).astype(int)
        frac = idx - base
        shape = g.shape
        val = np.zeros(len(pts))
        for d0 in (0, 1):
            for d1 in (0, 1):
                for d2 in (0, 1):
                    w = ((frac[:, 0] if d0 else 1 - frac[:, 0])
                         * (frac[:, 1] if d1 else 1 - frac[:, 1])
                         * (frac[:, 2] if d2 else 1 - frac[:, 2]))
                    i = np.clip(base[:, 0] + d0, 0, shape[0] - 1)
                    j = np.clip(base[:, 1] + d1, 0, shape[1] - 1)
                    k = np.clip(base[:, 2] + d2, 0, shape[2] - 1)
                    val += w * g[i, j, k]
        out[:, axis] = val
    return out


def default_threading_loop(topo: GridTopology, steps_per_unit=None):
    """Closed rectangular polyline through the first handle of the obstacle."""
    loops = topo.spec.obstacle.core_loops()
    if not loops:
        raise SolverError("obstacle has no handle to thread")
    center, axis, radius = loops[0]
    axis = np.asarray(axis, dtype=float)
    e1 = np.cross(axis, [1.0, 0.0, 0.0])
    if np.linalg.norm(e1) < 0.5:
        e1 = np.cross(axis, [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    shape = topo.spec.obstacle
    r_min = getattr(shape, "minor_radius", 0.3)
    half_h = r_min + 3 * topo.dx
    r_out = radius + r_min + 3 * topo.dx
    corners = [center - half_h * axis, center + half_h * axis,
               center + half_h * axis + r_out * e1,
               center - half_h * axis + r_out * e1,
               center - half_h * axis]
    step = topo.dx / 2 if steps_per_unit is None else 1.0 / steps_per_unit
    pts = []
    for a, b in zip(corners[:-1], corners[1:]):
        seg = np.linalg.norm(b - a)
        m = max(2, int(np.ceil(seg / step)))
        for t in np.linspace(0.0, 1.0, m, endpoint=False):
            pts.append(a + t * (b - a))
    pts.append(corners[-1])
    return np.asarray(pts)


def threading_circulation(F: FaceField, loop_pts) -> float:
    """Line integral of F along a closed polyline by midpoint quadrature."""
    loop_pts = np.asarray(loop_pts, dtype=float)
    seg = loop_pts[1:] - loop_pts[:-1]
    mids = 0.5 * (loop_pts[1:] + loop_pts[:-1])
    vals = interpolate_face_field(F, mids)
    return float(np.sum(vals * seg))


# ---------------------------------------------------------------------------
# div-rot inequality probes
# ---------------------------------------------------------------------------

def inequality_probe(topo: GridTopology, fields, flavor: str,
                     r_list=(1.5, 2.0, 3.0), basis=()):
    """Ratios of ||grad u||_r against rot/div/collar norms for masked fields.

    The collar is the ball of radius (obstacle extent + 2) around the origin
    intersected with the fluid region.  Gradient norms use the one-sided
    component-difference stencil declared in the report header.
    """
    shape = topo.spec.obstacle
    extent = 0.0 if isinstance(shape, NoObstacle) else shape.bounding_radius()
    collar_r = extent + 2.0
    rows = []
    for label, F in fields:
        Fm = mask_flavor_faces(F, "x" if flavor in (X_FLAVOR, TANGENTIAL_HARMONIC)
                               else "v")
        for r in r_list:
            r = float(r)
            grad_n = component_gradient_norm(Fm, r)
            rot_n = lr_norm(curl_face_to_edge(Fm), r)
            div_n = lr_norm(divergence(Fm), r)
            collar_n = lr_norm(restrict_to_ball(Fm, collar_r), r)
            row = {"field": label, "r": r, "grad_norm": grad_n,
                   "rot_norm": rot_n, "div_norm": div_n,
                   "collar_norm": collar_n,
                   "ratio_full": _safe_ratio(grad_n, rot_n + div_n + collar_n)}
            if basis:
                Fd = Fm
                for b in basis:
                    Fd = Fd - b * inner_product(b, Fd)
                row["ratio_deflated"] = _safe_ratio(
                    component_gradient_norm(Fd, r),
                    lr_norm(curl_face_to_edge(Fd), r) + lr_norm(divergence(Fd), r))
            rows.append(row)
    return rows


STENCIL_HEADER = ("grad norms: one-sided component differences on each "
                  "staggered sub-grid, uniform dx^3 quadrature")

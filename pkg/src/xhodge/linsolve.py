"""Matrix-free symmetric positive-semidefinite solves: Jacobi-preconditioned
conjugate gradients with explicit nullspace deflation.

All reductions go through numpy's pairwise summation (never threaded BLAS),
so iterates are bit-identical across runs and thread counts.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation, SolverError


def _dot(a, b):
    return float(np.sum(a * b))


class LinearOperator:
    """Flat-vector linear map with a diagonal extractor for preconditioning."""

    def __init__(self, dim, apply_fn, diagonal=None, symmetric=True):
        self.dim = int(dim)
        self._apply = apply_fn
        self.symmetric = bool(symmetric)
        self._diagonal = None if diagonal is None else np.asarray(diagonal, dtype=float)

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ContractViolation(f"operand shape {x.shape} != ({self.dim},)")
        y = self._apply(x)
        return np.asarray(y, dtype=float)

    def diagonal(self):
        if self._diagonal is None:
            return np.ones(self.dim)
        return self._diagonal

    def check_contract(self, n_probes=3, seed=0, tol=1e-12):
        """Spot-check linearity and (if flagged) symmetry on random probes."""
        rng = np.random.default_rng(seed)
        for _ in range(n_probes):
            x = rng.standard_normal(self.dim)
            y = rng.standard_normal(self.dim)
            a, b = rng.standard_normal(2)
            lin = self.apply(a * x + b * y) - a * self.apply(x) - b * self.apply(y)
            scale = np.linalg.norm(self.apply(x)) + np.linalg.norm(self.apply(y)) + 1e-300
            if np.linalg.norm(lin) > 1e4 * tol * scale:
                raise ContractViolation("operator application is not linear")
            if self.symmetric:
                s = abs(_dot(self.apply(x), y) - _dot(x, self.apply(y)))
                nrm = np.linalg.norm(x) * np.linalg.norm(y) + 1e-300
                if s > 1e4 * tol * nrm * max(1.0, np.abs(self.diagonal()).max()):
                    raise ContractViolation("operator fails the symmetry probe")

    @staticmethod
    def from_dense(mat):
        mat = np.asarray(mat, dtype=float)
        return LinearOperator(mat.shape[0], lambda x: mat @ x,
                              diagonal=np.diag(mat).copy(),
                              symmetric=bool(np.allclose(mat, mat.T)))


class SolveOptions:
    def __init__(self, rel_tol=1e-10, abs_tol=1e-14, max_iters=None, deflation=()):
        if rel_tol <= 0 or abs_tol <= 0:
            raise ContractViolation("tolerances must be positive")
        self.rel_tol = float(rel_tol)
        self.abs_tol = float(abs_tol)
        self.max_iters = max_iters
        self.deflation = orthonormalize(deflation)


class SolveStats:
    def __init__(self, iterations, rel_residual, deflated_components):
        self.iterations = iterations
        self.rel_residual = rel_residual
        self.deflated_components = deflated_components

    def __repr__(self):
        return (f"SolveStats(iters={self.iterations}, "
                f"rel_residual={self.rel_residual:.3e})")


def orthonormalize(vectors, drop_tol=1e-12):
    """Gram-Schmidt with re-orthogonalization; near-dependent vectors dropped."""
    basis = []
    for v in vectors:
        v = np.asarray(v, dtype=float).copy()
        nrm0 = np.linalg.norm(v)
        if nrm0 == 0:
            continue
        for _ in range(2):
            for q in basis:
                v -= _dot(q, v) * q
        nrm = np.linalg.norm(v)
        if nrm > drop_tol * nrm0:
            basis.append(v / nrm)
    return basis


def project_out(basis, v):
    """Remove the components of v along an orthonormal basis; idempotent."""
    v = np.asarray(v, dtype=float).copy()
    for q in basis:
        v -= _dot(q, v) * q
    return v


def cg_solve(A: LinearOperator, b, opts: SolveOptions | None = None, x0=None):
    """Deflated, Jacobi-preconditioned CG for symmetric positive-semidefinite A.

    The right-hand side is projected onto the orthogonal complement of the
    deflation basis; the returned solution is kept in that complement.  On
    success the true residual satisfies ||Ax - b_proj|| <= rel_tol ||b_proj||
    (or abs_tol for vanishing b).
    """
    if opts is None:
        opts = SolveOptions()
    b = np.asarray(b, dtype=float)
    if b.shape != (A.dim,):
        raise ContractViolation(f"rhs shape {b.shape} != ({A.dim},)")
    basis = opts.deflation
    deflated = np.array([_dot(q, b) for q in basis])
    b_proj = project_out(basis, b) if basis else b.copy()

    bnorm = np.linalg.norm(b_proj)
    if bnorm == 0.0:
        # zero rhs short-circuits to the zero solution, initial guess ignored
        return np.zeros(A.dim), SolveStats(0, 0.0, deflated)

    diag = A.diagonal().copy()
    small = np.abs(diag) < 1e-300
    diag[small] = 1.0
    inv_diag = 1.0 / diag

    max_iters = opts.max_iters if opts.max_iters is not None else max(10 * A.dim, 200)

    def true_rel(x):
        res = A.apply(x) - b_proj
        if basis:
            res = project_out(basis, res)
        return np.linalg.norm(res) / bnorm

    if x0 is None:
        x = np.zeros(A.dim)
    else:
        x = np.asarray(x0, dtype=float).copy()
        if basis:
            x = project_out(basis, x)
    it = 0
    # restart loop guards against residual-recursion drift near the tolerance
    for _restart in range(4):
        r = b_proj - A.apply(x) if (it or x0 is not None) else b_proj.copy()
        if basis:
            r = project_out(basis, r)
        z = inv_diag * r
        if basis:
            z = project_out(basis, z)
        p = z.copy()
        rz = _dot(r, z)
        while it < max_iters:
            rnorm = np.linalg.norm(r)
            if rnorm <= max(opts.rel_tol * bnorm, opts.abs_tol):
                break
            Ap = A.apply(p)
            if basis:
                Ap = project_out(basis, Ap)
            denom = _dot(p, Ap)
            if denom <= 0.0:
                raise SolverError(
                    f"CG breakdown: non-positive curvature {denom:.3e} at iter {it}",
                    SolveStats(it, rnorm / bnorm, deflated))
            alpha = rz / denom
            x += alpha * p
            r -= alpha * Ap
            z = inv_diag * r
            if basis:
                z = project_out(basis, z)
            rz_new = _dot(r, z)
            p = z + (rz_new / rz) * p
            rz = rz_new
            it += 1
        if basis:
            x = project_out(basis, x)
        rel = true_rel(x)
        if rel <= opts.rel_tol or rel * bnorm <= opts.abs_tol or it >= max_iters:
            break

    stats = SolveStats(it, rel, deflated)
    if rel > opts.rel_tol and rel * bnorm > opts.abs_tol:
        raise SolverError(
            f"CG failed: rel residual {rel:.3e} > {opts.rel_tol:.1e} "
            f"after {it} iterations", stats)
    return x, stats

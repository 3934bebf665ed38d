"""Linearized operator around the peak sum, projection, and bordered solves.

The operator is

    L phi = -eps^2 Lap phi + V(x) phi - 2 (log G + 1) phi,

with G the multi-peak sum; log G is always the logsumexp of the closed-form
bump exponents. Solves on the kernel complement are posed as a bordered
saddle system so the kernel multipliers fall out as Lagrange multipliers:

    L phi - sum_m a_m b_m = rhs,    <phi, b_m>_eps = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .ansatz import KernelBasis, PeakSet, log_multi_peak_sum
from .errors import DegenerateKernelError, LinearSolveError, ProbeError
from .grid import Field, Grid, gradient, inner_eps, laplacian, norm_eps
from .potential import PotentialModel, eval_potential

TOL_ORTH = 1e-10
TOL_LIN = 1e-10


@dataclass
class LinearizedOperator:
    peaks: PeakSet
    model: PotentialModel
    grid: Grid
    v_potential: np.ndarray = field(default=None, repr=False)
    diagonal_part: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.v_potential is None:
            self.v_potential = eval_potential(self.model, self.grid.points())
        if self.diagonal_part is None:
            log_g = log_multi_peak_sum(self.peaks, self.model, self.grid)
            self.diagonal_part = self.v_potential - 2.0 * (log_g + 1.0)
        if not np.all(np.isfinite(self.diagonal_part)):
            raise ValueError("non-finite diagonal part")


def apply_L(op: LinearizedOperator, phi: Field) -> Field:
    lap = laplacian(phi)
    eps2 = op.peaks.eps**2
    return Field(op.grid, -eps2 * lap.values + op.diagonal_part * phi.values)


def project_E(phi: Field, basis: KernelBasis, eps: float,
              v_potential: np.ndarray) -> Field:
    """Subtract the <.,.>_eps-orthogonal projection onto span(basis)."""
    rhs = np.array([inner_eps(phi, b, eps, v_potential) for b in basis.fields])
    try:
        coeffs = np.linalg.solve(basis.gram_eps, rhs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateKernelError("kernel Gram matrix is singular") from exc
    out = phi.values.copy()
    for c, b in zip(coeffs, basis.fields):
        out -= c * b.values
    return Field(phi.grid, out)


@dataclass
class BorderedSolveResult:
    phi: Field
    a: np.ndarray
    residual: float
    iterations: int


class _ConstraintPairings:
    """Precomputed data making <phi, b_m>_eps a pair of dot products."""

    def __init__(self, basis: KernelBasis, eps: float, v_potential: np.ndarray,
                 grid: Grid):
        w = grid.quad_weights()
        eps2 = eps * eps
        self.grid = grid
        self.w_grad = []   # per basis field: list of eps^2 * w * db/dx_i
        self.w_mass = []   # per basis field: w * (V+1) * b
        for b in basis.fields:
            gb = gradient(b)
            self.w_grad.append([eps2 * w * g.values for g in gb])
            self.w_mass.append(w * (v_potential + 1.0) * b.values)

    def apply(self, phi_values: np.ndarray) -> np.ndarray:
        g = self.grid
        gphi = gradient(Field(g, phi_values))
        out = np.empty(len(self.w_mass))
        for m in range(len(self.w_mass)):
            grad_term = sum(np.dot(gphi[i].values, self.w_grad[m][i])
                            for i in range(g.dim))
            out[m] = grad_term + np.dot(phi_values, self.w_mass[m])
        return out


def _jacobi_diagonal(op: LinearizedOperator) -> np.ndarray:
    g = op.grid
    stencil = 2.0 * g.dim * op.peaks.eps**2 / (g.h * g.h)
    d = stencil + op.diagonal_part
    return np.maximum(np.abs(d), 1e-3 * stencil + 1e-12)


def solve_bordered(op: LinearizedOperator, rhs: Field, basis: KernelBasis,
                   tol_lin: float = TOL_LIN, max_krylov: int = None,
                   restart: int = 200) -> BorderedSolveResult:
    """Krylov solve of the bordered system; returns phi in E and multipliers.

    Multipliers follow the saddle-system sign convention
    L phi + sum a_m b_m = rhs.
    """
    g = op.grid
    m = g.size
    p = len(basis)
    pair = _ConstraintPairings(basis, op.peaks.eps, op.v_potential, g)
    bmat = np.stack([b.values for b in basis.fields], axis=1)  # (m, p)

    def matvec(z):
        phi, a = z[:m], z[m:]
        top = apply_L(op, Field(g, phi)).values - bmat @ a
        bottom = pair.apply(phi)
        return np.concatenate([top, bottom])

    rhs_norm = np.linalg.norm(rhs.values)
    if rhs_norm == 0.0:
        return BorderedSolveResult(Field(g, np.zeros(m)), np.zeros(p), 0.0, 0)

    pdiag = np.concatenate([_jacobi_diagonal(op), np.ones(p)])
    prec = spla.LinearOperator((m + p, m + p), matvec=lambda z: z / pdiag)
    A = spla.LinearOperator((m + p, m + p), matvec=matvec)
    b = np.concatenate([rhs.values, np.zeros(p)])
    if max_krylov is None:
        max_krylov = max(int(60 * np.sqrt(m)), 4000)

    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    w = g.quad_weights()
    rhs_l2 = float(np.sqrt(np.dot(w, rhs.values**2)))
    phi = a = resid = None
    info = -1
    # the convergence test inside gmres runs on the preconditioned residual;
    # tighten until the true quadrature-L2 residual meets the contract
    for rtol_factor in (1e-1, 1e-3, 1e-5):
        z, info = spla.gmres(A, b, rtol=tol_lin * rtol_factor, atol=0.0,
                             restart=restart,
                             maxiter=max(2, max_krylov // restart), M=prec,
                             callback=count, callback_type="pr_norm")
        phi = Field(g, z[:m])
        a = -z[m:]  # solver convention L phi - sum a b = rhs; flip sign
        resid_field = apply_L(op, phi).values + bmat @ a - rhs.values
        resid = float(np.sqrt(np.dot(w, resid_field**2)))
        if info == 0 and resid <= tol_lin * max(rhs_l2, 1e-300):
            break
    else:
        raise LinearSolveError(
            f"bordered Krylov solve did not converge (info={info})",
            residual=resid, iterations=iters,
        )
    phi = project_E(phi, basis, op.peaks.eps, op.v_potential)
    return BorderedSolveResult(phi=phi, a=a, residual=resid, iterations=iters)


# ---------------------------------------------------------------------------
# Dense assembly for coarse-grid oracles and the coercivity probe.
# ---------------------------------------------------------------------------

def _gradient_matrix_1d(n: int, h: float) -> sp.csr_matrix:
    """Matrix form of np.gradient: central interior, one-sided ends."""
    D = sp.lil_matrix((n, n))
    D[0, 0], D[0, 1] = -1.0, 1.0
    D[-1, -2], D[-1, -1] = -1.0, 1.0
    for i in range(1, n - 1):
        D[i, i - 1], D[i, i + 1] = -0.5, 0.5
    return (D / h).tocsr()


def _laplacian_matrix_1d(n: int, h: float) -> sp.csr_matrix:
    main = -2.0 * np.ones(n)
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1]) / (h * h)


def _kron_axis(mat1d: sp.spmatrix, axis: int, dim: int, n: int) -> sp.csr_matrix:
    out = None
    for ax in range(dim):
        block = mat1d if ax == axis else sp.identity(n)
        out = block if out is None else sp.kron(out, block, format="csr")
    return out.tocsr()


def assemble_operator_matrix(op: LinearizedOperator) -> sp.csr_matrix:
    g = op.grid
    lap = sum(_kron_axis(_laplacian_matrix_1d(g.n, g.h), ax, g.dim, g.n)
              for ax in range(g.dim))
    eps2 = op.peaks.eps**2
    return (-eps2 * lap + sp.diags(op.diagonal_part)).tocsr()


def assemble_inner_matrix(grid: Grid, eps: float,
                          v_potential: np.ndarray) -> sp.csr_matrix:
    """Matrix M with <u, v>_eps = u^T M v under the grid quadrature."""
    w = sp.diags(grid.quad_weights())
    eps2 = eps * eps
    M = sp.diags(grid.quad_weights() * (v_potential + 1.0)).tolil()
    for ax in range(grid.dim):
        D = _kron_axis(_gradient_matrix_1d(grid.n, grid.h), ax, grid.dim, grid.n)
        M = M + eps2 * (D.T @ w @ D)
    return M.tocsr()


def coercivity_probe_dense(op: LinearizedOperator, basis: KernelBasis,
                           project: bool = True) -> float:
    """Smallest singular value of phi -> P L phi in the eps-geometry.

    Dense generalized eigensolve; intended for coarse grids only. With
    project=False the probe runs on the full space and exposes the
    near-kernel directions.
    """
    A = assemble_operator_matrix(op).toarray()
    M = assemble_inner_matrix(op.grid, op.peaks.eps, op.v_potential).toarray()
    if not project:
        S = A.T @ M @ A
        vals = scipy.linalg.eigh(S, M, subset_by_index=[0, 0], eigvals_only=True)
        return float(np.sqrt(max(vals[0], 0.0)))
    B = np.stack([b.values for b in basis.fields], axis=1)
    MB = M @ B
    Q = scipy.linalg.null_space(MB.T)
    G = B.T @ MB
    P = np.eye(A.shape[0]) - B @ np.linalg.solve(G, MB.T)
    W = P @ (A @ Q)
    S = W.T @ M @ W
    T = Q.T @ M @ Q
    vals = scipy.linalg.eigh(S, T, subset_by_index=[0, 0], eigvals_only=True)
    return float(np.sqrt(max(vals[0], 0.0)))


def _solve_bordered_transpose(op: LinearizedOperator, rhs_values: np.ndarray,
                              basis: KernelBasis, tol_lin: float = TOL_LIN,
                              max_krylov: int = None,
                              restart: int = 200) -> np.ndarray:
    """Top block of the transposed bordered system: with K the saddle matrix
    of solve_bordered, solves K^T [z; a] = [rhs; 0] and returns z. Needed to
    apply the adjoint of the restricted inverse in the eps-geometry."""
    g = op.grid
    m = g.size
    p = len(basis)
    bmat = np.stack([b.values for b in basis.fields], axis=1)
    M = assemble_inner_matrix(g, op.peaks.eps, op.v_potential)
    mb = M @ bmat

    def matvec(zv):
        z, a = zv[:m], zv[m:]
        top = apply_L(op, Field(g, z)).values + mb @ a
        bottom = -bmat.T @ z
        return np.concatenate([top, bottom])

    pdiag = np.concatenate([_jacobi_diagonal(op), np.ones(p)])
    prec = spla.LinearOperator((m + p, m + p), matvec=lambda zv: zv / pdiag)
    A = spla.LinearOperator((m + p, m + p), matvec=matvec)
    b = np.concatenate([rhs_values, np.zeros(p)])
    if max_krylov is None:
        max_krylov = max(int(60 * np.sqrt(m)), 4000)
    rhs_norm = float(np.linalg.norm(rhs_values))
    for rtol_factor in (1e-1, 1e-3, 1e-5):
        zv, info = spla.gmres(A, b, rtol=tol_lin * rtol_factor, atol=0.0,
                              restart=restart,
                              maxiter=max(2, max_krylov // restart), M=prec)
        resid = float(np.linalg.norm(matvec(zv) - b))
        if info == 0 and resid <= tol_lin * max(rhs_norm, 1e-300):
            return zv[:m]
    raise LinearSolveError(
        f"transposed bordered solve did not converge (info={info})",
        residual=resid, iterations=0,
    )


def coercivity_probe(op: LinearizedOperator, basis: KernelBasis,
                     max_iter: int = 60, rtol: float = 1e-8,
                     seed: int = 0, project: bool = True) -> float:
    """Matrix-free estimate of the coercivity constant: the smallest
    singular value of phi -> P L phi on E in the eps-geometry.

    Power iteration on the eps-self-adjoint operator (T^dagger T)^{-1}
    = T^{-1} T^{-dagger} with T the restricted map, each application being
    one transposed and one direct bordered solve plus a mass-matrix solve;
    reports ||P L v||_eps at the converged direction. With project=False
    the probe runs on the full space (inverses by sparse LU of the
    assembled operator) and exposes the near-kernel directions.
    """
    g = op.grid
    eps = op.peaks.eps
    M = assemble_inner_matrix(g, eps, op.v_potential)
    mdiag = np.asarray(M.diagonal())
    prec_m = spla.LinearOperator((g.size, g.size), matvec=lambda z: z / mdiag)
    lu = None
    if not project:
        lu = spla.splu(assemble_operator_matrix(op).tocsc())

    def msolve(w):
        out, info = spla.cg(M, w, rtol=1e-12, atol=0.0, M=prec_m, maxiter=5000)
        if info != 0:
            raise ProbeError(f"mass-matrix solve failed (info={info})")
        return out

    def proj(f):
        return project_E(f, basis, eps, op.v_potential) if project else f

    rng = np.random.default_rng(seed)
    v = proj(Field(g, rng.standard_normal(g.size)))
    v = Field(g, v.values / norm_eps(v, eps, op.v_potential))
    est_prev = None
    for _ in range(max_iter):
        mv = np.asarray(M @ v.values)
        if project:
            w2 = _solve_bordered_transpose(op, mv, basis)
            w4 = proj(Field(g, msolve(w2)))
            phi = solve_bordered(op, w4, basis).phi
        else:
            w2 = lu.solve(mv, trans="T")
            phi = Field(g, lu.solve(msolve(w2)))
        nrm = norm_eps(phi, eps, op.v_potential)
        if nrm == 0.0:
            raise ProbeError("inverse iteration collapsed to zero")
        v = Field(g, phi.values / nrm)
        plv = proj(apply_L(op, v))
        est = norm_eps(plv, eps, op.v_potential)
        if est_prev is not None and abs(est - est_prev) <= rtol * est:
            return float(est)
        est_prev = est
    raise ProbeError(f"coercivity probe did not settle in {max_iter} iterations")

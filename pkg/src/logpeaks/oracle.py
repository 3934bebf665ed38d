"""Independent damped-Newton solver for the discretized equation.

This path shares no code with the construction pipeline beyond the grid
primitives: it discretizes F(u) = -eps^2 Lap u + V u - u log u^2 directly
and drives it to zero, serving as ground truth for cross-checks and as the
empirical probe of local uniqueness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import LinearSolveError, OracleDivergenceError
from .grid import Field, Grid, laplacian
from .peaksolve import ConstructedSolution
from .potential import PotentialModel, eval_potential

U_FLOOR = np.exp(-40.0)


@dataclass
class NewtonConfig:
    damping: bool = True
    u_floor: float = U_FLOOR
    tol_newton: float = 1e-9
    # convergence is quadratic near a positive solution but degrades to a
    # geometric rate ~0.5 while small sign-changing pockets die out, so the
    # cap accommodates ~40-80 such cleanup steps
    max_newton: int = 120
    max_backtrack: int = 30
    krylov_tol: float = 1e-10
    max_krylov: int = 20000

    def __post_init__(self):
        if not 0.0 < self.u_floor <= 1e-15:
            raise ValueError("u_floor must be in (0, 1e-15]")
        if self.tol_newton <= 0.0:
            raise ValueError("tol_newton must be positive")


def _f_nonlinear(uvals: np.ndarray, u_floor: float) -> np.ndarray:
    """f(u) = u log u^2 with the floor clamp inside the log; 0 where u <= 0."""
    out = 2.0 * uvals * np.log(np.maximum(uvals, u_floor))
    return np.where(uvals > 0.0, out, 0.0)


def pde_residual(u: Field, eps: float, model: PotentialModel,
                 grid: Grid, u_floor: float = U_FLOOR) -> Field:
    """F(u) = -eps^2 Lap u + V u - f(u) on the grid."""
    v = eval_potential(model, grid.points())
    lap = laplacian(u)
    return Field(grid, -eps**2 * lap.values + v * u.values
                 - _f_nonlinear(u.values, u_floor))


@dataclass
class NewtonResult:
    u: Field
    residuals: list = field(default_factory=list)  # sup-norm of F per step
    iterations: int = 0


def newton_solve(u0: Field, eps: float, model: PotentialModel, grid: Grid,
                 cfg: NewtonConfig = None) -> NewtonResult:
    """Damped Newton iteration on F with matrix-free Krylov inner solves.

    The Jacobian is -eps^2 Lap + diag(V - log(max(u, u_floor)^2) - 2),
    symmetric, solved by MINRES with Jacobi preconditioning. The line
    search halves the step until the sup-norm of F decreases.
    """
    cfg = cfg or NewtonConfig()
    v = eval_potential(model, grid.points())
    eps2 = eps * eps
    m = grid.size

    def fres(uvals):
        lap = laplacian(Field(grid, uvals))
        return -eps2 * lap.values + v * uvals - _f_nonlinear(uvals, cfg.u_floor)

    u = u0.values.copy()
    r = fres(u)
    rnorm = float(np.max(np.abs(r)))
    residuals = [rnorm]
    it = 0
    while rnorm > cfg.tol_newton:
        if it >= cfg.max_newton:
            raise OracleDivergenceError(
                f"Newton did not reach tol in {cfg.max_newton} steps "
                f"(residual {rnorm:.3e})"
            )
        jdiag = v - 2.0 * np.log(np.maximum(u, cfg.u_floor)) - 2.0

        def matvec(z):
            lap = laplacian(Field(grid, z))
            return -eps2 * lap.values + jdiag * z

        stencil = 2.0 * grid.dim * eps2 / (grid.h * grid.h)
        pdiag = np.maximum(np.abs(stencil + jdiag), 1e-3 * stencil + 1e-12)
        J = spla.LinearOperator((m, m), matvec=matvec)
        M = spla.LinearOperator((m, m), matvec=lambda z: z / pdiag)
        du, info = spla.minres(J, -r, rtol=cfg.krylov_tol, M=M,
                               maxiter=cfg.max_krylov)
        if info != 0:
            raise LinearSolveError(f"Newton inner solve failed (info={info})")
        s = 1.0
        for _ in range(cfg.max_backtrack):
            r_new = fres(u + s * du)
            rn_new = float(np.max(np.abs(r_new)))
            if rn_new < rnorm or not cfg.damping:
                break
            s *= 0.5
        else:
            raise OracleDivergenceError(
                f"line search stagnated at residual {rnorm:.3e}"
            )
        u = u + s * du
        r, rnorm = r_new, rn_new
        residuals.append(rnorm)
        it += 1
    return NewtonResult(u=Field(grid, u), residuals=residuals, iterations=it)


# ---------------------------------------------------------------------------
# Local-uniqueness experiment.
# ---------------------------------------------------------------------------

def standard_perturbations(base: "ConstructedSolution", seed: int = 0,
                           n_random: int = 2) -> list:
    """Standard battery of perturbed initializers around a constructed
    solution: amplitude scalings by +-10% and +-20%, a whole-field shift by
    0.3 eps in a seeded random direction, and seeded smooth multiplicative
    Gaussian bumps of relative height 0.05 centered inside the search ball."""
    from scipy.interpolate import RegularGridInterpolator

    rng = np.random.default_rng(seed)
    grid = base.grid
    pts = grid.points()
    out = [Field(grid, s * base.u.values) for s in (0.9, 1.1, 0.8, 1.2)]
    direction = rng.standard_normal(grid.dim)
    direction /= np.linalg.norm(direction)
    axes = tuple(grid.axis() for _ in range(grid.dim))
    interp = RegularGridInterpolator(axes, base.u.values.reshape(grid.shape),
                                     bounds_error=False, fill_value=0.0)
    shifted = interp(pts - 0.3 * base.peaks.eps * direction)
    out.append(Field(grid, shifted))
    for _ in range(n_random):
        j = rng.integers(base.peaks.k)
        center = base.peaks.y[j] + rng.uniform(-1.0, 1.0, grid.dim) * base.peaks.delta
        width = base.peaks.eps * rng.uniform(1.0, 3.0)
        # multiplicative bump so the initializer stays positive with the
        # same tail decay as the base solution
        bump = 0.05 * np.exp(-np.sum((pts - center) ** 2, axis=1)
                             / (2.0 * width * width))
        out.append(Field(grid, base.u.values
                         * (1.0 + rng.choice([-1.0, 1.0]) * bump)))
    return out


@dataclass
class UniquenessReport:
    status: str                   # PASS | FAIL | INCONCLUSIVE
    pairwise: np.ndarray          # relative sup gaps among same-concentration runs
    labels: list                  # per run: "same-concentration" | "distinct-concentration" | "diverged"
    tol: float

    def max_gap(self) -> float:
        return float(np.max(self.pairwise, initial=0.0))


def _peak_locations(u: Field, threshold: float) -> np.ndarray:
    from .peaksolve import _interior_local_maxima
    return _interior_local_maxima(u, threshold)


def _same_concentration(u: Field, xi: np.ndarray, radius: float) -> bool:
    maxima = _peak_locations(u, 0.1 * float(np.max(np.abs(u.values))))
    if len(maxima) != len(xi):
        return False
    used = set()
    for x in xi:
        d = np.linalg.norm(maxima - x, axis=1)
        j = int(np.argmin(d))
        if d[j] > radius or j in used:
            return False
        used.add(j)
    return True


def uniqueness_experiment(base: ConstructedSolution, perturbations,
                          cfg: NewtonConfig = None) -> UniquenessReport:
    """Run the Newton oracle from each perturbed initializer and compare.

    Runs that concentrate at the same critical points as the base solution
    must all agree pairwise to 10 * tol_newton in relative sup norm (PASS).
    Runs landing on a different concentration set are labelled
    distinct-concentration and excluded from the comparison: they witness
    global multiplicity, not a local-uniqueness failure. Any divergence
    makes the experiment INCONCLUSIVE.
    """
    cfg = cfg or NewtonConfig()
    eps = base.peaks.eps
    grid, model = base.grid, base.model
    match_radius = max(base.peaks.delta, 3.0 * eps)

    solutions = []
    labels = []
    inconclusive = False
    for pert in [base.u] + list(perturbations):
        try:
            res = newton_solve(pert, eps, model, grid, cfg)
        except (OracleDivergenceError, LinearSolveError):
            labels.append("diverged")
            inconclusive = True
            continue
        if _same_concentration(res.u, base.peaks.xi, match_radius):
            labels.append("same-concentration")
            solutions.append(res.u.values)
        else:
            labels.append("distinct-concentration")

    tol = 10.0 * cfg.tol_newton
    gaps = []
    for i in range(len(solutions)):
        for j in range(i + 1, len(solutions)):
            scale = float(np.max(np.abs(solutions[i])))
            gaps.append(float(np.max(np.abs(solutions[i] - solutions[j]))) / scale)
    gaps = np.asarray(gaps)
    if inconclusive:
        status = "INCONCLUSIVE"
    elif len(gaps) == 0 or np.all(gaps <= tol):
        status = "PASS"
    else:
        status = "FAIL"
    return UniquenessReport(status=status, pairwise=gaps, labels=labels, tol=tol)

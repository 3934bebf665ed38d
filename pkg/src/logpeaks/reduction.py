"""Error terms and the contraction fixed point producing the correction phi.

The inhomogeneity is

    l = sum_j (V(y_j) - V(x)) U_j + 2 sum_j U_j (log G - log U_j),

with log G - log U_j computed as logsumexp of the bump exponents minus the
j-th exponent. The quadratic remainder collapses, after cancellation, to

    R(phi) = 2 [ (G + phi) log1p(phi / G) - phi ],

which is both stable in the tails and manifestly O(phi^2 / G).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .ansatz import KernelBasis, PeakSet, kernel_basis, peak_exponents
from .errors import NonContractionError, TrustRegionError
from .grid import Field, Grid, inner_eps, log_envelope, norm_eps
from .linop import LinearizedOperator, TOL_ORTH, project_E, solve_bordered
from .potential import PotentialModel, eval_potential


@dataclass
class ReductionConfig:
    theta: float = 0.1
    tau: float = 0.1
    tol_fix: float = 1e-8
    max_fix: int = 50
    tol_lin: float = 1e-10
    enforce_trust: bool = True
    # The trust-ball radii eps^{N/2+1-tau} and 1/|ln eps|^{1-theta} hide
    # constants that are O(1) only asymptotically; at working eps the bump
    # amplitude exp((V(y)+N)/2) enters squared. These factors absorb it.
    trust_factor_eps: float = 100.0
    trust_factor_star: float = 50.0
    # Clamp width for log(1 + phi/G) on intermediate iterates, which can
    # transiently overshoot -G in the tail; the converged solution itself is
    # required to satisfy G + phi > 0 on the resolvable region. Tiny because
    # u = G + phi legitimately approaches 0 near the Dirichlet boundary.
    positivity_margin: float = 1e-6


@dataclass
class NormPair:
    eps_norm: float
    star_norm: float


@dataclass
class IterationRecord:
    eps_norm: float
    star_norm: float
    diff_eps: float
    diff_star: float
    residual: float


@dataclass
class ReductionResult:
    phi: Field
    a: np.ndarray
    norms: NormPair
    iterations: int
    converged: bool
    history: list = field(default_factory=list)  # IterationRecord per iteration

    def history_rows(self):
        """CSV-ready rows: (iteration, eps_norm, star_norm, residual)."""
        return [(i, h.eps_norm, h.star_norm, h.residual)
                for i, h in enumerate(self.history, start=1)]


def compute_l_eps(peaks: PeakSet, model: PotentialModel, grid: Grid) -> Field:
    exps = peak_exponents(peaks, model, grid)
    log_g = logsumexp(exps, axis=0)
    v_x = eval_potential(model, grid.points())
    v_y = np.atleast_1d(eval_potential(model, peaks.y))
    out = np.zeros(grid.size)
    for j in range(peaks.k):
        u_j = np.exp(exps[j])
        out += (v_y[j] - v_x) * u_j
        if peaks.k > 1:
            out += 2.0 * u_j * (log_g - exps[j])
    return Field(grid, out)


def interaction_term(peaks: PeakSet, model: PotentialModel, grid: Grid) -> Field:
    """Cross-peak part of l alone: 2 sum_j U_j (log G - log U_j)."""
    exps = peak_exponents(peaks, model, grid)
    log_g = logsumexp(exps, axis=0)
    out = np.zeros(grid.size)
    for j in range(peaks.k):
        out += 2.0 * np.exp(exps[j]) * (log_g - exps[j])
    return Field(grid, out)


# Ratios against the peak sum or the Gaussian envelope are only meaningful
# where those reference fields are within this dynamic range of their peak
# value. Deeper in the tail the relative error of the second-order scheme
# grows past the solution's own distance from zero (and the discrete tail
# decays at the stencil-limited rate, not the Gaussian rate), so phi/G and
# |phi|/envelope there measure discretization junk: measured on the
# closed-form quadratic-well solution, the ratio error is ~0.07 at six
# decades below the peak but overtakes the positivity margin by nine.
G_DYNAMIC_RANGE = 1e-6


def _live_ratios(phi_values: np.ndarray, g_vals: np.ndarray):
    """phi/G on the resolvable region, 0 elsewhere; returns (ratio, live mask)."""
    live = g_vals > G_DYNAMIC_RANGE * np.max(g_vals)
    ratio = np.zeros_like(phi_values)
    ratio[live] = phi_values[live] / g_vals[live]
    return ratio, live


def _norm_star_live(values: np.ndarray, log_env: np.ndarray) -> float:
    """Envelope-weighted sup norm restricted to the envelope's resolvable
    support (see G_DYNAMIC_RANGE)."""
    live = log_env >= np.max(log_env) + np.log(G_DYNAMIC_RANGE)
    v = np.abs(values[live])
    out = np.zeros_like(v)
    nz = v > 0
    out[nz] = np.exp(np.log(v[nz]) - log_env[live][nz])
    return float(np.max(out, initial=0.0))


def _remainder_values(pvals: np.ndarray, g_vals: np.ndarray,
                      clamp: float = None) -> np.ndarray:
    """Evaluate the quadratic remainder wherever G > 0; with clamp set,
    ratios below -1 + clamp are clamped inside the logarithm instead of
    being an error. Zeroing the remainder in the tail would be wrong: where
    |phi| is comparable to G it behaves like -2 phi, not like phi^2/G."""
    pos = g_vals > 0.0
    ratio = np.zeros_like(pvals)
    ratio[pos] = pvals[pos] / g_vals[pos]
    if clamp is None:
        log_term = np.log1p(ratio)
    else:
        # u log u^2 is defined for u < 0 too: log((1+r)^2)/2 = log|1+r|.
        # Intermediate iterates may cross -G transiently; keep the logarithm
        # finite near the pole without distorting it elsewhere.
        log_term = np.log(np.maximum(np.abs(1.0 + ratio), clamp))
    out = 2.0 * ((g_vals + pvals) * log_term - pvals)
    out[~pos] = 0.0
    return out


def compute_R_eps(phi: Field, peaks: PeakSet, model: PotentialModel,
                  grid: Grid) -> Field:
    log_g = logsumexp(peak_exponents(peaks, model, grid), axis=0)
    g_vals = np.exp(log_g)
    viol = (g_vals > 0.0) & (g_vals + phi.values <= 0.0)
    if np.any(viol):
        idx = int(np.argmax(viol))
        raise TrustRegionError(
            f"positivity violated: G + phi <= 0 at x={tuple(grid.points()[idx])}"
        )
    return Field(grid, _remainder_values(phi.values, g_vals))


def contraction_solve(peaks: PeakSet, model: PotentialModel, grid: Grid,
                      cfg: ReductionConfig = None,
                      op: LinearizedOperator = None,
                      basis: KernelBasis = None) -> ReductionResult:
    """Fixed-point iteration phi <- (P L)^{-1} (l + R(phi)) from phi = 0.

    Each iterate is checked against the trust-ball bounds
    ||phi||_eps <= eps^{N/2+1-tau} and ||phi||_* <= 1/|ln eps|^{1-theta};
    a violation aborts with a trust-region error.
    """
    cfg = cfg or ReductionConfig()
    if op is None:
        op = LinearizedOperator(peaks, model, grid)
    if basis is None:
        basis = kernel_basis(peaks, model, grid, v_potential=op.v_potential)
    eps = peaks.eps
    dim = grid.dim
    eps_bound = cfg.trust_factor_eps * eps ** (dim / 2.0 + 1.0 - cfg.tau)
    star_bound = cfg.trust_factor_star / abs(np.log(eps)) ** (1.0 - cfg.theta)
    floor = eps ** (dim / 2.0 + 2.0)

    l_field = compute_l_eps(peaks, model, grid)
    g_vals = np.exp(logsumexp(peak_exponents(peaks, model, grid), axis=0))
    log_env = log_envelope(grid, eps, peaks.y)
    phi = Field(grid, np.zeros(grid.size))
    history = []
    a = np.zeros(len(basis))
    for it in range(1, cfg.max_fix + 1):
        # Intermediate iterates may transiently overshoot -G in the tail;
        # the clamp keeps the logarithm evaluable there. Positivity of the
        # converged solution is verified before returning.
        rhs = l_field + Field(grid, _remainder_values(
            phi.values, g_vals, clamp=cfg.positivity_margin))
        sol = solve_bordered(op, rhs, basis, tol_lin=cfg.tol_lin)
        # bordered convention is L phi + sum a b = rhs; the multipliers of
        # the kernel expansion L phi = rhs + sum a b carry the opposite sign
        phi_new, a = sol.phi, -sol.a
        # bordered solve already projects; re-project on measurable drift
        drift = max((abs(inner_eps(phi_new, b, eps, op.v_potential))
                     for b in basis.fields), default=0.0)
        nrm_new = norm_eps(phi_new, eps, op.v_potential)
        if drift > TOL_ORTH * max(nrm_new, floor):
            phi_new = project_E(phi_new, basis, eps, op.v_potential)
            nrm_new = norm_eps(phi_new, eps, op.v_potential)
        star_new = _norm_star_live(phi_new.values, log_env)
        diff = phi_new - phi
        diff_eps = norm_eps(diff, eps, op.v_potential)
        diff_star = _norm_star_live(diff.values, log_env)
        history.append(IterationRecord(nrm_new, star_new, diff_eps, diff_star,
                                       sol.residual))
        if cfg.enforce_trust:
            if nrm_new > eps_bound:
                raise TrustRegionError(
                    f"iterate {it}: ||phi||_eps = {nrm_new:.3e} exceeds "
                    f"trust bound {eps_bound:.3e}"
                )
            if star_new > star_bound:
                raise TrustRegionError(
                    f"iterate {it}: ||phi||_* = {star_new:.3e} exceeds "
                    f"envelope bound {star_bound:.3e}"
                )
        phi = phi_new
        if diff_eps <= cfg.tol_fix * max(nrm_new, floor):
            # The eps-norm can converge while the far tail, invisible to it,
            # is still relaxing toward its positive limit; keep iterating
            # until positivity holds on the resolvable region too.
            ratio, live = _live_ratios(phi.values, g_vals)
            if np.any(ratio[live] <= -1.0):
                continue
            return ReductionResult(phi=phi, a=a, norms=NormPair(nrm_new, star_new),
                                   iterations=it, converged=True, history=history)
    raise NonContractionError(
        f"fixed point not reached in {cfg.max_fix} iterations", history=history
    )


def contraction_ratios(history, noise_floor: float = 1e-12):
    """Successive-difference star-norm ratios from a recorded history.

    Differences at or below the round-off floor (relative to the final phi
    scale) carry no contraction information and are excluded.
    """
    if not history:
        return []
    scale = max(h.star_norm for h in history)
    diffs = [h.diff_star for h in history]
    ratios = []
    for i in range(1, len(diffs)):
        if diffs[i - 1] > noise_floor * max(scale, 1e-300):
            ratios.append(diffs[i] / diffs[i - 1])
    return ratios

"""Gausson building blocks, their translation derivatives, and peak sums.

The single-bump profile centered at y with potential value V(y) is

    U_{eps,y}(x) = exp((V(y) + N)/2) exp(-|x - y|^2 / (2 eps^2)),

an exact solution of -eps^2 Lap U + V(y) U = U log U^2. Its log is always
evaluated through the closed-form exponent, never through log of sampled
values, so tails stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import grid as gridmod
from .errors import DegenerateKernelError
from .grid import Field, Grid, inner_eps
from .potential import PotentialModel, eval_potential

GRAM_CONDITION_LIMIT = 1e12


@dataclass
class PeakSet:
    """Semiclassical parameter and current/target peak locations."""

    eps: float
    y: np.ndarray          # (k, N) current peak locations
    xi: np.ndarray         # (k, N) target critical points
    delta: float           # search-ball radius

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        self.xi = np.atleast_2d(np.asarray(self.xi, dtype=float))
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.y.shape != self.xi.shape:
            raise ValueError("y and xi must have matching shapes")

    @property
    def k(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.y.shape[1]

    def validate(self) -> None:
        """Peaks inside their balls; balls pairwise disjoint."""
        for j in range(self.k):
            if np.linalg.norm(self.y[j] - self.xi[j]) > self.delta:
                raise ValueError(f"peak {j} left its search ball")
        for i in range(self.k):
            for j in range(i + 1, self.k):
                if np.linalg.norm(self.xi[i] - self.xi[j]) <= 2.0 * self.delta:
                    raise ValueError(f"search balls {i} and {j} overlap")

    def with_locations(self, y_new) -> "PeakSet":
        return PeakSet(self.eps, np.asarray(y_new, dtype=float).reshape(self.y.shape),
                       self.xi, self.delta)


@dataclass
class KernelBasis:
    """Translation derivatives of the bumps and their eps-Gram matrix."""

    fields: list                      # k*N Fields, ordered (j, i) lexicographic
    gram_eps: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.fields)


def gausson_exponent(eps: float, y: np.ndarray, vy: float, grid: Grid) -> np.ndarray:
    """log U_{eps,y} at every grid point (closed form)."""
    pts = grid.points()
    d2 = np.sum((pts - np.asarray(y)) ** 2, axis=1)
    return (vy + grid.dim) / 2.0 - d2 / (2.0 * eps * eps)


def gausson(eps: float, y, vy: float, grid: Grid) -> Field:
    return Field(grid, np.exp(gausson_exponent(eps, np.asarray(y, dtype=float), vy, grid)))


def peak_exponents(peaks: PeakSet, model: PotentialModel, grid: Grid) -> np.ndarray:
    """(k, n^N) array of log U_{eps,y_j} with V evaluated at the peaks."""
    vys = eval_potential(model, peaks.y)
    vys = np.atleast_1d(vys)
    return np.stack([
        gausson_exponent(peaks.eps, peaks.y[j], float(vys[j]), grid)
        for j in range(peaks.k)
    ])


def log_multi_peak_sum(peaks: PeakSet, model: PotentialModel, grid: Grid) -> np.ndarray:
    """log sum_j U_{eps,y_j}, stable in the tails."""
    return logsumexp(peak_exponents(peaks, model, grid), axis=0)


def multi_peak_sum(peaks: PeakSet, model: PotentialModel, grid: Grid) -> Field:
    return Field(grid, np.exp(log_multi_peak_sum(peaks, model, grid)))


def kernel_basis(peaks: PeakSet, model: PotentialModel, grid: Grid,
                 v_potential: np.ndarray = None) -> KernelBasis:
    """Analytic dU/dx_i = -((x_i - y_{j,i}) / eps^2) U on the grid.

    The Gram matrix is assembled under <.,.>_eps; a condition number above
    1e12 means the peaks are unresolvable on this grid.
    """
    if v_potential is None:
        v_potential = eval_potential(model, grid.points())
    exps = peak_exponents(peaks, model, grid)
    pts = grid.points()
    eps2 = peaks.eps**2
    fields = []
    for j in range(peaks.k):
        u = np.exp(exps[j])
        for i in range(peaks.dim):
            fields.append(Field(grid, -(pts[:, i] - peaks.y[j, i]) / eps2 * u))
    m = len(fields)
    gram = np.empty((m, m))
    for a in range(m):
        for b in range(a, m):
            gram[a, b] = gram[b, a] = inner_eps(fields[a], fields[b], peaks.eps,
                                                v_potential)
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > GRAM_CONDITION_LIMIT:
        raise DegenerateKernelError(
            f"kernel Gram matrix condition {cond:.2e} exceeds {GRAM_CONDITION_LIMIT:.0e}"
        )
    return KernelBasis(fields=fields, gram_eps=gram)


def limiting_profile(omega: float, grid: Grid) -> Field:
    """U(x) = exp((omega + N - |x|^2)/2), the rescaled unit-peak profile."""
    pts = grid.points()
    expo = (omega + grid.dim - np.sum(pts**2, axis=1)) / 2.0
    return Field(grid, np.exp(expo))


def limiting_profile_derivative(omega: float, grid: Grid, axis: int) -> Field:
    pts = grid.points()
    u = limiting_profile(omega, grid)
    return Field(grid, -pts[:, axis] * u.values)


def box_half_width(xi, eps: float, margin_floor: float = 1.0,
                   tau_tail: float = 1e-14) -> float:
    """Truncation rule: L = max_j |xi_j|_inf + max(floor, eps sqrt(2 ln 1/tau))."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    margin = max(margin_floor, eps * np.sqrt(2.0 * np.log(1.0 / tau_tail)))
    return float(np.max(np.abs(xi)) + margin)


def grid_for(peaks_xi, eps: float, dim: int, points_per_peak: float = 6.0,
             margin_floor: float = 1.0, max_points: int = gridmod.DEFAULT_MAX_POINTS,
             n_override: int = None) -> Grid:
    """Grid sized so h <= eps / points_per_peak on the truncated box."""
    L = box_half_width(peaks_xi, eps, margin_floor=margin_floor)
    if n_override is not None:
        n = n_override
    else:
        n = int(np.ceil(2.0 * L / (eps / points_per_peak))) + 1
        if n % 2 == 0:
            n += 1
        n = max(n, 9)
    return Grid(dim, L, n, max_points=max_points)

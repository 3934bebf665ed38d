"""Independent validation instruments for constructed solutions.

None of these reuse the construction pipeline's internals: the local
identity check integrates the solution field directly, the decay profile
measures tail suprema over shells, the logarithmic Sobolev inequality acts
as a quadrature sanity net, and the spectrum probe checks that the
linearization around the limiting profile has exactly the translation
kernel and nothing more.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator

from .ansatz import PeakSet
from .errors import GeometryError, ProbeError
from .grid import Field, Grid, gradient, integrate
from .linop import _kron_axis, _laplacian_matrix_1d
from .potential import PotentialModel, eval_potential, grad_potential

# Floor inside log(u^2) on sphere quadrature nodes: u^2 log u^2 -> 0 as
# u -> 0, and clamping at e^-40 keeps the integrand error below 1e-30.
U_LOG_FLOOR = np.exp(-40.0)

SURFACE_NODES = 64


@dataclass
class PohozaevReport:
    """Ball-wise momentum balance: interior ∫ dV/dx_i u^2 against the
    boundary flux terms, one row per peak and axis."""

    interior: np.ndarray    # (k, N)
    boundary: np.ndarray    # (k, N)
    residual: np.ndarray    # (k, N)
    delta: float

    def rows(self):
        k, n = self.interior.shape
        return [(j, i, self.interior[j, i], self.boundary[j, i],
                 self.residual[j, i])
                for j in range(k) for i in range(n)]

    def max_residual(self) -> float:
        return float(np.max(self.residual))


def default_ball_radius(peaks: PeakSet, grid: Grid) -> float:
    """0.8 times the smaller of half the minimal peak separation and the
    distance from the peaks to the box boundary."""
    bound = grid.half_width - float(np.max(np.abs(peaks.y)))
    sep = np.inf
    for i in range(peaks.k):
        for j in range(i + 1, peaks.k):
            sep = min(sep, 0.5 * float(np.linalg.norm(peaks.y[i] - peaks.y[j])))
    return 0.8 * min(sep, bound)


def _sphere_nodes(dim: int, delta: float):
    """Midpoint-rule nodes, outward normals, and weights on a sphere of
    radius delta. N=1: the two endpoints; N=2: equal-angle circle nodes;
    N=3: latitude-longitude product midpoints."""
    if dim == 1:
        nodes = np.array([[-delta], [delta]])
        normals = np.array([[-1.0], [1.0]])
        weights = np.array([1.0, 1.0])
    elif dim == 2:
        theta = (np.arange(SURFACE_NODES) + 0.5) * (2 * np.pi / SURFACE_NODES)
        normals = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        nodes = delta * normals
        weights = np.full(SURFACE_NODES, 2 * np.pi * delta / SURFACE_NODES)
    elif dim == 3:
        m = SURFACE_NODES
        phi = (np.arange(m) + 0.5) * (np.pi / m)        # polar
        theta = (np.arange(m) + 0.5) * (2 * np.pi / m)  # azimuthal
        PH, TH = np.meshgrid(phi, theta, indexing="ij")
        normals = np.stack([np.sin(PH) * np.cos(TH),
                            np.sin(PH) * np.sin(TH),
                            np.cos(PH)], axis=-1).reshape(-1, 3)
        nodes = delta * normals
        area = delta**2 * np.sin(PH) * (np.pi / m) * (2 * np.pi / m)
        weights = area.reshape(-1)
    else:
        raise ValueError(f"unsupported dimension {dim}")
    return nodes, normals, weights


def _interpolators(u: Field):
    g = u.grid
    axes = tuple(np.linspace(-g.half_width, g.half_width, g.n)
                 for _ in range(g.dim))
    shape = (g.n,) * g.dim
    interp_u = RegularGridInterpolator(axes, u.values.reshape(shape))
    interp_grad = [RegularGridInterpolator(axes, gv.values.reshape(shape))
                   for gv in gradient(u)]
    return interp_u, interp_grad


def pohozaev_residual(u: Field, peaks: PeakSet, model: PotentialModel,
                      grid: Grid, delta: float = None) -> PohozaevReport:
    """Momentum-balance residual on a ball around each peak.

    Interior side: grid quadrature of dV/dx_i u^2 over the ball. Boundary
    side, per axis i, with nu the outward unit normal:

        eps^2 (|grad u|^2 nu_i - 2 (du/dnu)(du/dx_i)) + (V+1) u^2 nu_i
        - nu_i u^2 log u^2,

    integrated over the sphere by the midpoint rule with linearly
    interpolated field values.
    """
    if delta is None:
        delta = default_ball_radius(peaks, grid)
    eps = peaks.eps
    for j in range(peaks.k):
        if np.max(np.abs(peaks.y[j])) + delta >= grid.half_width - grid.h:
            raise GeometryError(
                f"ball of radius {delta:.3f} around peak {j} leaves the box"
            )

    pts = grid.points()
    w = grid.quad_weights()
    vgrad = grad_potential(model, pts)          # (m, N)
    u2 = u.values**2

    interp_u, interp_grad = _interpolators(u)
    nodes, normals, sweights = _sphere_nodes(grid.dim, delta)

    k, dim = peaks.k, grid.dim
    interior = np.empty((k, dim))
    boundary = np.empty((k, dim))
    for j in range(k):
        inside = np.linalg.norm(pts - peaks.y[j], axis=1) <= delta
        for i in range(dim):
            interior[j, i] = float(np.sum(w[inside] * vgrad[inside, i]
                                          * u2[inside]))
        x_s = peaks.y[j] + nodes
        u_s = interp_u(x_s)
        grads = np.stack([gi(x_s) for gi in interp_grad], axis=1)  # (q, N)
        v_s = eval_potential(model, x_s)
        du_dnu = np.sum(grads * normals, axis=1)
        grad_sq = np.sum(grads**2, axis=1)
        log_u2 = 2.0 * np.log(np.maximum(np.abs(u_s), U_LOG_FLOOR))
        for i in range(dim):
            integrand = (eps**2 * (grad_sq * normals[:, i]
                                   - 2.0 * du_dnu * grads[:, i])
                         + (v_s + 1.0) * u_s**2 * normals[:, i]
                         - normals[:, i] * u_s**2 * log_u2)
            boundary[j, i] = float(np.sum(sweights * integrand))
    return PohozaevReport(interior=interior, boundary=boundary,
                          residual=np.abs(interior - boundary), delta=delta)


def decay_profile(u: Field, peaks: PeakSet, radii=None):
    """Tail suprema: (r, sup |u| outside the union of balls B_{r eps}(y_j)).

    Monotone nonincreasing in r by construction.
    """
    g = u.grid
    pts = g.points()
    dist = np.min(np.stack([np.linalg.norm(pts - peaks.y[j], axis=1)
                            for j in range(peaks.k)]), axis=0)
    if radii is None:
        rmax = float(np.max(dist)) / peaks.eps
        radii = np.arange(0.0, rmax, 0.5)
    out = []
    for r in radii:
        outside = dist > r * peaks.eps
        sup = float(np.max(np.abs(u.values[outside]), initial=0.0))
        out.append((float(r), sup))
    return out


def log_sobolev_check(u: Field, a: float):
    """Both sides of the Gaussian logarithmic Sobolev inequality

        int u^2 log u^2 <= (a^2/pi) ||grad u||_2^2
                           + (log ||u||_2^2 - N (1 + log a)) ||u||_2^2,

    by grid quadrature, with the 0 log 0 = 0 convention. Returns (lhs, rhs);
    the caller asserts lhs <= rhs + slack.
    """
    if a <= 0:
        raise ValueError("scale parameter a must be positive")
    g = u.grid
    u2 = u.values**2
    lhs_dens = np.where(u2 > 0.0, u2 * np.log(np.where(u2 > 0.0, u2, 1.0)), 0.0)
    lhs = integrate(Field(g, lhs_dens))
    grad_sq = sum(gv.values**2 for gv in gradient(u))
    grad_norm2 = integrate(Field(g, grad_sq))
    mass = integrate(Field(g, u2))
    if mass <= 0.0:
        raise ValueError("field is identically zero")
    rhs = (a**2 / np.pi) * grad_norm2 + (np.log(mass)
                                         - g.dim * (1.0 + np.log(a))) * mass
    return float(lhs), float(rhs)


# ---------------------------------------------------------------------------
# Spectrum probe for the limiting linearization.
# ---------------------------------------------------------------------------

@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray   # 2N+2 smallest-magnitude, ascending in |.|
    eigenvectors: np.ndarray  # (m, 2N+2), columns match eigenvalues
    grid: Grid


def nondegeneracy_spectrum(omega: float, grid_coarse: Grid) -> SpectrumResult:
    """Smallest-magnitude spectrum of the limiting linearized operator

        L phi = -Lap phi + (omega - 2 - 2 log U) phi,

    whose potential term reduces to |x|^2 - N - 2 for the limiting profile.
    Exactly N eigenvalues (the translation modes dU/dx_i) tend to zero
    under h-refinement; the rest stay bounded away.
    """
    g = grid_coarse
    pts = g.points()
    diag = np.sum(pts**2, axis=1) - g.dim - 2.0
    lap = sum(_kron_axis(_laplacian_matrix_1d(g.n, g.h), ax, g.dim, g.n)
              for ax in range(g.dim))
    L = (-lap + sp.diags(diag)).tocsc()
    want = 2 * g.dim + 2
    try:
        if g.size <= 2500:
            vals, vecs = scipy.linalg.eigh(L.toarray())
            order = np.argsort(np.abs(vals))[:want]
            vals, vecs = vals[order], vecs[:, order]
        else:
            vals, vecs = spla.eigsh(L, k=want, sigma=0.0, which="LM")
            order = np.argsort(np.abs(vals))
            vals, vecs = vals[order], vecs[:, order]
    except (spla.ArpackNoConvergence, RuntimeError) as exc:
        raise ProbeError(f"eigensolve failed: {exc}") from exc
    return SpectrumResult(eigenvalues=vals, eigenvectors=vecs, grid=g)


def kernel_cosines(result: SpectrumResult, omega: float) -> np.ndarray:
    """|cosine| of each translation derivative dU/dx_i of the limiting
    profile against the span of the N smallest-|lambda| eigenvectors."""
    g = result.grid
    pts = g.points()
    expo = (omega + g.dim - np.sum(pts**2, axis=1)) / 2.0
    uvals = np.exp(expo)
    Q, _ = np.linalg.qr(result.eigenvectors[:, :g.dim])
    out = np.empty(g.dim)
    for i in range(g.dim):
        d = -pts[:, i] * uvals
        d /= np.linalg.norm(d)
        out[i] = np.linalg.norm(Q.T @ d)
    return out

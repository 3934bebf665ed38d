"""Uniform tensor grid on a truncated box, discrete calculus and norms.

The computational domain is the box [-L, L]^N with homogeneous Dirichlet
truncation. Fields are stored flat in lexicographic order. Two problem
norms live here: the eps-weighted H^1 norm induced by

    <u, v>_eps = int( eps^2 grad u . grad v + (V(x) + 1) u v ),

and the peak-envelope weighted sup norm

    ||phi||_* = sup_x ( sum_j exp(-|x - y_j|^2 / (2 eps^2)) )^{-1} |phi(x)|,

evaluated in log-space so that the envelope never underflows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import FieldFormatError, StarNormOverflowError

FIELD_MAGIC = b"GFLD"
FIELD_VERSION = 1

# Envelope exponents below this are unrepresentable in f64; field values
# there must be negligible or the star norm is declared overflowed.
_LOG_ENVELOPE_FLOOR = -700.0
_OVERFLOW_FIELD_THRESHOLD = 1e-250

DEFAULT_MAX_POINTS = 2**24


@dataclass
class Grid:
    """Uniform grid on [-L, L]^N with n (odd) points per axis."""

    dim: int
    half_width: float
    n: int
    max_points: int = DEFAULT_MAX_POINTS

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        if self.n < 9 or self.n % 2 == 0:
            raise ValueError("points-per-axis must be odd and >= 9")
        if self.half_width <= 0:
            raise ValueError("box half-width must be positive")
        if self.n**self.dim > self.max_points:
            raise ValueError(
                f"grid has {self.n**self.dim} points, budget is {self.max_points}"
            )
        self._points = None
        self._weights = None

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / (self.n - 1)

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    def axis(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.n)

    def points(self) -> np.ndarray:
        """All grid points, shape (n^N, N), lexicographic order."""
        if self._points is None:
            mesh = np.meshgrid(*([self.axis()] * self.dim), indexing="ij")
            self._points = np.stack([m.ravel() for m in mesh], axis=-1)
        return self._points

    def quad_weights(self) -> np.ndarray:
        """Tensor-product trapezoid weights, flat."""
        if self._weights is None:
            w1 = np.full(self.n, self.h)
            w1[0] = w1[-1] = 0.5 * self.h
            w = w1
            for _ in range(self.dim - 1):
                w = np.multiply.outer(w, w1)
            self._weights = w.ravel()
        return self._weights

    def interior_mask(self, layers: int = 1) -> np.ndarray:
        """Flat mask of points at least `layers` cells from the boundary."""
        m1 = np.zeros(self.n, dtype=bool)
        m1[layers:self.n - layers] = True
        m = m1
        for _ in range(self.dim - 1):
            m = np.logical_and.outer(m, m1)
        return m.ravel()


@dataclass
class Field:
    """Real-valued grid function, flat storage."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.grid.size:
            raise ValueError("value count does not match grid size")

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def __add__(self, other):
        return Field(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return Field(self.grid, self.values - _vals(other))

    def __mul__(self, scalar):
        return Field(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)


def _vals(f):
    return f.values if isinstance(f, Field) else f


def field_from_function(grid: Grid, fn) -> Field:
    """Sample fn on the grid; fn takes points of shape (m, N)."""
    return Field(grid, np.asarray(fn(grid.points()), dtype=float))


def laplacian(f: Field) -> Field:
    """Second-order central 2N+1-point stencil, zero Dirichlet ghosts."""
    g = f.grid
    u = f.values.reshape(g.shape)
    out = np.zeros_like(u)
    h2 = g.h * g.h
    for ax in range(g.dim):
        padded = np.pad(u, [(1, 1) if a == ax else (0, 0) for a in range(g.dim)])
        lo = tuple(slice(0, -2) if a == ax else slice(None) for a in range(g.dim))
        hi = tuple(slice(2, None) if a == ax else slice(None) for a in range(g.dim))
        out += (padded[lo] + padded[hi] - 2.0 * u) / h2
    return Field(g, out.ravel())


def gradient(f: Field) -> list:
    """Per-axis first derivatives; central interior, one-sided at edges."""
    g = f.grid
    u = f.values.reshape(g.shape)
    grads = np.gradient(u, g.h) if g.dim > 1 else [np.gradient(u, g.h)]
    return [Field(g, gr.ravel()) for gr in grads]


def integrate(f: Field) -> float:
    return float(np.dot(f.grid.quad_weights(), f.values))


def inner_eps(u: Field, v: Field, eps: float, v_potential: np.ndarray) -> float:
    """<u, v>_eps = int( eps^2 grad u . grad v + (V + 1) u v )."""
    g = u.grid
    if v.grid is not g and v.grid.size != g.size:
        raise ValueError("fields live on different grids")
    w = g.quad_weights()
    gu = gradient(u)
    gv = gradient(v)
    grad_term = sum(np.dot(w, gu[i].values * gv[i].values) for i in range(g.dim))
    mass_term = np.dot(w, (v_potential + 1.0) * u.values * v.values)
    return float(eps * eps * grad_term + mass_term)


def norm_eps(u: Field, eps: float, v_potential: np.ndarray) -> float:
    return float(np.sqrt(max(inner_eps(u, u, eps, v_potential), 0.0)))


def log_envelope(grid: Grid, eps: float, centers: np.ndarray) -> np.ndarray:
    """log sum_j exp(-|x - y_j|^2 / (2 eps^2)) at every grid point."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    pts = grid.points()
    exponents = np.empty((centers.shape[0], grid.size))
    for j, y in enumerate(centers):
        d2 = np.sum((pts - y) ** 2, axis=1)
        exponents[j] = -d2 / (2.0 * eps * eps)
    return logsumexp(exponents, axis=0)


def norm_star(phi: Field, eps: float, centers: np.ndarray) -> float:
    """Envelope-weighted sup norm, computed as exp(log|phi| - log envelope).

    Points with phi == 0 contribute 0. Points where the envelope is below
    exp(-700) contribute 0 as long as |phi| is negligible there; otherwise
    the ratio is unrepresentable and an overflow error names the point.
    """
    env = log_envelope(phi.grid, eps, centers)
    vals = phi.values
    nonzero = vals != 0.0
    deep = env < _LOG_ENVELOPE_FLOOR
    bad = nonzero & deep & (np.abs(vals) > _OVERFLOW_FIELD_THRESHOLD)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise StarNormOverflowError(
            phi.grid.points()[idx], float(abs(vals[idx])), float(env[idx])
        )
    usable = nonzero & ~deep
    if not np.any(usable):
        return 0.0
    log_ratio = np.log(np.abs(vals[usable])) - env[usable]
    peak = float(np.max(log_ratio))
    if peak > 709.0:
        idx_local = int(np.argmax(log_ratio))
        idx = np.flatnonzero(usable)[idx_local]
        raise StarNormOverflowError(
            phi.grid.points()[idx], float(abs(vals[idx])), float(env[idx])
        )
    return float(np.exp(peak))


def norm_linf(f: Field) -> float:
    return float(np.max(np.abs(f.values))) if f.values.size else 0.0


def norm_l2(f: Field) -> float:
    w = f.grid.quad_weights()
    return float(np.sqrt(np.dot(w, f.values * f.values)))


# ---------------------------------------------------------------------------
# Serialization: flat binary with a fixed little-endian header, plus CSV.
# ---------------------------------------------------------------------------

def save_field(f: Field, path) -> None:
    g = f.grid
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<II", FIELD_VERSION, g.dim))
        fh.write(struct.pack(f"<{g.dim}I", *([g.n] * g.dim)))
        fh.write(struct.pack(f"<{g.dim}d", *([g.half_width] * g.dim)))
        fh.write(f.values.astype("<f8").tobytes())


def load_field(path, max_points: int = DEFAULT_MAX_POINTS) -> Field:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12:
        raise FieldFormatError("file too short for header", offset=len(raw))
    if raw[:4] != FIELD_MAGIC:
        raise FieldFormatError("bad magic", offset=0)
    version, dim = struct.unpack_from("<II", raw, 4)
    if version != FIELD_VERSION:
        raise FieldFormatError(f"unsupported version {version}", offset=4)
    if dim < 1 or dim > 16:
        raise FieldFormatError(f"implausible dimension {dim}", offset=8)
    off = 12
    need = 4 * dim + 8 * dim
    if len(raw) < off + need:
        raise FieldFormatError("truncated axis metadata", offset=len(raw))
    ns = struct.unpack_from(f"<{dim}I", raw, off)
    off += 4 * dim
    ls = struct.unpack_from(f"<{dim}d", raw, off)
    off += 8 * dim
    if len(set(ns)) != 1 or len(set(ls)) != 1:
        raise FieldFormatError("anisotropic grids are not supported", offset=12)
    n, half_width = ns[0], ls[0]
    count = n**dim
    if len(raw) != off + 8 * count:
        raise FieldFormatError(
            f"expected {8 * count} value bytes, found {len(raw) - off}", offset=off
        )
    values = np.frombuffer(raw, dtype="<f8", count=count, offset=off)
    if not np.all(np.isfinite(values)):
        bad = int(np.argmin(np.isfinite(values)))
        raise FieldFormatError("non-finite value", offset=off + 8 * bad)
    grid = Grid(dim, half_width, n, max_points=max_points)
    return Field(grid, values.copy())


def field_to_csv(f: Field, path) -> None:
    pts = f.grid.points()
    cols = np.column_stack([pts, f.values])
    header = ",".join([f"x{i + 1}" for i in range(f.grid.dim)] + ["value"])
    np.savetxt(path, cols, delimiter=",", header=header, comments="")

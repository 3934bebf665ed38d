"""Closed-form potential families with exact derivatives and critical points.

Every family carries analytic gradient and Hessian: the outer peak solve and
the Pohozaev checks need exact derivatives, so sampled or black-box
potentials are deliberately unsupported.

Families (params layout):
  constant              [c]                     V = c
  quadratic-well        [c, xi_1..xi_N]         V = c + |x - xi|^2
  multi-well-polynomial [a, c]                  V = (x1^2 - a^2)^2 + sum_{i>=2} x_i^2 + c
  gaussian-bumps        [c, (amp, w, b_1..b_N)*] V = c - sum amp exp(-|x-b|^2 / w^2)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCriticalPointError, ModelDomainError

TOL_CRIT = 1e-10
TOL_DEG = 1e-8
DEDUP_RADIUS = 1e-6

FAMILIES = ("constant", "quadratic-well", "multi-well-polynomial", "gaussian-bumps")


@dataclass(frozen=True)
class PotentialModel:
    family: str
    params: tuple
    dim: int

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelDomainError(f"unknown potential family '{self.family}'")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        n = len(self.params)
        if self.family == "constant" and n != 1:
            raise ModelDomainError("constant family takes exactly one coefficient")
        if self.family == "quadratic-well" and n != 1 + self.dim:
            raise ModelDomainError("quadratic-well takes [c, xi_1..xi_N]")
        if self.family == "multi-well-polynomial" and n != 2:
            raise ModelDomainError("multi-well-polynomial takes [a, c]")
        if self.family == "gaussian-bumps":
            if n < 1 or (n - 1) % (2 + self.dim) != 0:
                raise ModelDomainError(
                    "gaussian-bumps takes [c] plus (amp, width, center) per bump"
                )


@dataclass(frozen=True)
class CriticalPoint:
    location: np.ndarray
    hessian: np.ndarray
    classification: str  # 'min' | 'max' | 'saddle'


def _bumps(model):
    c = model.params[0]
    rest = np.asarray(model.params[1:]).reshape(-1, 2 + model.dim)
    return c, rest[:, 0], rest[:, 1], rest[:, 2:]


def eval_potential(model: PotentialModel, x) -> np.ndarray:
    """V(x) for x of shape (..., N); returns shape (...)."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    if not np.all(np.isfinite(x)):
        raise ModelDomainError("non-finite evaluation point")
    if model.family == "constant":
        out = np.full(x.shape[0], model.params[0])
    elif model.family == "quadratic-well":
        c = model.params[0]
        xi = np.asarray(model.params[1:])
        out = c + np.sum((x - xi) ** 2, axis=1)
    elif model.family == "multi-well-polynomial":
        a, c = model.params
        out = (x[:, 0] ** 2 - a * a) ** 2 + c
        if model.dim > 1:
            out = out + np.sum(x[:, 1:] ** 2, axis=1)
    else:
        c, amps, widths, centers = _bumps(model)
        out = np.full(x.shape[0], c)
        for amp, w, b in zip(amps, widths, centers):
            out -= amp * np.exp(-np.sum((x - b) ** 2, axis=1) / (w * w))
    if not np.all(np.isfinite(out)):
        raise ModelDomainError("potential evaluated to a non-finite value")
    return out[0] if squeeze else out


def grad_potential(model: PotentialModel, x) -> np.ndarray:
    """Analytic gradient, shape (..., N)."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    if model.family == "constant":
        out = np.zeros_like(x)
    elif model.family == "quadratic-well":
        xi = np.asarray(model.params[1:])
        out = 2.0 * (x - xi)
    elif model.family == "multi-well-polynomial":
        a = model.params[0]
        out = 2.0 * x.copy()
        out[:, 0] = 4.0 * x[:, 0] * (x[:, 0] ** 2 - a * a)
    else:
        _, amps, widths, centers = _bumps(model)
        out = np.zeros_like(x)
        for amp, w, b in zip(amps, widths, centers):
            e = np.exp(-np.sum((x - b) ** 2, axis=1) / (w * w))
            out += (2.0 * amp / (w * w)) * (x - b) * e[:, None]
    return out[0] if squeeze else out


def hess_potential(model: PotentialModel, x) -> np.ndarray:
    """Analytic Hessian, shape (..., N, N)."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    m, N = x.shape
    eye = np.eye(N)
    if model.family == "constant":
        out = np.zeros((m, N, N))
    elif model.family == "quadratic-well":
        out = np.broadcast_to(2.0 * eye, (m, N, N)).copy()
    elif model.family == "multi-well-polynomial":
        a = model.params[0]
        out = np.broadcast_to(2.0 * eye, (m, N, N)).copy()
        out[:, 0, 0] = 12.0 * x[:, 0] ** 2 - 4.0 * a * a
    else:
        _, amps, widths, centers = _bumps(model)
        out = np.zeros((m, N, N))
        for amp, w, b in zip(amps, widths, centers):
            d = x - b
            e = np.exp(-np.sum(d**2, axis=1) / (w * w))
            k = 2.0 * amp / (w * w)
            out += k * e[:, None, None] * (
                eye[None] - (2.0 / (w * w)) * d[:, :, None] * d[:, None, :]
            )
    return out[0] if squeeze else out


def check_bounds(model: PotentialModel, half_width: float, samples: int = 4096,
                 seed: int = 0) -> tuple:
    """Sample the box and verify 0 < inf V <= sup V < inf; returns (inf, sup)."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-half_width, half_width, size=(samples, model.dim))
    vals = eval_potential(model, pts)
    lo, hi = float(np.min(vals)), float(np.max(vals))
    if not (0.0 < lo <= hi < np.inf):
        raise ModelDomainError(
            f"potential violates positivity/boundedness on the box: "
            f"inf={lo:.3e}, sup={hi:.3e}"
        )
    return lo, hi


def _classify(hess: np.ndarray) -> str:
    eigs = np.linalg.eigvalsh(hess)
    if np.all(eigs > 0):
        return "min"
    if np.all(eigs < 0):
        return "max"
    return "saddle"


def find_critical_points(model: PotentialModel, seeds, tol_crit: float = TOL_CRIT,
                         tol_deg: float = TOL_DEG, max_iter: int = 50,
                         dedup_radius: float = DEDUP_RADIUS) -> list:
    """Newton iteration on grad V = 0 from each seed.

    Converged points with |det H| <= tol_deg raise a degeneracy error (they
    violate the non-degeneracy hypothesis); non-converging seeds are skipped.
    """
    found = []
    for seed in np.atleast_2d(np.asarray(seeds, dtype=float)):
        x = seed.copy()
        converged = False
        for _ in range(max_iter):
            g = grad_potential(model, x)
            if np.linalg.norm(g) <= tol_crit:
                converged = True
                break
            H = hess_potential(model, x)
            try:
                step = np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                break
            x = x - step
            if not np.all(np.isfinite(x)):
                break
        if not converged:
            continue
        H = hess_potential(model, x)
        if abs(np.linalg.det(H)) <= tol_deg:
            raise DegenerateCriticalPointError(
                f"degenerate critical point near {tuple(np.round(x, 6))}: "
                f"|det H| <= {tol_deg}"
            )
        if any(np.linalg.norm(x - cp.location) <= dedup_radius for cp in found):
            continue
        found.append(CriticalPoint(location=x, hessian=H, classification=_classify(H)))
    return found

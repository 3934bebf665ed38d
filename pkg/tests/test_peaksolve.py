"""Outer peak-location solve, certification clauses, and persistence.

For constant potential the multiplier map vanishes identically and the loop
exits immediately at y = xi. For the quadratic well the root of a(y) sits at
the well bottom; starting the peak off-center must bring it back inside the
search ball.
"""

import numpy as np
import pytest

from logpeaks.ansatz import PeakSet, grid_for
from logpeaks.errors import BallExitError
from logpeaks.grid import load_field
from logpeaks.peaksolve import (ConstructedSolution, OuterConfig,
                                certify_peak_solution, load_solution_metadata,
                                multiplier_map, save_solution, solve_peaks)


def _origin_peaks(eps, y=None, delta=0.5):
    xi = np.array([[0.0, 0.0]])
    y = xi.copy() if y is None else np.atleast_2d(y)
    return PeakSet(eps=eps, y=y, xi=xi, delta=delta)


# ---------------------------------------------------------------------------
# Multiplier map
# ---------------------------------------------------------------------------

def test_multiplier_map_vanishes_for_constant_potential(constant_model):
    eps = 0.4
    peaks = _origin_peaks(eps)
    g = grid_for(peaks.xi, eps, 2, n_override=61)
    a = multiplier_map(peaks.y.flatten(), peaks, constant_model, g)
    assert np.max(np.abs(a)) <= 1e-10


def test_multiplier_map_is_deterministic(quadwell_model):
    eps = 0.4
    peaks = _origin_peaks(eps)
    g = grid_for(peaks.xi, eps, 2)
    y = np.array([0.1, -0.05])
    a1 = multiplier_map(y, peaks, quadwell_model, g)
    a2 = multiplier_map(y, peaks, quadwell_model, g)
    assert np.array_equal(a1, a2)


def test_multiplier_sign_is_opposite_potential_gradient(quadwell_model):
    eps = 0.3
    peaks = _origin_peaks(eps)
    g = grid_for(peaks.xi, eps, 2)
    a = multiplier_map(np.array([0.2, 0.0]), peaks, quadwell_model, g)
    assert a[0] < 0.0  # dV/dx1 = 0.4 > 0 there
    a = multiplier_map(np.array([-0.2, 0.0]), peaks, quadwell_model, g)
    assert a[0] > 0.0


# ---------------------------------------------------------------------------
# Outer solve
# ---------------------------------------------------------------------------

def test_constant_potential_converges_immediately(constant_model):
    eps = 0.4
    peaks = _origin_peaks(eps)
    g = grid_for(peaks.xi, eps, 2, n_override=61)
    sol = solve_peaks(peaks, constant_model, g)
    assert sol.outer_iterations == 0
    assert np.allclose(sol.peaks.y, peaks.xi)
    assert np.all(sol.u.values > 0.0) or np.min(sol.u.values) > -1e-12


def test_offcenter_start_returns_to_well_bottom(quadwell_model):
    eps = 0.4
    peaks = _origin_peaks(eps, y=[[0.15, -0.1]])
    g = grid_for(peaks.xi, eps, 2)
    sol = solve_peaks(peaks, quadwell_model, g)
    tol_outer = 1e-6 * eps**2
    a = sol.reduction.a
    assert np.max(np.abs(a)) <= tol_outer
    assert float(np.linalg.norm(sol.peaks.y - peaks.xi)) <= 0.05


def test_polish_mode_locates_root_more_tightly(quadwell_model):
    eps = 0.4
    peaks = _origin_peaks(eps)
    g = grid_for(peaks.xi, eps, 2)
    cfg = OuterConfig(polish=True)
    sol = solve_peaks(peaks, quadwell_model, g, cfg)
    # symmetric configuration: the multiplier root is exactly xi and polish
    # must not wander away from it
    assert float(np.linalg.norm(sol.peaks.y - peaks.xi)) <= 1e-9 * eps


def test_step_outside_search_ball_raises(quadwell_model):
    # a tiny ball around a far-off target: the first Newton step toward the
    # well bottom leaves it
    eps = 0.4
    xi = np.array([[0.2, 0.0]])
    peaks = PeakSet(eps=eps, y=xi.copy(), xi=xi, delta=0.02)
    g = grid_for(peaks.xi, eps, 2)
    with pytest.raises(BallExitError):
        solve_peaks(peaks, quadwell_model, g)


# ---------------------------------------------------------------------------
# Certification
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def constructed(quadwell_model):
    eps = 0.4
    peaks = PeakSet(eps=eps, y=[[0.0, 0.0]], xi=[[0.0, 0.0]], delta=0.5)
    g = grid_for(peaks.xi, eps, 2)
    return solve_peaks(peaks, quadwell_model, g)


def test_certification_passes_on_constructed_solution(constructed):
    report = certify_peak_solution(constructed)
    assert report.passed
    assert report.n_maxima == 1
    assert report.max_peak_offset <= constructed.peaks.delta
    assert report.tail_sup <= 1e-3
    assert 0.0 < report.energy_constant <= 1e3


def test_certification_fails_when_maxima_merge(constructed, quadwell_model):
    # claim two peaks where the field has one: clause (i) must fail
    sol2 = ConstructedSolution(
        peaks=PeakSet(eps=constructed.peaks.eps,
                      y=[[0.0, 0.0], [1.4, 0.0]],
                      xi=[[0.0, 0.0], [1.4, 0.0]], delta=0.5),
        u=constructed.u, reduction=constructed.reduction,
        outer_iterations=0, model=quadwell_model, grid=constructed.grid)
    report = certify_peak_solution(sol2)
    assert not report.maxima_ok
    assert not report.passed


def test_certification_fails_on_slowly_decaying_field(constructed,
                                                      quadwell_model):
    # add a far-field shelf above tau_small: clause (ii) must fail
    from logpeaks.grid import Field
    u_bad = Field(constructed.grid, constructed.u.values + 5e-3)
    sol2 = ConstructedSolution(
        peaks=constructed.peaks, u=u_bad, reduction=constructed.reduction,
        outer_iterations=0, model=quadwell_model, grid=constructed.grid)
    report = certify_peak_solution(sol2)
    assert not report.tail_ok
    assert not report.passed


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def test_solution_roundtrip(constructed, tmp_path):
    base = str(tmp_path / "sol")
    save_solution(constructed, base)
    meta = load_solution_metadata(base)
    assert meta["eps"] == constructed.peaks.eps
    assert np.allclose(meta["y"], constructed.peaks.y)
    assert meta["model"]["family"] == "quadratic-well"
    assert meta["grid"]["n"] == constructed.grid.n
    back = load_field(base + ".field")
    assert np.array_equal(back.values, constructed.u.values)
    assert meta["phi_eps_norm"] == constructed.reduction.norms.eps_norm

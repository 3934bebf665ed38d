"""Grid calculus, problem norms, and the binary field format.

Closed-form oracles used here (all derived independently by hand):
  * Delta(x^2 + y^2) = 4 exactly, and the 5-point stencil reproduces it
    exactly on interior points;
  * for U(x) = e^{3/2} exp(-|x|^2 / (2 eps^2)) and V == 1 in 2D,
      <U, U>_eps = eps^2 int |grad U|^2 + 2 int U^2 = pi eps^2 e^3 + 2 pi
      eps^2 e^3 = 3 pi eps^2 e^3;
  * int_{R^2} e^{-|x|^2} dx = pi, so the L2 norm of exp(-|x|^2/2) is
    sqrt(pi).
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logpeaks.errors import FieldFormatError, StarNormOverflowError
from logpeaks.grid import (Field, Grid, field_from_function, field_to_csv,
                           gradient, inner_eps, integrate, laplacian,
                           load_field, log_envelope, norm_eps, norm_l2,
                           norm_linf, norm_star, save_field)


def _gaussian_field(grid, eps, amp=1.0, center=(0.0, 0.0)):
    c = np.asarray(center)
    return field_from_function(
        grid, lambda p: amp * np.exp(-np.sum((p - c) ** 2, axis=1)
                                     / (2.0 * eps * eps)))


# ---------------------------------------------------------------------------
# Grid basics
# ---------------------------------------------------------------------------

def test_grid_rejects_bad_parameters():
    with pytest.raises(ValueError):
        Grid(dim=2, half_width=1.0, n=10)       # even
    with pytest.raises(ValueError):
        Grid(dim=2, half_width=1.0, n=7)        # too coarse
    with pytest.raises(ValueError):
        Grid(dim=2, half_width=-1.0, n=11)
    with pytest.raises(ValueError):
        Grid(dim=3, half_width=1.0, n=301)      # exceeds point budget


def test_quadrature_weights_sum_to_box_volume():
    g = Grid(dim=2, half_width=1.5, n=31)
    assert np.sum(g.quad_weights()) == pytest.approx(3.0**2, rel=1e-12)


def test_quadrature_is_second_order_on_smooth_integrand():
    # int_{[-1,1]^2} cos(x) cos(y) = (2 sin 1)^2
    exact = (2.0 * np.sin(1.0)) ** 2
    errs = []
    for n in (17, 33, 65):
        g = Grid(dim=2, half_width=1.0, n=n)
        f = field_from_function(g, lambda p: np.cos(p[:, 0]) * np.cos(p[:, 1]))
        errs.append(abs(integrate(f) - exact))
    rate1 = np.log2(errs[0] / errs[1])
    rate2 = np.log2(errs[1] / errs[2])
    assert rate1 >= 1.9 and rate2 >= 1.9


def test_interior_mask_counts():
    g = Grid(dim=2, half_width=1.0, n=11)
    assert int(np.sum(g.interior_mask())) == 9 * 9
    assert int(np.sum(g.interior_mask(layers=2))) == 7 * 7


# ---------------------------------------------------------------------------
# Discrete calculus
# ---------------------------------------------------------------------------

def test_laplacian_exact_on_quadratic_interior():
    g = Grid(dim=2, half_width=1.0, n=21)
    f = field_from_function(g, lambda p: p[:, 0] ** 2 + p[:, 1] ** 2)
    lap = laplacian(f)
    inside = g.interior_mask()
    assert np.allclose(lap.values[inside], 4.0, atol=1e-10)


def test_laplacian_second_order_on_gaussian():
    # Delta e^{-|x|^2/2} = (|x|^2 - 2) e^{-|x|^2/2} in 2D
    errs = []
    for n in (41, 81):
        g = Grid(dim=2, half_width=4.0, n=n)
        f = _gaussian_field(g, 1.0)
        lap = laplacian(f)
        r2 = np.sum(g.points() ** 2, axis=1)
        exact = (r2 - 2.0) * f.values
        inside = g.interior_mask()
        errs.append(float(np.max(np.abs(lap.values - exact)[inside])))
    assert np.log2(errs[0] / errs[1]) >= 1.9


def test_gradient_matches_closed_form_linear_field():
    g = Grid(dim=2, half_width=1.0, n=15)
    f = field_from_function(g, lambda p: 3.0 * p[:, 0] - 2.0 * p[:, 1])
    gx, gy = gradient(f)
    assert np.allclose(gx.values, 3.0, atol=1e-12)
    assert np.allclose(gy.values, -2.0, atol=1e-12)


# ---------------------------------------------------------------------------
# Inner product and norms
# ---------------------------------------------------------------------------

def test_inner_eps_closed_form_gausson_constant_potential():
    """For V == 1 in 2D the eps-weighted energy product of the peak profile
    e^{3/2} exp(-|x|^2 / 2 eps^2) with itself equals 3 pi eps^2 e^3."""
    eps = 0.3
    g = Grid(dim=2, half_width=3.0, n=241)
    u = _gaussian_field(g, eps, amp=np.exp(1.5))
    v_pot = np.ones(g.size)
    exact = 3.0 * np.pi * eps * eps * np.exp(3.0)
    assert inner_eps(u, u, eps, v_pot) == pytest.approx(exact, rel=2e-3)
    assert norm_eps(u, eps, v_pot) == pytest.approx(np.sqrt(exact), rel=1e-3)


def test_inner_eps_is_symmetric_and_bilinear():
    g = Grid(dim=2, half_width=2.0, n=25)
    rng = np.random.default_rng(7)
    u = Field(g, rng.standard_normal(g.size))
    v = Field(g, rng.standard_normal(g.size))
    w = Field(g, rng.standard_normal(g.size))
    v_pot = 1.0 + np.sum(g.points() ** 2, axis=1)
    eps = 0.5
    assert inner_eps(u, v, eps, v_pot) == pytest.approx(
        inner_eps(v, u, eps, v_pot), rel=1e-12)
    lhs = inner_eps(u, 2.0 * v + w, eps, v_pot)
    rhs = 2.0 * inner_eps(u, v, eps, v_pot) + inner_eps(u, w, eps, v_pot)
    assert lhs == pytest.approx(rhs, rel=1e-11)
    assert inner_eps(u, u, eps, v_pot) > 0.0


def test_l2_norm_of_unit_gaussian_is_sqrt_pi():
    g = Grid(dim=2, half_width=6.0, n=121)
    f = _gaussian_field(g, 1.0)
    assert norm_l2(f) == pytest.approx(np.sqrt(np.pi), rel=1e-4)


def test_sup_norm_examples():
    g = Grid(dim=2, half_width=1.0, n=11)
    f = Field(g, np.zeros(g.size))
    assert norm_linf(f) == 0.0
    f.values[3] = -2.5
    assert norm_linf(f) == 2.5


# ---------------------------------------------------------------------------
# Envelope-weighted norm
# ---------------------------------------------------------------------------

def test_star_norm_of_scaled_envelope_is_the_scale():
    eps = 0.3
    g = Grid(dim=2, half_width=1.5, n=41)
    centers = np.array([[0.0, 0.0]])
    u = _gaussian_field(g, eps, amp=np.exp(1.5))
    assert norm_star(u, eps, centers) == pytest.approx(np.exp(1.5), rel=1e-12)


def test_star_norm_zero_field_and_homogeneity():
    eps = 0.25
    g = Grid(dim=2, half_width=1.0, n=21)
    centers = np.array([[0.2, -0.1]])
    assert norm_star(Field(g, np.zeros(g.size)), eps, centers) == 0.0
    u = _gaussian_field(g, eps, center=(0.2, -0.1))
    s = norm_star(u, eps, centers)
    assert norm_star(-3.0 * u, eps, centers) == pytest.approx(3.0 * s, rel=1e-12)


@given(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0))
@settings(max_examples=25, deadline=None)
def test_star_norm_triangle_inequality(c1, c2):
    eps = 0.3
    g = Grid(dim=2, half_width=1.0, n=15)
    centers = np.array([[0.0, 0.0]])
    u = _gaussian_field(g, eps, amp=c1)
    pts = g.points()
    v = Field(g, c2 * np.exp(-np.sum(pts**2, axis=1) / (2 * eps * eps))
              * np.cos(3.0 * pts[:, 0]))
    lhs = norm_star(u + v, eps, centers)
    rhs = norm_star(u, eps, centers) + norm_star(v, eps, centers)
    assert lhs <= rhs * (1.0 + 1e-12)


def test_star_norm_overflow_reports_offending_point():
    # envelope ~ e^{-|x|^2 / 2 eps^2}: at |x| = 1.0, eps = 0.02 the exponent
    # is -1250 < -700, so an O(1) value there is unrepresentable
    eps = 0.02
    g = Grid(dim=2, half_width=1.0, n=21)
    vals = np.zeros(g.size)
    vals[0] = 1.0  # corner (-1, -1)
    with pytest.raises(StarNormOverflowError) as exc:
        norm_star(Field(g, vals), eps, np.array([[0.0, 0.0]]))
    assert np.allclose(exc.value.point, [-1.0, -1.0])
    assert exc.value.log_envelope < -700.0


def test_star_norm_ignores_negligible_deep_tail_values():
    eps = 0.02
    g = Grid(dim=2, half_width=1.0, n=21)
    vals = np.zeros(g.size)
    vals[0] = 1e-280  # below the negligibility threshold
    mid = g.size // 2
    vals[mid] = 0.5   # center point, envelope = 1 there
    assert norm_star(Field(g, vals), eps,
                     np.array([[0.0, 0.0]])) == pytest.approx(0.5)


def test_log_envelope_of_two_centers_peaks_at_each():
    eps = 0.2
    g = Grid(dim=2, half_width=2.0, n=41)
    centers = np.array([[-1.0, 0.0], [1.0, 0.0]])
    env = log_envelope(g, eps, centers)
    pts = g.points()
    for c in centers:
        idx = int(np.argmin(np.sum((pts - c) ** 2, axis=1)))
        assert env[idx] == pytest.approx(0.0, abs=1e-10)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def test_field_roundtrip_is_bitwise(tmp_path):
    g = Grid(dim=2, half_width=1.3, n=17)
    rng = np.random.default_rng(11)
    f = Field(g, rng.standard_normal(g.size))
    path = tmp_path / "f.field"
    save_field(f, path)
    back = load_field(path)
    assert back.grid.dim == 2
    assert back.grid.n == 17
    assert back.grid.half_width == 1.3
    assert np.array_equal(back.values, f.values)


def _saved_bytes(tmp_path):
    g = Grid(dim=1, half_width=1.0, n=9)
    f = Field(g, np.linspace(0.0, 1.0, 9))
    path = tmp_path / "base.field"
    save_field(f, path)
    return bytearray(path.read_bytes()), tmp_path


def test_format_errors_carry_byte_offsets(tmp_path):
    raw, tp = _saved_bytes(tmp_path)

    def expect(data, offset):
        p = tp / "bad.field"
        p.write_bytes(bytes(data))
        with pytest.raises(FieldFormatError) as exc:
            load_field(p)
        assert exc.value.offset == offset

    expect(raw[:8], 8)                       # too short for header
    bad = raw.copy(); bad[:4] = b"XXXX"; expect(bad, 0)       # magic
    bad = raw.copy(); bad[4] = 99; expect(bad, 4)             # version
    bad = raw.copy(); bad[8] = 0; expect(bad, 8)              # dimension
    expect(raw[:-8], 24)                     # missing value bytes
    bad = raw.copy()
    bad[24 + 8 * 3:24 + 8 * 4] = np.array([np.nan]).tobytes()
    expect(bad, 24 + 8 * 3)                  # non-finite value


def test_csv_export_has_coordinates_and_values(tmp_path):
    g = Grid(dim=2, half_width=1.0, n=9)
    f = field_from_function(g, lambda p: p[:, 0] + 2.0 * p[:, 1])
    path = tmp_path / "f.csv"
    field_to_csv(f, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "x1,x2,value"
    assert len(lines) == 1 + g.size
    first = [float(t) for t in lines[1].split(",")]
    assert first[0] == -1.0 and first[1] == -1.0
    assert first[2] == pytest.approx(-3.0)

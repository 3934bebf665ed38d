"""Potential families: exact evaluation, analytic derivatives, and
critical-point location/classification."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logpeaks.errors import DegenerateCriticalPointError, ModelDomainError
from logpeaks.potential import (CriticalPoint, PotentialModel, check_bounds,
                                eval_potential, find_critical_points,
                                grad_potential, hess_potential)


def test_constant_family_evaluates_to_its_coefficient():
    model = PotentialModel(family="constant", params=(1.0,), dim=2)
    assert eval_potential(model, np.array([0.3, -2.0])) == 1.0
    assert eval_potential(model, np.array([5.0, 5.0])) == 1.0


def test_quadratic_well_direct_evaluation():
    model = PotentialModel(family="quadratic-well", params=(1.0, 0.0, 0.0), dim=2)
    assert eval_potential(model, np.array([1.0, 0.0])) == pytest.approx(2.0)


def test_gaussian_bumps_direct_evaluation():
    # V(x) = 2 - exp(-|x|^2): one bump of amplitude 1, width 1, at the origin
    model = PotentialModel(family="gaussian-bumps",
                           params=(2.0, 1.0, 1.0, 0.0, 0.0), dim=2)
    assert eval_potential(model, np.array([0.0, 0.0])) == pytest.approx(1.0)


def test_quadratic_well_gradient_and_hessian_closed_form():
    model = PotentialModel(family="quadratic-well", params=(1.0, 0.0, 0.0), dim=2)
    x = np.array([1.0, 2.0])
    assert np.allclose(grad_potential(model, x), [2.0, 4.0])
    assert np.allclose(hess_potential(model, x), 2.0 * np.eye(2))


def test_constant_gradient_and_hessian_vanish():
    model = PotentialModel(family="constant", params=(3.0,), dim=3)
    x = np.array([0.1, -0.2, 0.4])
    assert np.allclose(grad_potential(model, x), 0.0)
    assert np.allclose(hess_potential(model, x), 0.0)


_FAMILIES = [
    PotentialModel(family="quadratic-well", params=(1.0, 0.3, -0.2), dim=2),
    PotentialModel(family="multi-well-polynomial", params=(1.0, 1.0), dim=2),
    PotentialModel(family="gaussian-bumps",
                   params=(2.0, 0.7, 0.8, 0.2, -0.1), dim=2),
]


@pytest.mark.parametrize("model", _FAMILIES, ids=lambda m: m.family)
def test_gradient_matches_central_differences_at_second_order(model):
    """Finite-difference oracle: discrepancy between the analytic gradient
    and central differences shrinks at rate >= 1.9 over a step sweep."""
    rng = np.random.default_rng(3)
    pts = rng.uniform(-1.0, 1.0, size=(5, model.dim))
    errs = []
    for h in (1e-3, 1e-4):
        worst = 0.0
        for x in pts:
            g = grad_potential(model, x)
            fd = np.empty_like(g)
            for i in range(model.dim):
                e = np.zeros(model.dim)
                e[i] = h
                fd[i] = (eval_potential(model, x + e)
                         - eval_potential(model, x - e)) / (2 * h)
            worst = max(worst, float(np.max(np.abs(g - fd))))
        errs.append(worst)
    if errs[0] < 1e-9:
        # central differences are exact on quadratics; errors are round-off
        assert max(errs) < 1e-6
    else:
        rate = np.log10(errs[0] / max(errs[1], 1e-16))
        assert rate >= 1.9


@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
@settings(max_examples=30, deadline=None)
def test_hessian_matches_gradient_differences(x1, x2):
    model = PotentialModel(family="gaussian-bumps",
                           params=(2.0, 0.7, 0.8, 0.2, -0.1), dim=2)
    x = np.array([x1, x2])
    h = 1e-5
    H = hess_potential(model, x)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        col = (grad_potential(model, x + e) - grad_potential(model, x - e)) / (2 * h)
        assert np.allclose(H[:, i], col, atol=1e-6, rtol=1e-4)


def test_find_critical_point_of_paraboloid():
    model = PotentialModel(family="quadratic-well", params=(1.0, 0.0, 0.0), dim=2)
    pts = find_critical_points(model, [[0.3, -0.2]])
    assert len(pts) == 1
    assert np.allclose(pts[0].location, [0.0, 0.0], atol=1e-10)
    assert pts[0].classification == "min"


def test_find_critical_points_of_double_well():
    model = PotentialModel(family="multi-well-polynomial", params=(1.0, 1.0), dim=2)
    pts = find_critical_points(
        model, [[0.9, 0.1], [-1.1, -0.05], [0.05, 0.02]])
    by_class = {p.classification for p in pts}
    assert by_class == {"min", "saddle"}
    locs = sorted(tuple(np.round(p.location, 6)) for p in pts)
    assert locs == [(-1.0, 0.0), (0.0, 0.0), (1.0, 0.0)]


def test_constant_potential_rejected_as_degenerate():
    model = PotentialModel(family="constant", params=(1.0,), dim=2)
    with pytest.raises(DegenerateCriticalPointError):
        find_critical_points(model, [[0.1, 0.1]])


def test_returned_points_satisfy_tolerances():
    model = PotentialModel(family="gaussian-bumps",
                           params=(2.0, 1.0, 1.0, 0.0, 0.0), dim=2)
    pts = find_critical_points(model, [[0.2, -0.1]])
    assert len(pts) == 1
    cp = pts[0]
    assert isinstance(cp, CriticalPoint)
    assert np.linalg.norm(grad_potential(model, cp.location)) <= 1e-10
    assert abs(np.linalg.det(cp.hessian)) > 1e-8


def test_duplicate_seeds_are_deduplicated():
    model = PotentialModel(family="quadratic-well", params=(1.0, 0.0, 0.0), dim=2)
    pts = find_critical_points(model, [[0.3, 0.0], [-0.2, 0.1], [0.0, 0.4]])
    assert len(pts) == 1


def test_bounds_check_accepts_positive_bounded_potential():
    model = PotentialModel(family="quadratic-well", params=(1.0, 0.0, 0.0), dim=2)
    lo, hi = check_bounds(model, 2.0)
    assert 0.0 < lo <= hi < np.inf
    assert lo >= 1.0


def test_bounds_check_rejects_nonpositive_potential():
    model = PotentialModel(family="constant", params=(0.0,), dim=2)
    # constant family accepts the coefficient; positivity is a box check
    with pytest.raises(ModelDomainError):
        check_bounds(PotentialModel(family="gaussian-bumps",
                                    params=(1.0, 2.0, 1.0, 0.0, 0.0), dim=2),
                     2.0)
    with pytest.raises(ModelDomainError):
        check_bounds(model, 2.0)


def test_unknown_family_and_bad_params_are_rejected():
    with pytest.raises(ModelDomainError):
        PotentialModel(family="sombrero", params=(1.0,), dim=2)
    with pytest.raises(ModelDomainError):
        PotentialModel(family="quadratic-well", params=(1.0, 0.0), dim=2)
    with pytest.raises(ModelDomainError):
        PotentialModel(family="multi-well-polynomial", params=(1.0,), dim=2)


def test_nonfinite_point_is_rejected():
    model = PotentialModel(family="constant", params=(1.0,), dim=2)
    with pytest.raises(ModelDomainError):
        eval_potential(model, np.array([np.inf, 0.0]))

import math

import numpy as np
import pytest

from htmeta.errors import ConfigError
from htmeta.landscape import (BOUNDARY, GridSpec, Landscape, classify_field, classify_many,
                              gradient_flow, grid_1d, landscape_from_spec, four_well_potential,
                              two_well_landscape, validate_assumptions, wells_1d)

from conftest import FOUR_WELL_MINIMA


def test_four_well_minima_are_stationary(four_well):
    assert four_well.n_minima == 4
    np.testing.assert_allclose(four_well.minima[:, 0], FOUR_WELL_MINIMA, atol=5e-6)
    for i in four_well.fields:
        assert abs(four_well.grad_at(four_well.minimum(i))[0]) < 1e-6


def test_four_well_minima_are_potential_minima(four_well):
    for i in four_well.fields:
        m = four_well.minimum(i)[0]
        lo, hi = four_well.interval(i)
        xs = np.linspace(max(lo, -1.6) + 1e-6, min(hi, 1.6) - 1e-6, 20001)
        assert abs(xs[np.argmin(four_well_potential(xs))] - m) < 2e-4


def test_gradient_matches_finite_difference_of_potential(four_well):
    for x in (-1.4, -0.9, 0.0, 0.45, 1.0):
        h = 1e-5
        fd = (four_well_potential(x + h) - four_well_potential(x - h)) / (2 * h)
        assert four_well.grad_at([x])[0] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_grad_many_matches_grad_at(four_well):
    xs = np.linspace(-1.6, 1.6, 57)
    g = four_well.grad_many(xs)
    assert g.shape == (57, 1)
    np.testing.assert_allclose(g[:, 0], [four_well.grad_at([x])[0] for x in xs])


def test_classify_intervals(four_well):
    assert classify_field(four_well, [-1.45]) == 1
    assert classify_field(four_well, [0.3]) == 3
    assert classify_field(four_well, [1.5]) == 4
    assert classify_field(four_well, [0.2]) == BOUNDARY
    labels = classify_many(four_well, np.array([-1.5, -0.5, 0.5, 1.0, -1.3]))
    assert labels.tolist() == [1, 2, 3, 4, BOUNDARY]


def test_gradient_flow_converges_to_own_minimum(four_well):
    for x0, i in ((-1.35, 1), (0.1, 2), (0.3, 3), (0.75, 4)):
        res = gradient_flow(four_well, [x0])
        assert res.converged and res.terminal_field == i


def test_wells_1d_critical_points():
    land = wells_1d([-1.0, 1.0, 3.0], [0.0, 2.0])
    for c in (-1.0, 0.0, 1.0, 2.0, 3.0):
        assert abs(land.grad_at([c])[0]) < 1e-12
    assert land.grad_at([0.5])[0] < 0 and land.grad_at([-0.5])[0] > 0


def test_three_well_distances(three_well):
    m = three_well.minima[:, 0]
    s = three_well.boundaries
    assert s[0] - m[0] == pytest.approx(0.25)
    assert m[1] - s[0] == pytest.approx(0.6)
    assert s[1] - m[1] == pytest.approx(0.9)
    assert m[2] - s[1] == pytest.approx(0.35)


def test_single_minimum_rejected_unless_allowed():
    with pytest.raises(ValueError):
        Landscape(dim=1, grad=lambda x: x, minima=[[0.0]])
    land = Landscape(dim=1, grad=lambda x: x, minima=[[0.0]], allow_single=True)
    assert classify_field(land, [3.0]) == 1


def test_boundaries_must_separate_minima():
    with pytest.raises(ValueError):
        Landscape(dim=1, grad=lambda x: x, minima=[[0.0], [1.0]], boundaries=[2.0])


def test_two_d_flow_classification():
    # separable double well in x, single well in y: fields are the half planes
    def grad(p):
        return np.array([p[0] ** 3 - p[0], p[1]])

    land = Landscape(dim=2, grad=grad, minima=[[-1.0, 0.0], [1.0, 0.0]])
    assert classify_field(land, [-0.3, 0.7]) == 1
    assert classify_field(land, [0.4, -1.2]) == 2
    assert classify_field(land, [0.0, 0.5], t_max=50.0) == BOUNDARY


def test_grid_landscape_reproduces_samples():
    xs = np.linspace(-2.5, 2.5, 401)
    ref = two_well_landscape()
    fs = np.array([ref.potential(np.array([x])) for x in xs])
    land = grid_1d(xs, fs, [-1.0, 1.0], [0.0])
    for x in (-1.7, -0.4, 0.9):
        assert land.grad_at([x])[0] == pytest.approx(ref.grad_at([x])[0], abs=2e-3)


def test_landscape_from_spec_errors():
    with pytest.raises(ConfigError):
        landscape_from_spec({"kind": "nope"})
    with pytest.raises(ConfigError):
        landscape_from_spec({"kind": "wells1d", "minima": [0, 2]})
    land = landscape_from_spec({"kind": "wells1d", "minima": [-1, 1], "boundaries": [0]})
    assert land.n_minima == 2


def test_validate_assumptions_four_well(four_well):
    rep = validate_assumptions(four_well, GridSpec(-1.6, 1.6, spacing=5e-3, annulus=0.05))
    assert rep.ok, rep


def test_validate_assumptions_reports_violations():
    # minimum listed at a point that is not stationary
    land = Landscape(dim=1, grad=lambda x: np.array([x[0] ** 3 - x[0]]),
                     minima=[[-1.0], [0.9]], boundaries=[0.0])
    rep = validate_assumptions(land, GridSpec(-2, 2, spacing=0.01, annulus=0.05))
    assert not rep.ok
    assert rep.stationarity and rep.stationarity[0][0] == 2


def test_nonfinite_classification_rejected(four_well):
    with pytest.raises(ValueError):
        classify_field(four_well, [math.nan])

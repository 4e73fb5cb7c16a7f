import json
import math

import numpy as np
import pytest

from htmeta.errors import DegenerateThreshold, Unbounded
from htmeta.geometry import (build_graph, communication_classes, effective_width, jump_width,
                             reachable_sets, width_report, write_graph)
from htmeta.landscape import Landscape

# distances from each refined minimum to the nearest field boundary
FOUR_WELL_R = (0.21148, 0.60073, 0.20376, 0.62209)


def test_four_well_effective_widths(four_well):
    for i, r in zip(four_well.fields, FOUR_WELL_R):
        assert effective_width(four_well, i) == pytest.approx(r, abs=2e-5)


def test_four_well_widths_at_half(four_well):
    wr = width_report(four_well, 0.5)
    assert wr.j_b == [1, 2, 1, 2]
    assert wr.j_star == 2 and wr.widest == {2, 4}


def test_four_well_widths_small_b(four_well):
    assert width_report(four_well, 0.15).j_b == [2, 5, 2, 5]


def test_width_formula_and_infinite_b(three_well):
    assert jump_width(three_well, 2, 0.5) == 2
    assert jump_width(three_well, 2, 0.7) == 1
    assert jump_width(three_well, 2, math.inf) == 1


def test_exact_multiple_is_degenerate(three_well):
    with pytest.raises(DegenerateThreshold):
        jump_width(three_well, 2, 0.3)
    with pytest.raises(DegenerateThreshold):
        jump_width(three_well, 2, 0.2)


def test_three_well_graph_b05(three_well):
    g = build_graph(three_well, 0.5)
    assert g.meta["widths"]["j_b"] == [1, 2, 1]
    assert g.irreducible
    assert set(g.edges) == {(1, 2), (2, 1), (2, 3), (3, 2)}


def test_three_well_graph_b04(three_well):
    g = build_graph(three_well, 0.4)
    assert not g.irreducible
    assert g.classes == [{1, 2}, {3}]
    assert g.class_kinds == ["absorbing", "transient"]
    assert g.absorbing_classes() == [{1, 2}]
    assert g.class_of(3) == 1


def test_sampled_matches_analytic_1d(three_well):
    for b in (0.4, 0.5):
        a = build_graph(three_well, b, method="analytic")
        s = build_graph(three_well, b, method="sampled")
        assert set(a.edges) == set(s.edges)
    assert jump_width(three_well, 2, 0.4, method="sampled") == jump_width(three_well, 2, 0.4)


def test_reachable_sets_hit_extremes(three_well):
    sets = reachable_sets(three_well, 2, 0.4, 2)
    m = three_well.minimum(2)[0]
    assert np.max(sets[1][:, 0]) == pytest.approx(m + 0.8, abs=1e-9)
    assert np.min(sets[1][:, 0]) == pytest.approx(m - 0.8, abs=1e-9)


def test_communication_classes_kinds():
    classes, kinds = communication_classes([1, 2, 3, 4], [(1, 2), (2, 1), (3, 1), (4, 4)])
    assert classes == [{1, 2}, {3}, {4}]
    assert kinds == ["absorbing", "transient", "absorbing"]


def test_graph_exports(tmp_path, three_well):
    g = build_graph(three_well, 0.4)
    write_graph(g, tmp_path / "g.json", tmp_path / "g.dot")
    data = json.loads((tmp_path / "g.json").read_text())
    assert data["classes"] == [[1, 2], [3]] and data["irreducible"] is False
    dot = (tmp_path / "g.dot").read_text()
    assert dot.startswith("digraph") and "m1 -> m2;" in dot


def test_single_field_has_no_exterior():
    land = Landscape(dim=1, grad=lambda x: x, minima=[[0.0]], allow_single=True)
    with pytest.raises(Unbounded):
        jump_width(land, 1, 0.5)


@pytest.mark.slow
def test_two_dimensional_sampled_width():
    # separable double well: the fields are the half planes x < 0 and x > 0
    def grad(p):
        return np.array([p[0] ** 3 - p[0], p[1]])

    land = Landscape(dim=2, grad=grad, minima=[[-1.0, 0.0], [1.0, 0.0]])
    assert effective_width(land, 1) == pytest.approx(1.0, abs=1e-4)
    assert jump_width(land, 1, 0.4) == 3
    g = build_graph(land, 0.4)
    assert g.irreducible

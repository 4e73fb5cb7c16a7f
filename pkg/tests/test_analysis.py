import math

import numpy as np
import pytest

from htmeta.analysis import (KernelEstimate, empirical_kernel, exit_study, fit_exponent,
                             ks_exponential, occupancy, time_scaled_path, write_exit_csv,
                             write_histogram_csv, write_occupancy_csv)
from htmeta.dynamics import RunConfig, Trajectory, simulate
from htmeta.errors import InsufficientEvents, OutOfHorizon

from conftest import FOUR_WELL_BOX


def _traj(marks, steps=1000):
    return Trajectory(times=np.array([0, steps]), states=np.zeros((2, 1)), transitions=marks,
                      final_state=np.zeros(1), steps_run=steps)


def test_occupancy_exact_counts(four_well, lomax):
    cfg = RunConfig(eta=1e-3, b=0.5, steps=30_000, x0=(0.3,), projection_box=FOUR_WELL_BOX, thin=1)
    tr = simulate(four_well, lomax, cfg)
    rep = occupancy(tr, four_well, {2, 4})
    d = np.abs(tr.states[1:, 0][:, None] - four_well.minima[:, 0][None])
    np.testing.assert_allclose(rep.fraction_per_minimum, (d < 0.1).mean(axis=0))
    assert rep.exact
    assert rep.fraction_widest == pytest.approx(rep.fraction_per_minimum[1] + rep.fraction_per_minimum[3])
    thinned = occupancy(tr, four_well, {2, 4}, eps=0.05)
    assert not thinned.exact


def test_empirical_kernel_counts():
    marks = [(0, 2), (10, 1), (20, 2), (30, 4), (40, 2), (50, 4)]
    k = empirical_kernel([_traj(marks)], _Fake(4), min_events=1)
    assert k.counts[1, 0] == 1 and k.counts[1, 3] == 2 and k.counts[3, 1] == 1
    sub = empirical_kernel([_traj(marks)], _Fake(4), states=[2, 4], min_events=1)
    # the trip 2 -> 1 -> 2 becomes a self-return
    np.testing.assert_array_equal(sub.counts, [[1, 2], [1, 0]])
    col = empirical_kernel([_traj(marks)], _Fake(4), states=[2, 4], min_events=1,
                           collapse_self=True)
    np.testing.assert_array_equal(col.counts, [[0, 2], [1, 0]])
    assert col.sojourn_mean[2] == pytest.approx(20.0)  # stays 0..30 and 40..50


class _Fake:
    def __init__(self, k):
        self.fields = range(1, k + 1)


def test_empirical_kernel_insufficient():
    with pytest.raises(InsufficientEvents):
        empirical_kernel([_traj([(0, 1)])], _Fake(2))
    with pytest.raises(InsufficientEvents):
        empirical_kernel([_traj([(0, 1), (5, 2)])], _Fake(2), min_events=20)


def test_kernel_z_scores():
    k = KernelEstimate([1, 2], np.array([[0, 100], [40, 60]]))
    ref = np.array([[0.0, 1.0], [0.5, 0.5]])
    z = k.z_scores(ref)
    assert z[0, 1] == 0 and z[0, 0] == 0
    assert z[1, 0] == pytest.approx((0.4 - 0.5) / math.sqrt(0.25 / 100))
    assert k.matches(ref, 3.0)
    assert not k.matches(np.array([[0.0, 1.0], [0.0, 1.0]]), 3.0)


def test_ks_exponential(rng):
    stat, crit, p = ks_exponential(rng.exponential(2.0, 500), n_mc=500, seed=1)
    assert stat < crit and p > 0.01
    stat, crit, p = ks_exponential(rng.uniform(0, 1, 500), n_mc=500, seed=1)
    assert stat > crit and p < 0.01


def test_fit_exponent_exact():
    etas = np.array([4e-3, 2e-3, 1e-3])
    assert fit_exponent(etas, 7.0 * etas ** -1.4) == pytest.approx(1.4)


def test_exit_study_small(four_well, lomax):
    st = exit_study(four_well, lomax, 1, 0.5, [8e-3, 4e-3], replicas=30, box=FOUR_WELL_BOX, seed=2,
                    n_boot=100, ks_mc=100)
    assert st.j == 1 and st.theory_exponent == pytest.approx(1.2)
    assert st.etas == [8e-3, 4e-3]
    assert st.mean_times[1] > st.mean_times[0]
    assert np.mean(st.scaled_times) == pytest.approx(1.0)
    assert st.exponent_ci[0] <= st.fitted_exponent <= st.exponent_ci[1]


def test_scaled_path(four_well, lomax):
    cfg = RunConfig(eta=1e-3, b=0.5, steps=1000, x0=(0.3,), thin=10)
    tr = simulate(four_well, lomax, cfg)
    sp = time_scaled_path(tr, 0.01)
    assert sp.horizon_scaled == pytest.approx(10.0)
    np.testing.assert_array_equal(sp(0.0), tr.states[0])
    np.testing.assert_array_equal(sp(0.2), tr.states[2])   # step 20
    np.testing.assert_array_equal(sp(0.255), tr.states[2])  # step 25 -> last record at 20
    with pytest.raises(OutOfHorizon):
        sp(10.5)


def test_csv_writers(tmp_path, four_well, lomax):
    st = exit_study(four_well, lomax, 1, 0.5, [8e-3, 4e-3], replicas=10, box=FOUR_WELL_BOX, n_boot=20,
                    ks_mc=20)
    write_exit_csv(st, tmp_path / "e.csv", header="h")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[1] == "eta,mean_exit_steps,fitted_exponent_lo,fitted_exponent,fitted_exponent_hi"
    assert len(lines) == 4
    cfg = RunConfig(eta=1e-3, b=0.5, steps=1000, x0=(0.3,), projection_box=FOUR_WELL_BOX)
    tr = simulate(four_well, lomax, cfg)
    write_occupancy_csv(occupancy(tr, four_well, {2, 4}), tmp_path / "o.csv")
    assert (tmp_path / "o.csv").read_text().splitlines()[0] == "field,fraction"
    write_histogram_csv(tr.hist, tr.hist_edges, tmp_path / "h.csv")
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert rows[0] == "bin_left,bin_right,count" and len(rows) == 321
    assert sum(int(r.split(",")[2]) for r in rows[1:]) == 1000

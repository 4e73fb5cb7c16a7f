import dataclasses
import math

import numpy as np
import pytest

from htmeta.dynamics import (RunConfig, clip, exit_times_batch, first_exit_time, sgd_step,
                             simulate, simulate_batch, simulate_killed, write_trajectory_csv,
                             write_transitions_csv)
from htmeta.errors import HorizonExceeded
from htmeta.landscape import Landscape
from htmeta.noise import gaussian, zero_noise

from conftest import FOUR_WELL_BOX


def test_clip_examples():
    np.testing.assert_array_equal(clip([0.0, 0.0], 1.0), [0.0, 0.0])
    np.testing.assert_array_equal(clip([3.0, 4.0], 10.0), [3.0, 4.0])
    np.testing.assert_allclose(clip([3.0, 4.0], 1.0), [0.6, 0.8])
    np.testing.assert_array_equal(clip([3.0, 4.0], math.inf), [3.0, 4.0])


def test_sgd_step_fixed_point(four_well, lomax, rng):
    m2 = four_well.minimum(2)
    out = sgd_step(four_well, lomax, m2, 0.5, 1e-3, rng, z=[0.0])
    np.testing.assert_allclose(out, m2, atol=1e-12)


def test_sgd_step_saturates(four_well, lomax, rng):
    x = np.array([0.3])
    out = sgd_step(four_well, lomax, x, 0.5, 1e-3, rng, z=[1e9])
    assert abs(out[0] - x[0]) == pytest.approx(0.5, abs=1e-15)


def test_sgd_step_unclipped_is_plain_sgd(four_well, lomax, rng):
    x = np.array([0.3])
    out = sgd_step(four_well, lomax, x, math.inf, 1e-3, rng, z=[2.5])
    assert out[0] == pytest.approx(0.3 - 1e-3 * four_well.grad_at(x)[0] + 1e-3 * 2.5, abs=1e-15)


def test_sgd_step_projection_after_clip(four_well, lomax, rng):
    out = sgd_step(four_well, lomax, [1.55], 0.5, 1e-3, rng, box=FOUR_WELL_BOX, z=[1e9])
    assert out[0] == 1.6


def _cfg(**kw):
    base = dict(eta=1e-3, b=0.5, steps=50_000, x0=(0.3,), projection_box=FOUR_WELL_BOX, seed=3, thin=10)
    base.update(kw)
    return RunConfig(**base)


def test_run_config_invariants():
    for bad in ({"eta": 0}, {"steps": 0}, {"thin": 0}, {"b": 0}):
        with pytest.raises(ValueError):
            _cfg(**bad)


def test_seed_determinism(four_well, lomax):
    a = simulate(four_well, lomax, _cfg())
    b = simulate(four_well, lomax, _cfg())
    np.testing.assert_array_equal(a.states, b.states)
    assert a.transitions == b.transitions
    c = simulate(four_well, lomax, _cfg(replica=1))
    assert not np.array_equal(a.states, c.states)


def test_fast_path_matches_generic(four_well, lomax):
    slow = dataclasses.replace(four_well, kernel=None)
    cfg = _cfg(steps=6000, thin=7)
    a = simulate(four_well, lomax, cfg)
    b = simulate(slow, lomax, cfg)
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_allclose(a.states, b.states, rtol=0, atol=1e-12)
    assert a.transitions == b.transitions
    np.testing.assert_array_equal(a.ball_counts, b.ball_counts)


def test_step_displacement_bounded(four_well, lomax):
    tr = simulate(four_well, lomax, _cfg(thin=1, steps=20_000, projection_box=None,
                                     x0=(0.3,), b=0.05))
    assert np.max(np.abs(np.diff(tr.states[:, 0]))) <= 0.05 + 1e-15


def test_clipped_equals_unclipped_when_never_saturated(four_well):
    model = gaussian(0.5)
    a = simulate(four_well, model, _cfg(b=10.0, thin=1, steps=5000))
    b = simulate(four_well, model, _cfg(b=math.inf, thin=1, steps=5000))
    np.testing.assert_array_equal(a.states, b.states)


def test_zero_noise_converges_to_m3(four_well):
    tr = simulate(four_well, zero_noise(), _cfg(steps=200_000))
    assert tr.final_state[0] == pytest.approx(four_well.minimum(3)[0], abs=1e-6)


def test_transition_markers_alternate(four_well, lomax):
    tr = simulate(four_well, lomax, _cfg(steps=300_000, b=math.inf))
    f = tr.transition_fields
    assert len(f) > 1
    assert np.all(f[1:] != f[:-1])
    assert np.all(np.diff(tr.transition_steps) > 0)


def test_ball_counts_match_full_record(four_well, lomax):
    tr = simulate(four_well, lomax, _cfg(thin=1, steps=20_000))
    d = np.abs(tr.states[1:, 0][:, None] - four_well.minima[:, 0][None, :])
    np.testing.assert_array_equal(tr.ball_counts, (d < 0.1).sum(axis=0))


def test_killed_with_all_fields_equals_simulate(four_well, lomax):
    cfg = _cfg(steps=100_000)
    a = simulate(four_well, lomax, cfg)
    b = simulate_killed(four_well, lomax, cfg, set(four_well.fields))
    assert b.exited_at is None
    np.testing.assert_array_equal(a.states, b.states)


def test_killed_exit_equals_first_exit_time(four_well, lomax):
    cfg = _cfg(steps=2_000_000, eta=4e-3)
    tr = simulate_killed(four_well, lomax, cfg, {3})
    steps, point = first_exit_time(four_well, lomax, cfg, 3)
    assert tr.exited_at == steps
    np.testing.assert_array_equal(tr.final_state, point)
    assert four_well.classify(point) != 3
    full = simulate(four_well, lomax, replace_thin(cfg, steps))
    labels = [four_well.classify(s) for s in full.states[1:]]
    assert labels[-1] != 3 and all(lab == 3 for lab in labels[:-1])


def replace_thin(cfg, steps):
    return dataclasses.replace(cfg, steps=steps, thin=1)


def test_zero_noise_never_killed(four_well):
    tr = simulate_killed(four_well, zero_noise(), _cfg(steps=10_000), {3})
    assert tr.exited_at is None


def test_killed_rejects_bad_start(four_well, lomax):
    with pytest.raises(ValueError):
        simulate_killed(four_well, lomax, _cfg(), {1})


def test_linear_escape_time():
    # f(x) = -x on the field (-inf, 1) of a landscape whose other field starts at 1
    land = Landscape(dim=1, grad=lambda x: np.array([-1.0]), minima=[[0.0], [2.0]],
                     boundaries=[1.0])
    cfg = RunConfig(eta=1e-3, b=math.inf, steps=10_000, x0=(0.0,))
    steps, point = first_exit_time(land, zero_noise(), cfg, 1)
    assert abs(steps - 1000) <= 1
    assert point[0] >= 1.0


def test_first_exit_horizon(four_well):
    with pytest.raises(HorizonExceeded):
        first_exit_time(four_well, zero_noise(), _cfg(steps=1000), 3)


def test_batch_streams_and_workers(four_well, lomax):
    cfg = _cfg(steps=20_000)
    one = simulate_batch(four_well, lomax, cfg, 3, workers=1)
    many = simulate_batch(four_well, lomax, cfg, 3, workers=3)
    for a, b in zip(one, many):
        np.testing.assert_array_equal(a.states, b.states)
    times, pts, lost = exit_times_batch(four_well, lomax, _cfg(eta=4e-3, steps=10 ** 7, x0=(-1.5,)), 1, 4)
    assert times.size + lost == 4 and pts.shape == (times.size, 1)


def test_csv_export(tmp_path, four_well, lomax):
    tr = simulate(four_well, lomax, _cfg(steps=1000, thin=100))
    p = tmp_path / "t.csv"
    write_trajectory_csv(tr, p, header="h")
    lines = p.read_text().splitlines()
    assert lines[0] == "# h" and lines[1] == "step,x1"
    assert len(lines) == 2 + len(tr.times)
    q = tmp_path / "m.csv"
    write_transitions_csv(tr, q)
    assert q.read_text().splitlines()[0] == "step,field"

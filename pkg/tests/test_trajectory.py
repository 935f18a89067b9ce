import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import CubicHermiteSpline

from otnav.grid import GridWorld
from otnav.plans import Chain
from otnav.trajectory import from_points, hermite_coeffs, interpolate, sample, sample_many, write_csv


def test_knots_hit_cell_centres():
    g = GridWorld(3, 4)
    tr = interpolate([0, 5, 6, 7], g, transition_time=1.5, t0=2.0)
    for k, (t, p) in enumerate(tr.knots):
        assert t == pytest.approx(2.0 + 1.5 * k)
        assert np.allclose(sample(tr, t)[0], p, atol=1e-12)
    assert tr.end_time == pytest.approx(6.5)
    assert tr.cells == (0, 5, 6, 7)


def test_collinear_cells_stay_on_line():
    g = GridWorld(1, 6)
    tr = interpolate(list(range(6)), g)
    pos, _ = sample_many(tr, np.linspace(0, 5, 501))
    assert np.max(np.abs(pos[:, 1] - 0.5)) < 1e-9
    assert np.all(np.diff(pos[:, 0]) > 0)


def test_velocity_matches_finite_difference():
    g = GridWorld(4, 4)
    tr = interpolate([0, 5, 10, 11, 7], g)
    eps = 1e-5
    for t in np.linspace(0.05, 3.95, 40):
        p1, _ = sample(tr, t + eps)
        p0, _ = sample(tr, t - eps)
        _, v = sample(tr, t)
        assert np.allclose((p1 - p0) / (2 * eps), v, atol=1e-6)


def test_c1_continuity_at_knots():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(7, 2))
    h = 0.8
    coeffs = hermite_coeffs(pts, h)
    for k in range(len(coeffs) - 1):
        a, b, c, d = coeffs[k]
        end_pos = a + h * b + h * h * c + h**3 * d
        end_vel = b + 2 * h * c + 3 * h * h * d
        assert np.max(np.abs(end_pos - coeffs[k + 1][0])) < 1e-12
        assert np.max(np.abs(end_vel - coeffs[k + 1][1])) < 1e-12


def test_clamped_outside_span():
    tr = from_points([[0, 0], [1, 0], [2, 1]], t0=1.0)
    p, v = sample(tr, 0.0)
    assert np.array_equal(p, [0, 0]) and np.array_equal(v, [0, 0])
    p, v = sample(tr, 10.0)
    assert np.array_equal(p, [2, 1]) and np.array_equal(v, [0, 0])


def test_single_knot_holds():
    tr = interpolate(Chain(3, 0, (4,), 0), GridWorld(3, 3))
    assert tr.robot == 3 and tr.duration == 0
    p, v = sample(tr, 7.0)
    assert np.array_equal(p, [1.5, 1.5]) and not v.any()


def test_start_point_override():
    tr = interpolate([0, 1, 2], GridWorld(1, 3), start_point=(0.2, 0.7), t0=4.0)
    assert np.allclose(sample(tr, 4.0)[0], [0.2, 0.7])
    assert np.allclose(sample(tr, 5.0)[0], [1.5, 0.5])


def test_bad_inputs():
    with pytest.raises(ValueError):
        from_points([])
    with pytest.raises(ValueError):
        from_points([[0, 0], [1, 1]], transition_time=0)
    with pytest.raises(ValueError):
        interpolate([], GridWorld(1, 1))


def test_csv_rows(tmp_path):
    trs = [interpolate([0, 1, 2], GridWorld(1, 3), robot=0), interpolate([2, 1], GridWorld(1, 3), robot=1)]
    out = tmp_path / "ref.csv"
    write_csv(trs, out, step=0.5)
    rows = list(csv.DictReader(out.open()))
    assert list(rows[0]) == ["robot", "replan", "t", "x", "y", "vx", "vy"]
    assert len(rows) == 5 + 3
    assert float(rows[4]["x"]) == pytest.approx(2.5)


points = st.lists(
    st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=2, max_size=10
)


@settings(max_examples=60, deadline=None)
@given(points, st.floats(0.1, 5.0), st.floats(-10, 10))
def test_matches_reference_hermite_spline(pts, h, t0):
    # independent route: scipy's Hermite spline with the same knot tangents
    pts = np.asarray(pts)
    n = len(pts)
    tr = from_points(pts, transition_time=h, t0=t0)
    tangents = np.zeros_like(pts)
    tangents[0] = (pts[1] - pts[0]) / h
    tangents[-1] = (pts[-1] - pts[-2]) / h
    for k in range(1, n - 1):
        tangents[k] = (pts[k + 1] - pts[k - 1]) / (2 * h)
    spline = CubicHermiteSpline(np.arange(n) * h, pts, tangents)
    ts = t0 + np.linspace(0, (n - 1) * h, 37)[:-1]
    pos, vel = sample_many(tr, ts)
    scale = 1 + np.max(np.abs(pts))
    assert np.allclose(pos, spline(ts - t0), atol=1e-9 * scale)
    assert np.allclose(vel, spline(ts - t0, 1), atol=1e-8 * scale / h)
    for t, p, v in zip(ts[::5], pos[::5], vel[::5]):
        ps, vs = sample(tr, t)
        assert np.allclose(ps, p, atol=1e-9 * scale) and np.allclose(vs, v, atol=1e-8 * scale / h)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aerotrack.trajfinish import (COMPLETED, INTERPOLATED, TRACKED, FinishConfig, InsufficientDataError,
                                  Trajectory, ar_fit, basis_matrix, clamped_uniform_knots, complete,
                                  contiguous_runs, de_boor, eval_at, finish, resample_uniform,
                                  smooth_bspline)


def _hist(ts, f):
    return [(float(t), np.asarray(f(t), dtype=float)) for t in ts]


def _cubic_second_derivative(sp, lo, hi, at):
    """Second derivative at ``at`` of the cubic interpolating the spline on [lo, hi]."""
    xs = np.linspace(lo, hi, 4)
    ys = np.array([de_boor(sp.knots, sp.ctrl, x)[0] for x in xs])
    c = np.polyfit(xs - at, ys, 3)
    return 2 * c[1]


# -- resampling ----------------------------------------------------------------

def test_resample_identity():
    grid, vals, gap = resample_uniform(_hist([0, 1, 2], lambda t: [t, 2 * t, 3]), 1.0)
    np.testing.assert_array_equal(grid, [0, 1, 2])
    np.testing.assert_array_equal(vals[:, 0], [0, 1, 2])
    assert not gap.any()


def test_resample_marks_missing_samples():
    _, _, gap = resample_uniform(_hist([0, 3], lambda t: [t, 0, 0]), 1.0)
    assert gap.tolist() == [False, True, True, False]


def test_resample_single_missing_point_interpolated():
    grid, vals, gap = resample_uniform([(0.0, [0.0]), (2.0, [2.0])], 1.0)
    assert grid.tolist() == [0, 1, 2]
    assert vals[1, 0] == 1.0
    assert not gap.any()


def test_resample_preconditions():
    with pytest.raises(InsufficientDataError):
        resample_uniform([(0.0, [0.0])], 1.0)
    with pytest.raises(ValueError):
        resample_uniform([(0.0, [0.0]), (1.0, [1.0])], 0.0)
    with pytest.raises(ValueError):
        resample_uniform([(1.0, [0.0]), (0.0, [1.0])], 0.5)


def test_contiguous_runs():
    assert contiguous_runs(np.array([1, 1, 0, 1, 0, 0, 1], bool)) == [(0, 2), (3, 4), (6, 7)]
    assert contiguous_runs(np.zeros(3, bool)) == []


# -- AR(3) ---------------------------------------------------------------------

def test_ar_constant_series():
    m = ar_fit(np.full((20, 3), 4.2))
    assert np.abs(m.predict_next(np.full((3, 3), 4.2)) - 4.2).max() < 1e-6


def test_ar_quadratic_annihilation_by_hand():
    x = np.arange(10.0) ** 2
    assert np.all(3 * x[2:-1] - 3 * x[1:-2] + x[:-3] == x[3:])


@pytest.mark.parametrize("poly", [lambda t: t, lambda t: t ** 2, lambda t: 0.3 * t ** 2 - 2 * t + 7])
def test_ar_one_step_on_low_degree_polynomials(poly):
    t = np.arange(30.0)
    m = ar_fit(poly(t))
    pred = m.predict_next(poly(t[-3:])[:, None])
    assert abs(pred[0] - poly(30.0)) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-0.5, 0.5), st.integers(8, 40))
def test_ar_annihilates_quadratics(c0, c1, c2, n):
    t = np.arange(float(n))
    x = c0 + c1 * t + c2 * t ** 2
    m = ar_fit(x)
    errs = [abs(m.predict_next(x[k - 3:k, None])[0] - x[k]) for k in range(3, n)]
    assert max(errs) < 1e-6


def test_ar_needs_enough_samples():
    with pytest.raises(InsufficientDataError):
        ar_fit(np.arange(7.0))
    ar_fit(np.arange(8.0))


def test_ar_segments_do_not_straddle():
    a, b = np.arange(10.0), 100 + np.arange(10.0)
    m = ar_fit([a, b])
    assert abs(m.predict_next(np.array([[7.0], [8.0], [9.0]]))[0] - 10.0) < 1e-6


# -- completion ----------------------------------------------------------------

def test_complete_fills_linear_gap():
    line = lambda t: [t, 2 * t - 1, 10 + 0.5 * t]
    ts = np.arange(0, 20.01, 0.5)
    keep = (ts < 8) | (ts > 11)
    traj = complete([_hist(ts[keep], line)])
    assert traj.times.tolist() == ts.tolist()
    filled = [i for i, f in enumerate(traj.flags) if f == COMPLETED]
    assert len(filled) == int((~keep).sum())
    for i in filled:
        np.testing.assert_allclose(traj.positions[i], line(traj.times[i]), atol=1e-3)


def test_complete_two_fragments_bridged():
    line = lambda t: [2 * t, 0, 20]
    ts = np.arange(0, 20.01, 0.5)
    first, second = _hist(ts[ts < 6], line), _hist(ts[ts > 9], line)
    traj = complete([second, first])
    assert traj.times.tolist() == ts.tolist()
    for t, p, f in traj.samples():
        np.testing.assert_allclose(p, line(t), atol=1e-3)


def test_complete_identity_without_gaps():
    ts = np.arange(0, 10.01, 0.5)
    hist = _hist(ts, lambda t: [np.sin(t), np.cos(t), t])
    traj = complete([hist])
    np.testing.assert_array_equal(traj.times, ts)
    np.testing.assert_array_equal(traj.positions, np.array([p for _, p in hist]))
    assert set(traj.flags) == {TRACKED}


def test_complete_head_of_hover():
    ts = np.arange(4.0, 20.01, 0.5)
    traj = complete([_hist(ts, lambda t: [1.0, 2.0, 15.0])], span=(0.0, 20.0), max_extrap=3.0)
    head = traj.times < 4.0
    assert head.sum() == 6
    assert traj.times[0] == pytest.approx(1.0)
    assert all(f == COMPLETED for f, h in zip(traj.flags, head) if h)
    np.testing.assert_allclose(traj.positions[head], [[1.0, 2.0, 15.0]] * 6, atol=1e-3)


def test_complete_tail_extrapolates_line():
    line = lambda t: [t, -t, 5 + 0.1 * t]
    ts = np.arange(0, 15.01, 0.5)
    traj = complete([_hist(ts, line)], span=(0.0, 20.0), max_extrap=3.0)
    assert traj.times[-1] == pytest.approx(18.0)
    tail = traj.times > 15.0
    for t, p in zip(traj.times[tail], traj.positions[tail]):
        np.testing.assert_allclose(p, line(t), atol=1e-3)


def test_complete_without_tracks_is_empty(caplog):
    traj = complete([])
    assert len(traj) == 0
    assert "no confirmed tracks" in caplog.text


def test_trajectory_requires_increasing_times():
    with pytest.raises(ValueError):
        Trajectory([0.0, 0.0], np.zeros((2, 3)), [TRACKED] * 2)


# -- splines -------------------------------------------------------------------

def test_knots_clamped_and_counted():
    k = clamped_uniform_knots(0.0, 10.0, 1.0)
    assert np.all(np.diff(k) >= 0)
    assert k[:4].tolist() == [0.0] * 4 and k[-4:].tolist() == [10.0] * 4
    sp = smooth_bspline(np.linspace(0, 10, 30), np.zeros((30, 3)))
    assert len(sp.ctrl) == len(sp.knots) - 4


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 10.0))
def test_basis_partition_of_unity(t):
    k = clamped_uniform_knots(0.0, 10.0, 1.5)
    B = basis_matrix(k, [t])
    assert B.sum() == pytest.approx(1.0, abs=1e-12)
    assert (B >= -1e-15).all()


def test_spline_reproduces_line():
    ts = np.linspace(0, 10, 41)
    line = np.column_stack([2 * ts + 1, -ts, 0.5 * ts + 10])
    sp = smooth_bspline(ts, line, 1.0, 1e-2)
    pos, extrap = eval_at(sp, ts)
    assert np.abs(pos - line).max() < 1e-9
    assert not extrap.any()


def test_spline_single_cubic_segment_exact():
    cubic = lambda t: np.column_stack([t ** 3 - 2 * t, 0.5 * t ** 2, 1 - t ** 3 / 10])
    ts = np.linspace(0, 4, 20)
    sp = smooth_bspline(ts, cubic(ts), knot_spacing=10.0, smooth_weight=0.0)
    mid = np.array([1.37, 2.5])
    pos, _ = eval_at(sp, mid)
    np.testing.assert_allclose(pos, cubic(mid), atol=1e-8)


def test_spline_midpoint_between_knots_on_cubic():
    cubic = lambda t: np.column_stack([0.1 * t ** 3, t, np.ones_like(t)])
    ts = np.linspace(0, 6, 60)
    sp = smooth_bspline(ts, cubic(ts), knot_spacing=1.0, smooth_weight=0.0)
    mid = np.array([2.5, 3.5])
    pos, _ = eval_at(sp, mid)
    np.testing.assert_allclose(pos, cubic(mid), atol=1e-8)


def test_spline_smooths_noisy_sinusoid():
    rng = np.random.default_rng(0)
    ts = np.linspace(0, 20, 200)
    clean = np.column_stack([5 * np.sin(0.3 * ts), 3 * np.cos(0.2 * ts), 20 + np.sin(0.5 * ts)])
    noisy = clean + rng.normal(0, 0.1, clean.shape)
    sp = smooth_bspline(ts, noisy, 1.0, 1e-2)
    pos, _ = eval_at(sp, ts)
    raw = np.sqrt(np.mean((noisy - clean) ** 2))
    smoothed = np.sqrt(np.mean((pos - clean) ** 2))
    assert smoothed <= 0.7 * raw


def test_spline_is_c2_at_interior_knots():
    rng = np.random.default_rng(3)
    ts = np.linspace(0, 8, 50)
    sp = smooth_bspline(ts, rng.normal(size=(50, 3)), 1.0, 1e-3)
    interior = sorted(set(sp.knots[4:-4].tolist()))
    assert interior
    for k in interior:
        left = _cubic_second_derivative(sp, k - 0.9, k - 0.1, k)
        right = _cubic_second_derivative(sp, k + 0.1, k + 0.9, k)
        assert abs(left - right) <= 1e-6 * max(1.0, abs(left))


def test_eval_beyond_end_is_linear_continuation():
    ts = np.linspace(0, 10, 41)
    curve = np.column_stack([ts ** 2 / 10, ts, np.zeros_like(ts)])
    sp = smooth_bspline(ts, curve, 1.0, 1e-2)
    end, _ = eval_at(sp, [10.0])
    h = 1e-6
    before, _ = eval_at(sp, [10.0 - h])
    slope = (end[0] - before[0]) / h
    out, extrap = eval_at(sp, [10.5, 11.0])
    assert extrap.all()
    np.testing.assert_allclose(out[0], end[0] + 0.5 * slope, atol=1e-5)
    np.testing.assert_allclose(out[1] - out[0], out[0] - end[0], atol=1e-12)


def test_spline_needs_five_samples():
    with pytest.raises(InsufficientDataError):
        smooth_bspline(np.arange(4.0), np.zeros((4, 3)))


# -- full finishing ------------------------------------------------------------

@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_finish_covers_every_stamp_once(seed):
    rng = np.random.default_rng(seed)
    stamps = np.sort(rng.choice(np.arange(0, 20, 0.1), size=rng.integers(5, 60), replace=False))
    ts = np.arange(rng.uniform(1, 4), rng.uniform(14, 19), 0.5)
    hist = _hist(ts, lambda t: [t, np.sin(t), 20])
    out = finish([hist], stamps, FinishConfig())
    assert [t for t, _, _ in out] == stamps.tolist()
    assert all(f in (TRACKED, COMPLETED, INTERPOLATED) for _, _, f in out)


def test_finish_flags_outside_coverage_interpolated():
    ts = np.arange(5.0, 10.01, 0.5)
    hist = _hist(ts, lambda t: [t, 0, 10])
    out = finish([hist], [0.0, 7.0, 19.0], FinishConfig(max_extrap=1.0))
    assert [f for _, _, f in out] == [INTERPOLATED, TRACKED, INTERPOLATED]
    np.testing.assert_allclose(out[1][1], [7, 0, 10], atol=1e-6)


def test_finish_empty():
    assert finish([], [0.0, 1.0]) == []
    assert finish([_hist([0, 1], lambda t: [t, 0, 0])], []) == []

import numpy as np
import pytest
from scipy.linalg import expm

from flowlab.errors import BoxBoundsError, NotInBoxError, SingularityError
from flowlab.fields import speed
from flowlab.flowbox import (chart_radius, flowbox_invert, flowbox_map,
                             make_chart, verify_box_bounds)


@pytest.fixture(scope="module")
def saddle_chart(saddle2d):
    return make_chart(saddle2d, [1.0, 0.0], 1.05)


def test_chart_radius_formula(saddle_chart):
    assert saddle_chart.r0 == pytest.approx(1.0 / 10.5)
    # Lipschitz floor: near-constant fields keep a finite radius
    assert chart_radius(0.0) == pytest.approx(1.0 / 0.1)


def test_chart_frame_orthonormal(saddle_chart):
    e = saddle_chart.flow_dir
    B = saddle_chart.frame
    assert np.allclose(B.T @ B, np.eye(1), atol=1e-12)
    assert np.max(np.abs(B.T @ e)) < 1e-12


def test_chart_at_singularity_rejected(rotation):
    with pytest.raises(SingularityError):
        make_chart(rotation, [0.0, 0.0], 1.05)


def test_map_translation_at_zero_time(saddle_chart):
    y = flowbox_map(saddle_chart, [0.0, 0.05], 0.0)
    assert np.allclose(y, [1.0, 0.05])


def test_map_closed_form(saddle_chart):
    y = flowbox_map(saddle_chart, [0.0, 0.05], 0.09, tol=1e-12)
    assert np.allclose(y, [np.exp(0.09), 0.05 * np.exp(-0.09)], atol=1e-10)


def test_map_axis_is_orbit(saddle2d, saddle_chart):
    from flowlab.fields import flow
    y = flowbox_map(saddle_chart, [0.0, 0.0], 0.05, tol=1e-12)
    p, _ = flow(saddle2d, [1.0, 0.0], 0.05, tol=1e-12)
    assert np.allclose(y, p, atol=1e-12)


def test_map_rejects_out_of_box(saddle_chart):
    with pytest.raises(BoxBoundsError):
        flowbox_map(saddle_chart, [0.0, 0.2], 0.0)
    with pytest.raises(BoxBoundsError):
        flowbox_map(saddle_chart, [0.0, 0.01], 0.2)
    with pytest.raises(BoxBoundsError):
        flowbox_map(saddle_chart, [0.05, 0.0], 0.0)  # not normal


def test_invert_center(saddle_chart):
    v, t = flowbox_invert(saddle_chart, [1.0, 0.0])
    assert np.linalg.norm(v) < 1e-12 and abs(t) < 1e-12


def test_invert_zero_time_case(saddle_chart):
    v, t = flowbox_invert(saddle_chart, [1.0, 0.05])
    assert np.allclose(v, [0.0, 0.05], atol=1e-10)
    assert abs(t) < 1e-10


def test_invert_round_trip(saddle_chart):
    y = np.array([np.exp(0.09), 0.05 * np.exp(-0.09)])
    v, t = flowbox_invert(saddle_chart, y, tol=1e-12)
    assert np.allclose(v, [0.0, 0.05], atol=1e-9)
    assert t == pytest.approx(0.09, abs=1e-9)


def test_invert_rejects_far_point(saddle_chart):
    with pytest.raises(NotInBoxError):
        flowbox_invert(saddle_chart, [3.0, 0.0])


def test_round_trip_property(saddle2d):
    chart = make_chart(saddle2d, [1.0, 0.3], 1.05)
    rng = np.random.default_rng(4)
    for _ in range(25):
        c = rng.uniform(-1, 1) * chart.v_radius
        t = rng.uniform(-1, 1) * chart.r0
        v = chart.frame[:, 0] * c
        y = flowbox_map(chart, v, t, tol=1e-11)
        v2, t2 = flowbox_invert(chart, y, tol=1e-11)
        assert np.linalg.norm(v2 - v) <= 1e-8 * max(1.0, chart.speed)
        assert abs(t2 - t) <= 1e-8


def test_bounds_saddle_grid5(saddle_chart):
    rep = verify_box_bounds(saddle_chart, 5, tol=1e-10)
    assert rep.no_singularity
    assert rep.bounds_ok
    assert rep.max_dev_from_id <= 0.5
    assert rep.min_mininorm >= 0.5
    assert rep.max_norm <= 2.0


def test_bounds_rotation_grid5(rotation):
    chart = make_chart(rotation, [1.0, 0.0], 1.05)
    rep = verify_box_bounds(chart, 5, tol=1e-10)
    assert rep.bounds_ok and not rep.witnesses


def test_bounds_grid2_matches_closed_form(saddle2d):
    chart = make_chart(saddle2d, [1.0, 0.0], 1.05)
    rep = verify_box_bounds(chart, 2, tol=1e-11)
    # closed form: F(v, t) = e^{tA}(x + v); columns in box coordinates
    A = np.diag([1.0, -1.0])
    Q = np.column_stack([chart.frame, chart.flow_dir[:, None]])
    worst = 0.0
    for c in (-chart.v_radius, chart.v_radius):
        for t in (-chart.r0, chart.r0):
            E = expm(t * A)
            p = np.array([1.0, 0.0]) + chart.frame[:, 0] * c
            M = np.empty((2, 2))
            M[:, 0] = E @ chart.frame[:, 0]
            M[:, 1] = (A @ E @ p) / chart.speed
            worst = max(worst, np.linalg.norm(M - Q, 2))
    assert rep.max_dev_from_id == pytest.approx(worst, abs=5e-4)
    assert rep.bounds_ok


def test_report_json_shape(saddle_chart):
    rep = verify_box_bounds(saddle_chart, 3, tol=1e-9)
    d = rep.to_json_dict()
    for key in ("base", "r0", "max_dev", "min_mininorm", "max_norm",
                "witnesses"):
        assert key in d


def test_nearby_orbit_stays_close(saddle2d):
    # points started within |X(x)|/(8L) of x stay within |X(x)|/(4L)
    # over chart times
    L = 1.05
    x = np.array([1.0, 0.2])
    sx = speed(saddle2d, x)
    rng = np.random.default_rng(9)
    from flowlab.fields import flow
    for _ in range(30):
        u = rng.normal(size=2)
        y = x + u / np.linalg.norm(u) * rng.uniform(0, 1) * sx / (8 * L)
        t = rng.uniform(-1, 1) / (10 * L)
        p, _ = flow(saddle2d, y, t, 1e-10)
        assert np.linalg.norm(p - x) <= sx / (4 * L) * (1 + 1e-6)


def test_field_increment_lipschitz(saddle2d):
    # |X(y) - X(x)| <= L |x - y| on sampled pairs within the box
    chart = make_chart(saddle2d, [1.0, 0.0], 1.05)
    rng = np.random.default_rng(11)
    fx = saddle2d.func(chart.base)
    for _ in range(30):
        u = rng.normal(size=2)
        y = chart.base + u / np.linalg.norm(u) * rng.uniform(0, chart.v_radius)
        fy = saddle2d.func(y)
        assert np.linalg.norm(fy - fx) <= 1.05 * np.linalg.norm(y - chart.base) + 1e-12


def test_no_singularity_in_image(rotation):
    chart = make_chart(rotation, [0.5, 0.0], 1.05)
    rep = verify_box_bounds(chart, 4, tol=1e-9)
    assert rep.no_singularity

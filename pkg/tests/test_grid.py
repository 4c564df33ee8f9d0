import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pat_recon.errors import InvalidArgumentError
from pat_recon.grid import (EllipseSpec, Image, SensorArray, default_ellipse_table, make_grid,
                            make_sensor_array, phantom_scale, shepp_logan)


def _inside(ell, x, y):
    # independent membership test: rotate the point into the ellipse frame
    ang = -ell.rotation
    dx, dy = x - ell.center_x, y - ell.center_y
    u = dx * math.cos(ang) - dy * math.sin(ang)
    v = dx * math.sin(ang) + dy * math.cos(ang)
    return (u / ell.semi_axis_a) ** 2 + (v / ell.semi_axis_b) ** 2 <= 1.0


def test_reference_grid_extent():
    g = make_grid(128, 128, 1.0e-4)
    assert g.extent == pytest.approx((12.8e-3, 12.8e-3), rel=1e-12)
    assert g.x_coords()[0] == pytest.approx(-6.35e-3)
    assert g.x_coords()[-1] == pytest.approx(6.35e-3)


def test_single_pixel_grid():
    g = make_grid(1, 1, 1.0)
    assert g.pixel_center(0, 0) == (0.0, 0.0)


def test_two_by_two_centers():
    g = make_grid(2, 2, 1.0)
    centers = {g.pixel_center(i, j) for i in range(2) for j in range(2)}
    assert centers == {(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)}


@pytest.mark.parametrize("args", [(0, 4, 1.0), (4, -1, 1.0), (4, 4, 0.0), (4, 4, -1e-3)])
def test_invalid_grid(args):
    with pytest.raises(InvalidArgumentError):
        make_grid(*args)


@given(st.integers(1, 40), st.integers(1, 40), st.floats(1e-5, 10.0))
@settings(max_examples=50, deadline=None)
def test_coordinate_round_trip(nx, ny, ps):
    g = make_grid(nx, ny, ps)
    for i in range(nx):
        for j in (0, ny // 2, ny - 1):
            assert g.nearest_index(*g.pixel_center(i, j)) == (i, j)


def test_pixel_centers_row_major():
    g = make_grid(3, 2, 1.0)
    x, y = g.pixel_centers()
    assert x.tolist() == [-1.0, 0.0, 1.0, -1.0, 0.0, 1.0]
    assert y.tolist() == [-0.5, -0.5, -0.5, 0.5, 0.5, 0.5]


def test_image_validation():
    g = make_grid(2, 2, 1.0)
    with pytest.raises(InvalidArgumentError):
        Image(g, np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        Image(g, np.array([0.0, 1.0, np.nan, 0.0]))
    img = Image(g, np.arange(4.0))
    assert img.as_array()[1, 0] == 2.0


def test_table_pinned():
    table = default_ellipse_table()
    assert len(table) == 10
    assert [e.intensity for e in table] == [1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1]
    assert (table[0].semi_axis_a, table[0].semi_axis_b) == (0.69, 0.92)


def test_phantom_center_value_matches_brute_force():
    g = make_grid(129, 129, 1e-4)
    img = shepp_logan(g).as_array()
    table = default_ellipse_table()
    expected = max(sum(e.intensity for e in table if _inside(e, 0.0, 0.0)), 0.0)
    assert expected == pytest.approx(0.2)
    assert img[64, 64] == pytest.approx(expected, abs=1e-15)


def test_phantom_matches_brute_force_everywhere():
    g = make_grid(33, 31, 2e-4)
    table = default_ellipse_table()
    scale = phantom_scale(g, table)
    img = shepp_logan(g).as_array()
    for j in range(g.ny):
        for i in range(g.nx):
            x, y = g.pixel_center(i, j)
            ref = sum(e.intensity for e in table if _inside(e, x / scale, y / scale))
            assert img[j, i] == pytest.approx(max(ref, 0.0), abs=1e-12)


def test_phantom_zero_outside_outer_ellipse_and_nonnegative():
    g = make_grid(128, 128, 1e-4)
    img = shepp_logan(g)
    table = default_ellipse_table()
    scale = phantom_scale(g, table)
    x, y = g.pixel_centers()
    outside = ~table[0].contains(x / scale, y / scale)
    assert outside.any()
    assert np.all(img.values[outside] == 0.0)
    assert np.all(img.values >= 0.0)
    assert np.array_equal(shepp_logan(g).values, img.values)


def test_outer_ellipse_fills_ninety_percent():
    g = make_grid(128, 128, 1e-4)
    table = default_ellipse_table()
    assert phantom_scale(g, table) * 0.92 == pytest.approx(0.9 * 6.4e-3)


def test_mirror_equals_mirrored_table():
    # membership evaluated at mirrored coordinates: reflect every ellipse
    g = make_grid(128, 128, 1e-4)
    table = default_ellipse_table()
    mirrored = [replace(e, center_x=-e.center_x, rotation=-e.rotation) for e in table]
    img = shepp_logan(g, table).as_array()
    assert np.array_equal(img[:, ::-1], shepp_logan(g, mirrored).as_array())


def test_centered_ellipses_are_mirror_symmetric():
    g = make_grid(128, 128, 1e-4)
    table = [e for e in default_ellipse_table() if e.center_x == 0.0 and e.rotation == 0.0]
    img = shepp_logan(g, table).as_array()
    assert np.array_equal(img, img[:, ::-1])


def test_standard_table_is_not_exactly_mirror_symmetric():
    # the small off-axis ellipses differ left to right, so full symmetry does not hold
    img = shepp_logan(make_grid(128, 128, 1e-4)).as_array()
    assert not np.array_equal(img, img[:, ::-1])


def test_downsampled_fine_phantom_matches_coarse():
    coarse = shepp_logan(make_grid(128, 128, 1e-4)).as_array()
    fine = shepp_logan(make_grid(256, 256, 0.5e-4)).as_array()
    avg = fine.reshape(128, 2, 128, 2).mean(axis=(1, 3))
    pad = np.pad(coarse, 1, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(pad, (3, 3))
    interior = (windows.max(axis=(2, 3)) == windows.min(axis=(2, 3)))
    assert interior.mean() > 0.8
    assert np.max(np.abs(avg - coarse)[interior]) <= 0.1 + 1e-12


def test_ellipse_spec_validation():
    with pytest.raises(InvalidArgumentError):
        EllipseSpec(1.0, 0.0, 1.0)


def test_sensor_examples():
    s = make_sensor_array(8e-3, 4, 0.0)
    assert np.allclose(s.angles, [0, np.pi / 2, np.pi, 3 * np.pi / 2], atol=1e-15)
    s16 = make_sensor_array(8e-3, 16, 0.0)
    assert s16.count == 16
    assert np.allclose(np.diff(s16.angles), 2 * np.pi / 16)
    one = make_sensor_array(8e-3, 1, np.pi)
    assert np.allclose(one.positions(), [[-8e-3, 0.0]], atol=1e-18)


@given(st.floats(1e-4, 1.0), st.integers(1, 128), st.floats(0.0, 2 * np.pi))
@settings(max_examples=60, deadline=None)
def test_sensor_radius_invariant(radius, count, start):
    s = make_sensor_array(radius, count, start)
    assert s.count == count
    assert np.all(np.diff(s.angles) > 0)
    assert s.angles[0] >= 0 and s.angles[-1] < 2 * np.pi
    r = np.hypot(*s.positions().T)
    assert np.max(np.abs(r - radius)) <= 1e-12 * radius


@pytest.mark.parametrize("radius,count", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, 2.5)])
def test_invalid_sensors(radius, count):
    with pytest.raises(InvalidArgumentError):
        make_sensor_array(radius, count)


def test_sensor_array_rejects_unsorted_angles():
    with pytest.raises(InvalidArgumentError):
        SensorArray(1.0, np.array([1.0, 0.5]))

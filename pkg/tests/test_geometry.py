import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeobb.errors import GeometryError
from edgeobb.geometry import (
    HALF_PI,
    OrientedBox,
    fold_angle,
    from_corners,
    local_coords,
    signed_area,
    soft_containment,
    soft_containment_arrays,
    to_corners,
)

angles = st.floats(-10.0, 10.0, allow_nan=False)


def random_box(rng, square=False) -> OrientedBox:
    w = rng.uniform(2.0, 200.0)
    h = w if square else rng.uniform(0.5, w)
    return OrientedBox.from_params(rng.uniform(-500, 500), rng.uniform(-500, 500), w, h, rng.uniform(-4, 4))


def angle_diff(a, b, period=math.pi):
    d = (a - b) % period
    return min(d, period - d)


def five_point(f, x, h):
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)


class TestFoldAngle:
    @given(angles)
    def test_range_and_congruence(self, t):
        f = fold_angle(t)
        assert -HALF_PI <= f < HALF_PI
        assert angle_diff(f, t) < 1e-9

    def test_boundary(self):
        assert fold_angle(HALF_PI) == -HALF_PI
        assert fold_angle(-HALF_PI) == -HALF_PI


class TestOrientedBox:
    def test_invariants_enforced(self):
        with pytest.raises(GeometryError):
            OrientedBox(0, 0, 2, 3, 0)
        with pytest.raises(GeometryError):
            OrientedBox(0, 0, 3, 2, HALF_PI)
        with pytest.raises(GeometryError):
            OrientedBox.from_params(0, 0, -1, 2, 0)

    def test_from_params_swaps_short_long(self):
        b = OrientedBox.from_params(1, 2, 4, 10, 0.0)
        assert (b.w, b.h) == (10, 4)
        assert b.theta == pytest.approx(-HALF_PI)

    def test_square_tie_break(self):
        b = OrientedBox.from_params(0, 0, 5, 5, math.radians(60))
        assert b.theta == pytest.approx(math.radians(-30))
        assert -math.pi / 4 <= b.theta < math.pi / 4

    def test_json_round_trip(self):
        b = OrientedBox.from_degrees(3, 4, 10, 2, 33)
        rec = b.to_json()
        assert rec["theta_deg"] == pytest.approx(33)
        assert OrientedBox.from_json(rec) == pytest.approx(b)


class TestCorners:
    def test_unit_expansion(self):
        q = to_corners(OrientedBox(0, 0, 2, 1, 0))
        np.testing.assert_allclose(q, [(-1, -0.5), (1, -0.5), (1, 0.5), (-1, 0.5)])

    def test_clockwise_on_screen(self, rng):
        for _ in range(50):
            assert signed_area(to_corners(random_box(rng))) > 0

    def test_radii_at_quarter_turn(self):
        b = OrientedBox(3, -2, 8, 6, math.pi / 4)
        r = np.hypot(*(to_corners(b) - [3, -2]).T)
        np.testing.assert_allclose(r, math.hypot(4, 3))

    def test_edges_alternate(self, rng):
        b = random_box(rng)
        e = np.hypot(*np.diff(np.vstack([to_corners(b), to_corners(b)[:1]]), axis=0).T)
        np.testing.assert_allclose(e, [b.w, b.h, b.w, b.h])

    def test_axis_aligned_from_corners(self):
        b = from_corners([0, 0, 10, 0, 10, 4, 0, 4])
        assert b.params() == pytest.approx([5, 2, 10, 4, 0])

    def test_start_vertex_and_winding_invariance(self):
        q = np.array([[0, 0], [10, 0], [10, 4], [0, 4]], float)
        ref = from_corners(q)
        for k in range(4):
            for quad in (np.roll(q, k, axis=0), np.roll(q[::-1], k, axis=0)):
                assert from_corners(quad).params() == pytest.approx(ref.params(), abs=1e-12)

    def test_vertical_quad_folds(self):
        b = from_corners([0, 0, 4, 0, 4, 10, 0, 10])
        assert (b.w, b.h) == (10, 4)
        assert b.theta_deg == pytest.approx(-90)

    def test_rotated_square_vertex_set(self):
        sq = OrientedBox.from_degrees(7, 9, 6, 6, 30)
        q = to_corners(sq)
        back = to_corners(from_corners(q))
        d = np.hypot(*(back[:, None, :] - q[None, :, :]).transpose(2, 0, 1))
        assert d.min(axis=1).max() < 1e-6 and d.min(axis=0).max() < 1e-6
        assert from_corners(q).theta_deg == pytest.approx(30)

    def test_degenerate_quads(self):
        with pytest.raises(GeometryError):
            from_corners([0, 0, 0, 0, 10, 4, 0, 4])
        with pytest.raises(GeometryError):
            from_corners([0, 0, 10, 0, 10.5, 4, 0, 4])  # top 10, bottom 10.5 -> 5% mismatch
        with pytest.raises(GeometryError):
            from_corners([0, 0, 1, 1, 2])

    def test_noisy_quad_within_tolerance(self):
        b = from_corners([0, 0, 10, 0, 10.02, 4, 0, 4])
        assert b.w == pytest.approx(10.01, abs=1e-9)

    def test_round_trip_squares(self, rng):
        for _ in range(200):
            b = random_box(rng, square=True)
            r = from_corners(to_corners(b))
            assert r.params()[:4] == pytest.approx(b.params()[:4], abs=1e-9)
            assert angle_diff(r.theta, b.theta, HALF_PI) < 1e-9


class TestLocalCoords:
    def test_center(self):
        b = OrientedBox.from_degrees(4, 5, 10, 2, 20)
        assert local_coords(b, 4, 5) == (0.0, 0.0)

    def test_long_midline(self):
        b = OrientedBox.from_degrees(4, 5, 10, 2, 20)
        u_hat, _ = b.axes()
        u, v = local_coords(b, *(np.array([4, 5]) + 3.0 * u_hat))
        assert u == pytest.approx(3.0) and v == pytest.approx(0.0, abs=1e-12)

    def test_rigid_rotation_invariance(self, rng):
        for _ in range(100):
            b = random_box(rng)
            p = rng.uniform(-50, 50, 2)
            a = rng.uniform(-math.pi, math.pi)
            c, s = math.cos(a), math.sin(a)
            q = np.array([[c, -s], [s, c]]) @ p
            rot = OrientedBox.from_params(b.cx, b.cy, b.w, b.h, b.theta + a)
            # LE90 folding may shift the angle by k*pi, which negates both axes.
            flip = round(math.cos(rot.theta - (b.theta + a)))
            u0, v0 = local_coords(b, *(p + [b.cx, b.cy]))
            u1, v1 = local_coords(rot, *(q + [b.cx, b.cy]))
            assert (u1, v1) == pytest.approx((flip * u0, flip * v0), abs=1e-9)


class TestSoftContainment:
    box = OrientedBox(0.0, 0.0, 20.0, 10.0, 0.0)

    def test_deep_inside(self):
        val = soft_containment(self.box, 0.0, 0.0).value
        assert abs(val - 1.0) < 1e-20 or val == 1.0

    def test_edge_midline_is_half(self):
        val = soft_containment(self.box, 10.0, 0.0).value
        assert val == pytest.approx(0.5, abs=1e-9)

    def test_half_pixel_band(self, rng):
        b = random_box(rng)
        u_hat, v_hat = b.axes()
        c = np.array([b.cx, b.cy])
        inside = c + (0.5 * b.w - 0.5) * u_hat + (0.5 * b.h - 0.5) * v_hat
        outside = c + (0.5 * b.w + 0.5) * u_hat
        assert soft_containment(b, *inside).value >= 0.98
        assert soft_containment(b, *outside).value <= 0.01

    def test_full_extent_switch(self):
        # Full-extent comparison keeps the value near 1 well outside the box.
        assert soft_containment(self.box, 15.0, 0.0, full_extent=True).value > 0.99
        assert soft_containment(self.box, 15.0, 0.0).value < 1e-20

    def test_translation_equivariance(self, rng):
        b = random_box(rng)
        p = rng.uniform(-30, 30, 2) + [b.cx, b.cy]
        t = rng.uniform(-100, 100, 2)
        a = soft_containment(b, *p)
        s = soft_containment(b.translated(*t), *(p + t))
        assert s.value == pytest.approx(a.value, abs=1e-12)
        np.testing.assert_allclose(s.d_value_d_params, a.d_value_d_params, atol=1e-12)

    def test_monotone_in_distance(self):
        us = np.linspace(0, 20, 200)
        vals, _ = soft_containment_arrays(self.box.params(), us, np.zeros_like(us))
        assert (np.diff(vals) <= 0).all()
        assert (vals > 0).all() and (vals <= 1).all()

    def test_partials_match_finite_differences(self, rng):
        """5-point central differences, step 1e-5, mixed abs/rel error < 1e-6."""
        worst = 0.0
        for _ in range(1000):
            b = random_box(rng)
            px = b.cx + rng.uniform(-0.8, 0.8) * b.w
            py = b.cy + rng.uniform(-0.8, 0.8) * b.w
            p0 = b.params()
            _, grad = soft_containment_arrays(p0, px, py)
            for k in range(5):
                e = np.zeros(5)
                e[k] = 1.0
                num = five_point(lambda t: soft_containment_arrays(p0 + t * e, px, py)[0], 0.0, 1e-5)
                worst = max(worst, abs(grad[k] - num) / max(1.0, abs(grad[k]), abs(num)))
        assert worst < 1e-6

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-40, 40), st.floats(-40, 40))
    def test_value_in_unit_interval(self, x, y):
        v = soft_containment(self.box, x, y).value
        assert 0.0 <= v <= 1.0

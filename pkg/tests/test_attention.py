import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeobb.attention import (
    FeaturePyramid,
    FusionWeights,
    apply_edge_attention,
    attention_report,
    fuse_scheme2,
    load_pyramid,
    pyramid_dims,
    save_pyramid,
    synthetic_pyramid,
)
from edgeobb.edges import EdgePyramid, adaptive_canny, build_edge_pyramid, edge_mask
from edgeobb.errors import DimensionError
from edgeobb.geometry import OrientedBox
from edgeobb.imagecore import FeatureMap, GrayImage

from conftest import rect_scene


def const_edges(base, value):
    return build_edge_pyramid(GrayImage(np.full((base[1], base[0]), float(value))))


def random_edges(rng, base):
    return build_edge_pyramid(GrayImage(rng.uniform(0, 1, (base[1], base[0]))))


def naive_fuse(orig, att, mat, bias):
    c, h, w = orig.shape
    out = np.zeros_like(orig)
    for y in range(h):
        for x in range(w):
            z = [att[k, y, x] for k in range(c)] + [orig[k, y, x] for k in range(c)]
            for k in range(c):
                out[k, y, x] = sum(mat[k][j] * z[j] for j in range(2 * c)) + bias[k]
    return out


class TestPyramidTypes:
    def test_dims(self):
        assert pyramid_dims(100, 37) == [(50, 19), (25, 10), (13, 5), (7, 3), (4, 2)]
        fp = synthetic_pyramid(np.random.default_rng(0), 3, (100, 37))
        assert fp.dims() == pyramid_dims(100, 37) and fp.channels == 3

    def test_rejects_bad_shapes(self, rng):
        good = list(synthetic_pyramid(rng, 2, (32, 32)).levels)
        with pytest.raises(DimensionError):
            FeaturePyramid(tuple(good[:4]))
        with pytest.raises(DimensionError):
            FeaturePyramid(tuple(good[:4] + [FeatureMap(np.zeros((3, 1, 1)))]))
        with pytest.raises(DimensionError):
            FeaturePyramid(tuple(good[:4] + [FeatureMap(np.zeros((2, 2, 1)))]))

    def test_fusion_weight_checks(self):
        with pytest.raises(DimensionError):
            FusionWeights((np.zeros((2, 3)),), (np.zeros(2),))
        with pytest.raises(DimensionError):
            FusionWeights((np.zeros((2, 4)),), (np.zeros(3),))
        with pytest.raises(ValueError):
            FusionWeights((np.full((1, 2), np.nan),), (np.zeros(1),))

    def test_tensor_round_trip(self, tmp_path, rng):
        fp = synthetic_pyramid(rng, 4, (40, 24))
        back = load_pyramid(save_pyramid(fp, tmp_path, "f"))
        for a, b in zip(fp.levels, back.levels):
            np.testing.assert_array_equal(b.data, a.data.astype(np.float32))


class TestAttention:
    base = (32, 32)

    def test_zero_edges(self, rng):
        fp = synthetic_pyramid(rng, 3, self.base)
        out = apply_edge_attention(fp, const_edges(self.base, 0.0))
        assert all(not lvl.data.any() for lvl in out.levels)

    def test_unit_edges(self, rng):
        fp = synthetic_pyramid(rng, 3, self.base)
        out = apply_edge_attention(fp, const_edges(self.base, 1.0))
        for a, b in zip(fp.levels, out.levels):
            np.testing.assert_array_equal(a.data, b.data)

    def test_elementwise_oracle(self, rng):
        fp = synthetic_pyramid(rng, 3, self.base)
        ep = random_edges(rng, self.base)
        out = apply_edge_attention(fp, ep)
        assert out.dims()[0] == (16, 16)
        for f, e, y in zip(fp.levels, ep.levels, out.levels):
            for c in range(f.channels):
                for r in range(f.height):
                    for x in range(f.width):
                        assert abs(y.data[c, r, x] - e.data[r, x] * f.data[c, r, x]) <= 1e-12

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**31))
    def test_linear_in_features(self, a, b, seed):
        rng = np.random.default_rng(seed)
        f = synthetic_pyramid(rng, 2, self.base)
        g = synthetic_pyramid(rng, 2, self.base)
        ep = random_edges(rng, self.base)
        mix = FeaturePyramid(tuple(FeatureMap(a * x.data + b * y.data) for x, y in zip(f.levels, g.levels)))
        lhs = apply_edge_attention(mix, ep)
        yf, yg = apply_edge_attention(f, ep), apply_edge_attention(g, ep)
        for l, p, q in zip(lhs.levels, yf.levels, yg.levels):
            np.testing.assert_allclose(l.data, a * p.data + b * q.data, rtol=0, atol=1e-12)

    def test_magnitude_never_grows(self, rng):
        fp = synthetic_pyramid(rng, 4, self.base)
        out = apply_edge_attention(fp, random_edges(rng, self.base))
        for f, y in zip(fp.levels, out.levels):
            assert (np.abs(y.data) <= np.abs(f.data)).all()

    def test_dimension_mismatch(self, rng):
        fp = synthetic_pyramid(rng, 2, self.base)
        with pytest.raises(DimensionError):
            apply_edge_attention(fp, const_edges((48, 32), 1.0))
        with pytest.raises(DimensionError):
            apply_edge_attention(fp, EdgePyramid(const_edges(self.base, 1.0).levels[:4]))


class TestScheme2:
    base = (24, 20)

    def test_averaging_identical(self, rng):
        fp = synthetic_pyramid(rng, 3, self.base)
        out = fuse_scheme2(fp, fp, FusionWeights.averaging(3))
        for a, b in zip(fp.levels, out.levels):
            np.testing.assert_allclose(b.data, a.data, rtol=0, atol=1e-15)

    def test_projection(self, rng):
        fp = synthetic_pyramid(rng, 3, self.base)
        other = synthetic_pyramid(rng, 3, self.base)
        out = fuse_scheme2(fp, other, FusionWeights.projection(3))
        for a, b in zip(fp.levels, out.levels):
            np.testing.assert_array_equal(b.data, a.data)

    def test_averaging_zero_edges_halves(self, rng):
        fp = synthetic_pyramid(rng, 3, self.base)
        att = apply_edge_attention(fp, const_edges(self.base, 0.0))
        out = fuse_scheme2(fp, att, FusionWeights.averaging(3))
        for a, b in zip(fp.levels, out.levels):
            np.testing.assert_array_equal(b.data, 0.5 * a.data)

    def test_random_weights_oracle(self, rng):
        fp = synthetic_pyramid(rng, 3, self.base)
        att = apply_edge_attention(fp, random_edges(rng, self.base))
        w = FusionWeights.random(rng, 3)
        out = fuse_scheme2(fp, att, w)
        for o, a, m, b, y in zip(fp.levels, att.levels, w.matrices, w.biases, out.levels):
            ref = naive_fuse(o.data, a.data, m.tolist(), b.tolist())
            assert np.abs(y.data - ref).max() <= 1e-12

    def test_json_weights(self):
        w = FusionWeights.from_json({"matrices": [[[0.25, 0.75]]] * 5, "biases": [[0.5]] * 5})
        assert w.matrices[0].shape == (1, 2) and w.biases[4].tolist() == [0.5]
        fp = FeaturePyramid(tuple(FeatureMap(np.full((1, h, w_), 2.0)) for w_, h in pyramid_dims(8, 8)))
        att = FeaturePyramid(tuple(FeatureMap(np.full((1, h, w_), 4.0)) for w_, h in pyramid_dims(8, 8)))
        out = fuse_scheme2(fp, att, w)
        assert all((lvl.data == 0.25 * 4 + 0.75 * 2 + 0.5).all() for lvl in out.levels)

    def test_mismatch(self, rng):
        fp = synthetic_pyramid(rng, 3, self.base)
        with pytest.raises(DimensionError):
            fuse_scheme2(fp, synthetic_pyramid(rng, 3, (26, 20)), FusionWeights.averaging(3))
        with pytest.raises(DimensionError):
            fuse_scheme2(fp, fp, FusionWeights.averaging(2))
        with pytest.raises(DimensionError):
            fuse_scheme2(fp, fp, FusionWeights.averaging(3, levels=4))


class TestReport:
    base = (32, 32)

    def test_uniform_features_ratio(self):
        mask = np.zeros((32, 32))
        mask[:, :16] = 0.9
        mask[:, 16:] = 0.3
        ep = build_edge_pyramid(GrayImage(mask))
        fp = FeaturePyramid(tuple(FeatureMap(np.full((2, h, w), 2.0)) for w, h in pyramid_dims(32, 32)))
        for row, e in zip(attention_report(fp, ep), ep.levels):
            if row["degenerate"]:
                continue
            hi, lo = e.data[e.data > 0.5], e.data[e.data <= 0.5]
            assert row["ratio"] == pytest.approx(hi.mean() / lo.mean(), rel=1e-12)
        assert not attention_report(fp, ep)[0]["degenerate"]

    def test_zero_edges_flagged(self, rng):
        rows = attention_report(synthetic_pyramid(rng, 2, self.base), const_edges(self.base, 0.0))
        assert all(r["degenerate"] and r["ratio"] == 0.0 and r["edge_pixels"] == 0 for r in rows)

    def test_rectangle_scene(self, rng):
        # Weak noise edges pull the mean magnitude down, so the object outline exceeds 0.5.
        img = rect_scene(OrientedBox.from_params(64, 64, 60, 24, math.radians(20)), noise_sigma=6.0)
        ep = build_edge_pyramid(edge_mask(adaptive_canny(img)))
        fp = synthetic_pyramid(rng, 4, img.dims, positive=True)
        for r in attention_report(fp, ep)[:3]:
            assert r["edge_pixels"] > 0 and r["edge_mean"] > r["non_edge_mean"]

    def test_clean_rectangle_has_no_strong_edges(self, rng):
        # Uniform contrast puts every edge at the mean magnitude, 2 * (sigmoid(1) - 0.5) < 0.5.
        img = rect_scene(OrientedBox.from_params(64, 64, 60, 24, math.radians(20)))
        ep = build_edge_pyramid(edge_mask(adaptive_canny(img)))
        rows = attention_report(synthetic_pyramid(rng, 2, img.dims, positive=True), ep)
        assert rows[0]["degenerate"] and rows[0]["edge_pixels"] == 0
        assert 0 < ep.levels[0].data.max() < 0.5

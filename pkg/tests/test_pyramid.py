import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from proscale.errors import ValidationError
from proscale.numerics import Tensor, bilinear_sample
from proscale.pyramid import (
    ScaleSpec,
    build_pyramid,
    flatten_map,
    pixel_centers,
    positional_encoding,
    resize_bilinear,
    smooth_pyramid,
    token_counts,
    unflatten_tokens,
)

from reference import ceil_tokens, sine_positions

extent = st.integers(32, 2100)


class TestTokenCounts:
    def test_64x64(self):
        c = token_counts(64, 64)
        assert (c.n2, c.n3, c.n4) == (64, 16, 4)
        assert (c.K1, c.K2, c.K3) == (4, 20, 84)

    def test_coco_ceil_division(self):
        c = token_counts(800, 1333)
        assert (c.n2, c.n3, c.n4) == (16700, 4200, 1050)
        assert c.K3 == 21950

    def test_unit_and_cityscapes(self):
        assert token_counts(32, 32).stage_lengths() == (1, 5, 21)
        c = token_counts(1024, 2048)
        assert c.n4 == 2048 and c.K3 == 43008

    @given(extent, extent)
    def test_matches_independent_ceil(self, h, w):
        c = token_counts(h, w)
        ref = ceil_tokens(h, w)
        assert (c.n1, c.n2, c.n3, c.n4) == (ref["s1"], ref["s2"], ref["s3"], ref["s4"])
        assert c.K1 == c.n4 and c.K2 == c.n4 + c.n3 and c.K3 == c.n4 + c.n3 + c.n2
        assert c.K1 < c.K2 < c.K3

    @given(st.integers(1, 60), st.integers(1, 60))
    def test_shares_for_divisible_sizes(self, a, b):
        s = token_counts(32 * a, 32 * b).shares()
        assert s["s2"] == pytest.approx(100 * 16 / 21, abs=1e-9)
        assert s["s3"] == pytest.approx(100 * 4 / 21, abs=1e-9)
        assert s["s4"] == pytest.approx(100 * 1 / 21, abs=1e-9)

    @pytest.mark.parametrize("h,w", [(31, 64), (64, 16), (0, 64)])
    def test_too_small(self, h, w):
        with pytest.raises(ValidationError):
            token_counts(h, w)


class TestBuildPyramid:
    def test_synthetic_shapes_and_determinism(self):
        a = build_pyramid(64, 96, 8, seed=3)
        b = build_pyramid(64, 96, 8, seed=3)
        assert a.maps["s1"].shape == (16, 24, 8)
        assert a.maps["s4"].shape == (2, 3, 8)
        for n in a.maps:
            np.testing.assert_array_equal(a.maps[n].data, b.maps[n].data)
        assert a.counts.K3 == token_counts(64, 96).K3

    def test_supplied_tensors_and_mismatch_names_scale(self):
        base = build_pyramid(64, 64, 4, seed=0)
        maps = dict(base.maps)
        rebuilt = build_pyramid(64, 64, 4, tensors=maps)
        assert rebuilt.tokens("s3").shape == (16, 4)
        maps["s3"] = Tensor(np.zeros((3, 4, 4)))
        with pytest.raises(ValidationError, match="scale s3"):
            build_pyramid(64, 64, 4, tensors=maps)

    def test_missing_scale(self):
        maps = dict(build_pyramid(64, 64, 4, seed=0).maps)
        del maps["s1"]
        with pytest.raises(ValidationError):
            build_pyramid(64, 64, 4, tensors=maps)

    def test_flatten_is_row_major_and_invertible(self):
        m = Tensor(np.arange(24.0).reshape(2, 3, 4))
        flat = flatten_map(m)
        np.testing.assert_array_equal(flat.data[4], m.data[1, 1])
        np.testing.assert_array_equal(unflatten_tokens(flat, 2, 3).data, m.data)

    def test_smooth_pyramid_scales_see_the_same_field(self):
        # s1 pixel (2i+1, 2j+1)'s neighbourhood averages to s2 pixel (i, j) for a linear-ish field
        p = smooth_pyramid(256, 256, 4, seed=1)
        s1, s2 = p.maps["s1"].data, p.maps["s2"].data
        approx = 0.25 * (s1[0::2, 0::2] + s1[1::2, 0::2] + s1[0::2, 1::2] + s1[1::2, 1::2])
        np.testing.assert_allclose(approx, s2, atol=0.05)


class TestPositionalEncoding:
    def test_matches_loop_oracle(self):
        spec = ScaleSpec("s3", 16, 5, 7, 12)
        np.testing.assert_allclose(positional_encoding(spec).data, sine_positions(5, 7, 12), atol=1e-12)

    def test_range_and_distinctness(self):
        for h, w, c in [(64, 64, 4), (8, 13, 8), (1, 1, 4)]:
            enc = positional_encoding(ScaleSpec("s2", 8, h, w, c)).data
            assert np.all(np.abs(enc) <= 1.0)
            if h * w > 1:
                # pairwise distinct rows
                assert len(np.unique(enc.round(12), axis=0)) == h * w

    def test_channels_must_divide_by_four(self):
        with pytest.raises(ValidationError):
            positional_encoding(ScaleSpec("s2", 8, 4, 4, 6))


class TestResize:
    @given(st.integers(1, 9), st.integers(1, 9), st.floats(-5, 5))
    def test_constant_stays_constant(self, oh, ow, v):
        out = resize_bilinear(Tensor(np.full((4, 3, 2), v)), oh, ow).data
        np.testing.assert_allclose(out, v, atol=1e-12)

    def test_same_size_is_identity(self):
        m = Tensor(np.random.default_rng(0).standard_normal((3, 5, 2)))
        assert resize_bilinear(m, 3, 5) is m

    def test_ramp_downsize_matches_direct_sampling(self):
        ramp = Tensor(np.arange(16.0).reshape(4, 4, 1))
        direct = bilinear_sample(ramp, Tensor(pixel_centers(2, 2))).data.reshape(2, 2, 1)
        np.testing.assert_allclose(resize_bilinear(ramp, 2, 2).data, direct, atol=1e-12)
        np.testing.assert_allclose(direct[..., 0], [[2.5, 4.5], [10.5, 12.5]])

    def test_upsample_is_linear_inside_and_flat_at_border(self):
        ramp = Tensor(np.array([[[0.0], [4.0]]]))
        out = resize_bilinear(ramp, 1, 4).data[0, :, 0]
        np.testing.assert_allclose(out, [0.0, 1.0, 3.0, 4.0])

    def test_invalid_target(self):
        with pytest.raises(ValidationError):
            resize_bilinear(Tensor(np.ones((2, 2, 1))), 0, 2)


def test_pixel_centers_cover_unit_square():
    pts = pixel_centers(3, 4)
    assert pts.shape == (12, 2)
    assert set(itertools.chain(pts[:, 0])) == {0.125, 0.375, 0.625, 0.875}
    assert pts[4].tolist() == [0.125, 0.5]

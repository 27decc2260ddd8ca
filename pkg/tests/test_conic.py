import numpy as np
import pytest

from conicnet import (
    Activation,
    ConicConvLayer,
    build_region_map,
    conic_backward,
    conic_forward,
    conic_pool_gaps,
    downsampled_extent,
    finite_diff_grad,
    region_conv,
    rot90,
)
from conicnet.reference import naive_conic_forward, naive_correlate


def make_layer(rng, K=2, h=3, d=1, R=1, D=1, activation=Activation.IDENTITY, bias=None, **kw):
    filters = rng.standard_normal((K, h, h, d))
    biases = np.zeros(K) if bias is None else np.asarray(bias, dtype=float)
    return ConicConvLayer(filters, biases, subdivisions=R, downsample=D, activation=activation, **kw)


class TestRegionConv:
    def test_unit_point_filter_reproduces_input(self, rng):
        a = rng.standard_normal((7, 7, 1))
        w = np.ones((1, 1, 1))
        m = build_region_map(7, 2)
        for r in range(8):
            np.testing.assert_allclose(region_conv(a, w, r, m), a[:, :, 0], atol=1e-12)

    def test_constant_input_gives_filter_sum(self, rng):
        a = np.full((9, 9, 2), 1.5)
        w = rng.standard_normal((3, 3, 2))
        m = build_region_map(9, 1)
        for r in range(4):
            out = region_conv(a, w, r, m)
            np.testing.assert_allclose(out[1:-1, 1:-1], 1.5 * w.sum(), atol=1e-12)

    def test_matches_bruteforce_correlation_with_aligned_filter(self, rng):
        # the filter for region r is the base filter with its content
        # rotated to angle theta_r, i.e. the exact remap by -r quarter
        # turns when subdivisions == 1
        a = rng.standard_normal((9, 9, 1))
        w = rng.standard_normal((3, 3, 1))
        m = build_region_map(9, 1)
        for r in range(4):
            got = region_conv(a, w, r, m)
            want = naive_correlate(a, rot90(w, -r))
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_depth_mismatch(self, rng):
        with pytest.raises(ValueError, match="depth"):
            region_conv(rng.standard_normal((7, 7, 2)), np.ones((3, 3, 1)), 0, build_region_map(7, 1))


class TestConicForward:
    def test_identity_configuration(self, rng):
        a = rng.standard_normal((7, 7, 1))
        layer = ConicConvLayer(np.ones((1, 1, 1, 1)), np.zeros(1), activation=Activation.IDENTITY)
        np.testing.assert_allclose(conic_forward(a, layer)[:, :, 0], a[:, :, 0], atol=1e-12)

    def test_constant_input_constant_output(self, rng):
        layer = make_layer(rng, K=3, h=3, d=2, R=1, bias=[0.1, -0.2, 0.3], activation=Activation.RELU)
        a = np.full((9, 9, 2), 0.7)
        out = conic_forward(a, layer)
        inner = out[2:-2, 2:-2, :]  # away from the zero padding
        for k in range(3):
            want = max(0.0, 0.7 * layer.filters[k].sum() + layer.biases[k])
            np.testing.assert_allclose(inner[:, :, k], want, atol=1e-12)

    @pytest.mark.parametrize("R,D", [(1, 1), (1, 2), (2, 1), (2, 2), (3, 2)])
    def test_quarter_turn_equivariance(self, rng, R, D):
        layer = make_layer(rng, K=2, h=3, d=2, R=R, D=D, activation=Activation.RELU)
        a = rng.standard_normal((9, 9, 2))
        base = conic_forward(a, layer)
        for n in range(4):
            got = conic_forward(rot90(a, n), layer)
            np.testing.assert_allclose(got, rot90(base, n), atol=1e-9)

    def test_matches_naive_reference(self, rng):
        layer = make_layer(rng, K=2, h=3, d=1, R=2, D=2, activation=Activation.RELU, bias=[0.05, -0.05])
        a = rng.standard_normal((9, 9, 1))
        np.testing.assert_allclose(conic_forward(a, layer), naive_conic_forward(a, layer), atol=1e-12)

    def test_downsampled_extent(self):
        assert downsampled_extent(9, 2) == 5
        assert downsampled_extent(13, 2) == 7
        assert downsampled_extent(51, 2) == 25
        assert downsampled_extent(7, 1) == 7
        assert downsampled_extent(1, 3) == 1

    def test_downsample_picks_stride_aligned_pixels(self, rng):
        layer1 = make_layer(rng, K=1, h=3, d=1, D=1)
        layer2 = ConicConvLayer(layer1.filters, layer1.biases, downsample=2,
                                activation=Activation.IDENTITY)
        a = rng.standard_normal((9, 9, 1))
        full = conic_forward(a, layer1)
        half = conic_forward(a, layer2)
        np.testing.assert_allclose(half, full[::2, ::2][:, :, :], atol=1e-12)

    def test_even_extent_rejected(self, rng):
        with pytest.raises(ValueError, match="odd"):
            conic_forward(rng.standard_normal((8, 8, 1)), make_layer(rng))

    def test_depth_mismatch_rejected(self, rng):
        with pytest.raises(ValueError, match="depth"):
            conic_forward(rng.standard_normal((9, 9, 3)), make_layer(rng, d=2))

    def test_batched_matches_loop(self, rng):
        layer = make_layer(rng, K=2, h=3, d=2, R=1, D=2, activation=Activation.RELU)
        batch = rng.standard_normal((4, 9, 9, 2))
        out = conic_forward(batch, layer)
        for b in range(4):
            np.testing.assert_allclose(out[b], conic_forward(batch[b], layer), atol=1e-12)

    def test_perturbed_origin_breaks_equivariance(self, rng):
        layer = make_layer(rng, K=1, h=3, d=1, R=1, origin_pool_all=False)
        a = rng.standard_normal((7, 7, 1))
        base = conic_forward(a, layer)
        worst = max(
            float(np.abs(conic_forward(rot90(a, n), layer) - rot90(base, n)).max())
            for n in range(1, 4)
        )
        assert worst > 1e-6

    def test_max_tie_breaks_to_lowest_rotation(self):
        # symmetric filter + symmetric input force exact pooling ties;
        # pooled pixels must then record the lowest candidate rotation
        layer = ConicConvLayer(np.ones((1, 3, 3, 1)), np.zeros(1), activation=Activation.IDENTITY)
        a = np.ones((5, 5, 1))
        _, cache = conic_forward(a, layer, want_cache=True)
        m = build_region_map(5, 1)
        chosen = cache.chosen[0, :, :, 0]
        assert chosen[2, 2] == 0  # origin ties across all four rotations
        boundary = np.asarray(m.kind) == 2
        idx = np.asarray(m.index)
        # candidates are {r, r+1 mod 4}; the tie goes to the smaller one
        want = np.minimum(idx, (idx + 1) % 4)
        np.testing.assert_array_equal(chosen[boundary], want[boundary])


class TestConicBackward:
    def test_identity_layer_passes_gradient_through(self, rng):
        layer = ConicConvLayer(np.ones((1, 1, 1, 1)), np.zeros(1), activation=Activation.IDENTITY)
        a = rng.standard_normal((7, 7, 1))
        out, cache = conic_forward(a, layer, want_cache=True)
        g = rng.standard_normal(out.shape)
        gi, gf, gb = conic_backward(g, cache)
        np.testing.assert_allclose(gi, g, atol=1e-12)
        np.testing.assert_allclose(gf, [[[[float((g[:, :, 0] * a[:, :, 0]).sum())]]]], atol=1e-10)

    def test_zero_gradient_gives_zero(self, rng):
        layer = make_layer(rng, K=2, h=3, d=2, R=2, D=2, activation=Activation.RELU)
        a = rng.standard_normal((9, 9, 2))
        out, cache = conic_forward(a, layer, want_cache=True)
        gi, gf, gb = conic_backward(np.zeros_like(out), cache)
        assert not gi.any() and not gf.any() and not gb.any()

    def test_matches_finite_differences(self, rng):
        layer = make_layer(rng, K=2, h=3, d=2, R=1, D=1, activation=Activation.RELU,
                           bias=rng.standard_normal(2))
        a = rng.standard_normal((7, 7, 2))
        assert conic_pool_gaps(a, layer) > 1e-4
        out, cache = conic_forward(a, layer, want_cache=True)
        assert np.abs(cache.pre).min() > 1e-4
        g = rng.standard_normal(out.shape)
        gi, gf, gb = conic_backward(g, cache)

        fd_a = finite_diff_grad(lambda x: float((conic_forward(x, layer) * g).sum()), a)
        np.testing.assert_allclose(gi, fd_a, rtol=1e-5, atol=1e-8)

        def with_filters(w):
            l2 = ConicConvLayer(w, layer.biases, subdivisions=1, activation=Activation.RELU)
            return float((conic_forward(a, l2) * g).sum())

        np.testing.assert_allclose(gf, finite_diff_grad(with_filters, layer.filters), rtol=1e-5, atol=1e-8)

        def with_biases(b):
            l2 = ConicConvLayer(layer.filters, b, subdivisions=1, activation=Activation.RELU)
            return float((conic_forward(a, l2) * g).sum())

        np.testing.assert_allclose(gb, finite_diff_grad(with_biases, layer.biases), rtol=1e-5, atol=1e-8)

    def test_gradient_shape_mismatch_rejected(self, rng):
        layer = make_layer(rng)
        _, cache = conic_forward(rng.standard_normal((7, 7, 1)), layer, want_cache=True)
        with pytest.raises(ValueError, match="shape"):
            conic_backward(np.zeros((3, 3, 2)), cache)


class TestLayerValidation:
    def test_even_filter_rejected(self, rng):
        with pytest.raises(ValueError, match="odd"):
            ConicConvLayer(rng.standard_normal((1, 4, 4, 1)), np.zeros(1))

    def test_bias_count(self, rng):
        with pytest.raises(ValueError, match="bias"):
            ConicConvLayer(rng.standard_normal((2, 3, 3, 1)), np.zeros(3))

    def test_bad_downsample(self, rng):
        with pytest.raises(ValueError, match="downsample"):
            ConicConvLayer(rng.standard_normal((1, 3, 3, 1)), np.zeros(1), downsample=0)

    def test_param_count(self, rng):
        layer = make_layer(rng, K=3, h=5, d=2)
        assert layer.param_count() == 3 * 5 * 5 * 2 + 3

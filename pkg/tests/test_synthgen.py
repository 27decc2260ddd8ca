import math

import numpy as np
import pytest

from conicnet import (
    ClassSpec,
    GenParams,
    gaussian_blur,
    generate_dataset,
    generate_image,
    make_rng,
    sample_class_specs,
    sample_point_cloud,
)
from conicnet.synthgen import rotation_matrix


class TestClassSpecs:
    def test_single_component(self, rng):
        (spec,) = sample_class_specs(1, 1, rng)
        assert spec.gaussians == 1
        eig = np.linalg.eigvalsh(spec.covariances[0])
        assert (eig > 0).all()

    def test_full_experiment_shape(self, rng):
        specs = sample_class_specs(50, 10, rng)
        assert len(specs) == 50
        assert all(s.gaussians == 10 for s in specs)

    def test_covariance_eigenvalues_in_range(self, rng):
        for spec in sample_class_specs(5, 4, rng):
            for cov in spec.covariances:
                np.testing.assert_allclose(cov, cov.T, atol=1e-15)
                eig = np.linalg.eigvalsh(cov)
                assert (eig >= 0.005 - 1e-12).all() and (eig <= 0.05 + 1e-12).all()

    def test_means_inside_safe_box(self, rng):
        for spec in sample_class_specs(5, 4, rng):
            assert (np.abs(spec.means) <= 0.8).all()

    def test_determinism_and_seed_sensitivity(self):
        a = sample_class_specs(3, 2, make_rng(5))
        b = sample_class_specs(3, 2, make_rng(5))
        c = sample_class_specs(3, 2, make_rng(6))
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.means, sb.means)
            np.testing.assert_array_equal(sa.covariances, sb.covariances)
        assert not np.array_equal(a[0].means, c[0].means)

    def test_validation(self, rng):
        with pytest.raises(ValueError):
            sample_class_specs(0, 1, rng)


def empty_spec():
    return ClassSpec(np.zeros((0, 2)), np.zeros((0, 2, 2)), np.zeros(0))


class TestGenerateImage:
    def test_shape_finite_nonnegative(self, rng):
        (spec,) = sample_class_specs(1, 3, rng)
        img = generate_image(spec, GenParams(image_size=30), rng)
        assert img.shape == (30, 30, 1)
        assert np.isfinite(img).all()
        assert (img >= 0).all()

    def test_same_seed_bitwise_identical(self, rng):
        (spec,) = sample_class_specs(1, 3, rng)
        params = GenParams(image_size=24)
        a = generate_image(spec, params, make_rng(99))
        b = generate_image(spec, params, make_rng(99))
        np.testing.assert_array_equal(a, b)

    def test_pure_noise_limit_mean(self):
        # background rate huge (mean ~ 0), no mixture points, no jitter:
        # the image is iid exponential noise with mean 1/rate
        params = GenParams(image_size=50, background_rate=1e12, pixel_noise_rate=50.0, max_jitter=0)
        img = generate_image(empty_spec(), params, make_rng(31))
        mean = 1.0 / 50.0
        sigma = mean / math.sqrt(50 * 50)
        assert abs(img.mean() - mean) < 3 * sigma

    def test_points_brighten_the_image(self, rng):
        (spec,) = sample_class_specs(1, 5, rng)
        params = GenParams(image_size=40)
        img = generate_image(spec, params, make_rng(7))
        noise_only = generate_image(empty_spec(), params, make_rng(7))
        assert img.sum() > noise_only.sum()


class TestPointCloudRotation:
    def test_isotropic_component_rotation_independent(self):
        spec = ClassSpec(np.zeros((1, 2)), 0.02 * np.eye(2)[None], np.array([10000.0]))
        params = GenParams(mean_jitter_cov=1e-18 * np.eye(2), point_count_std=1e-9)
        covs = []
        for theta in (0.0, 1.1, 2.7):
            pts, _ = sample_point_cloud(spec, params, theta, make_rng(3))
            covs.append(np.cov(pts.T))
        # entries of a sample covariance of n ~ 1e4 isotropic points move
        # by O(sigma^2 / sqrt(n)); allow 5x that
        bound = 5 * 0.02 / math.sqrt(10000)
        for c in covs[1:]:
            assert np.abs(c - covs[0]).max() < bound

    def test_second_moments_rotate_with_theta(self):
        cov = np.array([[0.05, 0.018], [0.018, 0.008]])
        spec = ClassSpec(np.array([[0.3, -0.2]]), cov[None], np.array([10000.0]))
        params = GenParams(mean_jitter_cov=1e-18 * np.eye(2), point_count_std=1e-9)
        theta = 0.73
        pts_a, _ = sample_point_cloud(spec, params, theta + math.pi / 2, make_rng(11))
        pts_b, _ = sample_point_cloud(spec, params, theta, make_rng(12))
        rotated_b = pts_b @ rotation_matrix(math.pi / 2).T
        m2_a = pts_a.T @ pts_a / len(pts_a)
        m2_b = rotated_b.T @ rotated_b / len(rotated_b)
        # 5-sigma bounds per entry from the empirical spread of the products
        for i in range(2):
            for j in range(2):
                prods_a = pts_a[:, i] * pts_a[:, j]
                prods_b = rotated_b[:, i] * rotated_b[:, j]
                sigma = math.sqrt(prods_a.var() / len(prods_a) + prods_b.var() / len(prods_b))
                assert abs(m2_a[i, j] - m2_b[i, j]) < 5 * sigma


class TestGaussianBlur:
    def test_preserves_mass_away_from_borders(self):
        img = np.zeros((21, 21))
        img[10, 10] = 3.0
        out = gaussian_blur(img, 1.0)
        assert out.sum() == pytest.approx(3.0, rel=1e-12)

    def test_kernel_truncation_radius(self):
        img = np.zeros((21, 21))
        img[10, 10] = 1.0
        out = gaussian_blur(img, 1.0)
        assert out[10, 13] > 0  # radius ceil(3*1) = 3 reaches here
        assert out[10, 14] == 0.0

    def test_constant_image_unchanged_interior(self):
        out = gaussian_blur(np.ones((15, 15)), 1.0)
        np.testing.assert_allclose(out[3:-3, 3:-3], 1.0, atol=1e-12)


class TestGenerateDataset:
    def test_counts_and_uniform_labels(self, rng):
        specs = sample_class_specs(5, 2, rng)
        images, labels, manifest = generate_dataset(specs, GenParams(image_size=16), 4, seed=1)
        assert images.shape == (20, 16, 16, 1)
        assert np.bincount(labels, minlength=5).tolist() == [4] * 5
        assert manifest["classes"] == 5 and manifest["per_class"] == 4

    def test_reproducible_bitwise(self, rng):
        specs = sample_class_specs(2, 2, rng)
        params = GenParams(image_size=12)
        a = generate_dataset(specs, params, 3, seed=9)
        b = generate_dataset(specs, params, 3, seed=9)
        np.testing.assert_array_equal(a[0], b[0])
        assert a[2] == b[2]

    def test_manifest_specs_roundtrip(self, rng):
        specs = sample_class_specs(2, 3, rng)
        _, _, manifest = generate_dataset(specs, GenParams(image_size=10), 1, seed=0)
        back = [ClassSpec.from_dict(d) for d in manifest["class_specs"]]
        for s, t in zip(specs, back):
            np.testing.assert_array_equal(s.means, t.means)


class TestGenParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            GenParams(background_rate=0.0)
        with pytest.raises(ValueError):
            GenParams(max_jitter=-1)
        with pytest.raises(ValueError):
            GenParams(image_size=0)

    def test_dict_roundtrip(self):
        p = GenParams(psf_sigma=1.5)
        q = GenParams.from_dict(p.to_dict())
        assert q.psf_sigma == 1.5
        np.testing.assert_array_equal(q.mean_jitter_cov, p.mean_jitter_cov)

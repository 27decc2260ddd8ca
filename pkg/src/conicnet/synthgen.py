"""Synthetic biomarker image generator.

Each class is a Gaussian mixture over the [-1, 1]^2 box describing where
point-like biomarkers appear in a cell. A sample image draws a dim
exponential background, a uniform random orientation for the whole
pattern, jittered mixture means, per-component point counts and point
positions (means and covariances rotated by the orientation), uniform
point intensities, then applies Gaussian point-spread-function smoothing,
per-pixel exponential noise, and finally an integer camera jitter.

All quantities the sampling families need but that have no single natural
value (rates, jitter covariance, intensity window, ...) are fields of
GenParams with documented defaults; everything is overridable.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ClassSpec:
    """Mixture parameters of one class.

    means : (G, 2) component centers in [-1, 1]^2
    covariances : (G, 2, 2) symmetric positive definite
    point_means : (G,) expected point count per component
    """

    means: np.ndarray
    covariances: np.ndarray
    point_means: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        self.point_means = np.asarray(self.point_means, dtype=np.float64)
        G = self.means.shape[0]
        if self.means.shape != (G, 2) or self.covariances.shape != (G, 2, 2):
            raise ValueError("means must be (G, 2) and covariances (G, 2, 2)")
        if self.point_means.shape != (G,):
            raise ValueError("need one expected point count per component")

    @property
    def gaussians(self) -> int:
        return self.means.shape[0]

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "point_means": self.point_means.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassSpec":
        return cls(np.array(d["means"]), np.array(d["covariances"]), np.array(d["point_means"]))


@dataclass
class GenParams:
    """Global parameters of the generative model.

    Defaults keep the signal well above the noise floor while leaving the
    classes non-trivially separable; all are just starting points.

    image_size : output image side in pixels
    background_rate : rate of the exponential background draw (mean 1/rate)
    mean_jitter_cov : covariance of the per-image jitter on component means
    point_count_std : std of the normal draw around each expected count
    intensity_center, intensity_halfrange : uniform intensity window
    psf_sigma : std (pixels) of the Gaussian smoothing kernel
    pixel_noise_rate : rate of the per-pixel additive exponential noise
    max_jitter : camera translation bound in pixels (uniform integer)
    margin : the raster covers [-(1+margin), 1+margin]^2
    """

    image_size: int = 50
    background_rate: float = 20.0
    mean_jitter_cov: np.ndarray = field(default_factory=lambda: 0.0025 * np.eye(2))
    point_count_std: float = 5.0
    intensity_center: float = 1.0
    intensity_halfrange: float = 0.2
    psf_sigma: float = 1.0
    pixel_noise_rate: float = 50.0
    max_jitter: int = 3
    margin: float = 0.05

    def __post_init__(self):
        self.mean_jitter_cov = np.asarray(self.mean_jitter_cov, dtype=np.float64)
        if self.image_size < 1:
            raise ValueError("image size must be positive")
        for name in ("background_rate", "point_count_std", "psf_sigma", "pixel_noise_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_jitter < 0:
            raise ValueError("max_jitter must be >= 0")

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "mean_jitter_cov"}
        d["mean_jitter_cov"] = self.mean_jitter_cov.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenParams":
        d = dict(d)
        d["mean_jitter_cov"] = np.array(d["mean_jitter_cov"])
        return cls(**d)


def sample_class_specs(n_classes: int, n_gaussians: int, rng) -> list[ClassSpec]:
    """Random class definitions: centers uniform on [-0.8, 0.8]^2, SPD
    covariances with eigenvalues uniform in [0.005, 0.05] at a random
    orientation, expected point counts uniform in [20, 60]."""
    if n_classes < 1 or n_gaussians < 1:
        raise ValueError("need at least one class and one component")
    specs = []
    for _ in range(n_classes):
        means = rng.uniform(-0.8, 0.8, size=(n_gaussians, 2))
        covs = np.empty((n_gaussians, 2, 2))
        for g in range(n_gaussians):
            angle = rng.uniform(0.0, 2.0 * math.pi)
            eig = rng.uniform(0.005, 0.05, size=2)
            q = np.array(
                [[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]]
            )
            covs[g] = q @ np.diag(eig) @ q.T
        point_means = rng.uniform(20.0, 60.0, size=n_gaussians)
        specs.append(ClassSpec(means, covs, point_means))
    return specs


def rotation_matrix(theta: float) -> np.ndarray:
    return np.array(
        [[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]]
    )


def sample_point_cloud(spec: ClassSpec, params: GenParams, theta: float, rng):
    """Draw the biomarker points of one image, before rasterization.

    Returns (points, intensities): points are continuous coordinates with
    the pattern rotated by theta (means and covariances both rotated).
    """
    rot = rotation_matrix(theta)
    points = []
    for g in range(spec.gaussians):
        eta = rng.multivariate_normal(spec.means[g], params.mean_jitter_cov)
        count = max(0, int(np.rint(rng.normal(spec.point_means[g], params.point_count_std))))
        if count == 0:
            continue
        cov = rot @ spec.covariances[g] @ rot.T
        points.append(rng.multivariate_normal(rot @ eta, cov, size=count))
    pts = np.concatenate(points, axis=0) if points else np.zeros((0, 2))
    intensities = rng.uniform(
        params.intensity_center - params.intensity_halfrange,
        params.intensity_center + params.intensity_halfrange,
        size=len(pts),
    )
    return pts, intensities


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing with a renormalized kernel truncated at
    radius ceil(3*sigma); borders are zero-extended."""
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(x**2) / (2.0 * sigma**2))
    kernel /= kernel.sum()
    padded = np.pad(img, ((radius, radius), (0, 0)))
    out = np.zeros_like(img)
    for t in range(2 * radius + 1):
        out += kernel[t] * padded[t : t + img.shape[0], :]
    padded = np.pad(out, ((0, 0), (radius, radius)))
    final = np.zeros_like(img)
    for t in range(2 * radius + 1):
        final += kernel[t] * padded[:, t : t + img.shape[1]]
    return final


def generate_image(spec: ClassSpec, params: GenParams, rng) -> np.ndarray:
    """One synthetic image, (size, size, 1) float32, all values >= 0.

    Pixel i covers an equal slice of [-(1+margin), 1+margin]; points
    landing outside the raster are dropped. The camera jitter is applied
    last, zero-filling exposed borders.
    """
    size = params.image_size
    img = np.full((size, size), rng.exponential(1.0 / params.background_rate))
    theta = rng.uniform(0.0, 2.0 * math.pi)
    points, intensities = sample_point_cloud(spec, params, theta, rng)

    half = 1.0 + params.margin
    scale = size / (2.0 * half)
    if len(points):
        ij = np.floor((points + half) * scale).astype(np.int64)
        ok = (ij >= 0).all(axis=1) & (ij < size).all(axis=1)
        # later points overwrite earlier ones at the same pixel
        for (i, j), val in zip(ij[ok], intensities[ok]):
            img[i, j] = val

    img = gaussian_blur(img, params.psf_sigma)
    img += rng.exponential(1.0 / params.pixel_noise_rate, size=img.shape)
    if params.max_jitter > 0:
        dx, dy = rng.integers(-params.max_jitter, params.max_jitter + 1, size=2)
        shifted = np.zeros_like(img)
        xs = slice(max(0, dx), size + min(0, dx))
        ys = slice(max(0, dy), size + min(0, dy))
        xs_src = slice(max(0, -dx), size + min(0, -dx))
        ys_src = slice(max(0, -dy), size + min(0, -dy))
        shifted[xs, ys] = img[xs_src, ys_src]
        img = shifted
    return img.astype(np.float32)[:, :, None]


def spec_digest(specs: list[ClassSpec]) -> str:
    payload = json.dumps([s.to_dict() for s in specs], sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def generate_dataset(specs: list[ClassSpec], params: GenParams, per_class: int, seed: int):
    """per_class images for every class, with a manifest.

    Image i of class k uses its own generator spawned deterministically
    from the root seed, so generation is reproducible and could be
    parallelized per image without changing the output.
    """
    if per_class < 1:
        raise ValueError("need at least one example per class")
    n_total = per_class * len(specs)
    children = np.random.SeedSequence(seed).spawn(n_total)
    images = np.empty((n_total, params.image_size, params.image_size, 1), dtype=np.float32)
    labels = np.empty(n_total, dtype=np.int64)
    idx = 0
    for k, spec in enumerate(specs):
        for _ in range(per_class):
            rng = np.random.Generator(np.random.PCG64(children[idx]))
            images[idx] = generate_image(spec, params, rng)
            labels[idx] = k
            idx += 1
    manifest = {
        "seed": seed,
        "per_class": per_class,
        "classes": len(specs),
        "params": params.to_dict(),
        "class_specs": [s.to_dict() for s in specs],
        "spec_digest": spec_digest(specs),
    }
    return images, labels, manifest

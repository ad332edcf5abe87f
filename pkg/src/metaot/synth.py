"""Task families and synthetic data: weight samplers, rasters, color images, Gaussians."""
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .dataio import DensityRaster, image_to_color_samples, sample_sphere
from .discrete import MetaTaskSpec
from .errors import DimensionError, InvalidParameter, InvalidWeights
from .hyper import color_histogram
from .measures import grid_points, spherical_cost, squared_euclidean_cost

IMAGE_FLOOR = 1e-3


# Discrete weight samplers

def dirichlet_sampler(m, n, concentration=1.0):
    if concentration <= 0:
        raise InvalidParameter("concentration must be positive")

    def sample(rng, batch):
        a = rng.dirichlet(np.full(m, concentration), batch)
        b = rng.dirichlet(np.full(n, concentration), batch)
        # Dirichlet draws can underflow to exact zeros for small concentrations
        a = np.maximum(a, 1e-300)
        b = np.maximum(b, 1e-300)
        return a / a.sum(1, keepdims=True), b / b.sum(1, keepdims=True)

    return sample


def dirichlet_task(grid=12, epsilon=1e-2, concentration=1.0):
    """Dirichlet weight pairs on a fixed ``grid x grid`` pixel lattice."""
    X = grid_points(grid, grid)
    m = len(X)
    return MetaTaskSpec(squared_euclidean_cost(X, X), epsilon,
                        dirichlet_sampler(m, m, concentration), "dirichlet", X, X)


def image_weights(images, floor=IMAGE_FLOOR):
    """Flattened images as strictly positive weights: ``(img / sum + floor) / (1 + floor m)``.

    The floor keeps every pixel an atom so the support is fixed across images.
    """
    imgs = np.asarray(images, dtype=np.float64)
    imgs = imgs.reshape(len(imgs), -1)
    if np.any(imgs < 0) or not np.all(np.isfinite(imgs)):
        raise InvalidWeights("images must be finite and nonnegative")
    totals = imgs.sum(1, keepdims=True)
    if np.any(totals <= 0):
        raise InvalidWeights("an image has no mass")
    m = imgs.shape[1]
    return (imgs / totals + floor) / (1.0 + floor * m)


def image_pair_sampler(weights):
    """Uniformly random ordered pairs of distinct rows of ``weights``."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(weights) < 2:
        raise InvalidParameter("need at least two images")

    def sample(rng, batch):
        i = rng.integers(0, len(weights), size=batch)
        j = (i + rng.integers(1, len(weights), size=batch)) % len(weights)
        return weights[i], weights[j]

    return sample


def image_task(images, epsilon=1e-2, floor=IMAGE_FLOOR):
    """Pairs of images of one shape on their shared pixel grid."""
    images = np.asarray(images)
    if images.ndim != 3:
        raise DimensionError("images must be a (count, height, width) stack")
    X = grid_points(*images.shape[1:])
    weights = image_weights(images, floor)
    return MetaTaskSpec(squared_euclidean_cost(X, X), epsilon,
                        image_pair_sampler(weights), "mnist", X, X)


def snap_sampler(support, raster, draws, pseudo_count=0.5):
    """Weights from fresh raster draws snapped to the nearest support atom.

    Each instance samples ``draws`` locations, counts how many land nearest
    each atom and smooths the counts by ``pseudo_count``.
    """
    support = np.asarray(support, dtype=np.float64)
    m = len(support)

    # on the unit sphere the nearest atom by chord length has the largest dot product
    tree = cKDTree(support)

    def sample(rng, batch):
        pts, _ = sample_sphere(raster, batch * draws, rng)
        nearest = tree.query(pts)[1] + m * np.repeat(np.arange(batch), draws)
        counts = np.bincount(nearest, minlength=batch * m).reshape(batch, m) + pseudo_count
        return counts / counts.sum(axis=1, keepdims=True)

    return sample


def sphere_task(supply_raster, demand_raster, rng, n_supply=200, n_demand=200,
                epsilon=0.1, draws=None, pseudo_count=0.5):
    """Supply and demand on fixed sampled sphere supports with varying quantities."""
    X, _ = sample_sphere(supply_raster, n_supply, rng)
    Y, _ = sample_sphere(demand_raster, n_demand, rng)
    sa = snap_sampler(X, supply_raster, draws or n_supply, pseudo_count)
    sb = snap_sampler(Y, demand_raster, draws or n_demand, pseudo_count)

    def sample(rng_, batch):
        return sa(rng_, batch), sb(rng_, batch)

    return MetaTaskSpec(spherical_cost(X, Y), epsilon, sample, "sphere", X, Y)


# Rasters

def uniform_raster(h=90, w=180):
    return DensityRaster(np.ones((h, w)))


def blob_raster(rng, h=90, w=180, blobs=6, width_deg=15.0, floor=0.0):
    """Sum of Gaussian bumps in (lat, lon); a stand-in for a population map."""
    lat = np.linspace(90, -90, h, endpoint=False) - 90.0 / h
    lon = np.linspace(-180, 180, w, endpoint=False) + 180.0 / w
    LAT, LON = np.meshgrid(lat, lon, indexing="ij")
    grid = np.full((h, w), float(floor))
    for _ in range(blobs):
        c_lat = np.degrees(np.arcsin(rng.uniform(-0.9, 0.9)))
        c_lon = rng.uniform(-180, 180)
        dlon = (LON - c_lon + 180) % 360 - 180
        grid += rng.uniform(0.5, 1.5) * np.exp(
            -((LAT - c_lat) ** 2 + (dlon * np.cos(np.radians(LAT))) ** 2) / (2 * width_deg ** 2))
    return DensityRaster(grid)


# Color images

def procedural_image(rng, h=32, w=32, noise=0.02):
    """RGB image in [0, 1] whose colors mix a random three-color palette.

    Mixing weights come from smooth random fields, so the color distribution
    is a curved two-dimensional sheet inside the palette triangle.
    """
    palette = rng.uniform(0.05, 0.95, size=(3, 3))
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    fields = []
    for _ in range(2):
        freq = rng.uniform(1.0, 4.0, size=2)
        phase = rng.uniform(0, 2 * np.pi, size=2)
        fields.append(0.5 + 0.5 * np.sin(2 * np.pi * freq[0] * xx + phase[0])
                      * np.cos(2 * np.pi * freq[1] * yy + phase[1]))
    u, v = fields
    mix = np.stack([u * v, u * (1 - v), 1 - u], axis=-1)
    img = mix @ palette + noise * rng.standard_normal((h, w, 3))
    return np.clip(img, 0.0, 1.0)


@dataclass(eq=False)
class ColorTask:
    """Transport between the color distributions of two RGB images in [0, 1]."""

    image_a: np.ndarray
    image_b: np.ndarray
    bins: int = 16
    joint: bool = False
    summary_a: np.ndarray = field(init=False, repr=False)
    summary_b: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.image_a = _as_unit_rgb(self.image_a)
        self.image_b = _as_unit_rgb(self.image_b)
        self.summary_a = color_histogram(self.image_a, self.bins, self.joint)
        self.summary_b = color_histogram(self.image_b, self.bins, self.joint)

    def sample_a(self, rng, n):
        return image_to_color_samples(self.image_a, n, rng)

    def sample_b(self, rng, n):
        return image_to_color_samples(self.image_b, n, rng)


def _as_unit_rgb(image):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise DimensionError("color images must be (h, w, 3)")
    if image.dtype == np.uint8:
        return image.astype(np.float64) / 255.0
    return np.clip(image.astype(np.float64), 0.0, 1.0)


def ordered_pairs(images, bins=16, joint=False):
    return [ColorTask(images[i], images[j], bins, joint)
            for i in range(len(images)) for j in range(len(images)) if i != j]


def task_pool_sampler(tasks):
    """``sample_tasks(rng, k)`` drawing uniformly with replacement from a fixed pool."""
    tasks = list(tasks)
    if not tasks:
        raise InvalidParameter("task pool is empty")

    def sample(rng, k):
        return [tasks[i] for i in rng.integers(0, len(tasks), size=k)]

    return sample


# Gaussians

@dataclass(frozen=True)
class DiagonalGaussian:
    mean: np.ndarray
    std: np.ndarray

    def sample(self, rng, n):
        mean = np.asarray(self.mean, dtype=np.float64)
        return mean + np.asarray(self.std) * rng.standard_normal((n, len(mean)))


def gaussian_brenier(source, target, x):
    """Optimal map between diagonal Gaussians: per-axis affine rescaling."""
    scale = np.asarray(target.std) / np.asarray(source.std)
    return np.asarray(target.mean) + scale * (np.asarray(x) - np.asarray(source.mean))

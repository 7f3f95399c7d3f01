import math

import numpy as np

from scipy import ndimage
from skimage.transform import downscale_local_mean

from raster.containers import check_rgb_tile
from utility.errors import ConfigError


def gaussian_radius(sigma: float) -> int:
    return int(math.ceil(3 * sigma))


def gaussian_smooth(img: np.ndarray,
                    sigma: float) -> np.ndarray:
    """Separable Gaussian blur of each channel, kernel radius ceil(3 sigma), reflected edges.
    :param img: (height, width, 3) uint8 tile
    :param sigma: standard deviation in pixels, > 0
    :return
        (height, width, 3) uint8 tile
    """
    if not sigma > 0:
        raise ConfigError(f"gaussian sigma has to be > 0, got {sigma}")
    img = check_rgb_tile(img)
    radius = gaussian_radius(sigma)
    smoothed = ndimage.gaussian_filter(img.astype(np.float64),
                                       sigma=(sigma, sigma, 0),
                                       radius=(radius, radius, 0),
                                       mode="reflect")
    return np.clip(np.rint(smoothed), 0, 255).astype(np.uint8)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Rounded mean of R, G and B.
    :param img: (..., 3) uint8 pixels
    :return
        (...) uint8 raster
    """
    total = np.asarray(img, dtype=np.int64).sum(axis=-1)
    return ((total + 1) // 3).astype(np.uint8)


def otsu_threshold(gray: np.ndarray) -> int:
    """Threshold t maximising the between-class variance of {<= t} vs {> t} over the 256-bin
    histogram. Maxima are compared exactly in integer arithmetic; the smallest maximiser wins,
    a uniform raster returns its value.
    :param gray: non-empty raster of values 0..255
    :return
        threshold 0..255
    """
    gray = np.asarray(gray)
    if gray.size == 0:
        raise ConfigError("otsu_threshold needs a non-empty raster")
    histogram = np.bincount(gray.ravel().astype(np.int64), minlength=256)[:256]
    present = np.flatnonzero(histogram)
    if present.size == 1:
        return int(present[0])

    weights = np.cumsum(histogram).tolist()
    sums = np.cumsum(histogram * np.arange(256, dtype=np.int64)).tolist()
    n, total = weights[-1], sums[-1]
    best_t, best_num, best_den = 0, 0, 1
    for t in range(256):
        w0 = weights[t]
        if w0 == 0 or w0 == n:
            continue
        num = (n * sums[t] - w0 * total) ** 2
        den = w0 * (n - w0)
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def background_mask(img: np.ndarray,
                    sigma: float,
                    threshold: int | None = None) -> tuple[np.ndarray, int]:
    """Bright glass of an H&E tile: grayscale of the smoothed tile above the Otsu threshold.
    :param img: (height, width, 3) uint8 tile
    :param sigma: gaussian sigma in pixels
    :param threshold: precomputed threshold, Otsu of the tile if None
    :return
        (background mask, threshold used)
    """
    gray = to_grayscale(gaussian_smooth(img, sigma))
    if threshold is None:
        threshold = otsu_threshold(gray)
    return gray > threshold, int(threshold)


def downscale(raster: np.ndarray,
              factor: int) -> np.ndarray:
    """Block-mean downscaling of an image (factor 1 returns the input). Height and width are cropped
    to multiples of the factor. Integer inputs are rounded back to their dtype.
    :param raster: (height, width) or (height, width, channels) array
    :param factor: integer factor >= 1
    :return
        downscaled raster
    """
    if factor == 1:
        return raster
    if factor < 1:
        raise ConfigError(f"downscale factor has to be >= 1, got {factor}")
    raster = np.asarray(raster)
    h, w = (raster.shape[0] // factor) * factor, (raster.shape[1] // factor) * factor
    cropped = raster[:h, :w]
    factors = (factor, factor) + (1,) * (raster.ndim - 2)
    reduced = downscale_local_mean(cropped, factors)
    if np.issubdtype(raster.dtype, np.integer):
        return np.rint(reduced).astype(raster.dtype)
    return reduced.astype(raster.dtype)


def downscale_labels(labels: np.ndarray,
                     factor: int) -> np.ndarray:
    """Nearest (top-left of each block) downscaling for label and instance rasters."""
    if factor == 1:
        return labels
    h, w = (labels.shape[0] // factor) * factor, (labels.shape[1] // factor) * factor
    return np.ascontiguousarray(labels[:h:factor, :w:factor])

import numpy as np

from dataclasses import dataclass
from scipy import ndimage

from raster.containers import InstanceMap
from utility.errors import ConfigError


def connectivity_structure(connectivity: int) -> np.ndarray:
    if connectivity == 4:
        return ndimage.generate_binary_structure(2, 1)
    if connectivity == 8:
        return ndimage.generate_binary_structure(2, 2)
    raise ConfigError(f"connectivity has to be 4 or 8, got {connectivity}")


def label_components(mask: np.ndarray,
                     connectivity: int = 8) -> tuple[np.ndarray, int]:
    """Component labels 1..n in raster-scan order of each component's first pixel.
    :param mask: boolean raster
    :param connectivity: 4 or 8
    :return
        (int64 label raster, number of components)
    """
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=connectivity_structure(connectivity))
    labels = labels.astype(np.int64)
    if n > 1:
        flat = labels.ravel()
        present, first = np.unique(flat, return_index=True)
        order = present[1:][np.argsort(first[1:], kind="stable")] if present[0] == 0 \
            else present[np.argsort(first, kind="stable")]
        remap = np.zeros(n + 1, dtype=np.int64)
        remap[order] = np.arange(1, n + 1)
        labels = remap[labels]
    return labels, int(n)


def connected_components(mask: np.ndarray,
                         connectivity: int = 8) -> InstanceMap:
    """Labels each maximal connected true region of the mask.
    :param mask: boolean raster
    :param connectivity: 4 or 8
    :return
        InstanceMap with pixel_count and centroid per component, no teacher types
    """
    labels, _ = label_components(mask, connectivity)
    return InstanceMap.from_labels(labels)


def count_components(mask: np.ndarray,
                     connectivity: int = 8) -> int:
    _, n = ndimage.label(np.asarray(mask, dtype=bool), structure=connectivity_structure(connectivity))
    return int(n)


@dataclass
class Contour:
    label: int
    points: np.ndarray       # (k, 2) boundary pixels as (row, col)
    area: int                # component pixel count, holes filled


def fill_holes(mask: np.ndarray) -> np.ndarray:
    """Mask with enclosed background regions filled."""
    return ndimage.binary_fill_holes(np.asarray(mask, dtype=bool))


def contours(mask: np.ndarray,
             connectivity: int = 8) -> list[Contour]:
    """Outer contour of every connected component. Points are the component pixels with a
    4-neighbour outside the (hole-filled) component; area counts hole pixels as part of the component.
    :param mask: boolean raster
    :param connectivity: 4 or 8
    :return
        list of Contour objects in component order
    """
    labels, n = label_components(mask, connectivity)
    found = []
    for label, window in enumerate(ndimage.find_objects(labels), start=1):
        if window is None:
            continue
        filled = fill_holes(labels[window] == label)
        eroded = ndimage.binary_erosion(filled, structure=connectivity_structure(4), border_value=0)
        boundary = np.argwhere(filled & ~eroded)
        boundary += np.array([window[0].start, window[1].start])
        found.append(Contour(label=label, points=boundary, area=int(filled.sum())))
    return found


def distance_band(region: np.ndarray,
                  radius_um: float,
                  mpp: float) -> np.ndarray:
    """Pixels outside the region within radius_um of it, by exact Euclidean distance transform.
    :param region: boolean raster
    :param radius_um: band width in microns, > 0
    :param mpp: microns per pixel, > 0
    :return
        boolean band mask
    """
    if not radius_um > 0 or not mpp > 0:
        raise ConfigError(f"distance_band needs radius_um > 0 and mpp > 0, got {radius_um}, {mpp}")
    region = np.asarray(region, dtype=bool)
    if not region.any() or region.all():
        return np.zeros(region.shape, dtype=bool)
    distance = ndimage.distance_transform_edt(~region)
    return ~region & (distance <= radius_um / mpp)

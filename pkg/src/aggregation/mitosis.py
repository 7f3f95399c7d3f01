import logging

import numpy as np

from dataclasses import dataclass

from aggregation.bundle import MitosisCandidate
from raster.containers import InstanceMap, check_rgb_tile, check_same_shape
from raster.filters import otsu_threshold, to_grayscale
from raster.geometry import convex_hull, rasterize_hull
from raster.morphology import contours
from taxonomy.taxonomy import Taxonomy, default_taxonomy
from utility.run_config import RunConfig


logger = logging.getLogger(__name__)


@dataclass
class CandidateReport:
    candidate: MitosisCandidate
    region_id: int
    status: str                     # 'kept' or the reason for discarding
    hulls: int = 0

    def to_dict(self) -> dict:
        return {**self.candidate.to_dict(), "region id": self.region_id, "status": self.status,
                "hulls": self.hulls}


def rank_candidates(candidates: list) -> list[int]:
    """Region id of every candidate: 1 + rank in (y, x, score) order. Independent of list order."""
    order = sorted(range(len(candidates)),
                   key=lambda i: (candidates[i].y, candidates[i].x, candidates[i].score))
    region_ids = [0] * len(candidates)
    for rank, i in enumerate(order):
        region_ids[i] = rank + 1
    return region_ids


def circular_roi(center: tuple,
                 radius: int,
                 extent: tuple) -> tuple[tuple, np.ndarray]:
    """Pixels with dy^2 + dx^2 <= radius^2 around center, clipped to the extent.
    :param center: (row, col)
    :param radius: pixels
    :param extent: (height, width)
    :return
        (bounding box (y0, x0, y1, x1), boolean mask of the box)
    """
    cy, cx = center
    y0, x0 = max(0, cy - radius), max(0, cx - radius)
    y1, x1 = min(extent[0], cy + radius + 1), min(extent[1], cx + radius + 1)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    return (y0, x0, y1, x1), (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2


def is_dark(rgb_sums: np.ndarray,
            config: RunConfig) -> bool:
    """Carbon dust criterion on the RGB sums of a ROI."""
    if config.dark_statistic == "median":
        return float(np.median(rgb_sums)) <= config.dark_sum_threshold
    if config.dark_statistic == "mean":
        return float(np.mean(rgb_sums)) <= config.dark_sum_threshold
    return float(np.mean(rgb_sums <= config.dark_sum_threshold)) >= config.dark_fraction


def candidate_hulls(candidate: MitosisCandidate,
                    he: np.ndarray,
                    tissue: np.ndarray,
                    epithelial_tissue: int,
                    config: RunConfig) -> tuple[list, str]:
    """Hull masks of one candidate that pass every filter.
    :return
        (list of (box, boolean hull mask of the box), status)
    """
    if candidate.score < config.min_score:
        return [], "score below minimum"
    box, roi = circular_roi((candidate.y, candidate.x), config.roi_radius, he.shape[:2])
    y0, x0, y1, x1 = box
    pixels = he[y0:y1, x0:x1]
    if is_dark(pixels[roi].astype(np.int64).sum(axis=1), config):
        return [], "dark"

    gray = to_grayscale(pixels)
    threshold = otsu_threshold(gray[roi])
    if not np.any(gray[roi] > threshold):
        return [], "uniform roi"
    blob = roi & (gray <= threshold)

    hulls = []
    epithelial = tissue[y0:y1, x0:x1] == epithelial_tissue
    for contour in contours(blob, config.connectivity):
        if contour.area < config.min_contour_area:
            continue
        hull = rasterize_hull(convex_hull(contour.points), blob.shape)
        if np.any(hull & epithelial):
            hulls.append((box, hull))
    return hulls, "kept" if hulls else "no epithelial hull"


def detect_mitosis(candidates: list,
                   he: np.ndarray,
                   tissue: np.ndarray,
                   config: RunConfig | None = None,
                   taxonomy: Taxonomy | None = None,
                   region_ids: list | None = None) -> tuple[np.ndarray, list]:
    """Mitosis regions of a tile.

    Per candidate the circular ROI is checked for carbon dust, Otsu-thresholded, and the convex hulls
    of its dark contours (area >= min contour area) overlapping epithelial tissue are kept. Candidates
    are processed in region id order, a pixel keeps the lowest id painted on it.

    :param candidates: list of MitosisCandidate
    :param he: (height, width, 3) uint8 tile
    :param tissue: tissue label raster
    :param config: RunConfig
    :param taxonomy: Taxonomy
    :param region_ids: region id per candidate, rank_candidates(candidates) if None
    :return
        (int32 region raster, 0 = no mitosis; list of CandidateReport)
    """
    config = config or RunConfig()
    taxonomy = taxonomy or default_taxonomy()
    he = check_rgb_tile(he)
    check_same_shape(he.shape[:2], tissue=tissue)
    region_ids = rank_candidates(candidates) if region_ids is None else list(region_ids)
    epithelial_tissue = taxonomy.resolve("epithelial_tissue")

    regions = np.zeros(he.shape[:2], dtype=np.int32)
    reports = []
    for region_id, candidate in sorted(zip(region_ids, candidates), key=lambda pair: pair[0]):
        hulls, status = candidate_hulls(candidate, he, tissue, epithelial_tissue, config)
        for (y0, x0, y1, x1), hull in hulls:
            target = regions[y0:y1, x0:x1]
            target[hull & (target == 0)] = region_id
        reports.append(CandidateReport(candidate, region_id, status, len(hulls)))
        logger.debug(f"Mitosis candidate {candidate} (region {region_id}): {status}")
    return regions, reports


def apply_mitosis(classes: dict,
                  nuclei: InstanceMap,
                  regions: np.ndarray,
                  taxonomy: Taxonomy | None = None) -> tuple[dict, dict]:
    """Every nucleus with at least one pixel in a mitosis region becomes a mitotic cell.
    :param classes: instance id -> class id
    :param nuclei: InstanceMap
    :param regions: mitosis region raster
    :param taxonomy: Taxonomy
    :return
        (updated classes, instance id -> lowest region id it touches)
    """
    taxonomy = taxonomy or default_taxonomy()
    check_same_shape(nuclei.shape, regions=regions)
    mitotic_cell = taxonomy.resolve("mitotic_cell")
    hit = (regions > 0) & (nuclei.ids > 0)
    touched = {}
    for instance_id, region_id in zip(nuclei.ids[hit].tolist(), regions[hit].tolist()):
        touched[instance_id] = min(region_id, touched.get(instance_id, region_id))
    updated = dict(classes)
    for instance_id in touched:
        updated[instance_id] = mitotic_cell
    return updated, touched

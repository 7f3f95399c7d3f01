"""Pixel-by-pixel rendition of the aggregation pipeline, written with plain loops. It shares only the
Gaussian smoothing and the contour tracing with the vectorised pipeline and is used as the ground truth
of synthetic fixtures.
"""
import statistics

import numpy as np

from collections import Counter
from fractions import Fraction

from aggregation.aggregator import AggregationResult
from raster.filters import gaussian_smooth
from raster.morphology import contours
from taxonomy.taxonomy import UNDEFINED


def _gray(pixel) -> int:
    return (int(pixel[0]) + int(pixel[1]) + int(pixel[2]) + 1) // 3


def reference_otsu(values) -> int:
    """Otsu threshold by trying every cut of the gray values; exact fractions, first maximum wins."""
    histogram = Counter(int(v) for v in values)
    if len(histogram) == 1:
        return next(iter(histogram))
    n = sum(histogram.values())
    total = sum(v * c for v, c in histogram.items())
    best_t, best_variance = None, None
    w0 = s0 = 0
    for t in range(256):
        w0 += histogram.get(t, 0)
        s0 += t * histogram.get(t, 0)
        w1 = n - w0
        if w0 == 0 or w1 == 0:
            continue
        variance = w0 * w1 * (Fraction(s0, w0) - Fraction(total - s0, w1)) ** 2
        if best_variance is None or variance > best_variance:
            best_t, best_variance = t, variance
    return best_t


def _cross(o, a, b) -> int:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def reference_hull_mask(points, extent) -> np.ndarray:
    """Pixels inside or on the convex hull of (row, col) points, hull by monotone chain."""
    xy = sorted({(int(c), int(r)) for r, c in points})
    lower, upper = [], []
    for p in xy:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(xy):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1] if len(xy) > 1 else xy

    height, width = extent
    mask = np.zeros((height, width), dtype=bool)
    xs, ys = [x for x, _ in hull], [y for _, y in hull]
    for y in range(max(min(ys), 0), min(max(ys), height - 1) + 1):
        for x in range(max(min(xs), 0), min(max(xs), width - 1) + 1):
            if len(hull) == 1:
                inside = (x, y) == hull[0]
            elif len(hull) == 2:
                inside = _cross(hull[0], hull[1], (x, y)) == 0
            else:
                inside = all(_cross(hull[i], hull[(i + 1) % len(hull)], (x, y)) >= 0 for i in range(len(hull)))
            mask[y, x] = inside
    return mask


def reference_tissue(bundle, config, taxonomy) -> tuple:
    smoothed = gaussian_smooth(bundle.he, config.gaussian_sigma)
    height, width = bundle.shape
    gray = [[_gray(smoothed[y, x]) for x in range(width)] for y in range(height)]
    threshold = config.otsu_threshold
    if threshold is None:
        threshold = reference_otsu(v for row in gray for v in row)

    sm = bundle.tissue_logits.plane("smooth_muscle")
    epi = bundle.tissue_logits.plane("epithelial_tissue")
    rbc = bundle.tissue_logits.plane("red_blood_cell")
    labels = np.zeros((height, width), dtype=np.uint8)
    for y in range(height):
        for x in range(width):
            if gray[y][x] > threshold:
                label = "background"
            elif rbc[y, x] > 0:
                label = "red_blood_cell"
            elif max(sm[y, x], epi[y, x]) > 0:
                label = "smooth_muscle" if sm[y, x] >= epi[y, x] else "epithelial_tissue"
            else:
                label = "stroma"
            labels[y, x] = taxonomy.resolve(label)
    return labels, threshold


def reference_pixel_class(logits, y, x, taxonomy) -> int:
    assignment = UNDEFINED
    for level in taxonomy.hierarchy.levels:
        best_class, best_value = None, None
        for class_id in level:
            value = float(logits.plane(taxonomy.name_of(class_id))[y, x])
            if best_value is None or value > best_value:
                best_class, best_value = class_id, value
        if best_value > 0:
            assignment = best_class
    return assignment


def reference_vote(pixel_classes: list) -> int:
    votes = Counter(pixel_classes)
    undefined = votes.pop(UNDEFINED, 0)
    if not votes:
        return UNDEFINED
    top = max(votes.values())
    if undefined > top:
        return UNDEFINED
    return min(c for c, n in votes.items() if n == top)


def reference_mitosis(bundle, tissue, config, taxonomy) -> np.ndarray:
    height, width = bundle.shape
    epithelial = taxonomy.resolve("epithelial_tissue")
    regions = np.zeros((height, width), dtype=np.int32)
    ranked = sorted(bundle.mitosis_candidates, key=lambda c: (c.y, c.x, c.score))
    radius = config.roi_radius
    for rank, candidate in enumerate(ranked):
        region_id = rank + 1
        if candidate.score < config.min_score:
            continue
        roi = [(y, x) for y in range(height) for x in range(width)
               if (y - candidate.y) ** 2 + (x - candidate.x) ** 2 <= radius ** 2]
        sums = [int(bundle.he[y, x].astype(np.int64).sum()) for y, x in roi]
        if config.dark_statistic == "median":
            dark = statistics.median(sums) <= config.dark_sum_threshold
        elif config.dark_statistic == "mean":
            dark = statistics.mean(sums) <= config.dark_sum_threshold
        else:
            dark = sum(s <= config.dark_sum_threshold for s in sums) / len(sums) >= config.dark_fraction
        if dark:
            continue
        grays = {(y, x): _gray(bundle.he[y, x]) for y, x in roi}
        threshold = reference_otsu(grays.values())
        if all(g <= threshold for g in grays.values()):
            continue
        blob = np.zeros((height, width), dtype=bool)
        for (y, x), g in grays.items():
            blob[y, x] = g <= threshold
        for contour in contours(blob, config.connectivity):
            if contour.area < config.min_contour_area:
                continue
            hull = reference_hull_mask(contour.points, (height, width))
            if not any(tissue[y, x] == epithelial for y, x in zip(*np.nonzero(hull))):
                continue
            for y, x in zip(*np.nonzero(hull)):
                if regions[y, x] == 0:
                    regions[y, x] = region_id
    return regions


def reference_aggregate(bundle, config, taxonomy) -> AggregationResult:
    """Ground truth of a bundle.
    :param bundle: TeacherBundle without halo
    :param config: RunConfig
    :param taxonomy: Taxonomy
    :return
        AggregationResult with semantic raster, classes, mitosis regions and tissue labels
    """
    height, width = bundle.shape
    tissue, threshold = reference_tissue(bundle, config, taxonomy)

    pixels = {}
    for y in range(height):
        for x in range(width):
            instance_id = int(bundle.nuclei.ids[y, x])
            if instance_id:
                pixels.setdefault(instance_id, []).append((y, x))

    classes = {}
    for instance_id, members in pixels.items():
        votes = [reference_pixel_class(bundle.cell_logits, y, x, taxonomy) for y, x in members]
        class_id = reference_vote(votes)
        if class_id == taxonomy.resolve("epithelial_tissue"):
            class_id = taxonomy.resolve("epithelial_cell_nucleus")
        elif class_id == UNDEFINED:
            on_epithelium = sum(tissue[y, x] == taxonomy.resolve("epithelial_tissue") for y, x in members)
            on_stroma = sum(tissue[y, x] == taxonomy.resolve("stroma") for y, x in members)
            if on_epithelium / len(members) > config.epithelial_fraction:
                class_id = taxonomy.resolve("epithelial_cell_nucleus")
            elif on_stroma / len(members) > config.stroma_fraction \
                    and bundle.nuclei.attrs[instance_id].teacher_type == "connective":
                class_id = taxonomy.resolve("fibroblast")
        classes[instance_id] = class_id

    regions = reference_mitosis(bundle, tissue, config, taxonomy)
    for instance_id, members in pixels.items():
        if any(regions[y, x] > 0 for y, x in members):
            classes[instance_id] = taxonomy.resolve("mitotic_cell")

    semantic = tissue.copy()
    for instance_id, members in pixels.items():
        if classes[instance_id] != UNDEFINED:
            for y, x in members:
                semantic[y, x] = classes[instance_id]
    return AggregationResult(semantic=semantic, instances=bundle.nuclei, classes=classes, mitosis_regions=regions,
                             tissue=tissue, background_threshold=int(threshold))

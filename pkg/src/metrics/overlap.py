import numpy as np

from raster.containers import check_same_shape
from taxonomy.taxonomy import Taxonomy, default_taxonomy


def _intersection_sizes(x: np.ndarray,
                        y: np.ndarray) -> tuple[int, int, int]:
    x = np.asarray(x, dtype=bool)
    y = np.asarray(y, dtype=bool)
    check_same_shape(x.shape, y=y)
    return int(np.count_nonzero(x & y)), int(np.count_nonzero(x)), int(np.count_nonzero(y))


def dice(x: np.ndarray,
         y: np.ndarray) -> float:
    """2 |X n Y| / (|X| + |Y|), 1.0 when both masks are empty."""
    both, nx, ny = _intersection_sizes(x, y)
    if nx + ny == 0:
        return 1.0
    return 2 * both / (nx + ny)


def iou(x: np.ndarray,
        y: np.ndarray) -> float:
    """|X n Y| / |X u Y|, 1.0 when both masks are empty."""
    both, nx, ny = _intersection_sizes(x, y)
    union = nx + ny - both
    if union == 0:
        return 1.0
    return both / union


def evaluate_semantic(gt: np.ndarray,
                      pred: np.ndarray,
                      classes=None,
                      taxonomy: Taxonomy | None = None) -> dict:
    """Per-class Dice and IoU of two label rasters.
    :param gt: ground truth label raster
    :param pred: predicted label raster
    :param classes: class names or ids to evaluate, every class of the taxonomy if None
    :param taxonomy: Taxonomy
    :return
        class name -> {"dice", "iou", "gt pixels", "pred pixels"}
    """
    taxonomy = taxonomy or default_taxonomy()
    check_same_shape(np.shape(gt), pred=pred)
    class_ids = range(len(taxonomy)) if classes is None else taxonomy.resolve_all(classes)
    table = {}
    for c in class_ids:
        x, y = gt == c, pred == c
        table[taxonomy.name_of(c)] = {"dice": dice(x, y),
                                      "iou": iou(x, y),
                                      "gt pixels": int(np.count_nonzero(x)),
                                      "pred pixels": int(np.count_nonzero(y))}
    return table

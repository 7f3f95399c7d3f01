import json
import logging

import numpy as np

from dataclasses import dataclass
from pathlib import Path

from raster.morphology import count_components
from taxonomy.taxonomy import Taxonomy, default_taxonomy
from utility.errors import ConfigError, DegenerateInputError


logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"


@dataclass
class CountRecord:
    class_id: int
    pixel_area: int
    component_count: int
    mean_area_per_cell: float | None = None

    @property
    def estimated_count(self) -> float | None:
        if self.mean_area_per_cell is None:
            return None
        return self.pixel_area / self.mean_area_per_cell

    def to_dict(self, taxonomy: Taxonomy) -> dict:
        return {"class": taxonomy.name_of(self.class_id),
                "pixel area": self.pixel_area,
                "component count": self.component_count,
                "mean area per cell": self.mean_area_per_cell,
                "estimated count": self.estimated_count}


@dataclass(frozen=True)
class Calibration:
    slope: float            # mean area per cell [px]
    r_squared: float
    n: int

    def to_dict(self) -> dict:
        return {"slope": self.slope, "r squared": self.r_squared, "n": self.n}


def count_by_components(mask: np.ndarray,
                        class_id: int,
                        connectivity: int = 8) -> int:
    """Number of connected regions of one class; touching cells merge into one region."""
    return count_components(np.asarray(mask) == class_id, connectivity)


def estimate_count_by_area(mask: np.ndarray,
                           class_id: int,
                           mean_area: float) -> float:
    """Pixel area of a class divided by the mean area per cell.
    :param mask: label raster
    :param class_id: class to count
    :param mean_area: pixels per cell, > 0
    :return
        estimated number of cells
    """
    if not mean_area > 0:
        raise DegenerateInputError(f"mean area per cell has to be > 0, got {mean_area}")
    return int(np.count_nonzero(np.asarray(mask) == class_id)) / mean_area


def calibrate(pairs) -> Calibration:
    """Least-squares fit count = area / slope through the origin.

    r squared refers to the through-origin model: 1 - SS_res / sum(count^2).

    :param pairs: iterable of (pixel_area, reference_count)
    :return
        Calibration
    """
    pairs = np.asarray(list(pairs), dtype=np.float64).reshape(-1, 2)
    if len(pairs) < 2:
        raise DegenerateInputError(f"calibration needs at least 2 pairs, got {len(pairs)}")
    areas, counts = pairs[:, 0], pairs[:, 1]
    if np.any(areas < 0) or np.any(counts < 0):
        raise DegenerateInputError("areas and counts have to be non-negative")
    if not np.any(areas > 0):
        raise DegenerateInputError("all calibration areas are zero")
    if not np.any(counts > 0):
        raise DegenerateInputError("all reference counts are zero")
    k = float(np.dot(areas, counts) / np.dot(areas, areas))
    residual = float(np.sum((counts - k * areas) ** 2))
    return Calibration(slope=1.0 / k, r_squared=1.0 - residual / float(np.dot(counts, counts)), n=len(pairs))


def count_records(mask: np.ndarray,
                  classes=None,
                  calibration: dict | None = None,
                  connectivity: int = 8,
                  taxonomy: Taxonomy | None = None) -> list[CountRecord]:
    """Area and component count per class, with the calibrated mean area when available.
    :param mask: label raster
    :param classes: class names or ids, nucleus classes of the taxonomy if None
    :param calibration: class id -> mean area per cell
    :param connectivity: 4 or 8
    :param taxonomy: Taxonomy
    :return
        list of CountRecord
    """
    taxonomy = taxonomy or default_taxonomy()
    class_ids = taxonomy.nucleus_classes() if classes is None else taxonomy.resolve_all(classes)
    calibration = calibration or {}
    areas = np.bincount(np.asarray(mask).ravel().astype(np.int64), minlength=len(taxonomy))
    return [CountRecord(class_id=c,
                        pixel_area=int(areas[c]),
                        component_count=count_by_components(mask, c, connectivity),
                        mean_area_per_cell=calibration.get(c)) for c in class_ids]


def calibration_pairs(semantic_masks: list,
                      nucleus_classes: list,
                      class_ids: list) -> dict:
    """(pixel area in the semantic output, nucleus count in the nucleus-level output) per tile.
    :param semantic_masks: label rasters of the semantic-only model, one per tile
    :param nucleus_classes: instance id -> class id dictionaries of the nucleus-level model, same tiles
    :param class_ids: classes to pair
    :return
        class id -> list of (area, count)
    """
    if len(semantic_masks) != len(nucleus_classes):
        raise DegenerateInputError(f"{len(semantic_masks)} masks but {len(nucleus_classes)} nucleus tables")
    pairs = {c: [] for c in class_ids}
    for mask, classes in zip(semantic_masks, nucleus_classes):
        assigned = np.array(list(classes.values()), dtype=np.int64)
        for c in class_ids:
            pairs[c].append((int(np.count_nonzero(np.asarray(mask) == c)), int(np.sum(assigned == c))))
    return pairs


class CalibrationTable:
    def __init__(self,
                 entries: dict | None = None):
        """Calibrations keyed by dataset id and class name.
        :param entries: {dataset: {class name: Calibration}}
        """
        self.entries = entries or {}

    def add(self,
            dataset: str,
            class_name: str,
            calibration: Calibration) -> None:
        self.entries.setdefault(dataset, {})[class_name] = calibration

    def mean_areas(self,
                   dataset: str,
                   taxonomy: Taxonomy | None = None) -> dict:
        """class id -> mean area per cell of one dataset."""
        taxonomy = taxonomy or default_taxonomy()
        if dataset not in self.entries:
            raise ConfigError(f"no calibration for dataset {dataset!r}, available: {sorted(self.entries)}")
        return {taxonomy.resolve(name): c.slope for name, c in self.entries[dataset].items()}

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION,
                "datasets": {d: {name: c.to_dict() for name, c in classes.items()}
                             for d, classes in self.entries.items()}}

    def save(self,
             path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
        logger.info(f"Calibration table written to {path}")
        return path

    @classmethod
    def load(cls, path):
        try:
            with open(path, "r") as f:
                document = json.load(f)
            entries = {d: {name: Calibration(slope=c["slope"], r_squared=c["r squared"], n=c["n"])
                           for name, c in classes.items()}
                       for d, classes in document["datasets"].items()}
        except (OSError, json.JSONDecodeError, KeyError) as error:
            raise ConfigError(f"cannot read calibration table {path}: {error}") from error
        return cls(entries)

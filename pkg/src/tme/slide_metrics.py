import numpy as np

from dataclasses import dataclass, field
from scipy import ndimage

from raster.morphology import connected_components, connectivity_structure, count_components, \
    distance_band, fill_holes
from taxonomy.taxonomy import Taxonomy, default_taxonomy
from utility.errors import ConfigError


METRIC_CLASSES = ("fibroblast", "endothelial", "lymphocyte", "plasma_cell", "myeloid_cell", "neutrophil",
                  "eosinophil", "mitotic_cell")
ALL_LEUKOCYTES = "all_leukocytes"


@dataclass
class SlideMetrics:
    mpp: float
    margin_um: float
    tumor_cell_count: int
    band_area_px: int
    band_area_mm2: float
    counts: dict = field(default_factory=dict)              # whole-slide components per metric class
    peripheral_counts: dict = field(default_factory=dict)   # components with centroid in the band
    in_tumor_ratio: dict = field(default_factory=dict)      # None when there are no tumor cells
    peripheral_ratio: dict = field(default_factory=dict)    # density per mm2 / tumor cells

    def flat(self) -> dict:
        """Metric name -> value, the columns of the association analysis."""
        values = {}
        for name, ratio in self.in_tumor_ratio.items():
            values[f"{name} in tumor"] = ratio
        for name, ratio in self.peripheral_ratio.items():
            values[f"{name} in peripheral"] = ratio
        return values

    def to_dict(self) -> dict:
        return {"mpp": self.mpp,
                "margin um": self.margin_um,
                "tumor cell count": self.tumor_cell_count,
                "band area px": self.band_area_px,
                "band area mm2": self.band_area_mm2,
                "counts": self.counts,
                "peripheral counts": self.peripheral_counts,
                "in tumor ratio": self.in_tumor_ratio,
                "peripheral ratio": self.peripheral_ratio}


def tumor_region(mask: np.ndarray,
                 taxonomy: Taxonomy | None = None) -> np.ndarray:
    """Epithelial tissue and epithelial cell nuclei, with enclosed holes filled when they consist of
    nucleus pixels only. Holes holding stroma or background (lumina) stay outside.
    """
    taxonomy = taxonomy or default_taxonomy()
    mask = np.asarray(mask)
    region = (mask == taxonomy.resolve("epithelial_tissue")) | (mask == taxonomy.resolve("epithelial_cell_nucleus"))
    holes = fill_holes(region) & ~region
    if not holes.any():
        return region
    labels, n = ndimage.label(holes, structure=connectivity_structure(4))
    non_nucleus = ~np.isin(mask, taxonomy.nucleus_classes())
    impure = np.unique(labels[holes & non_nucleus])
    keep = np.ones(n + 1, dtype=bool)
    keep[impure] = False
    keep[0] = False
    return region | keep[labels]


def slide_metrics(mask: np.ndarray,
                  mpp: float,
                  margin_um: float = 50.0,
                  connectivity: int = 8,
                  taxonomy: Taxonomy | None = None) -> SlideMetrics:
    """Cell-type ratios of a slide label raster.

    Counts are connected regions per class. Every epithelial cell nucleus counts as a tumor cell.
    'in tumor' divides a class' whole-slide count by the tumor cell count, 'in peripheral' divides
    its density in the band of margin_um around the tumor region (regions per mm2 of band, by
    rounded centroid) by the tumor cell count.

    :param mask: label raster of a slide
    :param mpp: microns per pixel
    :param margin_um: width of the band in microns
    :param connectivity: 4 or 8
    :param taxonomy: Taxonomy
    :return
        SlideMetrics
    """
    if mpp is None or not mpp > 0:
        raise ConfigError(f"slide metrics need mpp > 0, got {mpp}")
    taxonomy = taxonomy or default_taxonomy()
    mask = np.asarray(mask)

    region = tumor_region(mask, taxonomy)
    tumor_cells = count_components(mask == taxonomy.resolve("epithelial_cell_nucleus"), connectivity)
    band = distance_band(region, margin_um, mpp)
    band_px = int(np.count_nonzero(band))
    band_mm2 = band_px * mpp ** 2 / 1e6

    counts, peripheral = {}, {}
    leukocyte_classes = [taxonomy.resolve("leukocyte")] + sorted(taxonomy.leukocyte_subtypes)
    for class_id in sorted(set(taxonomy.resolve_all(METRIC_CLASSES)) | set(leukocyte_classes)):
        components = connected_components(mask == class_id, connectivity)
        centroids = np.array([a.centroid for a in components.attrs.values()]).reshape(-1, 2)
        rows, cols = np.rint(centroids).astype(np.int64).T
        counts[class_id] = len(components)
        peripheral[class_id] = int(np.count_nonzero(band[rows, cols])) if len(components) else 0

    names = list(METRIC_CLASSES) + [ALL_LEUKOCYTES]
    count_of = {n: counts[taxonomy.resolve(n)] for n in METRIC_CLASSES}
    count_of[ALL_LEUKOCYTES] = sum(counts[c] for c in leukocyte_classes)
    peripheral_of = {n: peripheral[taxonomy.resolve(n)] for n in METRIC_CLASSES}
    peripheral_of[ALL_LEUKOCYTES] = sum(peripheral[c] for c in leukocyte_classes)

    in_tumor, in_peripheral = {}, {}
    for name in names:
        in_tumor[name] = count_of[name] / tumor_cells if tumor_cells else None
        if tumor_cells and band_px:
            in_peripheral[name] = peripheral_of[name] / band_mm2 / tumor_cells
        else:
            in_peripheral[name] = None
    return SlideMetrics(mpp=mpp, margin_um=margin_um, tumor_cell_count=tumor_cells, band_area_px=band_px,
                        band_area_mm2=band_mm2, counts=count_of, peripheral_counts=peripheral_of,
                        in_tumor_ratio=in_tumor, peripheral_ratio=in_peripheral)

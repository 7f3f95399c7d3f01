import numpy as np

from aggregation.bundle import TeacherBundle
from raster.filters import background_mask
from taxonomy.taxonomy import Taxonomy, default_taxonomy
from utility.run_config import RunConfig


def tissue_segmentation(bundle: TeacherBundle,
                        config: RunConfig | None = None,
                        taxonomy: Taxonomy | None = None) -> tuple[np.ndarray, int]:
    """Tissue-level label raster of a bundle.

    Background is the Otsu split of the smoothed H&E. On the remaining pixels smooth muscle and
    epithelial tissue are set where their logit is positive, the larger logit winning contested
    pixels (ties to the lower class id). Red blood cell positives are overlaid last and everything
    left is stroma.

    :param bundle: TeacherBundle
    :param config: RunConfig, defaults if None
    :param taxonomy: Taxonomy, the embedded one if None
    :return
        (uint8 label raster over {background, stroma, smooth_muscle, epithelial_tissue, red_blood_cell},
         background threshold used)
    """
    config = config or RunConfig()
    taxonomy = taxonomy or default_taxonomy()
    background, threshold = background_mask(bundle.he, config.gaussian_sigma, config.otsu_threshold)

    contested = sorted(taxonomy.resolve_all(["smooth_muscle", "epithelial_tissue"]))
    planes = bundle.tissue_logits.select([taxonomy.name_of(c) for c in contested])
    winner = np.argmax(planes, axis=0)
    best = np.take_along_axis(planes, winner[None], axis=0)[0]

    labels = np.full(bundle.shape, taxonomy.resolve("stroma"), dtype=np.uint8)
    positive = best > 0
    labels[positive] = np.asarray(contested, dtype=np.uint8)[winner[positive]]
    labels[bundle.tissue_logits.plane("red_blood_cell") > 0] = taxonomy.resolve("red_blood_cell")
    labels[background] = taxonomy.resolve("background")
    return labels, threshold

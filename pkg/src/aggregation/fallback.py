import numpy as np

from raster.containers import InstanceMap, check_same_shape
from taxonomy.taxonomy import UNDEFINED, Taxonomy, default_taxonomy
from utility.run_config import RunConfig


def tissue_fractions(nuclei: InstanceMap,
                     tissue: np.ndarray,
                     n_classes: int) -> dict:
    """Fraction of each nucleus' pixels per tissue label.
    :return
        instance id -> (n_classes,) float array
    """
    ids = nuclei.ids.astype(np.int64)
    inside = ids > 0
    instance_ids = np.array(nuclei.instance_ids(), dtype=np.int64)
    if instance_ids.size == 0:
        return {}
    lookup = np.zeros(int(instance_ids.max()) + 1, dtype=np.int64)
    lookup[instance_ids] = np.arange(instance_ids.size)
    index = lookup[ids[inside]]
    table = np.bincount(index * n_classes + tissue[inside].astype(np.int64),
                        minlength=instance_ids.size * n_classes).reshape(instance_ids.size, n_classes)
    fractions = table / table.sum(axis=1, keepdims=True)
    return {int(i): fractions[k] for k, i in enumerate(instance_ids)}


def fallback_rules(nuclei: InstanceMap,
                   classes: dict,
                   tissue: np.ndarray,
                   config: RunConfig | None = None,
                   taxonomy: Taxonomy | None = None) -> tuple[dict, dict]:
    """Names nuclei the hierarchy left open.

    A level-1 epithelial vote becomes an epithelial cell nucleus. An undefined nucleus becomes an
    epithelial cell nucleus when more than `epithelial fraction` of its pixels lie on epithelial
    tissue, or a fibroblast when more than `stroma fraction` lie on stroma and its teacher type is
    connective. Every other nucleus is left as it is.

    :param nuclei: InstanceMap with teacher types
    :param classes: instance id -> class id or UNDEFINED
    :param tissue: tissue label raster
    :param config: RunConfig
    :param taxonomy: Taxonomy
    :return
        (updated instance id -> class id, instance id -> name of the rule that fired)
    """
    config = config or RunConfig()
    taxonomy = taxonomy or default_taxonomy()
    check_same_shape(nuclei.shape, tissue=tissue)

    epithelial_tissue = taxonomy.resolve("epithelial_tissue")
    epithelial_cell = taxonomy.resolve("epithelial_cell_nucleus")
    stroma = taxonomy.resolve("stroma")
    fibroblast = taxonomy.resolve("fibroblast")

    fractions = tissue_fractions(nuclei, tissue, len(taxonomy))
    updated = dict(classes)
    fired = {}
    for instance_id, class_id in classes.items():
        if class_id == epithelial_tissue:
            updated[instance_id], fired[instance_id] = epithelial_cell, "epithelial vote"
        elif class_id == UNDEFINED:
            fraction = fractions[instance_id]
            if fraction[epithelial_tissue] > config.epithelial_fraction:
                updated[instance_id], fired[instance_id] = epithelial_cell, "epithelial tissue"
            elif fraction[stroma] > config.stroma_fraction \
                    and nuclei.attrs[instance_id].teacher_type == "connective":
                updated[instance_id], fired[instance_id] = fibroblast, "connective in stroma"
    return updated, fired

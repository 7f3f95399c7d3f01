import numpy as np

from postprocess.force_mode import student_planes
from raster.containers import InstanceMap, LogitStack, check_same_shape
from taxonomy.taxonomy import Taxonomy, default_taxonomy
from utility.run_config import RunConfig


def paget_h_assign(student: LogitStack,
                   nuclei: InstanceMap,
                   config: RunConfig | None = None,
                   taxonomy: Taxonomy | None = None) -> tuple[dict, np.ndarray]:
    """Nucleus-level assignment: each nucleus takes the nucleus class with the largest logit sum over
    its pixels, every other pixel the argmax over the non-nucleus classes. Ties go to the lowest id.
    :param student: full-vocabulary LogitStack
    :param nuclei: InstanceMap
    :param config: RunConfig holding the class partition
    :param taxonomy: Taxonomy
    :return
        (instance id -> class id, uint8 label raster)
    """
    config = config or RunConfig()
    taxonomy = taxonomy or default_taxonomy()
    check_same_shape(student.shape, nuclei=nuclei)
    planes = student_planes(student, taxonomy)
    nucleus_classes = np.array(sorted(taxonomy.resolve_all(config.nucleus_classes)), dtype=np.int64)
    other_classes = np.array(sorted(taxonomy.resolve_all(config.non_nucleus_classes)), dtype=np.int64)

    labels = other_classes[np.argmax(planes[other_classes], axis=0)]

    instance_ids = np.array(nuclei.instance_ids(), dtype=np.int64)
    classes = {}
    if instance_ids.size:
        ids = nuclei.ids.astype(np.int64)
        inside = ids > 0
        lookup = np.zeros(int(instance_ids.max()) + 1, dtype=np.int64)
        lookup[instance_ids] = np.arange(instance_ids.size)
        index = lookup[ids[inside]]
        sums = np.stack([np.bincount(index, weights=planes[c][inside].astype(np.float64),
                                     minlength=instance_ids.size) for c in nucleus_classes], axis=1)
        winners = nucleus_classes[np.argmax(sums, axis=1)]
        classes = dict(zip(instance_ids.tolist(), winners.tolist()))
        labels[inside] = winners[index]
    return classes, labels.astype(np.uint8)

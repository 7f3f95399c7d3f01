import numpy as np

from raster.containers import LogitStack
from taxonomy.taxonomy import Taxonomy, default_taxonomy
from utility.errors import MissingChannelError
from utility.tiling import stitch


def student_planes(student: LogitStack,
                   taxonomy: Taxonomy | None = None) -> np.ndarray:
    """Student logit planes in class id order. The channel set has to equal the vocabulary.
    :param student: LogitStack with one channel per taxonomy class
    :param taxonomy: Taxonomy
    :return
        (classes, height, width) float32 array
    """
    taxonomy = taxonomy or default_taxonomy()
    channels = set(student.channels)
    if channels != set(taxonomy.names):
        raise MissingChannelError(f"student logits need exactly the channels {taxonomy.names}, "
                                  f"missing {sorted(set(taxonomy.names) - channels)}, "
                                  f"unexpected {sorted(channels - set(taxonomy.names))}")
    return student.select(taxonomy.names)


def force_mode(student: LogitStack,
               taxonomy: Taxonomy | None = None) -> np.ndarray:
    """Per-pixel argmax where every leukocyte pixel is reassigned to the leukocyte subtype with the
    highest logit (ties to the lowest id).
    :param student: full-vocabulary LogitStack
    :param taxonomy: Taxonomy
    :return
        uint8 label raster without leukocyte labels
    """
    taxonomy = taxonomy or default_taxonomy()
    planes = student_planes(student, taxonomy)
    labels = np.argmax(planes, axis=0)

    subtypes = np.array(sorted(taxonomy.leukocyte_subtypes), dtype=np.int64)
    leukocyte = labels == taxonomy.resolve("leukocyte")
    if np.any(leukocyte):
        best = np.argmax(planes[subtypes][:, leukocyte], axis=0)
        labels[leukocyte] = subtypes[best]
    return labels.astype(np.uint8)


def stitch_student_logits(tiles,
                          extent: tuple,
                          channels: list) -> LogitStack:
    """Sums overlapping student logit tiles into one stack; decisions are taken on the sums.
    :param tiles: iterable of (TileWindow, (channels, h, w) array)
    :param extent: (height, width)
    :param channels: channel names of the tiles
    :return
        LogitStack of the whole extent
    """
    return LogitStack(channels, stitch(tiles, extent, mode="sum").astype(np.float32))

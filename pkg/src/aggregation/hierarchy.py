import numpy as np

from dataclasses import dataclass, field
from numba import jit

from raster.containers import InstanceMap, LogitStack
from taxonomy.taxonomy import UNDEFINED, Hierarchy, Taxonomy, default_taxonomy


@dataclass
class NucleusDecision:
    """Per-nucleus record of how the final class came about."""
    hierarchy_class: int
    level_winners: list                           # plurality positive winner per level, None if no pixel positive
    votes: dict                                   # class id (UNDEFINED included) -> pixel votes
    fallback: str | None = None
    mitosis_region: int | None = None
    final_class: int = UNDEFINED
    extra: dict = field(default_factory=dict)

    def to_dict(self, taxonomy: Taxonomy) -> dict:
        return {"hierarchy class": taxonomy.name_of(self.hierarchy_class),
                "level winners": [None if w is None else taxonomy.name_of(w) for w in self.level_winners],
                "votes": {taxonomy.name_of(c): n for c, n in sorted(self.votes.items())},
                "fallback": self.fallback,
                "mitosis region": self.mitosis_region,
                "final class": taxonomy.name_of(self.final_class)}


@jit(nopython=True)
def jit_hierarchy_pixels(values: np.ndarray,
                         level_bounds: np.ndarray,
                         class_ids: np.ndarray) -> tuple:
    """Positive-logit override walk for every pixel.

    :param values: (pixels, channels) logits, channels grouped by level in hierarchy order
    :param level_bounds: (levels + 1,) channel offsets of the levels
    :param class_ids: (channels,) class id of each channel

    :return:
        (final class per pixel, -1 if undefined; positive argmax per pixel and level, -1 if not positive)
    """
    n_pixels = values.shape[0]
    n_levels = level_bounds.shape[0] - 1
    final = np.full(n_pixels, -1, dtype=np.int64)
    winners = np.full((n_pixels, n_levels), -1, dtype=np.int64)
    for p in range(n_pixels):
        current = -1
        for level in range(n_levels):
            best = level_bounds[level]
            for c in range(level_bounds[level] + 1, level_bounds[level + 1]):
                if values[p, c] > values[p, best]:
                    best = c
            if values[p, best] > 0:
                current = class_ids[best]
                winners[p, level] = current
        final[p] = current
    return final, winners


def hierarchy_layout(hierarchy: Hierarchy) -> tuple[np.ndarray, np.ndarray]:
    """Channel class ids in hierarchy order and the level offsets into them."""
    class_ids = np.array(hierarchy.members(), dtype=np.int64)
    level_bounds = np.cumsum([0] + [len(level) for level in hierarchy.levels]).astype(np.int64)
    return class_ids, level_bounds


def classify_pixels(values: np.ndarray,
                    hierarchy: Hierarchy) -> tuple[np.ndarray, np.ndarray]:
    """Wrapper of the jit kernel.
    :param values: (pixels, channels) logits in hierarchy member order
    :param hierarchy: Hierarchy
    :return
        (final class per pixel, positive level winners per pixel)
    """
    class_ids, level_bounds = hierarchy_layout(hierarchy)
    return jit_hierarchy_pixels(np.ascontiguousarray(values, dtype=np.float32), level_bounds, class_ids)


def _plurality(votes: np.ndarray) -> np.ndarray:
    """Row-wise winner of a (nuclei, 1 + classes) vote table whose column 0 counts undefined pixels.
    Defined classes tie to the lowest id, undefined only wins as the strict plurality.
    """
    defined = votes[:, 1:]
    best = np.argmax(defined, axis=1)
    best_count = defined[np.arange(len(votes)), best]
    return np.where(votes[:, 0] > best_count, UNDEFINED, best)


def _vote_table(nucleus_index: np.ndarray,
                labels: np.ndarray,
                n_nuclei: int,
                n_classes: int) -> np.ndarray:
    width = n_classes + 1
    table = np.bincount(nucleus_index * width + (labels + 1), minlength=n_nuclei * width)
    return table.reshape(n_nuclei, width)


def classify_nuclei(nuclei: InstanceMap,
                    logits: LogitStack,
                    taxonomy: Taxonomy | None = None) -> dict:
    """Hierarchical classification of all nuclei of a tile: per-pixel override walk, then a
    majority vote per nucleus.
    :param nuclei: InstanceMap
    :param logits: cell-level LogitStack covering every hierarchy class
    :param taxonomy: Taxonomy
    :return
        instance id -> NucleusDecision
    """
    taxonomy = taxonomy or default_taxonomy()
    hierarchy = taxonomy.hierarchy
    instance_ids = np.array(nuclei.instance_ids(), dtype=np.int64)
    if instance_ids.size == 0:
        return {}

    members = [taxonomy.name_of(c) for c in hierarchy.members()]
    pixel_ids = nuclei.ids.astype(np.int64)
    inside = pixel_ids > 0
    values = logits.select(members)[:, inside].T
    final, winners = classify_pixels(values, hierarchy)

    lookup = np.zeros(int(instance_ids.max()) + 1, dtype=np.int64)
    lookup[instance_ids] = np.arange(instance_ids.size)
    nucleus_index = lookup[pixel_ids[inside]]

    n_classes = len(taxonomy)
    votes = _vote_table(nucleus_index, final, instance_ids.size, n_classes)
    classes = _plurality(votes)
    level_tables = []
    for level in range(len(hierarchy)):
        table = _vote_table(nucleus_index, winners[:, level], instance_ids.size, n_classes)
        table[:, 0] = 0
        level_tables.append(table)

    decisions = {}
    for k, instance_id in enumerate(instance_ids.tolist()):
        level_winners = []
        for table in level_tables:
            row = table[k, 1:]
            level_winners.append(int(np.argmax(row)) if row.max() > 0 else None)
        row = votes[k]
        decisions[instance_id] = NucleusDecision(
            hierarchy_class=int(classes[k]),
            level_winners=level_winners,
            votes={c - 1: int(n) for c, n in enumerate(row.tolist()) if n > 0},
            final_class=int(classes[k]))
    return decisions


def classify_nucleus(pixels: np.ndarray,
                     logits: LogitStack,
                     taxonomy: Taxonomy | None = None) -> NucleusDecision:
    """Classification of a single nucleus.
    :param pixels: (n, 2) (row, col) coordinates, n >= 1
    :param logits: cell-level LogitStack
    :param taxonomy: Taxonomy
    :return
        NucleusDecision
    """
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    ids = np.zeros(logits.shape, dtype=np.int64)
    ids[pixels[:, 0], pixels[:, 1]] = 1
    return classify_nuclei(InstanceMap.from_labels(ids), logits, taxonomy)[1]

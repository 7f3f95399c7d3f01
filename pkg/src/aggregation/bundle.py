import logging

import numpy as np

from dataclasses import dataclass, field

from raster.containers import InstanceMap, LogitStack, check_rgb_tile, check_same_shape
from raster.filters import downscale, downscale_labels
from taxonomy.taxonomy import Taxonomy, default_taxonomy
from utility.errors import RasterShapeError
from utility.stack_container import (find_record, instances_to_record, load_stack, logits_to_record,
                                     record_to_instances, record_to_logits, record_to_rgb, rgb_to_record,
                                     save_stack)


logger = logging.getLogger(__name__)

TISSUE_CHANNELS = ("smooth_muscle", "epithelial_tissue", "red_blood_cell")
CELL_CHANNELS = ("smooth_muscle", "epithelial_tissue", "leukocyte", "endothelial", "red_blood_cell",
                 "lymphocyte", "plasma_cell", "myeloid_cell", "eosinophil", "neutrophil")


@dataclass(frozen=True)
class MitosisCandidate:
    """Detection of the mitosis teacher, pixel coordinates relative to the bundle rasters."""
    x: int
    y: int
    score: float = 1.0

    def to_dict(self) -> dict:
        return {"x": int(self.x), "y": int(self.y), "score": float(self.score)}

    @classmethod
    def from_dict(cls, entry: dict):
        return cls(x=int(entry["x"]), y=int(entry["y"]), score=float(entry.get("score", 1.0)))


@dataclass
class TeacherBundle:
    he: np.ndarray
    tissue_logits: LogitStack
    cell_logits: LogitStack
    nuclei: InstanceMap
    mitosis_candidates: list = field(default_factory=list)
    halo: int = 0
    mpp: float | None = None
    name: str = "bundle"

    @property
    def shape(self) -> tuple:
        return self.he.shape[:2]

    def validate(self,
                 taxonomy: Taxonomy | None = None) -> None:
        """Checks raster dimensions, required channels, instance attributes, candidate positions
        and nucleus teacher types.
        """
        taxonomy = taxonomy or default_taxonomy()
        check_rgb_tile(self.he)
        check_same_shape(self.shape, tissue_logits=self.tissue_logits, cell_logits=self.cell_logits,
                         nuclei=self.nuclei)
        self.tissue_logits.require(TISSUE_CHANNELS)
        self.cell_logits.require([taxonomy.name_of(c) for c in taxonomy.hierarchy.members()])
        self.nuclei.validate()
        for attributes in self.nuclei.attrs.values():
            attributes.teacher_type = taxonomy.check_teacher_type(attributes.teacher_type)
        height, width = self.shape
        for candidate in self.mitosis_candidates:
            if not (0 <= candidate.y < height and 0 <= candidate.x < width):
                raise RasterShapeError(f"mitosis candidate {candidate} lies outside the tile and its halo "
                                       f"({height}x{width})")
        if 2 * self.halo >= min(height, width):
            raise RasterShapeError(f"halo {self.halo} leaves no core in a {height}x{width} tile")

    def core_window(self) -> tuple:
        height, width = self.shape
        return self.halo, self.halo, height - self.halo, width - self.halo

    def crop(self,
             window: tuple):
        """Sub-bundle of window = (y0, x0, y1, x1). Candidates outside the window are dropped,
        the others shifted to window coordinates.
        """
        y0, x0, y1, x1 = window
        candidates = [MitosisCandidate(c.x - x0, c.y - y0, c.score) for c in self.mitosis_candidates
                      if y0 <= c.y < y1 and x0 <= c.x < x1]
        return TeacherBundle(he=self.he[y0:y1, x0:x1],
                             tissue_logits=self.tissue_logits.crop(window),
                             cell_logits=self.cell_logits.crop(window),
                             nuclei=self.nuclei.crop(window),
                             mitosis_candidates=candidates,
                             halo=0,
                             mpp=self.mpp,
                             name=self.name)


def downscale_bundle(bundle: TeacherBundle,
                     factor: int) -> TeacherBundle:
    """Bundle at 1/factor resolution: block means for H&E and logits, top-left sampling for nuclei,
    candidate coordinates divided by the factor.
    """
    if factor == 1:
        return bundle
    logger.info(f"Downscaling bundle {bundle.name} by {factor}")

    def shrink_stack(stack):
        planes = downscale(np.moveaxis(stack.planes, 0, 2), factor)
        return LogitStack(stack.channels, np.moveaxis(planes, 2, 0))

    nuclei = InstanceMap.from_labels(downscale_labels(bundle.nuclei.ids, factor), bundle.nuclei.teacher_types())
    height, width = nuclei.shape
    candidates = [MitosisCandidate(min(c.x // factor, width - 1), min(c.y // factor, height - 1), c.score)
                  for c in bundle.mitosis_candidates]
    return TeacherBundle(he=downscale(bundle.he, factor),
                         tissue_logits=shrink_stack(bundle.tissue_logits),
                         cell_logits=shrink_stack(bundle.cell_logits),
                         nuclei=nuclei,
                         mitosis_candidates=candidates,
                         halo=bundle.halo // factor,
                         mpp=None if bundle.mpp is None else bundle.mpp * factor,
                         name=bundle.name)


def save_bundle(bundle: TeacherBundle,
                path):
    """Writes a bundle as a four-record TMEF1 file (he, tissue_logits, cell_logits, nuclei)."""
    common = {"mpp": bundle.mpp, "halo": bundle.halo}
    records = [rgb_to_record(bundle.he, "he",
                             meta={"mitosis_candidates": [c.to_dict() for c in bundle.mitosis_candidates],
                                   "bundle": bundle.name}, **common),
               logits_to_record(bundle.tissue_logits, "tissue_logits", **common),
               logits_to_record(bundle.cell_logits, "cell_logits", **common),
               instances_to_record(bundle.nuclei, "nuclei", **common)]
    return save_stack(records, path)


def load_bundle(path,
                taxonomy: Taxonomy | None = None) -> TeacherBundle:
    """Reads and validates a bundle file.
    :param path: TMEF1 bundle file
    :param taxonomy: vocabulary the logit channel names are resolved against
    :return
        TeacherBundle object
    """
    taxonomy = taxonomy or default_taxonomy()
    records = load_stack(path)
    he = find_record(records, "he")
    nuclei, _ = record_to_instances(find_record(records, "nuclei"))
    bundle = TeacherBundle(he=record_to_rgb(he),
                           tissue_logits=record_to_logits(find_record(records, "tissue_logits"), taxonomy),
                           cell_logits=record_to_logits(find_record(records, "cell_logits"), taxonomy),
                           nuclei=nuclei,
                           mitosis_candidates=[MitosisCandidate.from_dict(c)
                                               for c in he.meta.get("mitosis_candidates", [])],
                           halo=he.halo or 0,
                           mpp=he.mpp,
                           name=he.meta.get("bundle", str(path)))
    bundle.validate(taxonomy)
    logger.info(f"Loaded bundle {bundle.name}: {bundle.shape[0]}x{bundle.shape[1]} px, "
                f"{len(bundle.nuclei)} nuclei, {len(bundle.mitosis_candidates)} mitosis candidates")
    return bundle

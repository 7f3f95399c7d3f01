import numpy as np

from aggregation.bundle import CELL_CHANNELS, TISSUE_CHANNELS, MitosisCandidate, TeacherBundle
from raster.containers import InstanceMap, LogitStack
from synthetic.reference import reference_aggregate
from synthetic.scene import SceneSpec, primitive_mask, random_scene
from taxonomy.taxonomy import Taxonomy, default_taxonomy
from utility.errors import FixtureError
from utility.run_config import RunConfig


GLASS = (238, 236, 242)
STAINS = {"stroma": (226, 170, 205),
          "epithelial_tissue": (205, 140, 190),
          "smooth_muscle": (215, 120, 160),
          "red_blood_cell": (205, 55, 70),
          "dust": (12, 10, 12)}
NEGATIVE_LOGIT = -2.0


def nucleus_colour(darkness: int) -> tuple:
    return darkness, int(darkness * 0.7), min(255, int(darkness * 1.4))


def render_bundle(scene: SceneSpec) -> TeacherBundle:
    """Teacher outputs of a scene: stained H&E tile, tissue and cell logits, nucleus instances and
    mitosis candidates. Deterministic for a given scene.
    :param scene: SceneSpec
    :return
        TeacherBundle
    """
    rng = np.random.default_rng([scene.seed, 1])
    extent = (scene.height, scene.width)
    he = np.empty(extent + (3,), dtype=np.int64)
    he[:] = GLASS
    tissue = {c: np.full(extent, NEGATIVE_LOGIT) for c in TISSUE_CHANNELS}
    cell = {c: np.full(extent, NEGATIVE_LOGIT) for c in CELL_CHANNELS}

    for region in scene.regions:
        pixels = primitive_mask(region.primitive, extent)
        he[pixels] = STAINS[region.class_name]
        if region.class_name in tissue:
            tissue[region.class_name][pixels] = region.logit

    ids = np.zeros(extent, dtype=np.int64)
    teacher_types = {}
    for instance_id, nucleus in enumerate(scene.nuclei, start=1):
        pixels = primitive_mask(nucleus.primitive, extent)
        if not pixels.any():
            raise FixtureError(f"nucleus {instance_id} lies outside the scene")
        if np.any(ids[pixels]):
            raise FixtureError(f"nucleus {instance_id} overlaps nucleus {int(ids[pixels].max())}")
        ids[pixels] = instance_id
        teacher_types[instance_id] = nucleus.teacher_type
        he[pixels] = nucleus_colour(nucleus.darkness)
        for channel, value in nucleus.logits.items():
            if channel not in cell:
                raise FixtureError(f"unknown cell channel {channel!r} for nucleus {instance_id}")
            cell[channel][pixels] = value

    for channel in ("smooth_muscle", "epithelial_tissue", "red_blood_cell"):
        cell[channel] = np.where(cell[channel] == NEGATIVE_LOGIT, tissue[channel], cell[channel])

    noise = scene.stain_noise
    he = np.clip(he + rng.integers(-noise, noise + 1, size=he.shape), 0, 255).astype(np.uint8)
    tissue_planes = np.stack([tissue[c] + rng.normal(0, scene.logit_noise, extent) for c in TISSUE_CHANNELS])
    cell_planes = np.stack([cell[c] + rng.normal(0, scene.logit_noise, extent) for c in CELL_CHANNELS])
    candidates = [MitosisCandidate(int(x), int(y), float(score)) for x, y, score in scene.candidates]
    for candidate in candidates:
        if not (0 <= candidate.x < scene.width and 0 <= candidate.y < scene.height):
            raise FixtureError(f"mitosis candidate {candidate} lies outside the scene")

    return TeacherBundle(he=he,
                         tissue_logits=LogitStack(list(TISSUE_CHANNELS), tissue_planes.astype(np.float32)),
                         cell_logits=LogitStack(list(CELL_CHANNELS), cell_planes.astype(np.float32)),
                         nuclei=InstanceMap.from_labels(ids, teacher_types),
                         mitosis_candidates=candidates,
                         name=f"synthetic-{scene.seed}")


def synth_fixture(scene,
                  config: RunConfig | None = None,
                  taxonomy: Taxonomy | None = None) -> tuple:
    """Bundle and ground truth of a synthetic scene, the ground truth computed by the naive
    per-pixel reference.
    :param scene: SceneSpec, or an integer seed for random_scene
    :param config: RunConfig
    :param taxonomy: Taxonomy
    :return
        (TeacherBundle, AggregationResult)
    """
    config = config or RunConfig()
    taxonomy = taxonomy or default_taxonomy()
    if isinstance(scene, (int, np.integer)):
        scene = random_scene(int(scene))
    bundle = render_bundle(scene)
    return bundle, reference_aggregate(bundle, config, taxonomy)

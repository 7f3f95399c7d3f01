import numpy as np

from dataclasses import dataclass, field
from skimage.draw import disk, ellipse

from utility.errors import FixtureError


SHAPES = ("disc", "ellipse")
REGION_CLASSES = ("stroma", "smooth_muscle", "epithelial_tissue", "red_blood_cell", "dust")

# nucleus archetype -> positive cell logits along its hierarchy path
ARCHETYPES = {"lymphocyte": {"leukocyte": 1.0, "lymphocyte": 2.0},
              "plasma_cell": {"leukocyte": 1.0, "plasma_cell": 2.0},
              "myeloid_cell": {"leukocyte": 1.0, "myeloid_cell": 2.0},
              "eosinophil": {"leukocyte": 1.0, "eosinophil": 2.0},
              "neutrophil": {"leukocyte": 1.0, "neutrophil": 2.0},
              "leukocyte": {"leukocyte": 1.5},
              "endothelial": {"endothelial": 1.5},
              "undefined": {}}


@dataclass
class Primitive:
    """Disc (radius) or ellipse (radius, minor radius, rotation) at center = (row, col)."""
    shape: str
    center: tuple
    radius: float
    minor_radius: float | None = None
    rotation: float = 0.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise FixtureError(f"unknown primitive shape {self.shape!r}, expected one of {SHAPES}")
        if not self.radius > 0 or (self.minor_radius is not None and not self.minor_radius > 0):
            raise FixtureError(f"primitive radii have to be > 0, got {self.radius}, {self.minor_radius}")


@dataclass
class RegionSpec:
    primitive: Primitive
    class_name: str
    logit: float = 2.0

    def __post_init__(self):
        if self.class_name not in REGION_CLASSES:
            raise FixtureError(f"unknown region class {self.class_name!r}, expected one of {REGION_CLASSES}")


@dataclass
class NucleusSpec:
    primitive: Primitive
    logits: dict = field(default_factory=dict)     # cell channel -> logit on the nucleus pixels
    teacher_type: str | None = None
    darkness: int = 90                             # grayscale level of the nucleus stain


@dataclass
class SceneSpec:
    height: int
    width: int
    seed: int
    regions: list = field(default_factory=list)    # painted in order, later regions on top
    nuclei: list = field(default_factory=list)
    candidates: list = field(default_factory=list)  # (x, y, score)
    logit_noise: float = 0.25
    stain_noise: int = 6

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise FixtureError(f"scene extent has to be positive, got {self.height}x{self.width}")


def random_scene(seed: int,
                 height: int = 64,
                 width: int = 64,
                 max_nuclei: int = 20,
                 max_candidates: int = 5) -> SceneSpec:
    """Random scene: a stroma field with glass margins, an epithelial island, optional smooth
    muscle, red blood cells and dust, disjoint nuclei and mitosis candidates.
    :param seed: seed of numpy.random.default_rng
    :param height: pixels
    :param width: pixels
    :param max_nuclei: upper bound of nuclei
    :param max_candidates: upper bound of mitosis candidates
    :return
        SceneSpec
    """
    rng = np.random.default_rng(seed)
    size = min(height, width)
    regions = [RegionSpec(Primitive("ellipse", (height / 2, width / 2), 0.45 * height, 0.45 * width), "stroma")]
    regions.append(RegionSpec(Primitive("disc", (rng.uniform(0.3, 0.7) * height, rng.uniform(0.3, 0.7) * width),
                                        rng.uniform(0.12, 0.25) * size),
                              "epithelial_tissue", float(rng.uniform(0.5, 3.0))))
    for class_name, probability in (("smooth_muscle", 0.5), ("red_blood_cell", 0.4), ("dust", 0.2)):
        if rng.random() < probability:
            primitive = Primitive("ellipse", (rng.uniform(0.15, 0.85) * height, rng.uniform(0.15, 0.85) * width),
                                  rng.uniform(0.05, 0.15) * size, rng.uniform(0.05, 0.15) * size,
                                  float(rng.uniform(0, np.pi)))
            regions.append(RegionSpec(primitive, class_name, float(rng.uniform(0.5, 3.0))))

    nuclei, occupied = [], np.zeros((height, width), dtype=bool)
    archetypes = list(ARCHETYPES)
    teacher_types = ["neoplastic", "inflammatory", "connective", "dead", "non_neoplastic_epithelial"]
    for _ in range(int(rng.integers(0, max_nuclei + 1))):
        radius = float(rng.uniform(1.5, 4.0))
        center = (float(rng.uniform(radius, height - radius)), float(rng.uniform(radius, width - radius)))
        primitive = Primitive("disc", center, radius) if rng.random() < 0.6 else \
            Primitive("ellipse", center, radius, radius * float(rng.uniform(0.5, 1.0)), float(rng.uniform(0, np.pi)))
        pixels = primitive_mask(primitive, (height, width))
        if not pixels.any() or np.any(pixels & occupied):
            continue
        occupied |= pixels
        archetype = archetypes[int(rng.integers(len(archetypes)))]
        logits = {c: v * float(rng.uniform(0.5, 2.0)) for c, v in ARCHETYPES[archetype].items()}
        nuclei.append(NucleusSpec(primitive, logits, teacher_types[int(rng.integers(len(teacher_types)))],
                                  int(rng.integers(40, 110))))

    candidates = []
    for _ in range(int(rng.integers(0, max_candidates + 1))):
        if nuclei and rng.random() < 0.7:
            row, col = nuclei[int(rng.integers(len(nuclei)))].primitive.center
            x, y = int(round(col)), int(round(row))
        else:
            x, y = int(rng.integers(width)), int(rng.integers(height))
        candidates.append((x, y, round(float(rng.uniform(0.2, 1.0)), 3)))
    return SceneSpec(height, width, seed, regions, nuclei, candidates)


def primitive_mask(primitive: Primitive,
                   extent: tuple) -> np.ndarray:
    """Boolean mask of a primitive clipped to the extent (skimage.draw)."""
    mask = np.zeros(extent, dtype=bool)
    if primitive.shape == "disc":
        rr, cc = disk(primitive.center, primitive.radius, shape=extent)
    else:
        rr, cc = ellipse(primitive.center[0], primitive.center[1], primitive.radius,
                         primitive.minor_radius or primitive.radius, shape=extent, rotation=primitive.rotation)
    mask[rr, cc] = True
    return mask

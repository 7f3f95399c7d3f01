import os
import yaml

from dataclasses import dataclass, field, fields, replace

from utility.errors import ConfigError


WORKERS_ENVIRONMENT_VARIABLE = "PAGET_WORKERS"

DEFAULT_NUCLEUS_CLASSES = ("epithelial_cell_nucleus", "lymphocyte", "plasma_cell", "myeloid_cell", "eosinophil",
                           "neutrophil", "endothelial", "fibroblast", "mitotic_cell")
DEFAULT_NON_NUCLEUS_CLASSES = ("background", "stroma", "smooth_muscle", "epithelial_tissue", "red_blood_cell")

# (section, key) of the steering file -> RunConfig field
STEERING_KEYS = {("background", "gaussian sigma"): "gaussian_sigma",
                 ("background", "otsu threshold"): "otsu_threshold",
                 ("hierarchy", "epithelial fraction"): "epithelial_fraction",
                 ("hierarchy", "stroma fraction"): "stroma_fraction",
                 ("mitosis", "roi radius"): "roi_radius",
                 ("mitosis", "dark sum threshold"): "dark_sum_threshold",
                 ("mitosis", "dark statistic"): "dark_statistic",
                 ("mitosis", "dark fraction"): "dark_fraction",
                 ("mitosis", "min contour area"): "min_contour_area",
                 ("mitosis", "min score"): "min_score",
                 ("components", "connectivity"): "connectivity",
                 ("postprocess", "nucleus classes"): "nucleus_classes",
                 ("postprocess", "non-nucleus classes"): "non_nucleus_classes",
                 ("tme", "margin um"): "margin_um",
                 ("tme", "mpp"): "mpp",
                 ("tiling", "crop"): "crop",
                 ("tiling", "stride"): "stride",
                 ("tiling", "halo"): "halo",
                 ("tiling", "downscale"): "downscale",
                 ("run", "workers"): "workers",
                 ("run", "taxonomy"): "taxonomy"}


@dataclass(frozen=True)
class RunConfig:
    """Parameters of a pipeline run. Defaults reproduce the published constants
    (30 px ROI radius, RGB sum <= 40, contour area >= 3 px, 50 um margin, 384/320 tiling). Ties of every
    argmax go to the lowest class id; this is fixed and not a parameter.
    """
    gaussian_sigma: float = 2.0
    otsu_threshold: int | None = None
    epithelial_fraction: float = 0.5
    stroma_fraction: float = 0.5
    roi_radius: int = 30
    dark_sum_threshold: int = 40
    dark_statistic: str = "median"
    dark_fraction: float = 0.5
    min_contour_area: int = 3
    min_score: float = 0.0
    connectivity: int = 8
    nucleus_classes: tuple = field(default=DEFAULT_NUCLEUS_CLASSES)
    non_nucleus_classes: tuple = field(default=DEFAULT_NON_NUCLEUS_CLASSES)
    margin_um: float = 50.0
    mpp: float | None = None
    crop: int = 384
    stride: int = 320
    halo: int = 96
    downscale: int = 1
    workers: int = 1
    taxonomy: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "nucleus_classes", tuple(self.nucleus_classes))
        object.__setattr__(self, "non_nucleus_classes", tuple(self.non_nucleus_classes))
        self.validate()

    def validate(self) -> None:
        """Checks every value against its documented range.
        """
        checks = [("gaussian_sigma", self.gaussian_sigma > 0, "must be > 0"),
                  ("otsu_threshold", self.otsu_threshold is None or 0 <= self.otsu_threshold <= 255,
                   "must be null or within 0..255"),
                  ("epithelial_fraction", 0 <= self.epithelial_fraction < 1, "must be within [0, 1)"),
                  ("stroma_fraction", 0 <= self.stroma_fraction < 1, "must be within [0, 1)"),
                  ("roi_radius", self.roi_radius >= 1, "must be >= 1"),
                  ("dark_sum_threshold", 0 <= self.dark_sum_threshold <= 765, "must be within 0..765"),
                  ("dark_statistic", self.dark_statistic in ("median", "mean", "fraction"),
                   "must be 'median', 'mean' or 'fraction'"),
                  ("dark_fraction", 0 < self.dark_fraction <= 1, "must be within (0, 1]"),
                  ("min_contour_area", self.min_contour_area >= 1, "must be >= 1"),
                  ("min_score", 0 <= self.min_score <= 1, "must be within [0, 1]"),
                  ("connectivity", self.connectivity in (4, 8), "must be 4 or 8"),
                  ("margin_um", self.margin_um > 0, "must be > 0"),
                  ("mpp", self.mpp is None or self.mpp > 0, "must be null or > 0"),
                  ("crop", self.crop >= 1, "must be >= 1"),
                  ("stride", 0 < self.stride <= self.crop, "must satisfy 0 < stride <= crop"),
                  ("halo", self.halo >= 0, "must be >= 0"),
                  ("downscale", self.downscale in (1, 2), "must be 1 or 2"),
                  ("workers", self.workers >= 1, "must be >= 1")]
        for name, ok, message in checks:
            if not ok:
                raise ConfigError(f"{name} = {getattr(self, name)!r} {message}")
        overlap = set(self.nucleus_classes) & set(self.non_nucleus_classes)
        if overlap:
            raise ConfigError(f"classes {sorted(overlap)} are both nucleus and non-nucleus classes")

    @classmethod
    def from_dict(cls,
                  configuration: dict | None):
        """Creates a RunConfig from a nested steering dictionary, missing entries keep their defaults.
        :param configuration: dictionary as loaded from a steering file
        :return
            RunConfig object
        """
        values = {}
        for section, entries in (configuration or {}).items():
            if not isinstance(entries, dict):
                raise ConfigError(f"section {section!r} has to be a mapping")
            for key, value in entries.items():
                if (section, key) not in STEERING_KEYS:
                    raise ConfigError(f"unknown steering key {section!r}: {key!r}")
                values[STEERING_KEYS[(section, key)]] = value
        try:
            config = cls(**values)
        except TypeError as error:
            raise ConfigError(str(error)) from error
        return config

    @classmethod
    def from_steering_file(cls,
                           steering_file):
        """Loads a YAML steering file.
        :param steering_file: path of the .yaml file
        :return
            RunConfig object
        """
        try:
            with open(steering_file, 'r') as f:
                configuration = yaml.safe_load(f)
        except (OSError, yaml.YAMLError) as error:
            raise ConfigError(f"cannot read steering file {steering_file}: {error}") from error
        return cls.from_dict(configuration)

    def with_environment(self,
                         environment=None):
        """Applies the worker-count override from the environment.
        :param environment: mapping of environment variables, defaults to os.environ
        :return
            RunConfig object
        """
        environment = os.environ if environment is None else environment
        if WORKERS_ENVIRONMENT_VARIABLE not in environment:
            return self
        try:
            workers = int(environment[WORKERS_ENVIRONMENT_VARIABLE])
        except ValueError as error:
            raise ConfigError(f"{WORKERS_ENVIRONMENT_VARIABLE} has to be an integer") from error
        return replace(self, workers=workers)

    def to_dict(self) -> dict:
        """Nested steering dictionary, canonical input of the provenance hash.
        :return
            {section: {key: value}}
        """
        configuration = {}
        for (section, key), name in STEERING_KEYS.items():
            value = getattr(self, name)
            if isinstance(value, tuple):
                value = list(value)
            configuration.setdefault(section, {})[key] = value
        return configuration

    def field_names(self) -> list[str]:
        return [f.name for f in fields(self)]

import logging

import numpy as np

from dataclasses import dataclass, field, replace
from joblib import Parallel, delayed
from tqdm import tqdm

from aggregation.bundle import TeacherBundle
from aggregation.fallback import fallback_rules
from aggregation.hierarchy import classify_nuclei
from aggregation.mitosis import apply_mitosis, detect_mitosis, rank_candidates
from aggregation.tissue import tissue_segmentation
from raster.containers import InstanceMap
from raster.filters import background_mask
from taxonomy.taxonomy import UNDEFINED, Taxonomy, default_taxonomy
from utility.run_config import RunConfig
from utility.stack_container import DTYPES, StackRecord, instances_to_record, labels_to_record, save_stack
from utility.tiling import TilePlan, iterate_tiles, stitch


logger = logging.getLogger(__name__)


@dataclass
class AggregationResult:
    semantic: np.ndarray                  # uint8 class per pixel
    instances: InstanceMap
    classes: dict                         # instance id -> final class id or UNDEFINED
    mitosis_regions: np.ndarray           # int32 region ids, 0 = none
    tissue: np.ndarray                    # tissue labels before nucleus painting
    provenance: dict = field(default_factory=dict)       # instance id -> NucleusDecision
    candidate_reports: list = field(default_factory=list)
    background_threshold: int | None = None

    @property
    def mitosis_mask(self) -> np.ndarray:
        return self.mitosis_regions > 0

    @property
    def shape(self) -> tuple:
        return self.semantic.shape

    def check_invariants(self,
                         taxonomy: Taxonomy | None = None) -> None:
        """Asserts that nucleus pixels carry their instance class and mitotic nuclei touch the mitosis mask."""
        taxonomy = taxonomy or default_taxonomy()
        mitotic_cell = taxonomy.resolve("mitotic_cell")
        lut = class_lookup(self.instances, self.classes)
        painted = lut[self.instances.ids.astype(np.int64)]
        defined = painted >= 0
        assert np.array_equal(self.semantic[defined], painted[defined]), "nucleus pixel differs from its class"
        for instance_id, class_id in self.classes.items():
            if class_id == mitotic_cell:
                assert np.any(self.mitosis_mask[self.instances.ids == instance_id]), \
                    f"mitotic nucleus {instance_id} outside the mitosis mask"


def class_lookup(instances: InstanceMap,
                 classes: dict) -> np.ndarray:
    """Array mapping instance id -> class id, -1 for id 0 and undefined nuclei."""
    size = int(instances.ids.max(initial=0)) + 1
    lut = np.full(max(size, max(classes, default=0) + 1), -1, dtype=np.int64)
    for instance_id, class_id in classes.items():
        lut[instance_id] = class_id
    lut[0] = -1
    return lut


def combine_masks(tissue: np.ndarray,
                  instances: InstanceMap,
                  classes: dict) -> np.ndarray:
    """Nucleus classes painted over the tissue labels; undefined nuclei keep the tissue label."""
    painted = class_lookup(instances, classes)[instances.ids.astype(np.int64)]
    return np.where(painted >= 0, painted, tissue).astype(np.uint8)


def aggregate(bundle: TeacherBundle,
              config: RunConfig | None = None,
              taxonomy: Taxonomy | None = None,
              region_ids: list | None = None,
              core: tuple | None = None) -> AggregationResult:
    """Unified teacher label mask of one bundle.

    Tissue segmentation, hierarchical nucleus classification, fallback rules, mitosis detection and
    reclassification, then the nucleus classes are painted over the tissue labels. Rasters of the
    result cover the core of the bundle, the halo only provides context.

    :param bundle: TeacherBundle
    :param config: RunConfig, defaults if None
    :param taxonomy: Taxonomy, the embedded one if None
    :param region_ids: mitosis region id per candidate, ranked within the bundle if None
    :param core: (y0, x0, y1, x1) output window, the halo-free window of the bundle if None
    :return
        AggregationResult
    """
    config = config or RunConfig()
    taxonomy = taxonomy or default_taxonomy()

    tissue, threshold = tissue_segmentation(bundle, config, taxonomy)
    decisions = classify_nuclei(bundle.nuclei, bundle.cell_logits, taxonomy)
    classes = {i: d.hierarchy_class for i, d in decisions.items()}

    classes, fired = fallback_rules(bundle.nuclei, classes, tissue, config, taxonomy)
    if region_ids is None:
        region_ids = rank_candidates(bundle.mitosis_candidates)
    regions, reports = detect_mitosis(bundle.mitosis_candidates, bundle.he, tissue, config, taxonomy, region_ids)
    classes, touched = apply_mitosis(classes, bundle.nuclei, regions, taxonomy)

    for instance_id, decision in decisions.items():
        decision.fallback = fired.get(instance_id)
        decision.mitosis_region = touched.get(instance_id)
        decision.final_class = classes[instance_id]

    semantic = combine_masks(tissue, bundle.nuclei, classes)
    y0, x0, y1, x1 = bundle.core_window() if core is None else core
    window = (slice(y0, y1), slice(x0, x1))
    if (y0, x0, y1, x1) == (0, 0) + tuple(bundle.shape):
        instances = bundle.nuclei
    else:
        instances = bundle.nuclei.crop((y0, x0, y1, x1))
        classes = {i: c for i, c in classes.items() if i in instances.attrs}
        decisions = {i: d for i, d in decisions.items() if i in instances.attrs}
    return AggregationResult(semantic=semantic[window],
                             instances=instances,
                             classes=classes,
                             mitosis_regions=regions[window],
                             tissue=tissue[window],
                             provenance=decisions,
                             candidate_reports=reports,
                             background_threshold=threshold)


def _window_tasks(bundle: TeacherBundle,
                  windows: list,
                  region_ids: list):
    """Yields (window, context sub-bundle, mitosis region ids of the sub-bundle) per window."""
    for window in windows:
        cy0, cx0, cy1, cx1 = window.context
        ids = [region_ids[i] for i, c in enumerate(bundle.mitosis_candidates)
               if cy0 <= c.y < cy1 and cx0 <= c.x < cx1]
        yield window, bundle.crop(window.context), ids


def _aggregate_window(window,
                      sub: TeacherBundle,
                      region_ids: list,
                      config: RunConfig,
                      taxonomy: Taxonomy) -> tuple:
    result = aggregate(sub, config, taxonomy, region_ids, core=window.core_in_context)
    return window, result


def aggregate_tiled(bundle: TeacherBundle,
                    config: RunConfig | None = None,
                    taxonomy: Taxonomy | None = None,
                    plan: TilePlan | None = None,
                    workers: int | None = None,
                    progress: bool = False) -> AggregationResult:
    """aggregate() over tile windows with halo context, fanned out over workers and stitched in
    row-major window order.

    One background threshold (the configured one, else Otsu of the whole smoothed frame) and one
    set of mitosis region ids are used for all windows. With a halo of at least
    2 x roi radius + gaussian radius + the largest nucleus extent beyond a window the result equals
    aggregate() on the whole frame, for any number of workers.

    :param bundle: TeacherBundle without halo
    :param config: RunConfig
    :param taxonomy: Taxonomy
    :param plan: TilePlan, from the config if None
    :param workers: number of joblib workers, config.workers if None
    :param progress: show a tqdm progress bar (single worker only)
    :return
        AggregationResult of the whole frame
    """
    config = config or RunConfig()
    taxonomy = taxonomy or default_taxonomy()
    plan = plan or TilePlan.from_config(config)
    workers = workers or config.workers

    if config.otsu_threshold is None:
        _, threshold = background_mask(bundle.he, config.gaussian_sigma)
        config = replace(config, otsu_threshold=threshold)
    region_ids = rank_candidates(bundle.mitosis_candidates)
    windows = iterate_tiles(bundle.shape, plan)
    logger.info(f"Aggregating {len(windows)} windows (crop {plan.crop}, stride {plan.stride}, "
                f"halo {plan.halo}) with {workers} worker(s)")

    if workers == 1:
        iterator = tqdm(_window_tasks(bundle, windows, region_ids), total=len(windows), desc="windows",
                        disable=not progress)
        results = [_aggregate_window(w, sub, ids, config, taxonomy) for w, sub, ids in iterator]
    else:
        results = Parallel(n_jobs=workers)(
            delayed(_aggregate_window)(w, sub, ids, config, taxonomy)
            for w, sub, ids in _window_tasks(bundle, windows, region_ids))

    classes, provenance, reports = {}, {}, {}
    for window, result in sorted(results, key=lambda pair: pair[0].index):
        classes.update(result.classes)
        provenance.update(result.provenance)
        for report in result.candidate_reports:
            reports[report.region_id] = report

    extent = bundle.shape
    ids = stitch([(w, r.instances.ids) for w, r in results], extent)
    instances = InstanceMap.from_labels(ids, bundle.nuclei.teacher_types())
    return AggregationResult(semantic=stitch([(w, r.semantic) for w, r in results], extent),
                             instances=instances,
                             classes={i: classes[i] for i in instances.instance_ids()},
                             mitosis_regions=stitch([(w, r.mitosis_regions) for w, r in results], extent),
                             tissue=stitch([(w, r.tissue) for w, r in results], extent),
                             provenance={i: provenance[i] for i in instances.instance_ids()},
                             candidate_reports=[reports[k] for k in sorted(reports)],
                             background_threshold=config.otsu_threshold)


def dataset_statistics(results: list,
                       taxonomy: Taxonomy | None = None) -> dict:
    """Composition of a set of aggregation results: nuclei per final class and pixels per label.
    :param results: list of AggregationResult
    :param taxonomy: Taxonomy
    :return
        {"nuclei": {class name: count}, "pixels": {class name: count}, "tiles": n}
    """
    taxonomy = taxonomy or default_taxonomy()
    nuclei = np.zeros(len(taxonomy) + 1, dtype=np.int64)
    pixels = np.zeros(len(taxonomy), dtype=np.int64)
    for result in results:
        for class_id in result.classes.values():
            nuclei[class_id + 1] += 1
        pixels += np.bincount(result.semantic.ravel(), minlength=len(taxonomy))[:len(taxonomy)]
    return {"tiles": len(results),
            "nuclei": {taxonomy.name_of(c - 1): int(n) for c, n in enumerate(nuclei) if n > 0},
            "pixels": {taxonomy.name_of(c): int(n) for c, n in enumerate(pixels)}}


def save_result(result: AggregationResult,
                path,
                mpp: float | None = None):
    """Writes the semantic raster, the nucleus instances with their final classes, the tissue labels
    and the mitosis regions as a TMEF1 file.
    """
    regions = StackRecord("mitosis_regions", ["region_id"], result.mitosis_regions.astype(DTYPES["u32"])[None],
                          mpp=mpp)
    records = [labels_to_record(result.semantic, "semantic", mpp=mpp),
               instances_to_record(result.instances, "nuclei", classes=result.classes, mpp=mpp),
               labels_to_record(result.tissue, "tissue", mpp=mpp),
               regions]
    return save_stack(records, path)


def result_summary(result: AggregationResult,
                   taxonomy: Taxonomy | None = None) -> dict:
    """JSON-ready description of a result: per-nucleus decisions, candidate outcomes, composition."""
    taxonomy = taxonomy or default_taxonomy()
    return {"shape": list(result.shape),
            "background threshold": result.background_threshold,
            "nuclei": {str(i): d.to_dict(taxonomy) for i, d in sorted(result.provenance.items())},
            "mitosis candidates": [r.to_dict() for r in result.candidate_reports],
            "statistics": dataset_statistics([result], taxonomy)}

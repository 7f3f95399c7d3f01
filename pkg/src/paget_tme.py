import argparse
import json
import logging
import sys

import numpy as np

from pathlib import Path

from aggregation.aggregator import aggregate, aggregate_tiled, result_summary, save_result
from aggregation.bundle import downscale_bundle, load_bundle, save_bundle
from counting.cell_count import CalibrationTable, calibrate, calibration_pairs, count_records
from metrics.mcc import evaluate_instances
from metrics.overlap import evaluate_semantic
from metrics.report import MetricsReport
from postprocess.force_mode import force_mode, stitch_student_logits
from postprocess.nucleus_assignment import paget_h_assign
from synthetic.fixture import synth_fixture
from synthetic.scene import random_scene
from raster.containers import InstanceMap
from taxonomy.taxonomy import UNDEFINED, ClassMap, Taxonomy
from tme.association import CaseRecord, association_table, load_manifest, mutation_frequencies
from tme.slide_metrics import slide_metrics
from utility.errors import ConfigError, DegenerateInputError, PagetError
from utility.provenance import provenance_record
from utility.run_config import RunConfig
from utility.run_logging import RunLogging
from utility.stack_container import (find_record, instances_to_record, labels_to_record, load_stack,
                                     record_to_instances, record_to_labels, record_to_logits, save_stack)
from utility.tiling import TileWindow
from utility.time_tracking import stage_timer
from visualisation.plots import association_heatmap, calibration_scatter


logger = logging.getLogger("paget_tme")

USAGE_ERROR = 1
DATA_ERROR = 2


class UsageError(Exception):
    pass


class PagetArgumentParser(argparse.ArgumentParser):
    """Argument parser that reports usage errors with exit code 1 instead of exiting with 2."""
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


def build_parser() -> PagetArgumentParser:
    parser = PagetArgumentParser(prog="paget_tme",
                                 description="Teacher aggregation, student post-processing and TME analysis",
                                 formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument('--config',
                        action='store',
                        type=str,
                        default=None,
                        help='Steering file, defaults of steering_files/paget/default.yaml if omitted')
    parser.add_argument('--taxonomy',
                        action='store',
                        type=str,
                        default=None,
                        help='taxonomy.json replacing the embedded vocabulary')
    parser.add_argument('--verbose',
                        action='store_true',
                        help='Debug logging')
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    sub = commands.add_parser('aggregate', help='Unified label mask of a teacher bundle')
    sub.add_argument('--bundle', required=True, help='TMEF1 teacher bundle')
    sub.add_argument('--out', required=True, help='Output TMEF1 file')
    sub.add_argument('--tiled', action='store_true', help='Process in tiles with halo context')
    sub.add_argument('--downscale', type=int, choices=(1, 2), default=None,
                     help='Downscale factor, overrides tiling: downscale')

    sub = commands.add_parser('postprocess', help='Label mask of student logits')
    sub.add_argument('--student', required=True, help='TMEF1 student logits, one record or tile records')
    sub.add_argument('--mode', choices=('force', 'paget-h'), default='force',
                     help='force: argmax with leukocyte subtypes, paget-h: per-nucleus logit sums')
    sub.add_argument('--nuclei', default=None, help='TMEF1 file with a nuclei record (paget-h)')
    sub.add_argument('--out', required=True, help='Output TMEF1 file')

    sub = commands.add_parser('evaluate', help='Dice, IoU and nucleus MCC of a prediction')
    sub.add_argument('--gt', required=True, help='TMEF1 ground truth with a semantic record')
    sub.add_argument('--pred', required=True, help='TMEF1 prediction with a semantic record')
    sub.add_argument('--map', default='identity', help='Class map file or preset name')
    sub.add_argument('--out', default=None, help='JSON report, the table goes next to it')

    sub = commands.add_parser('count', help='Cell counting by components and calibrated area')
    count_commands = sub.add_subparsers(dest='count_command', metavar='count_command')
    count_commands.required = True
    estimate = count_commands.add_parser('estimate', help='Counts of one label raster')
    estimate.add_argument('--mask', required=True, help='TMEF1 file with a semantic record')
    estimate.add_argument('--calibration', default=None, help='Calibration table JSON')
    estimate.add_argument('--dataset', default=None, help='Dataset id in the calibration table')
    estimate.add_argument('--classes', nargs='+', default=None, help='Classes to count')
    estimate.add_argument('--out', default=None, help='JSON report')
    calibration = count_commands.add_parser('calibrate', help='Mean area per cell from paired outputs')
    calibration.add_argument('--pair', nargs=2, action='append', required=True, metavar=('SEMANTIC', 'NUCLEI'),
                             help='Semantic mask and nucleus-level output of the same tile, repeatable')
    calibration.add_argument('--dataset', required=True, help='Dataset id')
    calibration.add_argument('--classes', nargs='+', default=None, help='Classes to calibrate')
    calibration.add_argument('--out', required=True, help='Calibration table JSON, extended if it exists')
    calibration.add_argument('--plot', action='store_true', help='Scatter plot per class')

    sub = commands.add_parser('tme', help='Tumor microenvironment metrics and mutation association')
    tme_commands = sub.add_subparsers(dest='tme_command', metavar='tme_command')
    tme_commands.required = True
    slide = tme_commands.add_parser('slide', help='Cell-type ratios of one slide mask')
    slide.add_argument('--mask', required=True, help='TMEF1 file with a semantic record')
    slide.add_argument('--mpp', type=float, default=None, help='Microns per pixel, else from the file or config')
    slide.add_argument('--out', default=None, help='JSON report')
    association = tme_commands.add_parser('association', help='Mann-Whitney U of metrics vs. mutations')
    association.add_argument('--manifest', required=True, help='Case manifest (.csv or .json)')
    association.add_argument('--genes', nargs='+', default=None, help='Genes to test, all manifest genes if omitted')
    association.add_argument('--out', required=True, help='JSON matrix, the long CSV goes next to it')
    association.add_argument('--plot', action='store_true', help='p-value heatmap')

    sub = commands.add_parser('synth', help='Synthetic teacher bundle and its ground truth')
    sub.add_argument('--seed', type=int, required=True, help='Scene seed')
    sub.add_argument('--height', type=int, default=64, help='Pixels')
    sub.add_argument('--width', type=int, default=64, help='Pixels')
    sub.add_argument('--out', required=True, help='Output TMEF1 bundle')
    sub.add_argument('--truth', default=None, help='Output TMEF1 ground truth')

    sub = commands.add_parser('info', help='Taxonomy, class map or container headers')
    sub.add_argument('--container', default=None, help='TMEF1 file whose headers are printed')
    sub.add_argument('--map', default=None, help='Class map file or preset name')
    return parser


def load_configuration(args) -> tuple[RunConfig, Taxonomy]:
    config = RunConfig() if args.config is None else RunConfig.from_steering_file(args.config)
    config = config.with_environment()
    taxonomy = Taxonomy.load(args.taxonomy or config.taxonomy)
    return config, taxonomy


def write_report(report: MetricsReport,
                 out,
                 run_logging: RunLogging) -> None:
    """Table to stdout; JSON and text table next to each other when an output path is given."""
    table = report.to_table()
    sys.stdout.write(table)
    if out is None:
        return
    path = report.save_json(out)
    with open(path.with_suffix('.txt'), 'w') as f:
        f.write(table)
    run_logging.add_entry("outputs", "report", str(path))


def semantic_raster(path) -> np.ndarray:
    return record_to_labels(find_record(load_stack(path), "semantic"))


def command_aggregate(args, config, taxonomy, run_logging) -> None:
    with stage_timer(logger, "loading bundle", run_logging):
        bundle = load_bundle(args.bundle, taxonomy)
    factor = args.downscale or config.downscale
    bundle = downscale_bundle(bundle, factor)
    with stage_timer(logger, "aggregation", run_logging):
        if args.tiled:
            if bundle.halo:
                raise ConfigError("tiled aggregation needs a bundle without halo")
            result = aggregate_tiled(bundle, config, taxonomy, progress=sys.stderr.isatty())
        else:
            result = aggregate(bundle, config, taxonomy)
    result.check_invariants(taxonomy)

    out = Path(args.out)
    save_result(result, out, mpp=bundle.mpp)
    summary = result_summary(result, taxonomy)
    summary.update({"schema_version": "1.0", "kind": "aggregation", "bundle": bundle.name,
                    "downscale": factor, "provenance": run_logging.run_log["provenance"]})
    with open(out.with_suffix('.json'), 'w') as f:
        json.dump(summary, f, indent=2)

    run_logging.increment("nuclei", len(result.instances))
    run_logging.increment("mitotic nuclei", sum(1 for d in result.provenance.values() if d.mitosis_region))
    for report in result.candidate_reports:
        run_logging.add_entry("mitosis candidates", str(report.region_id), report.status)
    run_logging.add_entry("outputs", "mask", str(out))
    run_logging.add_entry("outputs", "summary", str(out.with_suffix('.json')))
    logger.info(f"Aggregated {len(result.instances)} nuclei of {bundle.name} into {out}")


def load_student(path, taxonomy):
    """Student logits of a file: a single record, or tile records carrying 'window' and 'extent' in meta
    which are summed into one stack.
    """
    records = [r for r in load_stack(path) if r.dtype_name == "f32"]
    if len(records) == 1 and "window" not in records[0].meta:
        return record_to_logits(records[0], taxonomy)
    if not records or any("window" not in r.meta or "extent" not in r.meta for r in records):
        raise ConfigError(f"{path}: tile records need 'window' and 'extent' meta entries")
    channels = [taxonomy.name_of(taxonomy.resolve(c)) for c in records[0].channels]
    tiles = []
    for index, record in enumerate(records):
        y0, x0, y1, x1 = record.meta["window"]
        tiles.append((TileWindow(index, y0, x0, y1, x1, (y0, x0, y1, x1)), record.data))
    return stitch_student_logits(tiles, tuple(records[0].meta["extent"]), channels)


def command_postprocess(args, config, taxonomy, run_logging) -> None:
    student = load_student(args.student, taxonomy)
    out = Path(args.out)
    if args.mode == 'force':
        labels = force_mode(student, taxonomy)
        records = [labels_to_record(labels, "semantic")]
    else:
        if args.nuclei is None:
            raise UsageError("--mode paget-h needs --nuclei")
        nuclei, _ = record_to_instances(find_record(load_stack(args.nuclei), "nuclei"))
        classes, labels = paget_h_assign(student, nuclei, config, taxonomy)
        records = [labels_to_record(labels, "semantic"), instances_to_record(nuclei, "nuclei", classes=classes)]
        run_logging.increment("nuclei", len(classes))
    save_stack(records, out)
    run_logging.add_entry("outputs", "mask", str(out))


def command_evaluate(args, config, taxonomy, run_logging) -> None:
    gt_records, pred_records = load_stack(args.gt), load_stack(args.pred)
    gt = record_to_labels(find_record(gt_records, "semantic"))
    pred = record_to_labels(find_record(pred_records, "semantic"))

    report = MetricsReport(kind="evaluation", provenance=run_logging.run_log["provenance"])
    report.add_section("semantic", evaluate_semantic(gt, pred, taxonomy=taxonomy))
    if any(r.name == "nuclei" for r in gt_records):
        class_map = ClassMap.load(args.map, taxonomy)
        instances, classes = record_to_instances(find_record(gt_records, "nuclei"))
        undefined = [i for i in instances.instance_ids() if classes.get(i, UNDEFINED) == UNDEFINED]
        if undefined:
            ids = np.where(np.isin(instances.ids, undefined), 0, instances.ids)
            instances = InstanceMap.from_labels(ids, instances.teacher_types())
            report.notes.append(f"{len(undefined)} ground truth nuclei without a class are not evaluated")
        evaluation = evaluate_instances(instances, classes, pred, class_map)
        rows = {t: {"mcc": evaluation.mcc_table()[t], **c.to_dict()} for t, c in evaluation.counts.items()}
        report.add_section(f"nuclei ({class_map.name})", rows)
        run_logging.increment("evaluated nuclei", len(evaluation.units))
    else:
        report.notes.append("ground truth without nuclei record, nucleus MCC skipped")
    write_report(report, args.out, run_logging)


def command_count(args, config, taxonomy, run_logging) -> None:
    if args.count_command == 'estimate':
        mask = semantic_raster(args.mask)
        mean_areas = None
        if args.calibration is not None:
            if args.dataset is None:
                raise UsageError("--calibration needs --dataset")
            mean_areas = CalibrationTable.load(args.calibration).mean_areas(args.dataset, taxonomy)
        records = count_records(mask, args.classes, mean_areas, config.connectivity, taxonomy)
        report = MetricsReport(kind="count", provenance=run_logging.run_log["provenance"])
        report.add_section("counts", {taxonomy.name_of(r.class_id): {k: v for k, v in r.to_dict(taxonomy).items()
                                                                     if k != "class"} for r in records})
        write_report(report, args.out, run_logging)
        return

    classes = args.classes or config.nucleus_classes
    class_ids = taxonomy.resolve_all(classes)
    masks, tables = [], []
    for semantic, nuclei in args.pair:
        masks.append(semantic_raster(semantic))
        tables.append(record_to_instances(find_record(load_stack(nuclei), "nuclei"))[1])
    pairs = calibration_pairs(masks, tables, class_ids)

    out = Path(args.out)
    table = CalibrationTable.load(out) if out.is_file() else CalibrationTable()
    for class_id in class_ids:
        name = taxonomy.name_of(class_id)
        try:
            fit = calibrate(pairs[class_id])
        except DegenerateInputError as error:
            logger.warning(f"No calibration for {name}: {error}")
            continue
        table.add(args.dataset, name, fit)
        logger.info(f"{name}: {fit.slope:.2f} px per cell, r squared {fit.r_squared:.4f} (n = {fit.n})")
        if args.plot:
            figure = calibration_scatter(pairs[class_id], fit, name, out.parent / f"calibration_{args.dataset}_{name}.pdf")
            run_logging.add_entry("outputs", f"plot {name}", str(figure))
    table.save(out)
    run_logging.add_entry("outputs", "calibration", str(out))


def slide_mpp(record, override, config) -> float:
    mpp = override if override is not None else record.mpp if record.mpp is not None else config.mpp
    if mpp is None:
        raise ConfigError("no microns per pixel: pass --mpp, store mpp in the mask or set tme: mpp")
    return mpp


def command_tme(args, config, taxonomy, run_logging) -> None:
    if args.tme_command == 'slide':
        record = find_record(load_stack(args.mask), "semantic")
        metrics = slide_metrics(record_to_labels(record), slide_mpp(record, args.mpp, config), config.margin_um,
                                config.connectivity, taxonomy)
        report = MetricsReport(kind="slide metrics", provenance=run_logging.run_log["provenance"])
        report.add_section("ratios", {name: {"count": metrics.counts[name],
                                             "peripheral count": metrics.peripheral_counts[name],
                                             "in tumor": metrics.in_tumor_ratio[name],
                                             "in peripheral": metrics.peripheral_ratio[name]}
                                      for name in metrics.counts})
        report.notes.append(f"tumor cells {metrics.tumor_cell_count}, band {metrics.band_area_mm2:.4f} mm2 "
                            f"({metrics.margin_um} um at {metrics.mpp} mpp)")
        write_report(report, args.out, run_logging)
        return

    manifest = load_manifest(args.manifest)
    inputs = [args.manifest]
    cases = []
    for case in manifest:
        slides = []
        for path in case.slides:
            record = find_record(load_stack(path), "semantic")
            mpp = case.mpp if case.mpp is not None else slide_mpp(record, None, config)
            slides.append(slide_metrics(record_to_labels(record), mpp, config.margin_um, config.connectivity,
                                        taxonomy))
            inputs.append(path)
        cases.append(CaseRecord.from_slides(case.case_id, slides, case.mutations))
    genes = args.genes or sorted({g for c in cases for g in c.mutations})
    frequencies = mutation_frequencies(cases, genes)
    for gene, row in frequencies.iterrows():
        logger.info(f"{gene}: {int(row['count'])} mutated cases ({row['percentage']:.1f} %)")

    run_logging.set_value("provenance", provenance_record(config.to_dict(), inputs))
    table = association_table(cases, genes)
    out = Path(args.out)
    table.save(out, out.with_suffix('.csv'), provenance=run_logging.run_log["provenance"])
    run_logging.add_entry("outputs", "association", str(out))
    run_logging.add_entry("outputs", "association csv", str(out.with_suffix('.csv')))
    run_logging.increment("cases", len(cases))
    if args.plot:
        figure = association_heatmap(table, out.with_name(f"{out.stem}_heatmap.pdf"))
        run_logging.add_entry("outputs", "heatmap", str(figure))


def command_synth(args, config, taxonomy, run_logging) -> None:
    scene = random_scene(args.seed, args.height, args.width)
    bundle, truth = synth_fixture(scene, config, taxonomy)
    save_bundle(bundle, args.out)
    run_logging.add_entry("outputs", "bundle", str(args.out))
    if args.truth is not None:
        save_result(truth, args.truth)
        run_logging.add_entry("outputs", "truth", str(args.truth))
    logger.info(f"Synthetic scene {args.seed}: {len(bundle.nuclei)} nuclei, "
                f"{len(bundle.mitosis_candidates)} mitosis candidates")


def command_info(args, config, taxonomy, run_logging) -> None:
    if args.container is not None:
        for record in load_stack(args.container):
            sys.stdout.write(json.dumps(record.header(), indent=2) + "\n")
        return
    if args.map is not None:
        class_map = ClassMap.load(args.map, taxonomy)
        rows = {taxonomy.name_of(c): {"target": class_map.apply(taxonomy.name_of(c)) or "unmapped"}
                for c in range(len(taxonomy))}
        sys.stdout.write(MetricsReport(kind="class map", sections={class_map.name: rows}).to_table())
        return
    rows = {}
    for class_id in range(len(taxonomy)):
        rows[str(class_id)] = {"name": taxonomy.name_of(class_id),
                               "abbreviation": taxonomy.abbreviation_of(class_id),
                               "kind": taxonomy.kinds[class_id],
                               "level": taxonomy.level_of(class_id)}
    sys.stdout.write(MetricsReport(kind="taxonomy", sections={taxonomy.name: rows}).to_table())


COMMANDS = {"aggregate": command_aggregate,
            "postprocess": command_postprocess,
            "evaluate": command_evaluate,
            "count": command_count,
            "tme": command_tme,
            "synth": command_synth,
            "info": command_info}


def output_folder(args) -> Path | None:
    out = getattr(args, 'out', None)
    return None if out is None else Path(out).parent


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return USAGE_ERROR
    except SystemExit as exit_request:
        return int(exit_request.code or 0)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr,
                        force=True)
    run_logging = RunLogging()
    command = " ".join(c for c in (args.command, getattr(args, 'count_command', None),
                                   getattr(args, 'tme_command', None)) if c)
    run_logging.set_value("command", command)
    try:
        config, taxonomy = load_configuration(args)
        inputs = [p for p in (args.config, args.taxonomy) if p is not None]
        candidates = [getattr(args, a, None) for a in ('bundle', 'student', 'nuclei', 'gt', 'pred', 'mask',
                                                       'calibration', 'manifest', 'container')]
        inputs += [p for p in candidates if p is not None]
        inputs += [p for pair in getattr(args, 'pair', None) or [] for p in pair]
        run_logging.set_value("provenance", provenance_record(config.to_dict(), inputs))
        with stage_timer(logger, command, run_logging):
            COMMANDS[args.command](args, config, taxonomy, run_logging)
    except UsageError as error:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"{parser.prog}: error: {error}\n")
        return USAGE_ERROR
    except (PagetError, OSError) as error:
        logger.error(f"{type(error).__name__}: {error}")
        return DATA_ERROR

    folder = output_folder(args)
    if folder is not None:
        path = run_logging.save_results(folder)
        logger.debug(f"Run log written to {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

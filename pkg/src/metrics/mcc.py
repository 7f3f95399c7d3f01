import math

import numpy as np

from dataclasses import dataclass

from raster.containers import InstanceMap, check_same_shape
from taxonomy.taxonomy import UNMAPPED, ClassMap
from utility.errors import ConfigError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation coefficient, 0.0 when a factor of the denominator is zero."""
    if min(c.tp, c.tn, c.fp, c.fn) < 0:
        raise ValueError(f"confusion counts have to be non-negative, got {c}")
    factors = (c.tp + c.fp, c.tp + c.fn, c.tn + c.fp, c.tn + c.fn)
    if 0 in factors:
        return 0.0
    numerator = c.tp * c.tn - c.fp * c.fn
    return numerator / (math.sqrt(factors[0] * factors[1]) * math.sqrt(factors[2] * factors[3]))


@dataclass(frozen=True)
class EvalUnit:
    instance_id: int
    gt_class: int           # evaluation class index
    pred_class: int         # evaluation class index or UNMAPPED


@dataclass
class InstanceEvaluation:
    targets: list
    units: list
    counts: dict            # evaluation class name -> ConfusionCounts

    def mcc_table(self) -> dict:
        """Evaluation class name -> MCC, None (not applicable) for classes without GT units."""
        return {t: (mcc(c) if c.tp + c.fn > 0 else None) for t, c in self.counts.items()}

    def __add__(self, other):
        if self.targets != other.targets:
            raise ConfigError("cannot pool evaluations with different evaluation classes")
        counts = dict(self.counts)
        for t, c in other.counts.items():
            counts[t] = counts.get(t, ConfusionCounts()) + c
        return InstanceEvaluation(self.targets, self.units + other.units, counts)


def largest_coverage(gt_instances: InstanceMap,
                     pred: np.ndarray,
                     class_map: ClassMap) -> dict:
    """Mapped predicted class covering most pixels of every ground truth instance. Ties go to the
    first evaluation class, unmapped pixels only decide an instance they cover completely.
    :return
        instance id -> evaluation class index or UNMAPPED
    """
    instance_ids = np.array(gt_instances.instance_ids(), dtype=np.int64)
    if instance_ids.size == 0:
        return {}
    ids = gt_instances.ids.astype(np.int64)
    inside = ids > 0
    lookup = np.zeros(int(instance_ids.max()) + 1, dtype=np.int64)
    lookup[instance_ids] = np.arange(instance_ids.size)
    width = len(class_map) + 1
    mapped = class_map.apply_ids(pred[inside]) + 1
    coverage = np.bincount(lookup[ids[inside]] * width + mapped,
                           minlength=instance_ids.size * width).reshape(instance_ids.size, width)[:, 1:]
    best = np.argmax(coverage, axis=1)
    best = np.where(coverage.max(axis=1) > 0, best, UNMAPPED)
    return dict(zip(instance_ids.tolist(), best.tolist()))


def evaluate_instances(gt_instances: InstanceMap,
                       gt_classes: dict,
                       pred: np.ndarray,
                       class_map: ClassMap) -> InstanceEvaluation:
    """Per-nucleus evaluation: one unit per ground truth nucleus, one-vs-rest confusion counts per
    evaluation class.
    :param gt_instances: ground truth InstanceMap
    :param gt_classes: instance id -> ground truth class id (source vocabulary)
    :param pred: predicted label raster
    :param class_map: ClassMap applied to ground truth and prediction
    :return
        InstanceEvaluation
    """
    check_same_shape(gt_instances.shape, pred=pred)
    predicted = largest_coverage(gt_instances, np.asarray(pred), class_map)
    units = []
    for instance_id in gt_instances.instance_ids():
        if instance_id not in gt_classes:
            raise ConfigError(f"ground truth nucleus {instance_id} has no class")
        source = gt_classes[instance_id]
        if source < 0:
            raise ConfigError(f"ground truth nucleus {instance_id} is undefined")
        if source >= len(class_map.table):
            raise ConfigError(f"ground truth nucleus {instance_id} has class id {source}, "
                              f"outside the {len(class_map.table)} classes of class map {class_map.name!r}")
        gt_class = int(class_map.table[source])
        if gt_class == UNMAPPED:
            raise ConfigError(f"ground truth class {class_map.taxonomy.name_of(gt_classes[instance_id])!r} "
                              f"is unmapped in class map {class_map.name!r}")
        units.append(EvalUnit(instance_id, gt_class, predicted[instance_id]))

    gt = np.array([u.gt_class for u in units], dtype=np.int64)
    pr = np.array([u.pred_class for u in units], dtype=np.int64)
    counts = {}
    for t, target in enumerate(class_map.targets):
        is_gt, is_pred = gt == t, pr == t
        counts[target] = ConfusionCounts(tp=int(np.sum(is_gt & is_pred)),
                                         tn=int(np.sum(~is_gt & ~is_pred)),
                                         fp=int(np.sum(~is_gt & is_pred)),
                                         fn=int(np.sum(is_gt & ~is_pred)))
    return InstanceEvaluation(list(class_map.targets), units, counts)

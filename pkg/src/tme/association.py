import json
import logging

import numpy as np
import pandas as pd

from dataclasses import dataclass, field
from pathlib import Path

from tme.statistics import mann_whitney_u
from utility.errors import ConfigError


logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
INSUFFICIENT_N = "insufficient n"
MIN_GROUP_SIZE = 2
MANIFEST_COLUMNS = ("case_id", "slide", "mpp")


@dataclass
class CaseManifest:
    case_id: str
    slides: list
    mpp: float | None
    mutations: dict          # gene -> bool


@dataclass
class CaseRecord:
    case_id: str
    metrics: dict            # metric name -> mean over slides, None if not applicable on every slide
    mutations: dict          # gene -> bool
    n_slides: int = 1

    @classmethod
    def from_slides(cls,
                    case_id: str,
                    slides: list,
                    mutations: dict):
        """Case record averaging the flat metrics of several SlideMetrics; not-applicable values are skipped."""
        flats = [s.flat() for s in slides]
        names = sorted({name for flat in flats for name in flat})
        metrics = {}
        for name in names:
            values = [flat[name] for flat in flats if flat.get(name) is not None]
            metrics[name] = float(np.mean(values)) if values else None
        return cls(case_id, metrics, dict(mutations), len(slides))


@dataclass
class AssociationRow:
    metric: str
    gene: str
    n_mut: int
    n_wt: int
    u: float | None = None
    p_value: float | None = None
    direction: str | None = None
    marker: str | None = None
    method: str | None = None


@dataclass
class AssociationTable:
    rows: list = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        """Long format: one row per (metric, gene)."""
        return pd.DataFrame([{"metric": r.metric, "gene": r.gene, "n_mut": r.n_mut, "n_wt": r.n_wt, "U": r.u,
                              "p": r.p_value, "direction": r.direction, "marker": r.marker}
                             for r in self.rows],
                            columns=["metric", "gene", "n_mut", "n_wt", "U", "p", "direction", "marker"])

    def matrix(self) -> dict:
        """{metric: {gene: {"p", "direction", "U", "n_mut", "n_wt", "marker"}}}."""
        matrix = {}
        for r in self.rows:
            matrix.setdefault(r.metric, {})[r.gene] = {"p": r.p_value, "direction": r.direction, "U": r.u,
                                                       "n_mut": r.n_mut, "n_wt": r.n_wt, "marker": r.marker}
        return matrix

    def p_matrix(self) -> pd.DataFrame:
        """metric x gene table of nominal p-values, NaN where not tested."""
        frame = self.to_frame()
        return frame.pivot(index="metric", columns="gene", values="p").astype(float)

    def save(self,
             json_path,
             csv_path=None,
             provenance: dict | None = None) -> None:
        json_path = Path(json_path)
        json_path.parent.mkdir(parents=True, exist_ok=True)
        with open(json_path, "w") as f:
            json.dump({"schema_version": SCHEMA_VERSION,
                       "kind": "association",
                       "p_values": "nominal",
                       "matrix": self.matrix(),
                       "provenance": provenance or {}}, f, indent=2)
        if csv_path is not None:
            self.to_frame().to_csv(csv_path, index=False)


def _as_flag(value) -> bool:
    if isinstance(value, str):
        value = value.strip().lower()
        if value in ("1", "true", "yes", "mut", "mutated"):
            return True
        if value in ("0", "false", "no", "wt", "wild type", "wildtype", ""):
            return False
        raise ConfigError(f"cannot read mutation flag {value!r}")
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return False
    return bool(value)


def load_manifest(path) -> list[CaseManifest]:
    """Reads a case manifest.

    CSV: one row per slide with columns case_id, slide, mpp and one 0/1 column per gene.
    JSON: list of {"case_id", "slides": [...], "mpp", "mutations": {gene: flag}}.

    :param path: .csv or .json file
    :return
        list of CaseManifest in file order, slides of a case grouped
    """
    path = Path(path)
    try:
        if path.suffix.lower() == ".json":
            with open(path, "r") as f:
                document = json.load(f)
            cases = [CaseManifest(case_id=str(entry["case_id"]),
                                  slides=[str(path.parent / s) for s in entry["slides"]],
                                  mpp=entry.get("mpp"),
                                  mutations={g: _as_flag(v) for g, v in entry.get("mutations", {}).items()})
                     for entry in document]
        else:
            frame = pd.read_csv(path, dtype={"case_id": str, "slide": str})
            missing = [c for c in ("case_id", "slide") if c not in frame.columns]
            if missing:
                raise ConfigError(f"manifest {path} lacks columns {missing}")
            genes = [c for c in frame.columns if c not in MANIFEST_COLUMNS]
            cases = []
            for case_id, rows in frame.groupby("case_id", sort=False):
                mpp = rows["mpp"].iloc[0] if "mpp" in rows else None
                cases.append(CaseManifest(case_id=str(case_id),
                                          slides=[str(path.parent / s) for s in rows["slide"]],
                                          mpp=None if mpp is None or pd.isna(mpp) else float(mpp),
                                          mutations={g: _as_flag(rows[g].iloc[0]) for g in genes}))
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as error:
        raise ConfigError(f"cannot read manifest {path}: {error}") from error
    logger.info(f"Manifest {path}: {len(cases)} cases, {sum(len(c.slides) for c in cases)} slides")
    return cases


def mutation_frequencies(cases: list,
                         genes=None) -> pd.DataFrame:
    """Mutated case count and percentage per gene.
    :param cases: list of CaseRecord or CaseManifest
    :param genes: genes to report, every gene of the cases if None
    :return
        DataFrame indexed by gene with columns count, percentage
    """
    genes = genes or sorted({g for c in cases for g in c.mutations})
    counts = [sum(bool(c.mutations.get(g, False)) for c in cases) for g in genes]
    n = len(cases)
    return pd.DataFrame({"count": counts,
                         "percentage": [100.0 * k / n if n else float("nan") for k in counts]},
                        index=pd.Index(genes, name="gene"))


def association_table(cases: list,
                      genes: list,
                      metrics=None) -> AssociationTable:
    """Mann-Whitney U test of every (metric, gene) pair between mutated and wild-type cases,
    nominal p-values.
    :param cases: list of CaseRecord
    :param genes: genes to test
    :param metrics: metric names, every metric of the cases if None
    :return
        AssociationTable, rows in (metric, gene) order
    """
    metrics = metrics or sorted({m for c in cases for m in c.metrics})
    table = AssociationTable()
    for metric in metrics:
        for gene in genes:
            mutated = [c.metrics[metric] for c in cases
                       if c.metrics.get(metric) is not None and c.mutations.get(gene, False)]
            wild_type = [c.metrics[metric] for c in cases
                         if c.metrics.get(metric) is not None and not c.mutations.get(gene, False)]
            row = AssociationRow(metric, gene, len(mutated), len(wild_type))
            if min(len(mutated), len(wild_type)) < MIN_GROUP_SIZE:
                row.marker = INSUFFICIENT_N
            else:
                result = mann_whitney_u(mutated, wild_type)
                half = len(mutated) * len(wild_type) / 2
                row.u, row.p_value, row.method = result.u, result.p_value, result.method
                row.direction = "enriched" if result.u > half else "depleted" if result.u < half else "none"
            table.rows.append(row)
    return table

import matplotlib
matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from pathlib import Path


def calibration_scatter(pairs,
                        calibration,
                        class_name: str,
                        filename) -> Path:
    """Scatter of pixel area against nucleus count with the fitted line through the origin.
    :param pairs: list of (area, count)
    :param calibration: Calibration of the class
    :param class_name: used in title and labels
    :param filename: output file, the format follows its suffix
    :return
        path of the written figure
    """
    areas = np.array([p[0] for p in pairs], dtype=np.float64)
    counts = np.array([p[1] for p in pairs], dtype=np.float64)

    fig, ax = plt.subplots(figsize=(5, 4), dpi=150)
    ax.scatter(areas, counts, s=12, color="tab:blue", alpha=0.7, label="tiles")
    x = np.linspace(0, areas.max(initial=1.0), 50)
    ax.plot(x, x / calibration.slope, color="tab:red",
            label=f"{calibration.slope:.1f} px / cell, R$^2$ = {calibration.r_squared:.3f}")
    ax.set_xlabel(f"{class_name} area [px]")
    ax.set_ylabel(f"{class_name} count")
    ax.set_title(f"Area vs. count, {class_name} (n = {calibration.n})")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()

    filename = Path(filename)
    filename.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(filename)
    plt.close(fig)
    return filename


def association_heatmap(table,
                        filename) -> Path:
    """-log10(p) heatmap of an AssociationTable, metrics as rows and genes as columns. Enriched
    cells are drawn with positive sign, depleted cells with negative sign.
    :param table: AssociationTable
    :param filename: output file
    :return
        path of the written figure
    """
    frame = table.to_frame()
    metrics = list(dict.fromkeys(frame["metric"]))
    genes = list(dict.fromkeys(frame["gene"]))
    values = np.full((len(metrics), len(genes)), np.nan)
    for row in frame.itertuples(index=False):
        if row.p is None or np.isnan(row.p):
            continue
        sign = -1.0 if row.direction == "depleted" else 1.0
        values[metrics.index(row.metric), genes.index(row.gene)] = sign * -np.log10(max(row.p, 1e-300))

    limit = max(np.nanmax(np.abs(values)) if np.isfinite(values).any() else 1.0, 1.0)
    fig, ax = plt.subplots(figsize=(1 + 0.6 * len(genes), 1 + 0.35 * len(metrics)), dpi=150)
    image = ax.imshow(values, cmap="coolwarm", vmin=-limit, vmax=limit, aspect="auto")
    ax.set_xticks(range(len(genes)), genes, rotation=60, ha="right", fontsize=7)
    ax.set_yticks(range(len(metrics)), metrics, fontsize=7)
    for i in range(len(metrics)):
        for j in range(len(genes)):
            if np.isfinite(values[i, j]) and abs(values[i, j]) > -np.log10(0.05):
                ax.text(j, i, "*", ha="center", va="center", fontsize=8)
    fig.colorbar(image, ax=ax, label="signed -log10 p (nominal)")
    fig.tight_layout()

    filename = Path(filename)
    filename.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(filename)
    plt.close(fig)
    return filename

"""Static figures for the agreement report: scatter and Bland-Altman panel grids."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .geometry import PARAMETERS, UNITS  # noqa: E402
from .stats import AgreementReport  # noqa: E402

LABELS = {
    "max_eem_diam": "maximum EEM diameter",
    "min_eem_diam": "minimum EEM diameter",
    "eem_csa": "EEM CSA",
    "max_lumen_diam": "maximum lumen diameter",
    "min_lumen_diam": "minimum lumen diameter",
    "lumen_csa": "lumen CSA",
    "lumen_eccentricity": "lumen eccentricity",
    "max_pm_thickness": "maximum P+M thickness",
    "min_pm_thickness": "minimum P+M thickness",
    "pm_csa": "P+M CSA",
    "pm_eccentricity": "P+M eccentricity",
    "plaque_burden": "plaque burden",
}

# No Software tag: keeps PNG bytes independent of the matplotlib version.
_SAVE_KW = {"dpi": 100, "metadata": {"Software": None}}


def _label(name: str) -> str:
    unit = UNITS[name]
    return f"{LABELS[name]} ({unit})" if unit else LABELS[name]


def _grid():
    fig, axes = plt.subplots(3, 4, figsize=(16, 11))
    return fig, axes.ravel()


def render_scatter_grid(report: AgreementReport, path: str | Path) -> Path:
    fig, axes = _grid()
    rows = {r.parameter: r for r in report.rows}
    for ax, name, tag in zip(axes, PARAMETERS, "abcdefghijkl"):
        truth, pred = report.scatter[name]
        ax.scatter(truth, pred, s=8, alpha=0.7)
        lo = float(min(truth.min(), pred.min()))
        hi = float(max(truth.max(), pred.max()))
        ax.plot([lo, hi], [lo, hi], "k--", lw=0.8)
        r = rows[name].r
        ax.set_title(f"({tag}) {LABELS[name]}" + ("" if r is None else f"  r={r:.3f}"), fontsize=9)
        ax.set_xlabel("ground truth", fontsize=8)
        ax.set_ylabel("predicted", fontsize=8)
        ax.tick_params(labelsize=7)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return Path(path)


def render_bland_altman_grid(report: AgreementReport, path: str | Path) -> Path:
    fig, axes = _grid()
    for ax, name, tag in zip(axes, PARAMETERS, "abcdefghijkl"):
        ba = report.bland_altman[name]
        ax.scatter(ba.averages, ba.differences, s=8, alpha=0.7)
        for y, style in ((ba.mean, "-"), (ba.loa_low, "--"), (ba.loa_high, "--")):
            ax.axhline(y, color="r" if style == "--" else "k", ls=style, lw=0.8)
        ax.set_title(f"({tag}) {_label(name)}", fontsize=9)
        ax.set_xlabel("average", fontsize=8)
        ax.set_ylabel("difference (pred - truth)", fontsize=8)
        ax.tick_params(labelsize=7)
        if np.ptp(ba.differences) == 0:
            ax.set_ylim(ba.mean - 1, ba.mean + 1)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return Path(path)

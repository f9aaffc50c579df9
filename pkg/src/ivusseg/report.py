"""Delimited outputs: clinical reports, segmentation metrics and agreement tables."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ValidationError
from .geometry import PARAMETERS, ClinicalReport
from .metrics import REFERENCE_ROWS, SliceMetrics, TargetSummary
from .stats import AGREEMENT_COLUMNS, AgreementReport

REPORT_COLUMNS = ("patient_id", "slice_id", "ps") + PARAMETERS
SLICE_METRIC_COLUMNS = ("slice_id", "target", "jm", "hd_mm")
SUMMARY_COLUMNS = ("source", "target", "n", "jm_mean", "jm_sd", "hd_mean", "hd_sd", "hd_excluded")
MEAN_ROW_NOTE = ("# the mean row averages r, mae and rmse across parameters with mixed units "
                 "(mm, mm2, unitless); it is not a physical quantity")


def fmt(x) -> str:
    if x is None:
        return "undefined"
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return str(x)
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_clinical_csv(path: str | Path,
                       rows: Iterable[tuple[str, str, float, ClinicalReport]]) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(REPORT_COLUMNS)
        for patient_id, slice_id, ps, rep in rows:
            w.writerow([patient_id, slice_id, fmt(ps)] + [fmt(v) for v in rep.values()])


def read_clinical_csv(path: str | Path) -> list[tuple[str, str, float, ClinicalReport]]:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"report not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        missing = set(REPORT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"{path}: missing columns {', '.join(sorted(missing))}")
        out = []
        for row in reader:
            try:
                rep = ClinicalReport(**{p: float(row[p]) for p in PARAMETERS})
                out.append((row["patient_id"], row["slice_id"], float(row["ps"]), rep))
            except ValueError as exc:
                raise ValidationError(f"{path}: bad value in row {row['slice_id']}: {exc}") from None
    return out


def write_slice_metrics(path: str | Path, metrics: Sequence[SliceMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(SLICE_METRIC_COLUMNS)
        for m in metrics:
            w.writerow([m.slice_id, m.target, fmt(m.jm), "" if m.hd_mm is None else fmt(m.hd_mm)])


def write_summary(path: str | Path, summaries: Sequence[TargetSummary],
                  include_reference: bool = True) -> None:
    """Per-target mean and sd summary; reference rows are the published values, labelled as such."""
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            w.writerow(["measured", s.target, s.n, fmt(s.jm_mean), fmt(s.jm_sd),
                        fmt(s.hd_mean), fmt(s.hd_sd), s.hd_excluded])
        if include_reference:
            for target, ref in REFERENCE_ROWS.items():
                w.writerow(["reference-not-reproduced", target, "", fmt(ref["jm_mean"]),
                            fmt(ref["jm_sd"]), fmt(ref["hd_mean"]), fmt(ref["hd_sd"]), ""])


def write_fold_metrics(path: str | Path, per_fold: Sequence[tuple[int, Sequence[TargetSummary]]]
                       ) -> None:
    """One row per (fold, target) with test-set metrics."""
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(("fold",) + SUMMARY_COLUMNS[1:])
        for fold, summaries in per_fold:
            for s in summaries:
                w.writerow([fold, s.target, s.n, fmt(s.jm_mean), fmt(s.jm_sd),
                            fmt(s.hd_mean), fmt(s.hd_sd), s.hd_excluded])


def write_agreement(out_dir: str | Path, report: AgreementReport, plots: bool = False) -> list[Path]:
    """Write ``agreement.csv`` plus per-parameter scatter / Bland-Altman CSVs (and figures)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "agreement.csv"]
    with open(written[0], "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(AGREEMENT_COLUMNS)
        for r in report.rows:
            w.writerow([r.parameter, r.n, fmt(r.r), fmt(r.p), fmt(r.mae), fmt(r.rmse),
                        fmt(r.re_min), fmt(r.re_max), fmt(r.ba_mean), fmt(r.loa_low),
                        fmt(r.loa_high)])
        m = report.mean_row
        w.writerow(["mean", "", fmt(m["r"]), "", fmt(m["mae"]), fmt(m["rmse"]),
                    "", "", "", "", ""])
        fh.write(MEAN_ROW_NOTE + "\n")
    for name, (truth, pred) in report.scatter.items():
        path = out / f"scatter_{name}.csv"
        with open(path, "w", newline="") as fh:
            w = _writer(fh)
            w.writerow(("truth", "pred"))
            w.writerows((fmt(t), fmt(p)) for t, p in zip(truth, pred))
        written.append(path)
        ba = report.bland_altman[name]
        path = out / f"bland_altman_{name}.csv"
        with open(path, "w", newline="") as fh:
            w = _writer(fh)
            w.writerow(("average", "difference"))
            w.writerows((fmt(a), fmt(d)) for a, d in zip(ba.averages, ba.differences))
        written.append(path)
    if plots:
        from .plotting import render_bland_altman_grid, render_scatter_grid
        written.append(render_scatter_grid(report, out / "scatter.png"))
        written.append(render_bland_altman_grid(report, out / "bland_altman.png"))
    return written

# emotion_ensemble/generators/report_excel.py
from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

from openpyxl import Workbook

from ..metrics import EvaluationReport
from ..styles import (
    bold_font, center_alignment, grey_font, header_fill, right_alignment,
    score_format, summary_fill, thin_border, title_font, undefined_fill,
)

# ---------- Helpers ----------

def _header_row(ws, row: int, headers: Sequence[str]) -> None:
    for col_idx, hdr in enumerate(headers, start=1):
        cell = ws.cell(row=row, column=col_idx, value=hdr)
        cell.font = bold_font
        cell.fill = header_fill
        cell.border = thin_border
        cell.alignment = center_alignment


def _score_cell(ws, row: int, col: int, value: Optional[float]) -> None:
    cell = ws.cell(row=row, column=col, value="n/a" if value is None else float(value))
    cell.border = thin_border
    cell.alignment = right_alignment
    if value is None:
        cell.fill = undefined_fill
        cell.font = grey_font
    else:
        cell.number_format = score_format


# ---------- Main generator ----------

def generate_report_workbook(report: EvaluationReport, out_path: str | Path, title: str = "Evaluation") -> str:
    """
    Workbook with a summary sheet (mAP, mRA, mR2, ERS, skipped counts), a
    per-category sheet (AP, ROC-AUC) and a per-dimension sheet (R2).
    Returns absolute path to the saved .xlsx file.
    """
    wb = Workbook()

    # Summary
    ws = wb.active
    ws.title = "Summary"
    ws.cell(row=1, column=1, value=title).font = title_font
    _header_row(ws, 3, ["Metric", "Value"])
    summary = [
        ("mAP", report.mAP),
        ("mRA", report.mRA),
        ("mR2", report.mR2),
        ("ERS", report.ers),
    ]
    r = 4
    for name, value in summary:
        ws.cell(row=r, column=1, value=name).border = thin_border
        _score_cell(ws, r, 2, None if value != value else value)  # NaN -> n/a
        r += 1
    for c in (1, 2):
        ws.cell(row=r - 1, column=c).fill = summary_fill

    r += 1
    info = [
        ("Clips", report.num_clips),
        ("Skipped AP classes", report.skipped_ap),
        ("Skipped ROC-AUC classes", report.skipped_roc_auc),
        ("Skipped R2 dimensions", report.skipped_r2),
        ("Tie policy", report.tie_policy),
        ("Score space", report.score_space),
    ]
    for name, value in info:
        ws.cell(row=r, column=1, value=name)
        ws.cell(row=r, column=2, value=value).alignment = right_alignment
        r += 1
    ws.column_dimensions["A"].width = 26
    ws.column_dimensions["B"].width = 14

    # Per category
    ws = wb.create_sheet("Categories")
    _header_row(ws, 1, ["Category", "AP", "ROC-AUC"])
    for i, (name, ap, ra) in enumerate(report.per_class_rows(), start=2):
        ws.cell(row=i, column=1, value=name).border = thin_border
        _score_cell(ws, i, 2, ap)
        _score_cell(ws, i, 3, ra)
    ws.column_dimensions["A"].width = 22
    ws.column_dimensions["B"].width = 12
    ws.column_dimensions["C"].width = 12
    ws.freeze_panes = "A2"

    # Per dimension
    ws = wb.create_sheet("Dimensions")
    _header_row(ws, 1, ["Dimension", "R2"])
    for i, (name, value) in enumerate(report.per_dimension_rows(), start=2):
        ws.cell(row=i, column=1, value=name).border = thin_border
        _score_cell(ws, i, 2, value)
    ws.column_dimensions["A"].width = 16
    ws.column_dimensions["B"].width = 12

    out = Path(out_path).expanduser()
    out.parent.mkdir(parents=True, exist_ok=True)
    wb.save(out)
    return str(out.resolve())

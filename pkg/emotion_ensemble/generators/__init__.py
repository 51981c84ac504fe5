# emotion_ensemble/generators/__init__.py
from .report_excel import generate_report_workbook

__all__ = ["generate_report_workbook"]

# emotion_ensemble/styles.py
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side

# Borders
thin_border = Border(left=Side(style="thin"), right=Side(style="thin"),
                     top=Side(style="thin"), bottom=Side(style="thin"))

# Fills
header_fill    = PatternFill(start_color="D9E1F2", end_color="D9E1F2", fill_type="solid")  # Light Blue (headers)
summary_fill   = PatternFill(start_color="FFF2CC", end_color="FFF2CC", fill_type="solid")  # Light Yellow (ERS row)
undefined_fill = PatternFill(start_color="FFC7CE", end_color="FFC7CE", fill_type="solid")  # Light Red (skipped class)

# Fonts
bold_font  = Font(bold=True)
title_font = Font(bold=True, size=13)
grey_font  = Font(color="808080")

# Alignments
center_alignment = Alignment(horizontal="center", vertical="center")
right_alignment  = Alignment(horizontal="right",  vertical="center")

# Number formats
score_format = "0.0000"

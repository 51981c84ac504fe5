# emotion_ensemble/ui.py
from __future__ import annotations

import json
import logging
from typing import Any, Iterable, Sequence

from rich.box import ROUNDED
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

console = Console()
# log records go to stderr, command output to stdout
err_console = Console(stderr=True)
BORDER = "bright_blue"


def setup_logging(level: str | int = "INFO") -> None:
    """Route the package logger through rich. Safe to call repeatedly."""
    logger = logging.getLogger("emotion_ensemble")
    logger.setLevel(level)
    if not any(isinstance(h, RichHandler) for h in logger.handlers):
        handler = RichHandler(console=err_console, show_path=False, rich_tracebacks=False)
        handler.setFormatter(logging.Formatter("%(message)s"))
        logger.addHandler(handler)
    logger.propagate = False


# ── Top banner ──────────────────────────────────────────────────────────────────
def banner(subtitle: str) -> None:
    title = Text("emoens — video emotion recognition engine", style="bold cyan")
    console.print(
        Panel(
            Text(subtitle, style="white"),
            title=title,
            box=ROUNDED,
            border_style=BORDER,
            expand=True,
        )
    )


# ── Message panels ──────────────────────────────────────────────────────────────
def panel(msg: str) -> None:
    """Pretty-print a single message in a colored box based on its marker."""
    style = "white"
    if msg.startswith(("✅", "🟢")):
        style = "green"
    elif msg.startswith(("⚠️", "❗")):
        style = "yellow"
    elif msg.startswith(("❌", "⛔")):
        style = "red"
    elif msg.startswith(("📊", "💾", "📁")) or "Saved ->" in msg:
        style = "cyan"
    console.print(Panel(msg, border_style=style, box=ROUNDED))


def note(msg: str) -> None:
    console.print(f"[dim]{msg}[/]")


def _cell(v: Any) -> str:
    if v is None:
        return "—"
    if isinstance(v, bool):
        return "[green]pass[/]" if v else "[red]FAIL[/]"
    if isinstance(v, float):
        return f"{v:.4f}" if abs(v) >= 1e-3 or v == 0 else f"{v:.2e}"
    return str(v)


def results_table(title: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    table = Table(title=title, box=ROUNDED, border_style=BORDER, expand=False)
    for i, col in enumerate(columns):
        table.add_column(col, justify="left" if i == 0 else "right")
    for row in rows:
        table.add_row(*(_cell(v) for v in row))
    console.print(table)


def print_json(payload: Any) -> None:
    # plain print keeps the output parseable (no rich markup)
    print(json.dumps(payload, indent=2, sort_keys=True))

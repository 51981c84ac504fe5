# emotion_ensemble/errors.py
from __future__ import annotations

import os
import sys
import traceback
from datetime import datetime
from functools import wraps
from pathlib import Path


class EmotionEnsembleError(Exception):
    """Base class for every error the engine raises on purpose."""


class ConfigError(EmotionEnsembleError, ValueError):
    def __init__(self, msg: str, *, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source:
            where = f"{source}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {msg}" if where else msg)


class LayoutError(EmotionEnsembleError, ValueError):
    """Unknown, malformed or disconnected skeleton layout."""


class ShapeError(EmotionEnsembleError, ValueError):
    def __init__(self, op: str, *shapes, detail: str = ""):
        shown = " vs ".join(str(tuple(s)) for s in shapes)
        msg = f"{op}: incompatible shapes {shown}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class GradientError(EmotionEnsembleError, RuntimeError):
    """backward() called on something it cannot differentiate."""


class SchemaError(EmotionEnsembleError, ValueError):
    pass


class FormatVersionError(SchemaError):
    pass


class RangeError(SchemaError):
    pass


class AlignmentError(EmotionEnsembleError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class EmptyInputError(EmotionEnsembleError, ValueError):
    pass


def app_home() -> Path:
    from .config_loader import load_app_config

    env = os.environ.get("EMOENS_HOME")
    return Path(env).expanduser() if env else Path.home() / load_app_config().home_dirname


def log_path() -> Path:
    from .config_loader import load_app_config

    return app_home() / load_app_config().error_log


def _log_error(e: BaseException) -> str:
    try:
        path = log_path()
        path.parent.mkdir(parents=True, exist_ok=True)
        ts = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        with path.open("a", encoding="utf-8") as f:
            f.write(f"\n[{ts}] {type(e).__name__}: {e}\n")
            traceback.print_exc(file=f)
        return str(path)
    except Exception:
        return ""


def catch_all(*, flow: str = "emoens"):
    """
    Decorator for CLI commands.
    - known engine errors: red panel, exit code 2
    - anything else: traceback appended to the error log, exit code 1
    - Ctrl-C: exit code 130
    """
    def _decorator(fn):
        @wraps(fn)
        def _wrapped(*args, **kwargs):
            from .ui import panel

            try:
                return fn(*args, **kwargs)
            except KeyboardInterrupt:
                panel("↩️ Cancelled.")
                return 130
            except SystemExit:
                raise
            except EmotionEnsembleError as e:
                panel(f"❌ {flow}: {e}")
                return 2
            except Exception as e:
                path = _log_error(e)
                where = f"\nDetails logged to {path}" if path else ""
                panel(f"⛔ {flow} failed: {type(e).__name__}: {e}{where}")
                if os.environ.get("EMOENS_DEBUG"):
                    traceback.print_exc(file=sys.stderr)
                return 1
        return _wrapped
    return _decorator

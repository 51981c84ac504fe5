# emotion_ensemble/config_loader.py
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import ConfigError

# ──────────────────────────────────────────────────────────────────────────────
# Dataclasses for structured config
# ──────────────────────────────────────────────────────────────────────────────

MODEL_KINDS = ("stgcn", "tsn-rgb", "tsn-flow")
STRATEGIES = ("uniform", "distance", "spatial")
TSN_STREAMS = ("body", "context", "face")


@dataclass(frozen=True)
class LossWeights:
    cat1: float = 1.0
    cat2: float = 1.0
    cont: float = 1.0
    emb: float = 1.0


@dataclass(frozen=True)
class ModelCfg:
    kind: str
    embedding_loss: bool
    partial_bn: bool
    loss_weights: LossWeights

    @property
    def is_tsn(self) -> bool:
        return self.kind.startswith("tsn")

    @property
    def modality(self) -> Optional[str]:
        return {"tsn-rgb": "rgb", "tsn-flow": "flow"}.get(self.kind)


@dataclass(frozen=True)
class StgcnCfg:
    layout: str
    strategy: str
    max_distance: int
    alpha: float
    edge_importance: bool
    input_bn: bool
    temporal_kernel: int
    dropout: float
    residual: bool
    channels: tuple[int, ...]
    strides: tuple[int, ...]


@dataclass(frozen=True)
class TsnCfg:
    streams: tuple[str, ...]
    scenes: bool
    attributes: bool
    stream_bn: bool
    dropout: float
    k_train: int
    k_eval: int


@dataclass(frozen=True)
class OptimizerCfg:
    lr_stgcn: float
    lr_tsn: float
    momentum: float
    weight_decay: float
    epochs: int
    batch_size: int


@dataclass(frozen=True)
class SchedulerCfg:
    factor: float
    patience: int
    min_delta: float
    min_lr: float


@dataclass(frozen=True)
class AugmentCfg:
    max_rotation_deg: float
    max_scale_delta: float
    max_translation: float
    anchors: int


@dataclass(frozen=True)
class DataCfg:
    manifest: Optional[str]
    augment: bool
    augmentation: AugmentCfg


@dataclass(frozen=True)
class RunConfig:
    seed: int
    model: ModelCfg
    stgcn: StgcnCfg
    tsn: TsnCfg
    optimizer: OptimizerCfg
    scheduler: SchedulerCfg
    data: DataCfg
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def learning_rate(self) -> float:
        return self.optimizer.lr_tsn if self.model.is_tsn else self.optimizer.lr_stgcn


@dataclass(frozen=True)
class AppCfg:
    home_dirname: str
    log_level: str
    error_log: str
    categories: tuple[str, ...]
    vad: tuple[str, ...]
    vad_scaling: str
    stream_widths: dict
    num_scenes: int
    num_attributes: int
    embedding_dim: int


# Singletons (memoized after first load)
_app_cfg: Optional[AppCfg] = None


# ──────────────────────────────────────────────────────────────────────────────
# Helpers
# ──────────────────────────────────────────────────────────────────────────────

def _config_dir() -> Path:
    # The config/ folder lives inside the package: emotion_ensemble/config/
    return Path(__file__).parent / "config"


def _require_keys(data: dict, keys: list[str], root_label: str = "config") -> None:
    missing = [k for k in keys if k not in data]
    if missing:
        raise ConfigError(f"Missing keys in {root_label}: {missing}")


def _key_line(text: str, path: tuple[str, ...]) -> Optional[int]:
    """1-based line of the YAML key at `path`, or of the deepest parent found."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return None
    line = None
    for key in path:
        if not isinstance(node, yaml.MappingNode):
            break
        for k_node, v_node in node.value:
            if k_node.value == key:
                line = k_node.start_mark.line + 1
                node = v_node
                break
        else:
            break
    return line


def _deep_merge(base: dict, override: dict, text: str, source: str,
                path: tuple[str, ...] = ()) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        here = path + (str(key),)
        if key not in base:
            raise ConfigError(
                f"unknown key '{'.'.join(here)}'",
                line=_key_line(text, here), source=source,
            )
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(
                    f"'{'.'.join(here)}' must be a mapping",
                    line=_key_line(text, here), source=source,
                )
            out[key] = _deep_merge(base[key], value, text, source, here)
        else:
            out[key] = value
    return out


def _typed(data: dict, key: str, kind, section: str, text: str, source: str):
    value = data[key]
    ok = isinstance(value, kind)
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value, ok = float(value), True
    if kind is int and isinstance(value, bool):
        ok = False
    if not ok:
        path = (section, key) if section else (key,)
        raise ConfigError(
            f"'{'.'.join(path)}' expected {getattr(kind, '__name__', kind)}, got {value!r}",
            line=_key_line(text, path), source=source,
        )
    return value


def _check(cond: bool, msg: str, path: tuple[str, ...], text: str, source: str) -> None:
    if not cond:
        raise ConfigError(msg, line=_key_line(text, path), source=source)


# ──────────────────────────────────────────────────────────────────────────────
# Public API
# ──────────────────────────────────────────────────────────────────────────────

def dump_default_config() -> str:
    """Packaged default run config, verbatim."""
    return (_config_dir() / "default_run.yaml").read_text(encoding="utf-8")


def load_run_config(path: str | Path | None = None, *, seed: Optional[int] = None) -> RunConfig:
    """
    Load the packaged defaults and deep-merge the user YAML at `path` over them.
    Unknown keys and wrongly typed values raise ConfigError with a line number.
    """
    if path is None:
        return parse_run_config("", seed=seed)
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_run_config(p.read_text(encoding="utf-8"), source=str(p), seed=seed)


def parse_run_config(text: str, *, source: str = "<string>", seed: Optional[int] = None) -> RunConfig:
    """Same as load_run_config for YAML text (used to rebuild a run from a checkpoint)."""
    defaults = yaml.safe_load(dump_default_config())
    merged = defaults
    if text.strip():
        try:
            user = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            raise ConfigError(f"invalid YAML: {e}",
                              line=mark.line + 1 if mark else None, source=source)
        if not isinstance(user, dict):
            raise ConfigError("top level must be a mapping", line=1, source=source)
        merged = _deep_merge(defaults, user, text, source)

    _require_keys(merged, ["seed", "model", "stgcn", "tsn", "optimizer", "scheduler", "data"],
                  "run config")

    m, s, t = merged["model"], merged["stgcn"], merged["tsn"]
    o, sc, d = merged["optimizer"], merged["scheduler"], merged["data"]
    aug = d["augmentation"]

    kind = _typed(m, "kind", str, "model", text, source)
    _check(kind in MODEL_KINDS, f"model.kind must be one of {MODEL_KINDS}", ("model", "kind"), text, source)
    strategy = _typed(s, "strategy", str, "stgcn", text, source)
    _check(strategy in STRATEGIES, f"stgcn.strategy must be one of {STRATEGIES}",
           ("stgcn", "strategy"), text, source)

    channels = tuple(int(c) for c in s["channels"])
    strides = tuple(int(c) for c in s["strides"])
    _check(len(channels) == len(strides) and len(channels) > 0,
           "stgcn.channels and stgcn.strides must have the same non-zero length",
           ("stgcn", "strides"), text, source)
    _check(all(st in (1, 2) for st in strides), "stgcn.strides entries must be 1 or 2",
           ("stgcn", "strides"), text, source)
    kernel = _typed(s, "temporal_kernel", int, "stgcn", text, source)
    _check(kernel >= 1 and kernel % 2 == 1, "stgcn.temporal_kernel must be odd",
           ("stgcn", "temporal_kernel"), text, source)

    streams = tuple(t["streams"])
    _check(all(x in TSN_STREAMS for x in streams) and len(streams) > 0,
           f"tsn.streams must be a non-empty subset of {TSN_STREAMS}", ("tsn", "streams"), text, source)
    _check(t["k_train"] >= 1 and t["k_eval"] >= 1, "tsn.k_train / tsn.k_eval must be >= 1",
           ("tsn", "k_train"), text, source)

    lw = m["loss_weights"]
    cfg = RunConfig(
        seed=int(seed if seed is not None else _typed(merged, "seed", int, "", text, source)),
        model=ModelCfg(
            kind=kind,
            embedding_loss=_typed(m, "embedding_loss", bool, "model", text, source),
            partial_bn=_typed(m, "partial_bn", bool, "model", text, source),
            loss_weights=LossWeights(**{k: float(lw[k]) for k in ("cat1", "cat2", "cont", "emb")}),
        ),
        stgcn=StgcnCfg(
            layout=_typed(s, "layout", str, "stgcn", text, source),
            strategy=strategy,
            max_distance=_typed(s, "max_distance", int, "stgcn", text, source),
            alpha=_typed(s, "alpha", float, "stgcn", text, source),
            edge_importance=_typed(s, "edge_importance", bool, "stgcn", text, source),
            input_bn=_typed(s, "input_bn", bool, "stgcn", text, source),
            temporal_kernel=kernel,
            dropout=_typed(s, "dropout", float, "stgcn", text, source),
            residual=_typed(s, "residual", bool, "stgcn", text, source),
            channels=channels,
            strides=strides,
        ),
        tsn=TsnCfg(
            streams=streams,
            scenes=_typed(t, "scenes", bool, "tsn", text, source),
            attributes=_typed(t, "attributes", bool, "tsn", text, source),
            stream_bn=_typed(t, "stream_bn", bool, "tsn", text, source),
            dropout=_typed(t, "dropout", float, "tsn", text, source),
            k_train=_typed(t, "k_train", int, "tsn", text, source),
            k_eval=_typed(t, "k_eval", int, "tsn", text, source),
        ),
        optimizer=OptimizerCfg(
            lr_stgcn=_typed(o, "lr_stgcn", float, "optimizer", text, source),
            lr_tsn=_typed(o, "lr_tsn", float, "optimizer", text, source),
            momentum=_typed(o, "momentum", float, "optimizer", text, source),
            weight_decay=_typed(o, "weight_decay", float, "optimizer", text, source),
            epochs=_typed(o, "epochs", int, "optimizer", text, source),
            batch_size=_typed(o, "batch_size", int, "optimizer", text, source),
        ),
        scheduler=SchedulerCfg(
            factor=_typed(sc, "factor", float, "scheduler", text, source),
            patience=_typed(sc, "patience", int, "scheduler", text, source),
            min_delta=_typed(sc, "min_delta", float, "scheduler", text, source),
            min_lr=_typed(sc, "min_lr", float, "scheduler", text, source),
        ),
        data=DataCfg(
            manifest=d.get("manifest"),
            augment=bool(d["augment"]),
            augmentation=AugmentCfg(
                max_rotation_deg=float(aug["max_rotation_deg"]),
                max_scale_delta=float(aug["max_scale_delta"]),
                max_translation=float(aug["max_translation"]),
                anchors=int(aug["anchors"]),
            ),
        ),
        raw=merged,
    )
    _check(cfg.optimizer.lr_stgcn > 0 and cfg.optimizer.lr_tsn > 0, "learning rates must be > 0",
           ("optimizer",), text, source)
    _check(cfg.optimizer.batch_size >= 1, "optimizer.batch_size must be >= 1",
           ("optimizer", "batch_size"), text, source)
    return cfg


def load_app_config() -> AppCfg:
    """
    Load and cache the app configuration from config/app_config.yaml.
    """
    global _app_cfg
    if _app_cfg:
        return _app_cfg

    cfg_path = _config_dir() / "app_config.yaml"
    data = yaml.safe_load(cfg_path.read_text(encoding="utf-8"))

    # Minimal validation to fail fast on bad edits
    _require_keys(data, ["app", "vocabulary", "tsn"], "app_config.yaml")
    _require_keys(data["app"], ["home_dirname", "log_level", "error_log"], "app")
    _require_keys(data["vocabulary"], ["categories", "vad", "vad_scaling"], "vocabulary")
    _require_keys(data["tsn"], ["stream_widths", "num_scenes", "num_attributes", "embedding_dim"], "tsn")

    _app_cfg = AppCfg(
        home_dirname=data["app"]["home_dirname"],
        log_level=data["app"]["log_level"],
        error_log=data["app"]["error_log"],
        categories=tuple(data["vocabulary"]["categories"]),
        vad=tuple(data["vocabulary"]["vad"]),
        vad_scaling=data["vocabulary"]["vad_scaling"],
        stream_widths=dict(data["tsn"]["stream_widths"]),
        num_scenes=int(data["tsn"]["num_scenes"]),
        num_attributes=int(data["tsn"]["num_attributes"]),
        embedding_dim=int(data["tsn"]["embedding_dim"]),
    )
    return _app_cfg


def layout_path(layout_id: str) -> Optional[Path]:
    """Shipped layout file for `layout_id`, if any."""
    p = _config_dir() / "layouts" / f"{layout_id}.yaml"
    return p if p.exists() else None

# emotion_ensemble/stgcn.py
"""
Spatial-temporal graph convolutional network over 2D skeleton sequences.

Input layout is (N, C, T, V): batch, coordinate channels (x, y, confidence),
frames, joints. The model emits one video-level row of 26 categorical scores
followed by 3 VAD values.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .config_loader import StgcnCfg
from .errors import ConfigError, ShapeError
from .graph import PartitionedAdjacency, build_partitioned_adjacency, build_skeleton_graph
from .ndcore import functional as F
from .ndcore.layers import BatchNorm, Conv1x1, Dropout, Linear, Module, TemporalConv
from .ndcore.tensor import Parameter, Tensor, as_tensor, einsum, get_default_dtype, no_grad, relu
from .records import HEAD_WIDTH, NUM_CATEGORIES, Prediction

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StgcnUnitConfig:
    in_channels: int
    out_channels: int
    temporal_kernel: int = 9
    stride: int = 1
    residual: bool = True

    def __post_init__(self):
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 != 1:
            raise ConfigError(f"temporal kernel must be odd, got {self.temporal_kernel}")
        if self.stride not in (1, 2):
            raise ConfigError(f"unit stride must be 1 or 2, got {self.stride}")


# ---------- spatial graph convolution ----------

def spatial_graph_conv(
    x: Tensor,
    weight: Tensor,
    adjacency: Union[np.ndarray, Tensor],
    mask: Optional[Tensor] = None,
    bias: Optional[Tensor] = None,
) -> Tensor:
    """
    H_out = sum_k W_k H_in (A_k * M_k).

    `weight` is the (K*C_out, C_in) matrix of one 1x1 convolution; row
    k*C_out + c holds W_k[c]. The adjacency product is shared over N and T.
    """
    if x.ndim != 4:
        raise ShapeError("spatial_graph_conv", x.shape, detail="input must be (N, C, T, V)")
    a = as_tensor(adjacency, x)
    k, v = a.shape[0], a.shape[1]
    if a.shape != (k, v, v) or x.shape[3] != v:
        raise ShapeError("spatial_graph_conv", x.shape, a.shape)
    if weight.shape[0] % k != 0:
        raise ShapeError("spatial_graph_conv", weight.shape, a.shape,
                         detail="weight rows must be a multiple of the subset count")
    if mask is not None:
        if mask.shape != a.shape:
            raise ShapeError("edge importance", mask.shape, a.shape)
        a = a * mask

    n, _, t, _ = x.shape
    c_out = weight.shape[0] // k
    y = F.conv_1x1(x, weight, bias).reshape(n, k, c_out, t, v)
    return einsum("nkctj,kij->ncti", y, a)


class SpatialGraphConv(Module):
    def __init__(self, in_channels: int, out_channels: int, num_subsets: int, rng: np.random.Generator):
        super().__init__()
        self.num_subsets = num_subsets
        self.out_channels = out_channels
        self.conv = Conv1x1(in_channels, out_channels * num_subsets, rng)

    def forward(self, x: Tensor, adjacency: np.ndarray, mask: Optional[Tensor] = None) -> Tensor:
        return spatial_graph_conv(x, self.conv.weight, adjacency, mask, self.conv.bias)


# ---------- unit ----------

class ResidualProjection(Module):
    """Strided 1x1 projection + BN used when the residual changes shape."""

    def __init__(self, in_channels: int, out_channels: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.stride = stride
        self.conv = Conv1x1(in_channels, out_channels, rng)
        self.bn = BatchNorm(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        if self.stride > 1:
            x = x[:, :, :: self.stride]
        return self.bn(self.conv(x))


class StgcnUnit(Module):
    """
    spatial graph conv -> BN -> ReLU -> temporal conv (stride) -> BN -> dropout
    -> residual add -> ReLU
    """

    def __init__(
        self,
        cfg: StgcnUnitConfig,
        num_subsets: int,
        num_joints: int,
        rng: np.random.Generator,
        *,
        dropout: float = 0.0,
        edge_importance: bool = True,
    ):
        super().__init__()
        self.cfg = cfg
        self.gcn = SpatialGraphConv(cfg.in_channels, cfg.out_channels, num_subsets, rng)
        self.bn_gcn = BatchNorm(cfg.out_channels)
        self.tcn = TemporalConv(cfg.out_channels, cfg.out_channels, cfg.temporal_kernel, rng,
                                stride=cfg.stride)
        self.bn_tcn = BatchNorm(cfg.out_channels)
        self.drop = Dropout(dropout, rng)

        self.identity_residual = False
        self.residual: Optional[ResidualProjection] = None
        if cfg.residual:
            if cfg.in_channels == cfg.out_channels and cfg.stride == 1:
                self.identity_residual = True
            else:
                self.residual = ResidualProjection(cfg.in_channels, cfg.out_channels, cfg.stride, rng)

        dt = get_default_dtype()
        self.edge_importance: Optional[Parameter] = (
            Parameter(np.ones((num_subsets, num_joints, num_joints), dtype=dt)) if edge_importance else None
        )

    def forward(self, x: Tensor, adjacency: np.ndarray) -> Tensor:
        h = relu(self.bn_gcn(self.gcn(x, adjacency, self.edge_importance)))
        h = self.drop(self.bn_tcn(self.tcn(h)))
        if self.identity_residual:
            h = h + x
        elif self.residual is not None:
            h = h + self.residual(x)
        return relu(h)


def stgcn_unit_forward(x: Tensor, unit: StgcnUnit, adjacency: PartitionedAdjacency) -> Tensor:
    return unit(x, adjacency.matrices)


# ---------- model ----------

class StgcnModel(Module):
    """
    Optional input BN over the V*C joint channels, a stack of units, global
    average pooling over (T, V) and a linear head of width 26 + 3.
    """

    def __init__(
        self,
        adjacency: PartitionedAdjacency,
        channels: Sequence[int],
        strides: Sequence[int],
        rng: np.random.Generator,
        *,
        in_channels: int = 3,
        temporal_kernel: int = 9,
        dropout: float = 0.5,
        residual: bool = True,
        edge_importance: bool = True,
        input_bn: bool = True,
        num_outputs: int = HEAD_WIDTH,
    ):
        super().__init__()
        if len(channels) != len(strides) or not channels:
            raise ConfigError("channels and strides must have the same non-zero length")
        self.adjacency = adjacency
        self.in_channels = in_channels
        self.num_joints = adjacency.num_joints
        self.num_outputs = num_outputs

        self.data_bn = BatchNorm(in_channels * self.num_joints) if input_bn else None

        units = []
        prev = in_channels
        for i, (c, s) in enumerate(zip(channels, strides)):
            cfg = StgcnUnitConfig(prev, int(c), temporal_kernel, int(s), residual=residual and i > 0)
            units.append(StgcnUnit(cfg, adjacency.num_subsets, self.num_joints, rng,
                                   dropout=dropout if i > 0 else 0.0,
                                   edge_importance=edge_importance))
            prev = int(c)
        self.units = units
        self.head = Linear(prev, num_outputs, rng)

    @classmethod
    def from_config(cls, cfg: StgcnCfg, rng: np.random.Generator, *, in_channels: int = 3,
                    num_outputs: int = HEAD_WIDTH) -> "StgcnModel":
        graph = build_skeleton_graph(cfg.layout)
        adjacency = build_partitioned_adjacency(graph, cfg.strategy, cfg.max_distance, cfg.alpha)
        log.debug("stgcn: layout=%s strategy=%s K=%d units=%d",
                  cfg.layout, cfg.strategy, adjacency.num_subsets, len(cfg.channels))
        return cls(
            adjacency, cfg.channels, cfg.strides, rng,
            in_channels=in_channels,
            temporal_kernel=cfg.temporal_kernel,
            dropout=cfg.dropout,
            residual=cfg.residual,
            edge_importance=cfg.edge_importance,
            input_bn=cfg.input_bn,
            num_outputs=num_outputs,
        )

    def _input_norm(self, x: Tensor) -> Tensor:
        n, c, t, v = x.shape
        h = x.permute(0, 3, 1, 2).reshape(n, v * c, t)
        h = self.data_bn(h)
        return h.reshape(n, v, c, t).permute(0, 2, 3, 1)

    def features(self, x: Tensor) -> Tensor:
        """Pooled (N, C_last) features."""
        if x.ndim != 4 or x.shape[1] != self.in_channels or x.shape[3] != self.num_joints:
            raise ShapeError("stgcn input", x.shape, ("N", self.in_channels, "T", self.num_joints))
        h = self._input_norm(x) if self.data_bn is not None else x
        mats = self.adjacency.matrices
        for unit in self.units:
            h = unit(h, mats)
        return F.average_pool(h, axes=(2, 3))

    def forward(self, x: Tensor) -> Tensor:
        return self.head(self.features(as_tensor(x)))

    def predict(self, batch: np.ndarray) -> list[Prediction]:
        """Video-level predictions for a (N, C, T, V) array, in eval mode without grad."""
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                out = self.forward(Tensor(batch)).data
        finally:
            self.train(was_training)
        return split_outputs(out)


def split_outputs(out: np.ndarray, num_categories: int = NUM_CATEGORIES) -> list[Prediction]:
    return [Prediction.from_row(row, num_categories) for row in np.asarray(out, dtype=np.float64)]


def stgcn_forward(model: StgcnModel, sequence: np.ndarray) -> list[Prediction]:
    return model.predict(sequence)


def load_pretrained(
    model: Module,
    checkpoint: Union[str, Path, dict],
    skip_prefixes: Sequence[str] = ("head.",),
) -> tuple[list[str], list[str]]:
    """
    Copy matching weights from a checkpoint (path or state dict), keeping
    the freshly initialized prediction head.
    """
    if isinstance(checkpoint, (str, Path)):
        from .storage import load_checkpoint

        state = load_checkpoint(checkpoint).state
    else:
        state = checkpoint
    missing, unexpected = model.load_state_dict(state, strict=False, skip_prefixes=skip_prefixes)
    if missing:
        log.warning("pretrained import: %d parameters not in checkpoint (kept at init)", len(missing))
    if unexpected:
        log.info("pretrained import: ignored %d checkpoint entries", len(unexpected))
    return missing, unexpected

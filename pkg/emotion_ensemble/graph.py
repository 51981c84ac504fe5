# emotion_ensemble/graph.py
"""
Skeleton graph and partitioned, normalized adjacency tensors.

Convention: row i of every adjacency matrix is the *receiving* joint, so a
graph convolution computes out[i] = sum_k sum_j A_k[i, j] * (W_k h)[j].
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .config_loader import layout_path
from .errors import LayoutError

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.001
STRATEGY_SUBSETS = {"uniform": 1, "distance": 2, "spatial": 3}


@dataclass(frozen=True)
class SkeletonGraph:
    num_joints: int
    edges: tuple[tuple[int, int], ...]
    root: int
    layout_id: str
    joint_names: tuple[str, ...] = ()
    groups: dict = field(default_factory=dict, compare=False)

    def adjacency(self) -> np.ndarray:
        """Binary symmetric V×V matrix, no self loops."""
        a = np.zeros((self.num_joints, self.num_joints))
        for i, j in self.edges:
            a[i, j] = 1.0
            a[j, i] = 1.0
        return a

    def group(self, name: str) -> tuple[int, ...]:
        return tuple(self.groups.get(name, ()))


@dataclass(frozen=True)
class PartitionedAdjacency:
    strategy: str
    matrices: np.ndarray  # (K_v, V, V), already normalized
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        self.matrices.setflags(write=False)

    @property
    def num_subsets(self) -> int:
        return int(self.matrices.shape[0])

    @property
    def num_joints(self) -> int:
        return int(self.matrices.shape[1])

    def permuted(self, perm: Sequence[int]) -> "PartitionedAdjacency":
        """Relabel joints: new joint p corresponds to old joint perm[p]."""
        idx = np.asarray(perm)
        return PartitionedAdjacency(
            self.strategy, np.ascontiguousarray(self.matrices[:, idx][:, :, idx]), self.alpha
        )


# ---------- construction ----------

def _resolve_joint(token, names: Sequence[str], num_joints: int, layout_id: str) -> int:
    if isinstance(token, str):
        if token not in names:
            raise LayoutError(f"{layout_id}: unknown joint name '{token}'")
        return names.index(token)
    idx = int(token)
    if not 0 <= idx < num_joints:
        raise LayoutError(f"{layout_id}: joint index {idx} out of range [0, {num_joints})")
    return idx


def graph_from_edges(
    num_joints: int,
    edges: Sequence[Sequence],
    root,
    layout_id: str = "custom",
    joint_names: Sequence[str] = (),
    groups: Optional[dict] = None,
) -> SkeletonGraph:
    """Validate an edge list and build a connected SkeletonGraph."""
    names = list(joint_names)
    if names and len(names) != num_joints:
        raise LayoutError(f"{layout_id}: {len(names)} joint names for {num_joints} joints")
    if num_joints < 1:
        raise LayoutError(f"{layout_id}: a layout needs at least one joint")

    resolved: list[tuple[int, int]] = []
    for pair in edges:
        if len(pair) != 2:
            raise LayoutError(f"{layout_id}: edge {pair!r} is not a pair")
        i = _resolve_joint(pair[0], names, num_joints, layout_id)
        j = _resolve_joint(pair[1], names, num_joints, layout_id)
        if i == j:
            raise LayoutError(f"{layout_id}: self edge on joint {i}")
        e = (min(i, j), max(i, j))
        if e not in resolved:
            resolved.append(e)

    root_idx = _resolve_joint(root, names, num_joints, layout_id)

    a = np.zeros((num_joints, num_joints))
    for i, j in resolved:
        a[i, j] = a[j, i] = 1.0
    n_comp, _ = connected_components(csr_matrix(a), directed=False)
    if n_comp != 1:
        raise LayoutError(f"{layout_id}: edge list is disconnected ({n_comp} components)")

    resolved_groups = {
        g: tuple(_resolve_joint(t, names, num_joints, layout_id) for t in members)
        for g, members in (groups or {}).items()
    }
    return SkeletonGraph(
        num_joints=num_joints,
        edges=tuple(resolved),
        root=root_idx,
        layout_id=layout_id,
        joint_names=tuple(names),
        groups=resolved_groups,
    )


def build_skeleton_graph(layout_id: str) -> SkeletonGraph:
    """
    Build a graph from a shipped layout name (e.g. "bold18") or a path to a
    layout YAML file with `joints`, `edges` and `root` keys.
    """
    path = layout_path(layout_id)
    if path is None:
        candidate = Path(layout_id).expanduser()
        if candidate.is_file():
            path = candidate
        else:
            raise LayoutError(f"unknown layout '{layout_id}'")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise LayoutError(f"{path}: invalid YAML: {e}") from e
    if not isinstance(data, dict):
        raise LayoutError(f"{path}: layout must be a mapping")
    missing = [k for k in ("edges", "root") if k not in data]
    if missing or ("joints" not in data and "num_joints" not in data):
        raise LayoutError(f"{path}: missing keys {missing or ['joints']}")

    names = list(data.get("joints") or [])
    num_joints = int(data.get("num_joints", len(names)))
    graph = graph_from_edges(
        num_joints,
        data["edges"],
        data["root"],
        layout_id=str(data.get("layout_id", layout_id)),
        joint_names=names,
        groups=data.get("groups"),
    )
    log.debug("layout %s: %d joints, %d edges, root=%d",
              graph.layout_id, graph.num_joints, len(graph.edges), graph.root)
    return graph


# ---------- hop distances and partitions ----------

def hop_distances(g: SkeletonGraph, root: Optional[int] = None) -> np.ndarray:
    """Breadth-first hop count of every joint from `root` (default: the graph root)."""
    src = g.root if root is None else int(root)
    dist = shortest_path(csr_matrix(g.adjacency()), directed=False, unweighted=True, indices=src)
    return dist.astype(np.int64)


def partition(g: SkeletonGraph, strategy: str, max_distance: int = 1) -> list[np.ndarray]:
    """
    Split Â = I + A into K_v binary subsets.
      uniform  -> [I + A]
      distance -> [I, A]                       (D = 1 only)
      spatial  -> [self + equal-hop, centripetal, centrifugal]
    """
    v = g.num_joints
    eye = np.eye(v)
    a = g.adjacency()

    if strategy == "uniform":
        return [eye + a]

    if strategy == "distance":
        if max_distance != 1:
            raise LayoutError(f"distance partitioning supports D=1 only (got D={max_distance})")
        return [eye, a]

    if strategy == "spatial":
        hop = hop_distances(g)
        a_root, a_close, a_far = eye.copy(), np.zeros((v, v)), np.zeros((v, v))
        rows, cols = np.nonzero(a)
        for i, j in zip(rows, cols):
            if hop[j] == hop[i]:
                a_root[i, j] = 1.0
            elif hop[j] < hop[i]:
                a_close[i, j] = 1.0
            else:
                a_far[i, j] = 1.0
        return [a_root, a_close, a_far]

    raise LayoutError(f"unknown labeling strategy '{strategy}'")


def normalize_subset(matrix: np.ndarray, alpha: float = DEFAULT_ALPHA,
                     degree: Optional[np.ndarray] = None) -> np.ndarray:
    """D^-1/2 M D^-1/2 with D_ii = sum_j M_ij + alpha unless `degree` is given."""
    m = np.asarray(matrix, dtype=np.float64)
    if np.any(m < 0):
        raise LayoutError("adjacency subsets must be non-negative")
    d = m.sum(axis=1) + alpha if degree is None else np.asarray(degree, dtype=np.float64)
    inv_sqrt = 1.0 / np.sqrt(d)
    return inv_sqrt[:, None] * m * inv_sqrt[None, :]


def normalize_partition(matrices: Sequence[np.ndarray], alpha: float = DEFAULT_ALPHA,
                        strategy: Optional[str] = None) -> PartitionedAdjacency:
    """Normalize every subset with its own degree matrix."""
    stack = np.stack([np.asarray(m, dtype=np.float64) for m in matrices])
    if stack.ndim != 3 or stack.shape[1] != stack.shape[2]:
        raise LayoutError(f"expected K square matrices, got shape {stack.shape}")
    if np.any(stack < 0):
        raise LayoutError("adjacency subsets must be non-negative")
    if strategy is None:
        strategy = {1: "uniform", 2: "distance", 3: "spatial"}.get(len(stack), "custom")
    normed = np.stack([normalize_subset(m, alpha) for m in stack])
    return PartitionedAdjacency(strategy=strategy, matrices=normed, alpha=alpha)


def build_partitioned_adjacency(g: SkeletonGraph, strategy: str = "spatial",
                                max_distance: int = 1,
                                alpha: float = DEFAULT_ALPHA) -> PartitionedAdjacency:
    return normalize_partition(partition(g, strategy, max_distance), alpha, strategy=strategy)

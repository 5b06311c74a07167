"""Electrode graphs: Gaussian-kernel distance adjacency and correlation
adjacency, plus the forward/backward random-walk transition matrices the
diffusion convolution consumes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .signals import SignalWindow

DEFAULT_KAPPA = 0.9
DEFAULT_NEIGHBORS = 3


@dataclass
class ElectrodeLayout:
    """Electrode names and unit-sphere positions."""

    names: list[str]
    positions: np.ndarray  # N x 3

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.shape != (len(self.names), 3):
            raise ValueError(
                f"positions shape {self.positions.shape} does not match {len(self.names)} names"
            )
        norms = np.linalg.norm(self.positions, axis=1)
        bad = np.abs(norms - 1.0) > 1e-6
        if bad.any():
            raise ValueError(f"positions not on the unit sphere: {[self.names[i] for i in np.where(bad)[0]]}")

    def index_of(self, name: str) -> int:
        return self.names.index(name)


def load_layout_csv(path: str | Path) -> ElectrodeLayout:
    names, rows = [], []
    with Path(path).open() as f:
        for rec in csv.DictReader(f):
            names.append(rec["name"])
            rows.append([float(rec["x"]), float(rec["y"]), float(rec["z"])])
    return ElectrodeLayout(names=names, positions=np.asarray(rows))


def standard_1020_layout() -> ElectrodeLayout:
    """The bundled 19-electrode 10-20 montage."""
    ref = resources.files("eegssl.data").joinpath("standard_1020.csv")
    with resources.as_file(ref) as path:
        return load_layout_csv(path)


@dataclass
class Graph:
    """Weighted directed adjacency plus derived transition matrices."""

    w: np.ndarray  # N x N, non-negative
    mode: str  # "distance" | "correlation"
    out_transition: np.ndarray = field(init=False)
    in_transition: np.ndarray = field(init=False)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 2 or self.w.shape[0] != self.w.shape[1]:
            raise ValueError(f"adjacency must be square, got {self.w.shape}")
        if (self.w < 0).any():
            raise ValueError("adjacency weights must be non-negative")
        self.out_transition, self.in_transition = transitions_of(self.w)

    @property
    def num_nodes(self) -> int:
        return self.w.shape[0]


def transitions_of(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalized forward walk and (transposed) backward walk.

    out = D_O^{-1} W with D_O the row sums; in = D_I^{-1} W^T with D_I the
    column sums of W. Zero-degree rows stay all-zero.
    """
    w = np.asarray(w, dtype=np.float64)
    row = w.sum(axis=1)
    col = w.sum(axis=0)
    inv_row = np.where(row > 0, 1.0 / np.where(row > 0, row, 1.0), 0.0)
    inv_col = np.where(col > 0, 1.0 / np.where(col > 0, col, 1.0), 0.0)
    return inv_row[:, None] * w, inv_col[:, None] * w.T


def transitions(graph: Graph) -> tuple[np.ndarray, np.ndarray]:
    return graph.out_transition, graph.in_transition


def build_distance_graph(
    layout: ElectrodeLayout,
    kappa: float = DEFAULT_KAPPA,
    threshold_mode: str = "distance",
) -> Graph:
    """Gaussian-kernel adjacency from pairwise electrode distances.

    sigma is the standard deviation of the N(N-1)/2 pairwise distances.
    ``threshold_mode`` selects what kappa prunes: "distance" keeps pairs
    with dist <= kappa, "weight" keeps pairs with kernel weight >= kappa.
    """
    if threshold_mode not in ("distance", "weight"):
        raise ValueError(f"unknown threshold_mode {threshold_mode!r}")
    pos = layout.positions
    n = pos.shape[0]
    if n < 2:
        raise ValueError("need at least 2 electrodes")
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    iu = np.triu_indices(n, k=1)
    sigma = float(dist[iu].std())
    if sigma == 0.0:
        raise ValueError("pairwise distances have zero spread; kernel width undefined")
    w = np.exp(-(dist**2) / sigma**2)
    keep = dist <= kappa if threshold_mode == "distance" else w >= kappa
    return Graph(w=np.where(keep, w, 0.0), mode="distance")


def correlation_weights(window: SignalWindow) -> np.ndarray:
    """Absolute zero-lag normalized cross-correlation of mean-removed channels."""
    x = window.matrix - window.matrix.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(x, axis=1)
    flat = np.where(norms == 0)[0]
    if flat.size:
        raise ValueError(f"channel {int(flat[0])} is constant; correlation undefined")
    corr = (x @ x.T) / np.outer(norms, norms)
    return np.minimum(np.abs(corr), 1.0)


def _topk_prune(weights: np.ndarray, k: int) -> np.ndarray:
    """Keep the k largest off-diagonal weights per row; ties break low-index."""
    n = weights.shape[0]
    w = weights.copy()
    np.fill_diagonal(w, -np.inf)
    pruned = np.zeros_like(weights)
    for i in range(n):
        order = np.argsort(-w[i], kind="stable")[:k]
        pruned[i, order] = weights[i, order]
    np.fill_diagonal(pruned, 0.0)
    return pruned


def build_correlation_graph(window: SignalWindow, k_neighbors: int = DEFAULT_NEIGHBORS) -> Graph:
    """Directed correlation adjacency, pruned to the top neighbors per node."""
    n = window.num_channels
    if not 0 < k_neighbors < n:
        raise ValueError(f"k_neighbors must be in (0, {n}), got {k_neighbors}")
    return Graph(w=_topk_prune(correlation_weights(window), k_neighbors), mode="correlation")


def build_correlation_graph_from_windows(
    windows: list[SignalWindow], k_neighbors: int = DEFAULT_NEIGHBORS
) -> Graph:
    """Corpus-level correlation graph: mean raw weights over windows, then prune."""
    if not windows:
        raise ValueError("need at least one window")
    n = windows[0].num_channels
    if not 0 < k_neighbors < n:
        raise ValueError(f"k_neighbors must be in (0, {n}), got {k_neighbors}")
    acc = np.zeros((n, n))
    for w in windows:
        acc += correlation_weights(w)
    return Graph(w=_topk_prune(acc / len(windows), k_neighbors), mode="correlation")


def save_graph_csv(graph: Graph, path: str | Path) -> None:
    with Path(path).open("w") as f:
        for row in graph.w:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def load_graph_csv(path: str | Path, mode: str) -> Graph:
    rows = []
    with Path(path).open() as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    return Graph(w=np.asarray(rows), mode=mode)

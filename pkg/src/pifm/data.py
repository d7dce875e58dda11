"""Dataset ingestion, splitting, task corruption, and graphon-based synthetic data.

TU layout on disk: ``<DS>_A.txt`` holds one "i, j" edge per line with global
1-indexed node ids; ``<DS>_graph_indicator.txt`` holds one graph id per node,
line k giving the graph of node k. Node/edge labels are ignored; only the
topology is ingested.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .graphs import AdjacencyState, DimensionError, GraphRecord, ObservationMask
from .nn import ConfigurationError

LINK_PREDICTION = "linkpred"
EXPANSION = "expansion"
DENOISING = "denoise"
TASK_KINDS = (LINK_PREDICTION, EXPANSION, DENOISING)


class ParseError(ValueError):
    """Malformed dataset file; message carries the file and line number."""


@dataclass(frozen=True)
class DatasetSplit:
    train_ids: tuple
    val_ids: tuple
    test_ids: tuple

    def __post_init__(self):
        all_ids = list(self.train_ids) + list(self.val_ids) + list(self.test_ids)
        if len(set(all_ids)) != len(all_ids):
            raise ConfigurationError("split ids must be pairwise disjoint")


@dataclass(frozen=True)
class TaskSpec:
    """Reconstruction task: kind, corruption rate, and the mask seed.

    ``rate`` is the drop rate for link prediction and expansion, and the
    flip rate (fraction of upper-triangle zeros turned into spurious edges)
    for denoising. rate == 0 is accepted as the degenerate fully-observed
    limit.
    """

    kind: str
    rate: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigurationError(f"unknown task kind {self.kind!r}, expected one of {TASK_KINDS}")
        if not 0.0 <= self.rate < 1.0:
            raise ConfigurationError(f"task rate must lie in [0, 1), got {self.rate}")


@dataclass(frozen=True)
class GraphonGrid:
    """Symmetric R x R grid of edge probabilities over [0,1]^2 latent space."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DimensionError(f"graphon grid must be square, got {v.shape}")
        if not np.allclose(v, v.T):
            raise DimensionError("graphon grid must be symmetric")
        if v.min() < 0.0 or v.max() > 1.0:
            raise DimensionError("graphon grid entries must lie in [0, 1]")
        v = (v + v.T) / 2.0
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    def lookup(self, zi: np.ndarray, zj: np.ndarray) -> np.ndarray:
        """Evaluate the grid at latent pairs by nearest (containing) cell."""
        r = self.resolution
        ii = np.minimum((np.asarray(zi) * r).astype(int), r - 1)
        jj = np.minimum((np.asarray(zj) * r).astype(int), r - 1)
        return self.values[ii, jj]


# ---------------------------------------------------------------------------
# TU ingestion
# ---------------------------------------------------------------------------

def _find_tu_file(root_path: str, suffix: str) -> str:
    cands = [f for f in sorted(os.listdir(root_path)) if f.endswith(suffix)]
    if not cands:
        raise ParseError(f"{root_path}: no *{suffix} file found")
    return os.path.join(root_path, cands[0])


def parse_tu_dataset(root_path: str) -> list[GraphRecord]:
    """Read a TU-layout directory into binary graph records, node ids re-based per graph."""
    if not os.path.isdir(root_path):
        raise ParseError(f"{root_path}: not a directory")
    ind_path = _find_tu_file(root_path, "_graph_indicator.txt")
    adj_path = _find_tu_file(root_path, "_A.txt")

    node_graph: list[int] = []
    with open(ind_path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                node_graph.append(int(line))
            except ValueError:
                raise ParseError(f"{ind_path}:{lineno}: non-integer graph id {line!r}") from None

    graph_ids = sorted(set(node_graph))
    # global node id (1-indexed) -> (graph id, local 0-based index)
    local_index: dict[int, tuple[int, int]] = {}
    sizes = {g: 0 for g in graph_ids}
    for global_id, g in enumerate(node_graph, 1):
        local_index[global_id] = (g, sizes[g])
        sizes[g] += 1

    adjacency = {g: np.zeros((sizes[g], sizes[g])) for g in graph_ids}
    with open(adj_path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise ParseError(f"{adj_path}:{lineno}: expected 'i, j', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"{adj_path}:{lineno}: non-integer node id in {line!r}") from None
            if u not in local_index or v not in local_index:
                raise ParseError(f"{adj_path}:{lineno}: node id outside indicator range")
            gu, lu = local_index[u]
            gv, lv = local_index[v]
            if gu != gv:
                raise ParseError(f"{adj_path}:{lineno}: edge {u}-{v} crosses graphs {gu} and {gv}")
            if u == v:
                raise ParseError(f"{adj_path}:{lineno}: self-loop on node {u}")
            adjacency[gu][lu, lv] = 1.0
            adjacency[gu][lv, lu] = 1.0

    return [GraphRecord(AdjacencyState(adjacency[g], is_binary=True), graph_id=i)
            for i, g in enumerate(graph_ids)]


def write_tu_dataset(graphs: list[GraphRecord], root_path: str, name: str = "DS") -> None:
    """Serialize graph records to the TU layout (both edge directions listed)."""
    os.makedirs(root_path, exist_ok=True)
    offsets = []
    total = 0
    for g in graphs:
        offsets.append(total)
        total += g.n
    with open(os.path.join(root_path, f"{name}_graph_indicator.txt"), "w") as fh:
        for gi, g in enumerate(graphs, 1):
            for _ in range(g.n):
                fh.write(f"{gi}\n")
    with open(os.path.join(root_path, f"{name}_A.txt"), "w") as fh:
        for off, g in zip(offsets, graphs):
            iu, ju = np.where(g.adjacency.values > 0)
            for i, j in zip(iu, ju):
                fh.write(f"{off + i + 1}, {off + j + 1}\n")


# ---------------------------------------------------------------------------
# Splitting and task corruption
# ---------------------------------------------------------------------------

def split_dataset(n_graphs: int, seed: int,
                  ratios: tuple[float, float] = (0.85, 0.10)) -> DatasetSplit:
    """Shuffled 85/10/5 split; deterministic for a given seed."""
    if n_graphs < 20:
        raise ConfigurationError(f"need at least 20 graphs to split, got {n_graphs}")
    n_train = int(math.floor(ratios[0] * n_graphs))
    n_val = int(math.floor(ratios[1] * n_graphs))
    n_test = n_graphs - n_train - n_val
    if n_test <= 0:
        raise ConfigurationError("split ratios leave an empty test set")
    perm = np.random.default_rng(seed).permutation(n_graphs)
    return DatasetSplit(
        train_ids=tuple(int(i) for i in perm[:n_train]),
        val_ids=tuple(int(i) for i in perm[n_train:n_train + n_val]),
        test_ids=tuple(int(i) for i in perm[n_train + n_val:]),
    )


def _upper_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n, 1)


def make_task_input(g: GraphRecord, task: TaskSpec,
                    rng: np.random.Generator) -> tuple[AdjacencyState, ObservationMask]:
    """Corrupt a clean graph according to the task, returning (a_obs, xi).

    The hidden region (xi == 0) is exactly what reconstruction is evaluated
    on: uniformly hidden pairs for link prediction, everything except the
    kept edges for expansion, and the upper-triangle 1-entries of the
    corrupted matrix for denoising.
    """
    a = g.adjacency.values
    n = g.n
    iu, ju = _upper_pairs(n)
    n_pairs = iu.size

    if task.kind == LINK_PREDICTION:
        n_hide = int(math.ceil(task.rate * n_pairs))
        xi = np.ones((n, n))
        if n_hide > 0:
            if n_pairs == 0:
                raise ConfigurationError("link prediction: graph has no node pairs to hide")
            sel = rng.choice(n_pairs, size=n_hide, replace=False)
            xi[iu[sel], ju[sel]] = 0.0
            xi[ju[sel], iu[sel]] = 0.0
        a_obs = xi * a

    elif task.kind == EXPANSION:
        edges = np.flatnonzero(a[iu, ju] > 0)
        n_drop = int(math.ceil(task.rate * edges.size))
        if task.rate > 0 and edges.size == 0:
            raise ConfigurationError("expansion: graph has no edges to drop")
        drop = rng.choice(edges, size=n_drop, replace=False) if n_drop > 0 else np.array([], dtype=int)
        a_obs = a.copy()
        a_obs[iu[drop], ju[drop]] = 0.0
        a_obs[ju[drop], iu[drop]] = 0.0
        # observed positions are the kept edges only; all other pairs are hidden
        xi = a_obs.copy()
        np.fill_diagonal(xi, 1.0)

    else:  # DENOISING
        zeros = np.flatnonzero(a[iu, ju] == 0)
        n_flip = int(math.ceil(task.rate * zeros.size))
        if task.rate > 0 and zeros.size == 0:
            raise ConfigurationError("denoising: graph has no zero entries to flip")
        flip = rng.choice(zeros, size=n_flip, replace=False) if n_flip > 0 else np.array([], dtype=int)
        a_obs = a.copy()
        a_obs[iu[flip], ju[flip]] = 1.0
        a_obs[ju[flip], iu[flip]] = 1.0
        # the 0-entries of the corrupted matrix are observed non-edges; the
        # 1-entries (true plus spurious) form the hidden region
        xi = 1.0 - a_obs
        np.fill_diagonal(xi, 1.0)

    return (AdjacencyState(a_obs, is_binary=True), ObservationMask(xi))


# ---------------------------------------------------------------------------
# Graphon sampling and built-in synthetic families
# ---------------------------------------------------------------------------

def sample_graphon_graph(w: GraphonGrid, n: int, rng: np.random.Generator,
                         graph_id: int = 0) -> GraphRecord:
    """Draw uniform latents and Bernoulli edges with probabilities w(z_i, z_j)."""
    if n < 2:
        raise ConfigurationError(f"graphon sampling needs n >= 2, got {n}")
    z = rng.uniform(0.0, 1.0, size=n)
    iu, ju = _upper_pairs(n)
    probs = w.lookup(z[iu], z[ju])
    draws = (rng.uniform(size=iu.size) < probs).astype(np.float64)
    a = np.zeros((n, n))
    a[iu, ju] = draws
    a[ju, iu] = draws
    return GraphRecord(AdjacencyState(a, is_binary=True), graph_id=graph_id)


def graphon_grid_from_function(fn, resolution: int = 64) -> GraphonGrid:
    """Tabulate a symmetric function on cell centers of an R x R grid."""
    centers = (np.arange(resolution) + 0.5) / resolution
    xx, yy = np.meshgrid(centers, centers, indexing="ij")
    vals = np.clip(fn(xx, yy), 0.0, 1.0)
    vals = (vals + vals.T) / 2.0
    return GraphonGrid(vals)


def synthetic_graphon(family: str, resolution: int = 64, **kwargs) -> GraphonGrid:
    """Built-in graphon families used for desk-scale experiments.

    - ``product``:  W(x, y) = x * y
    - ``twoblock``: assortative two-block model with equal expected degrees,
      W = p_in on the diagonal blocks and p_out off them (default 0.7 / 0.2)
    - ``constant``: W = c everywhere (default 0.5)
    """
    if family == "product":
        return graphon_grid_from_function(lambda x, y: x * y, resolution)
    if family == "twoblock":
        p_in = float(kwargs.get("p_in", 0.7))
        p_out = float(kwargs.get("p_out", 0.2))
        def block(x, y):
            same = (x < 0.5) == (y < 0.5)
            return np.where(same, p_in, p_out)
        return graphon_grid_from_function(block, resolution)
    if family == "constant":
        c = float(kwargs.get("c", 0.5))
        return graphon_grid_from_function(lambda x, y: np.full_like(x, c), resolution)
    raise ConfigurationError(f"unknown graphon family {family!r}")


def sample_graphon_dataset(w: GraphonGrid, count: int, n: int, seed: int) -> list[GraphRecord]:
    rng = np.random.default_rng(seed)
    return [sample_graphon_graph(w, n, rng, graph_id=i) for i in range(count)]

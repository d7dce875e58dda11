"""Core graph containers: symmetric adjacency states, observation masks, permutations.

All matrices are dense float64 (or int for binary data), symmetric with a zero
diagonal. Instances are treated as immutable after construction; operations
return new objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Raised when matrix/mask/permutation sizes disagree or inputs are malformed."""


def _check_square(values: np.ndarray, what: str) -> None:
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise DimensionError(f"{what} must be a square matrix, got shape {values.shape}")


@dataclass(frozen=True)
class AdjacencyState:
    """N x N symmetric real matrix with zero diagonal.

    Holds clean graphs, observed graphs, relaxed flow states, and predictions.
    ``is_binary`` marks matrices whose entries are exactly 0/1.
    """

    values: np.ndarray
    is_binary: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        _check_square(v, "adjacency")
        if not np.allclose(v, v.T, atol=0.0, rtol=0.0, equal_nan=False):
            raise DimensionError("adjacency must be exactly symmetric")
        if np.any(np.diag(v) != 0.0):
            raise DimensionError("adjacency must have a zero diagonal")
        if self.is_binary and not np.all((v == 0.0) | (v == 1.0)):
            raise DimensionError("binary adjacency must contain only 0/1 entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def edge_count(self) -> int:
        return int(np.round(np.triu(self.values, 1).sum()))


@dataclass(frozen=True)
class ObservationMask:
    """Binary symmetric matrix marking observed node pairs (1 = observed).

    Diagonal entries are always 1: the diagonal is never modeled and is
    treated as observed-zero.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        _check_square(v, "mask")
        if not np.all((v == 0.0) | (v == 1.0)):
            raise DimensionError("mask entries must be 0/1")
        if not np.array_equal(v, v.T):
            raise DimensionError("mask must be symmetric")
        if not np.all(np.diag(v) == 1.0):
            raise DimensionError("mask diagonal must be all ones (diagonal is always observed)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def hidden_pair_count(self) -> int:
        return int((np.triu(1.0 - self.values, 1)).sum())

    @staticmethod
    def all_observed(n: int) -> "ObservationMask":
        return ObservationMask(np.ones((n, n)))


@dataclass(frozen=True)
class NodePermutation:
    """Bijection on {0, ..., n-1}; ``mapping[i]`` is the new label of node i."""

    mapping: tuple

    def __post_init__(self):
        m = tuple(int(i) for i in self.mapping)
        if sorted(m) != list(range(len(m))):
            raise DimensionError("permutation mapping must be a bijection on 0..n-1")
        object.__setattr__(self, "mapping", m)

    @property
    def n(self) -> int:
        return len(self.mapping)

    def inverse(self) -> "NodePermutation":
        inv = [0] * self.n
        for i, j in enumerate(self.mapping):
            inv[j] = i
        return NodePermutation(tuple(inv))

    def matrix(self) -> np.ndarray:
        p = np.zeros((self.n, self.n))
        for i, j in enumerate(self.mapping):
            p[i, j] = 1.0
        return p

    @staticmethod
    def identity(n: int) -> "NodePermutation":
        return NodePermutation(tuple(range(n)))

    @staticmethod
    def random(n: int, rng: np.random.Generator) -> "NodePermutation":
        return NodePermutation(tuple(rng.permutation(n).tolist()))


@dataclass(frozen=True)
class GraphRecord:
    """A binary graph plus optional node features and a stable id."""

    adjacency: AdjacencyState
    graph_id: int
    features: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if not self.adjacency.is_binary:
            raise DimensionError("GraphRecord requires a binary adjacency")
        if self.features is not None:
            f = np.asarray(self.features, dtype=np.float64)
            if f.shape[0] != self.adjacency.n:
                raise DimensionError("feature row count must equal node count")
            f.setflags(write=False)
            object.__setattr__(self, "features", f)

    @property
    def n(self) -> int:
        return self.adjacency.n


def permute(a: AdjacencyState, p: NodePermutation) -> AdjacencyState:
    """Relabel nodes: result[p(i), p(j)] == a[i, j]."""
    if p.n != a.n:
        raise DimensionError(f"permutation size {p.n} does not match adjacency size {a.n}")
    idx = np.asarray(p.inverse().mapping)
    out = a.values[np.ix_(idx, idx)]
    return AdjacencyState(out, is_binary=a.is_binary)


def permute_matrix(m: np.ndarray, p: NodePermutation) -> np.ndarray:
    """Same relabeling for a raw square array (masks, priors, velocities)."""
    m = np.asarray(m)
    if p.n != m.shape[0]:
        raise DimensionError(f"permutation size {p.n} does not match matrix size {m.shape[0]}")
    idx = np.asarray(p.inverse().mapping)
    return m[np.ix_(idx, idx)]


def symmetrize_clip(m: np.ndarray, clip: tuple[float, float] | None = None) -> AdjacencyState:
    """Canonicalize a raw square matrix: (m + m^T)/2, zero diagonal, optional clip."""
    m = np.asarray(m, dtype=np.float64)
    _check_square(m, "input")
    out = (m + m.T) / 2.0
    np.fill_diagonal(out, 0.0)
    if clip is not None:
        lo, hi = clip
        out = np.clip(out, lo, hi)
    return AdjacencyState(out)


def hidden_entries(a: AdjacencyState, xi: ObservationMask) -> list[tuple[int, int, float]]:
    """Upper-triangle (i < j) entries of ``a`` at unobserved positions, row-major order."""
    if a.n != xi.n:
        raise DimensionError(f"adjacency size {a.n} does not match mask size {xi.n}")
    iu, ju = np.where(np.triu(xi.values == 0.0, 1))
    return [(int(i), int(j), float(a.values[i, j])) for i, j in zip(iu, ju)]


def hidden_index_arrays(xi: ObservationMask) -> tuple[np.ndarray, np.ndarray]:
    """Row/col index arrays of hidden upper-triangle pairs (vectorized companion)."""
    iu, ju = np.where(np.triu(xi.values == 0.0, 1))
    return iu, ju

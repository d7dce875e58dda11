"""Reconstruction and distribution-level evaluation on hidden entries.

Ranking metrics (AUC, AP) use raw scores; confusion rates binarize at a
fixed threshold (0.5 by default). Distribution distance is an MMD^2 between
per-graph statistic histograms under a Gaussian kernel with median-heuristic
bandwidth.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .graphs import AdjacencyState


class UndefinedMetricError(ValueError):
    """Metric is undefined for the given inputs (empty or single-class)."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsReport:
    """Headline percentages plus optional distribution-level scores.

    ``auc``/``ap``/``fpr``/``fnr`` are macro-averages over test graphs, in
    percent. Pooled (micro) variants and graph-statistic summaries ride along
    in ``extras``.
    """

    auc: float
    ap: float
    fpr: float
    fnr: float
    mmd2: float | None = None
    extras: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {"auc": self.auc, "ap": self.ap, "fpr": self.fpr, "fnr": self.fnr,
               "mmd2": self.mmd2}
        out.update(self.extras)
        return out


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if s.size == 0:
        raise UndefinedMetricError("empty score/label sequence")
    if s.size != y.size:
        raise UndefinedMetricError(f"scores ({s.size}) and labels ({y.size}) differ in length")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise UndefinedMetricError("labels must be binary")
    return s, y


def confusion_counts(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    s, y = _validate(scores, labels)
    pred = s >= threshold
    pos = y == 1.0
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def confusion_rates(scores, labels, threshold: float = 0.5) -> tuple[float, float]:
    """(FPR, FNR) at the threshold; NaN when a denominator is empty."""
    c = confusion_counts(scores, labels, threshold)
    fpr = c.fp / (c.fp + c.tn) if (c.fp + c.tn) > 0 else float("nan")
    fnr = c.fn / (c.fn + c.tp) if (c.fn + c.tp) > 0 else float("nan")
    return fpr, fnr


def auc(scores, labels) -> float:
    """Probability a random true edge outscores a random non-edge; ties count 0.5.

    Computed exactly from midranks (Mann-Whitney statistic).
    """
    s, y = _validate(scores, labels)
    n_pos = int(np.sum(y == 1.0))
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")
    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.size)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum_pos = ranks[y == 1.0].sum()
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Area under the precision-recall steps, descending scores, ties by index."""
    s, y = _validate(scores, labels)
    n_pos = int(np.sum(y == 1.0))
    if n_pos == 0:
        raise UndefinedMetricError("AP needs at least one positive label")
    order = np.argsort(-s, kind="stable")
    y_sorted = y[order]
    tp = np.cumsum(y_sorted)
    k = np.arange(1, s.size + 1)
    precision = tp / k
    recall = tp / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


def graph_statistics(a: AdjacencyState) -> tuple[float, float, float]:
    """(average degree, triangle count, average clustering coefficient)."""
    v = a.values
    if not np.all((v == 0.0) | (v == 1.0)):
        raise UndefinedMetricError("graph statistics need a binary adjacency; threshold first")
    n = a.n
    deg = v.sum(axis=1)
    avg_degree = float(deg.mean()) if n > 0 else 0.0
    a3 = v @ v @ v
    triangles = float(np.trace(a3)) / 6.0
    tri_per_node = np.diag(a3) / 2.0
    denom = deg * (deg - 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        local = np.where(denom > 0, 2.0 * tri_per_node / denom, 0.0)
    avg_clustering = float(local.mean()) if n > 0 else 0.0
    return avg_degree, triangles, avg_clustering


# ---------------------------------------------------------------------------
# MMD^2 between per-graph statistic distributions
# ---------------------------------------------------------------------------

DEGREE_STAT = "degree"
CLUSTERING_STAT = "clustering"
TRIANGLE_STAT = "triangles"
MMD_STATISTICS = (DEGREE_STAT, CLUSTERING_STAT, TRIANGLE_STAT)


def _statistic_vectors(graphs: list[AdjacencyState], statistic: str,
                       max_degree: int, clustering_bins: int = 20) -> np.ndarray:
    rows = []
    for g in graphs:
        v = g.values
        deg = v.sum(axis=1)
        if statistic == DEGREE_STAT:
            hist = np.bincount(deg.astype(int), minlength=max_degree + 1).astype(float)
            total = hist.sum()
            rows.append(hist / total if total > 0 else hist)
        elif statistic == CLUSTERING_STAT:
            _, _, _ = graph_statistics(g)  # validates binary input
            a3 = v @ v @ v
            tri = np.diag(a3) / 2.0
            denom = deg * (deg - 1.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                local = np.where(denom > 0, 2.0 * tri / denom, 0.0)
            hist, _ = np.histogram(local, bins=clustering_bins, range=(0.0, 1.0))
            total = hist.sum()
            rows.append(hist / total if total > 0 else hist.astype(float))
        elif statistic == TRIANGLE_STAT:
            rows.append(np.array([float(np.trace(v @ v @ v)) / 6.0]))
        else:
            raise UndefinedMetricError(f"unknown statistic {statistic!r}")
    return np.vstack(rows)


def mmd2_with_bandwidth(set_a: list[AdjacencyState], set_b: list[AdjacencyState],
                        statistic: str = DEGREE_STAT, unbiased: bool = True,
                        bandwidth: float | None = None) -> tuple[float, float]:
    """Kernel MMD^2 between two graph sets' statistic distributions, plus the
    bandwidth actually used (for report provenance).

    Uses a Gaussian kernel over normalized histograms (degree/clustering) or
    the scalar triangle count; bandwidth defaults to the median pairwise
    distance over the pooled sample. The unbiased estimator omits diagonal
    kernel terms; single-element sets fall back to the biased estimator with
    a warning.
    """
    if not set_a or not set_b:
        raise UndefinedMetricError("mmd2 needs nonempty graph sets")
    if unbiased and (len(set_a) < 2 or len(set_b) < 2):
        warnings.warn("mmd2: single-element set, falling back to biased estimator")
        unbiased = False
    max_deg = 0
    for g in set_a + set_b:
        max_deg = max(max_deg, int(g.values.sum(axis=1).max()) if g.n else 0)
    xa = _statistic_vectors(set_a, statistic, max_deg)
    xb = _statistic_vectors(set_b, statistic, max_deg)
    pooled = np.vstack([xa, xb])
    d2 = np.sum((pooled[:, None, :] - pooled[None, :, :]) ** 2, axis=-1)
    if bandwidth is None:
        iu = np.triu_indices(pooled.shape[0], 1)
        dists = np.sqrt(d2[iu])
        med = float(np.median(dists)) if dists.size else 0.0
        bandwidth = med if med > 0 else 1.0
    k = np.exp(-d2 / (2.0 * bandwidth ** 2))
    m, n = len(set_a), len(set_b)
    kxx = k[:m, :m]
    kyy = k[m:, m:]
    kxy = k[:m, m:]
    if unbiased:
        term_x = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
        term_y = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    else:
        term_x = kxx.mean()
        term_y = kyy.mean()
    return float(term_x + term_y - 2.0 * kxy.mean()), float(bandwidth)


def mmd2(set_a: list[AdjacencyState], set_b: list[AdjacencyState],
         statistic: str = DEGREE_STAT, unbiased: bool = True,
         bandwidth: float | None = None) -> float:
    """MMD^2 value alone; see mmd2_with_bandwidth."""
    value, _ = mmd2_with_bandwidth(set_a, set_b, statistic, unbiased, bandwidth)
    return value


def statistic_summary(graphs: list[AdjacencyState]) -> dict:
    """Mean/std of average degree, triangle count, and clustering over a set."""
    rows = np.array([graph_statistics(g) for g in graphs]) if graphs else np.zeros((0, 3))
    out = {}
    for i, name in enumerate(("degree", "triangles", "clustering")):
        col = rows[:, i] if rows.size else np.zeros(0)
        out[name] = {"mean": float(col.mean()) if col.size else 0.0,
                     "std": float(col.std()) if col.size else 0.0}
    return out


def threshold_adjacency(a: AdjacencyState, threshold: float = 0.5) -> AdjacencyState:
    """Binarize a relaxed state: entries >= threshold become edges."""
    v = (a.values >= threshold).astype(np.float64)
    v = np.maximum(v, v.T)
    np.fill_diagonal(v, 0.0)
    return AdjacencyState(v, is_binary=True)

"""Edge-probability priors: per-graph node2vec, inductive GraphSAGE-style
embeddings, a degree-sorted histogram graphon, and a Gaussian ablation baseline.

Every prior maps an observed graph to a symmetric matrix of edge
probabilities whose observed entries are copied from the observation and
whose hidden entries come from the model.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import GraphonGrid, TaskSpec, make_task_input
from .graphs import (AdjacencyState, DimensionError, GraphRecord, NodePermutation,
                     ObservationMask, permute_matrix)
from .nn import AdamState, ParameterSet, StateError, adam_step, load_checkpoint, save_checkpoint


class PriorTrainingError(RuntimeError):
    """Degenerate training inputs (empty walk corpus, no usable pairs)."""


# ---------------------------------------------------------------------------
# Biased second-order random walks
# ---------------------------------------------------------------------------

def random_walks(a_obs: np.ndarray, walks_per_node: int, length: int,
                 p: float, q: float, rng: np.random.Generator) -> list[list[int]]:
    """Second-order walks: weight 1/p to return to the previous node, 1 for
    neighbors adjacent to it, 1/q for two-hop moves; truncated at dead ends."""
    if p <= 0 or q <= 0:
        raise ValueError("walk parameters p and q must be positive")
    a = np.asarray(a_obs)
    n = a.shape[0]
    neighbors = [np.flatnonzero(a[i] > 0) for i in range(n)]
    walks = []
    for _ in range(walks_per_node):
        for start in range(n):
            walk = [start]
            while len(walk) < length:
                cur = walk[-1]
                nbrs = neighbors[cur]
                if nbrs.size == 0:
                    break
                if len(walk) == 1:
                    nxt = int(nbrs[rng.integers(nbrs.size)])
                else:
                    prev = walk[-2]
                    w = np.where(nbrs == prev, 1.0 / p,
                                 np.where(a[nbrs, prev] > 0, 1.0, 1.0 / q))
                    w = w / w.sum()
                    nxt = int(nbrs[rng.choice(nbrs.size, p=w)])
                walk.append(nxt)
            walks.append(walk)
    return walks


def second_order_transition(a_obs: np.ndarray, prev: int, cur: int,
                            p: float, q: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact transition distribution from (prev -> cur); test oracle companion."""
    a = np.asarray(a_obs)
    nbrs = np.flatnonzero(a[cur] > 0)
    w = np.where(nbrs == prev, 1.0 / p,
                 np.where(a[nbrs, prev] > 0, 1.0, 1.0 / q))
    return nbrs, w / w.sum()


# ---------------------------------------------------------------------------
# Skip-gram with negative sampling
# ---------------------------------------------------------------------------

def train_sgns(walks: list[list[int]], window: int, dim: int, negatives: int,
               epochs: int, rng: np.random.Generator, n_nodes: int | None = None,
               lr: float = 0.05) -> np.ndarray:
    """Learn node embeddings from walk co-occurrences within a window.

    Negatives are drawn from the unigram distribution raised to 0.75. With
    zero epochs the random initialization is returned unchanged.
    """
    if n_nodes is None:
        n_nodes = max((max(w) for w in walks if w), default=-1) + 1
    if n_nodes <= 0:
        raise PriorTrainingError("sgns: empty walk corpus")
    emb = (rng.random((n_nodes, dim)) - 0.5) / dim
    ctx = np.zeros((n_nodes, dim))

    counts = np.zeros(n_nodes)
    pairs_exist = False
    for walk in walks:
        for node in walk:
            counts[node] += 1
        if len(walk) >= 2:
            pairs_exist = True
    if not pairs_exist:
        raise PriorTrainingError("sgns: no co-occurrence pairs (all walks shorter than 2)")

    noise = counts ** 0.75
    noise = noise / noise.sum()

    for _ in range(epochs):
        for walk in walks:
            m = len(walk)
            for i in range(m):
                c = walk[i]
                lo, hi = max(0, i - window), min(m, i + window + 1)
                for j in range(lo, hi):
                    if j == i:
                        continue
                    targets = np.empty(negatives + 1, dtype=np.int64)
                    targets[0] = walk[j]
                    targets[1:] = rng.choice(n_nodes, size=negatives, p=noise)
                    labels = np.zeros(negatives + 1)
                    labels[0] = 1.0
                    vecs = ctx[targets]           # (k+1, dim)
                    scores = vecs @ emb[c]
                    g = (_sigmoid(scores) - labels) * lr
                    grad_c = g @ vecs
                    ctx[targets] -= np.outer(g, emb[c])
                    emb[c] -= grad_c
    return emb


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


# ---------------------------------------------------------------------------
# Logistic edge classifier on Hadamard features
# ---------------------------------------------------------------------------

@dataclass
class EdgeLogisticModel:
    """Logistic head sigma(w . (z_i * z_j) + b); ``fallback`` marks a
    constant-density model fitted when the observed region is single-class."""

    weight: np.ndarray
    bias: float
    l2: float = 1e-4
    fallback: bool = False

    def predict_pairs(self, emb: np.ndarray, idx_i: np.ndarray, idx_j: np.ndarray) -> np.ndarray:
        if self.fallback:
            return np.full(len(idx_i), _sigmoid(np.array([self.bias]))[0])
        feats = emb[idx_i] * emb[idx_j]
        return _sigmoid(feats @ self.weight + self.bias)


def constant_density_fallback(n_observed_edges: int, n_total_pairs: int, dim: int,
                              l2: float = 1e-4) -> EdgeLogisticModel:
    """Laplace-smoothed global density used when no two-class fit is possible."""
    c = (n_observed_edges + 1.0) / (n_total_pairs + 2.0)
    bias = float(np.log(c / (1.0 - c)))
    return EdgeLogisticModel(weight=np.zeros(dim), bias=bias, l2=l2, fallback=True)


def fit_edge_classifier(emb: np.ndarray, a_obs: np.ndarray, xi: np.ndarray,
                        neg_ratio: int, rng: np.random.Generator,
                        l2: float = 1e-4, tol: float = 1e-6,
                        max_iter: int = 5000) -> EdgeLogisticModel:
    """Class-balanced L2 logistic regression on observed pairs.

    Positives are all observed edges; negatives are up to ``neg_ratio`` times
    as many observed non-edges, sampled uniformly. Falls back to the constant
    density estimate (with a warning) when either class is empty.
    """
    n = emb.shape[0]
    iu, ju = np.triu_indices(n, 1)
    observed = xi[iu, ju] > 0
    labels = a_obs[iu, ju]
    pos = np.flatnonzero(observed & (labels > 0))
    neg = np.flatnonzero(observed & (labels == 0))
    n_pairs = iu.size

    if pos.size == 0 or neg.size == 0:
        warnings.warn("edge classifier: observed region is single-class; "
                      "falling back to constant density estimate")
        return constant_density_fallback(int(labels[observed].sum()), n_pairs, emb.shape[1], l2)

    n_neg = min(neg.size, neg_ratio * pos.size)
    neg_sel = rng.choice(neg, size=n_neg, replace=False)
    sel = np.concatenate([pos, neg_sel])
    x = emb[iu[sel]] * emb[ju[sel]]
    y = np.concatenate([np.ones(pos.size), np.zeros(n_neg)])
    # equal total weight per class
    w = np.concatenate([np.full(pos.size, 0.5 / pos.size), np.full(n_neg, 0.5 / n_neg)])

    return _fit_logistic(x, y, w, l2, tol, max_iter)


def _fit_logistic(x: np.ndarray, y: np.ndarray, w: np.ndarray, l2: float,
                  tol: float, max_iter: int) -> EdgeLogisticModel:
    """Gradient descent with backtracking on the weighted, L2-penalized loss."""
    d = x.shape[1]
    wvec = np.zeros(d)
    b = 0.0

    def loss_grad(wv, bb):
        s = x @ wv + bb
        per = np.log1p(np.exp(-np.abs(s))) + np.maximum(s, 0.0) - s * y
        val = float(np.sum(w * per) + l2 * np.sum(wv ** 2))
        resid = w * (_sigmoid(s) - y)
        return val, x.T @ resid + 2.0 * l2 * wv, float(resid.sum())

    val, gw, gb = loss_grad(wvec, b)
    step = 1.0
    for _ in range(max_iter):
        gnorm = max(np.abs(gw).max(initial=0.0), abs(gb))
        if gnorm < tol:
            break
        while True:
            w_new = wvec - step * gw
            b_new = b - step * gb
            val_new, gw_new, gb_new = loss_grad(w_new, b_new)
            if val_new <= val - 0.5 * step * (np.sum(gw ** 2) + gb ** 2) or step < 1e-12:
                break
            step *= 0.5
        wvec, b, val, gw, gb = w_new, b_new, val_new, gw_new, gb_new
        step = min(step * 2.0, 1e6)
    return EdgeLogisticModel(weight=wvec, bias=float(b), l2=l2)


# ---------------------------------------------------------------------------
# Canonical node ordering from embeddings
# ---------------------------------------------------------------------------

def canonicalize(emb: np.ndarray, degrees: np.ndarray | None = None) -> NodePermutation:
    """Order nodes along the first principal component of their embeddings.

    The component sign is fixed by requiring positive skewness of the
    projections; zero-variance embeddings (or zero skew) fall back to a
    degree-then-index order. Returns the relabeling that sends each node to
    its canonical position.
    """
    emb = np.asarray(emb, dtype=np.float64)
    n = emb.shape[0]
    if degrees is None:
        degrees = np.zeros(n)
    if n == 1:
        return NodePermutation((0,))
    centered = emb - emb.mean(axis=0, keepdims=True)
    sv = np.linalg.svd(centered, full_matrices=False)
    proj = centered @ sv[2][0]
    if np.max(np.abs(proj)) < 1e-12:
        proj = np.zeros(n)
    else:
        skew = float(np.sum(proj ** 3))
        if abs(skew) > 1e-12 and skew < 0:
            proj = -proj
    order = np.lexsort((np.arange(n), degrees, proj))
    ranks = np.empty(n, dtype=int)
    ranks[order] = np.arange(n)
    return NodePermutation(tuple(int(r) for r in ranks))


def _wl_provisional_order(a_obs: np.ndarray) -> NodePermutation:
    """Degree-then-neighbor-degree ordering; permutation-invariant up to
    structurally tied nodes."""
    n = a_obs.shape[0]
    deg = a_obs.sum(axis=1)
    keys = []
    for i in range(n):
        nbrs = np.flatnonzero(a_obs[i] > 0)
        keys.append((float(deg[i]), tuple(sorted(float(deg[j]) for j in nbrs))))
    order = sorted(range(n), key=lambda i: (keys[i], i))
    ranks = np.empty(n, dtype=int)
    ranks[np.asarray(order)] = np.arange(n)
    return NodePermutation(tuple(int(r) for r in ranks))


def _invariant_seed(base_seed: int, a_obs: np.ndarray) -> int:
    """Seed derived from permutation-invariant graph summaries."""
    deg = np.sort(a_obs.sum(axis=1)).astype(np.float64)
    h = hashlib.sha256()
    h.update(np.int64(base_seed).tobytes())
    h.update(np.int64(a_obs.shape[0]).tobytes())
    h.update(deg.tobytes())
    return int.from_bytes(h.digest()[:8], "little")


# ---------------------------------------------------------------------------
# Assembling full prediction matrices
# ---------------------------------------------------------------------------

def _assemble_prediction(a_obs: AdjacencyState, xi: ObservationMask,
                         hidden_probs: np.ndarray) -> AdjacencyState:
    """Copy observed entries, fill hidden ones from the model, clip to [0,1]."""
    xv = xi.values
    out = xv * a_obs.values + (1.0 - xv) * hidden_probs
    out = np.clip((out + out.T) / 2.0, 0.0, 1.0)
    np.fill_diagonal(out, 0.0)
    return AdjacencyState(out)


def _check_sizes(a_obs: AdjacencyState, xi: ObservationMask) -> None:
    if a_obs.n != xi.n:
        raise DimensionError(f"observation size {a_obs.n} != mask size {xi.n}")


# ---------------------------------------------------------------------------
# Node2vec prior (transductive, per graph)
# ---------------------------------------------------------------------------

@dataclass
class Node2VecPrior:
    """Per-instance embeddings plus a per-graph logistic head.

    Prediction relabels the graph to a canonical order first (structural
    pre-sort, then the principal-component order of the trained embeddings)
    so that relabeled inputs are processed identically up to structural ties.
    """

    dim: int = 64
    walks_per_node: int = 10
    walk_length: int = 20
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    p: float = 1.0
    q: float = 1.0
    neg_ratio: int = 5
    l2: float = 1e-4
    seed: int = 0
    variant: str = field(default="node2vec", init=False)
    _cache: dict = field(default_factory=dict, repr=False)
    last_model: EdgeLogisticModel | None = field(default=None, repr=False)

    @property
    def is_fitted(self) -> bool:
        return True  # transductive: fitted per instance at prediction time

    def fit(self, graphs: list[GraphRecord], task: TaskSpec, rng: np.random.Generator) -> None:
        """No dataset-level state; kept for interface symmetry."""

    def predict(self, a_obs: AdjacencyState, xi: ObservationMask) -> AdjacencyState:
        _check_sizes(a_obs, xi)
        key = (a_obs.values.tobytes(), xi.values.tobytes())
        if key in self._cache:
            self.last_model = self._cache[key][1]
            return self._cache[key][0]

        pre = _wl_provisional_order(a_obs.values)
        av = permute_matrix(a_obs.values, pre)
        xv = permute_matrix(xi.values, pre)
        rng = np.random.default_rng(_invariant_seed(self.seed, av))

        walks = random_walks(av, self.walks_per_node, self.walk_length, self.p, self.q, rng)
        try:
            emb = train_sgns(walks, self.window, self.dim, self.negatives,
                             self.epochs, rng, n_nodes=a_obs.n)
        except PriorTrainingError:
            emb = np.zeros((a_obs.n, self.dim))

        canon = canonicalize(emb, degrees=av.sum(axis=1))
        av2 = permute_matrix(av, canon)
        xv2 = permute_matrix(xv, canon)
        emb2 = emb[np.asarray(canon.inverse().mapping)]

        model = fit_edge_classifier(emb2, av2, xv2, self.neg_ratio, rng, l2=self.l2)
        iu, ju = np.triu_indices(a_obs.n, 1)
        probs = np.zeros_like(av2)
        vals = model.predict_pairs(emb2, iu, ju)
        probs[iu, ju] = vals
        probs[ju, iu] = vals

        back = NodePermutation(tuple(canon.mapping[i] for i in pre.mapping)).inverse()
        probs = permute_matrix(probs, back)
        result = _assemble_prediction(a_obs, xi, probs)
        self._cache[key] = (result, model)
        if len(self._cache) > 128:
            self._cache.pop(next(iter(self._cache)))
        self.last_model = model
        return result

    def save(self, path) -> None:
        meta = {"variant": self.variant, "dim": self.dim,
                "walks_per_node": self.walks_per_node, "walk_length": self.walk_length,
                "window": self.window, "negatives": self.negatives, "epochs": self.epochs,
                "p": self.p, "q": self.q, "neg_ratio": self.neg_ratio, "l2": self.l2,
                "seed": self.seed}
        save_checkpoint(path, {}, meta)


# ---------------------------------------------------------------------------
# GraphSAGE-style inductive prior
# ---------------------------------------------------------------------------

def _sage_input_features(a_obs: np.ndarray) -> np.ndarray:
    """Structural features: raw and normalized node degrees."""
    n = a_obs.shape[0]
    deg = a_obs.sum(axis=1)
    return np.stack([deg, deg / max(n - 1, 1)], axis=1)


def _row_normalized(a_obs: np.ndarray) -> np.ndarray:
    deg = a_obs.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(deg > 0, a_obs / deg, 0.0)
    return out


@dataclass
class SagePrior:
    """Mean-aggregator message passing over the observed graph with a shared
    logistic head on Hadamard edge features; inductive across graphs."""

    dim: int = 64
    depth: int = 2
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3
    neg_ratio: int = 5
    l2: float = 1e-4
    seed: int = 0
    variant: str = field(default="sage", init=False)
    params: ParameterSet | None = field(default=None, repr=False)

    @property
    def is_fitted(self) -> bool:
        return self.params is not None

    def _init_params(self, rng: np.random.Generator) -> ParameterSet:
        ps = ParameterSet()
        d = self.dim
        ps.add("lift_w", rng.normal(0, 1.0, size=(2, d)) / np.sqrt(2))
        ps.add("lift_b", np.zeros(d))
        for layer in range(self.depth):
            ps.add(f"self_w_{layer}", rng.normal(0, 1.0, size=(d, d)) / np.sqrt(d))
            ps.add(f"neigh_w_{layer}", rng.normal(0, 1.0, size=(d, d)) / np.sqrt(d))
            ps.add(f"bias_{layer}", np.zeros(d))
        ps.add("head_w", np.zeros((d, 1)))
        ps.add("head_b", np.zeros(1))
        return ps

    def _embed_graph(self, ps: ParameterSet, a_obs: np.ndarray) -> ad.Tensor:
        feats = ad.constant(_sage_input_features(a_obs))
        norm_adj = ad.constant(_row_normalized(a_obs))
        h = ad.silu(ad.add(ad.matmul(feats, ps["lift_w"]), ps["lift_b"]))
        for layer in range(self.depth):
            m = ad.matmul(norm_adj, h)
            h = ad.silu(ad.add(ad.add(ad.matmul(h, ps[f"self_w_{layer}"]),
                                      ad.matmul(m, ps[f"neigh_w_{layer}"])),
                               ps[f"bias_{layer}"]))
        return h

    def _supervision_pairs(self, g: GraphRecord, a_obs: np.ndarray, xi: np.ndarray,
                           rng: np.random.Generator):
        """Observed pos/neg pairs when both classes exist; otherwise pairs
        labeled by the clean training graph (blind tasks have single-class
        observed regions)."""
        n = g.n
        iu, ju = np.triu_indices(n, 1)
        observed = xi[iu, ju] > 0
        obs_labels = a_obs[iu, ju]
        pos = np.flatnonzero(observed & (obs_labels > 0))
        neg = np.flatnonzero(observed & (obs_labels == 0))
        labels_src = obs_labels
        if pos.size == 0 or neg.size == 0:
            clean = g.adjacency.values[iu, ju]
            pos = np.flatnonzero(clean > 0)
            neg = np.flatnonzero(clean == 0)
            labels_src = clean
            if pos.size == 0 or neg.size == 0:
                return None
        n_neg = min(neg.size, self.neg_ratio * pos.size)
        neg_sel = rng.choice(neg, size=n_neg, replace=False)
        sel = np.concatenate([pos, neg_sel])
        y = labels_src[sel]
        w = np.where(y > 0, 0.5 / pos.size, 0.5 / n_neg)
        return iu[sel], ju[sel], y, w

    def fit(self, graphs: list[GraphRecord], task: TaskSpec, rng: np.random.Generator) -> None:
        ps = self._init_params(rng)
        opt = AdamState(lr=self.lr)
        prepared = []
        for g in graphs:
            if g.n < 2:
                warnings.warn(f"sage fit: skipping graph {g.graph_id} with fewer than 2 nodes")
                continue
            mask_rng = np.random.default_rng(task.seed * 100003 + g.graph_id)
            a_obs, xi = make_task_input(g, task, mask_rng)
            pairs = self._supervision_pairs(g, a_obs.values, xi.values, rng)
            if pairs is None:
                warnings.warn(f"sage fit: skipping graph {g.graph_id} with single-class labels")
                continue
            prepared.append((a_obs.values, pairs))
        if not prepared:
            raise PriorTrainingError("sage fit: no usable training graphs")

        order = np.arange(len(prepared))
        for _ in range(self.epochs):
            rng.shuffle(order)
            for lo in range(0, len(order), self.batch_size):
                batch = order[lo:lo + self.batch_size]
                total = None
                for gi in batch:
                    av, (pi, pj, y, w) = prepared[gi]
                    h = self._embed_graph(ps, av)
                    feats = ad.mul(ad.take_rows(h, pi), ad.take_rows(h, pj))
                    scores = ad.add(ad.matmul(feats, ps["head_w"]), ps["head_b"])
                    loss = ad.weighted_logistic_loss(scores, y, w)
                    total = loss if total is None else ad.add(total, loss)
                total = ad.scale(total, 1.0 / len(batch))
                total = ad.add(total, ad.scale(ad.sum_squares(ps["head_w"]), self.l2))
                ad.backprop(total)
                adam_step(ps, opt)
        self.params = ps

    def _embed_numpy(self, a_obs: np.ndarray) -> np.ndarray:
        ps = self.params
        feats = _sage_input_features(a_obs)
        norm_adj = _row_normalized(a_obs)
        h = _silu_np(feats @ ps["lift_w"].data + ps["lift_b"].data)
        for layer in range(self.depth):
            m = norm_adj @ h
            h = _silu_np(h @ ps[f"self_w_{layer}"].data + m @ ps[f"neigh_w_{layer}"].data
                         + ps[f"bias_{layer}"].data)
        return h

    def embed(self, a_obs: AdjacencyState) -> np.ndarray:
        if not self.is_fitted:
            raise StateError("sage prior is untrained")
        return self._embed_numpy(a_obs.values)

    def predict(self, a_obs: AdjacencyState, xi: ObservationMask) -> AdjacencyState:
        if not self.is_fitted:
            raise StateError("sage prior is untrained")
        _check_sizes(a_obs, xi)
        h = self._embed_numpy(a_obs.values)
        iu, ju = np.triu_indices(a_obs.n, 1)
        scores = (h[iu] * h[ju]) @ self.params["head_w"].data[:, 0] + self.params["head_b"].data[0]
        probs = np.zeros_like(a_obs.values)
        vals = _sigmoid(scores)
        probs[iu, ju] = vals
        probs[ju, iu] = vals
        return _assemble_prediction(a_obs, xi, probs)

    def save(self, path) -> None:
        if not self.is_fitted:
            raise StateError("cannot checkpoint an untrained sage prior")
        meta = {"variant": self.variant, "dim": self.dim, "depth": self.depth,
                "epochs": self.epochs, "batch_size": self.batch_size, "lr": self.lr,
                "neg_ratio": self.neg_ratio, "l2": self.l2, "seed": self.seed}
        save_checkpoint(path, self.params.as_arrays(), meta)


def _silu_np(x: np.ndarray) -> np.ndarray:
    return x * _sigmoid(x)


# ---------------------------------------------------------------------------
# Histogram graphon prior
# ---------------------------------------------------------------------------

def degree_rank_latents(a_obs: np.ndarray) -> np.ndarray:
    """Degree-rank quantiles with midranks for ties (permutation-invariant)."""
    n = a_obs.shape[0]
    deg = a_obs.sum(axis=1)
    order = np.argsort(deg, kind="stable")
    positions = np.empty(n)
    positions[order] = np.arange(n)
    z = np.empty(n)
    for d in np.unique(deg):
        sel = deg == d
        z[sel] = (positions[sel].mean() + 0.5) / n
    return z


def _box_filter(grid: np.ndarray) -> np.ndarray:
    """3x3 mean filter with edge replication."""
    padded = np.pad(grid, 1, mode="edge")
    out = np.zeros_like(grid)
    for di in range(3):
        for dj in range(3):
            out += padded[di:di + grid.shape[0], dj:dj + grid.shape[1]]
    return out / 9.0


def _leave_one_out_latents(a: np.ndarray) -> np.ndarray:
    """z[i, j]: degree-rank quantile of node i when the pair partner j is
    excluded from its degree and from the ranking population.

    Ranking by the plain degree couples the recorded entry with its own
    contribution to the rank (a realized-degree conditioning bias of order
    sigma/n per endpoint); excluding the partner removes it exactly for
    conditionally independent edges. Ties break by node index.
    """
    n = a.shape[0]
    deg = a.sum(axis=1)
    idx = np.arange(n)
    z = np.zeros((n, n))
    for j in range(n):
        keep = idx != j
        nodes = idx[keep]
        d = (deg - a[:, j])[keep]
        order = np.lexsort((nodes, d))
        ranks = np.empty(n - 1)
        ranks[order] = np.arange(n - 1)
        z[nodes, j] = (ranks + 0.5) / (n - 1)
    return z


def estimate_histogram_graphon(train_graphs: list[GraphRecord],
                               resolution: int = 64, smooth: bool = True) -> GraphonGrid:
    """Average degree-sorted adjacencies onto an R x R grid.

    Each entry (i, j) lands in the cell given by the endpoints' leave-one-out
    degree-rank quantiles (ties by index). Cells never hit by any pair are
    filled from a smoothed neighborhood estimate before the final box filter.
    """
    if not train_graphs:
        raise PriorTrainingError("graphon estimation needs at least one training graph")
    r = resolution
    sums = np.zeros((r, r))
    counts = np.zeros((r, r))
    for g in train_graphs:
        a = g.adjacency.values
        n = g.n
        if n < 2:
            continue
        z = _leave_one_out_latents(a)
        ci = np.minimum((z * r).astype(int), r - 1)
        cj = ci.T
        off = ~np.eye(n, dtype=bool)
        np.add.at(sums, (ci[off], cj[off]), a[off])
        np.add.at(counts, (ci[off], cj[off]), 1.0)

    covered = counts > 0
    grid = np.zeros((r, r))
    grid[covered] = sums[covered] / counts[covered]
    if not covered.all():
        # fill empty cells from count-weighted neighborhoods, widening as needed
        fill_sums, fill_counts = sums.copy(), counts.copy()
        while not (fill_counts > 0).all():
            new_sums = _box_filter(fill_sums) * 9.0
            new_counts = _box_filter(fill_counts) * 9.0
            still = fill_counts == 0
            fill_sums[still] = new_sums[still]
            fill_counts[still] = new_counts[still]
            if not (new_counts > 0).any():
                break
        empty = ~covered
        with np.errstate(invalid="ignore"):
            grid[empty] = np.where(fill_counts[empty] > 0,
                                   fill_sums[empty] / np.maximum(fill_counts[empty], 1e-12),
                                   sums.sum() / max(counts.sum(), 1.0))
    if smooth:
        grid = _box_filter(grid)
    grid = np.clip((grid + grid.T) / 2.0, 0.0, 1.0)
    return GraphonGrid(grid)


@dataclass
class GraphonPrior:
    """Histogram graphon plus the empirical degree-rank inverse map."""

    resolution: int = 64
    smooth: bool = True
    variant: str = field(default="graphon", init=False)
    grid: GraphonGrid | None = None

    @property
    def is_fitted(self) -> bool:
        return self.grid is not None

    def fit(self, graphs: list[GraphRecord], task: TaskSpec | None = None,
            rng: np.random.Generator | None = None) -> None:
        self.grid = estimate_histogram_graphon(graphs, self.resolution, self.smooth)

    def predict(self, a_obs: AdjacencyState, xi: ObservationMask) -> AdjacencyState:
        if not self.is_fitted:
            raise StateError("graphon prior is untrained")
        _check_sizes(a_obs, xi)
        z = degree_rank_latents(a_obs.values)
        zi, zj = np.meshgrid(z, z, indexing="ij")
        probs = self.grid.lookup(zi.ravel(), zj.ravel()).reshape(a_obs.n, a_obs.n)
        probs = (probs + probs.T) / 2.0
        return _assemble_prediction(a_obs, xi, probs)

    def save(self, path) -> None:
        if not self.is_fitted:
            raise StateError("cannot checkpoint an untrained graphon prior")
        meta = {"variant": self.variant, "resolution": self.resolution, "smooth": self.smooth}
        save_checkpoint(path, {"grid": self.grid.values}, meta)

    def export_grid_csv(self, path) -> None:
        np.savetxt(path, self.grid.values, delimiter=",")


# ---------------------------------------------------------------------------
# Gaussian ablation baseline
# ---------------------------------------------------------------------------

@dataclass
class GaussianPrior:
    """Structure-free baseline: hidden entries get a constant mean; combined
    with source noise sigma_s = 1 this reproduces the N(0.5, 1) ablation
    initialization."""

    mean: float = 0.5
    variant: str = field(default="gaussian", init=False)

    @property
    def is_fitted(self) -> bool:
        return True

    def fit(self, graphs: list[GraphRecord], task: TaskSpec, rng: np.random.Generator) -> None:
        """Stateless; kept for interface symmetry."""

    def predict(self, a_obs: AdjacencyState, xi: ObservationMask) -> AdjacencyState:
        _check_sizes(a_obs, xi)
        probs = np.full_like(a_obs.values, self.mean)
        return _assemble_prediction(a_obs, xi, probs)

    def save(self, path) -> None:
        save_checkpoint(path, {}, {"variant": self.variant, "mean": self.mean})


PriorModel = Node2VecPrior | SagePrior | GraphonPrior | GaussianPrior

PRIOR_VARIANTS = ("node2vec", "sage", "graphon", "gaussian")


def make_prior(variant: str, seed: int = 0, **kwargs) -> PriorModel:
    if variant == "node2vec":
        return Node2VecPrior(seed=seed, **kwargs)
    if variant == "sage":
        return SagePrior(seed=seed, **kwargs)
    if variant == "graphon":
        return GraphonPrior(**kwargs)
    if variant == "gaussian":
        return GaussianPrior(**kwargs)
    raise ValueError(f"unknown prior variant {variant!r}, expected one of {PRIOR_VARIANTS}")


def prior_predict(model: PriorModel, a_obs: AdjacencyState, xi: ObservationMask) -> AdjacencyState:
    """Full prediction matrix: observed entries copied, hidden filled by the model."""
    if not model.is_fitted:
        raise StateError(f"{model.variant} prior is untrained")
    return model.predict(a_obs, xi)


def load_prior(path) -> PriorModel:
    arrays, meta, _ = load_checkpoint(path)
    variant = meta.get("variant")
    if variant == "node2vec":
        fields = {k: meta[k] for k in ("dim", "walks_per_node", "walk_length", "window",
                                       "negatives", "epochs", "p", "q", "neg_ratio",
                                       "l2", "seed")}
        return Node2VecPrior(**fields)
    if variant == "sage":
        prior = SagePrior(dim=meta["dim"], depth=meta["depth"], epochs=meta["epochs"],
                          batch_size=meta["batch_size"], lr=meta["lr"],
                          neg_ratio=meta["neg_ratio"], l2=meta["l2"], seed=meta["seed"])
        rng = np.random.default_rng(meta["seed"])
        prior.params = prior._init_params(rng)
        prior.params.load_arrays(arrays)
        return prior
    if variant == "graphon":
        prior = GraphonPrior(resolution=meta["resolution"], smooth=meta["smooth"])
        prior.grid = GraphonGrid(arrays["grid"])
        return prior
    if variant == "gaussian":
        return GaussianPrior(mean=meta["mean"])
    raise StateError(f"checkpoint has unknown prior variant {variant!r}")

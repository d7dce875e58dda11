"""Rectified-flow core: prior-informed source construction, the linear
interpolant, a permutation-equivariant velocity network, flow-matching
training, Euler sampling, and the path-integral log-density diagnostic.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import TaskSpec, make_task_input
from .graphs import AdjacencyState, DimensionError, GraphRecord, ObservationMask
from .metrics import UndefinedMetricError
from .nn import (AdamState, ConfigurationError, ParameterSet, StateError, adam_step,
                 load_checkpoint, save_checkpoint, time_embedding)
from .priors import PriorModel, prior_predict


class CapacityError(ValueError):
    """Graph exceeds the velocity network's configured maximum size."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the last good parameter snapshot."""

    def __init__(self, message: str, checkpoint: dict[str, np.ndarray]):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class FlowConfig:
    """Training/sampling hyperparameters; defaults follow the published recipe."""

    sigma_s_train: float = 0.1
    sigma_s_sample: float = 0.1
    k: int = 1
    lr: float = 2e-4
    batch_size: int = 32
    train_steps: int = 2000
    dropout: float = 0.2
    clamp_observed: bool = False
    hidden_dim: int = 32
    num_layers: int = 5
    num_linears: int = 2
    c_init: int = 2
    c_hid: int = 8
    c_final: int = 4
    time_dim: int = 32
    max_nodes: int = 125
    val_every: int = 200
    val_batches: int = 4
    resample_masks: bool = True

    def __post_init__(self):
        if self.sigma_s_train < 0 or self.sigma_s_sample < 0:
            raise ConfigurationError("noise std-dev must be non-negative")
        if self.k < 1:
            raise ConfigurationError("Euler step count must be at least 1")
        if self.num_layers < 1:
            raise ConfigurationError("velocity network needs at least one layer")
        if self.num_linears < 2:
            raise ConfigurationError("per-pair blocks need at least two linears")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")


# ---------------------------------------------------------------------------
# Source construction and interpolation
# ---------------------------------------------------------------------------

def symmetric_noise(n: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """IID Gaussian noise on upper-triangle entries, mirrored, zero diagonal."""
    iu, ju = np.triu_indices(n, 1)
    eps = np.zeros((n, n))
    draws = rng.normal(0.0, sigma, size=iu.size)
    eps[iu, ju] = draws
    eps[ju, iu] = draws
    return eps


def build_A0(a_obs: AdjacencyState, xi: ObservationMask, prior_probs: AdjacencyState,
             sigma_s: float, task: TaskSpec, rng: np.random.Generator | None) -> AdjacencyState:
    """Prior-informed source state: observed entries kept, hidden entries set
    to the prior prediction plus symmetric Gaussian noise.

    With the mask conventions used here (link prediction: xi = 1 on observed
    pairs; expansion: xi = kept edges; denoising: xi = observed zeros), the
    per-task published initializations all reduce to
    ``xi * a_obs + (1 - xi) * (prior + eps)``.
    """
    if sigma_s < 0:
        raise ConfigurationError("sigma_s must be non-negative")
    if a_obs.n != xi.n or prior_probs.n != a_obs.n:
        raise DimensionError("build_A0: observation/mask/prior sizes disagree")
    if prior_probs.values.min() < 0.0 or prior_probs.values.max() > 1.0:
        raise ConfigurationError("prior probabilities must lie in [0, 1]")
    n = a_obs.n
    if sigma_s > 0:
        if rng is None:
            raise ConfigurationError("sigma_s > 0 requires an rng")
        eps = symmetric_noise(n, sigma_s, rng)
    else:
        eps = np.zeros((n, n))
    xv = xi.values
    out = xv * a_obs.values + (1.0 - xv) * (prior_probs.values + eps)
    np.fill_diagonal(out, 0.0)
    return AdjacencyState(out)


def interpolate(a0: AdjacencyState, a1: AdjacencyState, t: float) -> AdjacencyState:
    """Rectified path (1 - t) * A0 + t * A1; endpoints returned bitwise."""
    if a0.n != a1.n:
        raise DimensionError("interpolate: endpoint sizes disagree")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolation time must lie in [0, 1], got {t}")
    if t == 0.0:
        return a0
    if t == 1.0:
        return a1
    return AdjacencyState((1.0 - t) * a0.values + t * a1.values)


def mse_distortion(a_hat: AdjacencyState, a1: AdjacencyState, xi: ObservationMask) -> float:
    """Mean squared error over hidden upper-triangle entries."""
    if a_hat.n != a1.n or a_hat.n != xi.n:
        raise DimensionError("mse_distortion: sizes disagree")
    iu, ju = np.where(np.triu(xi.values == 0.0, 1))
    if iu.size == 0:
        raise UndefinedMetricError("mse_distortion: empty hidden region")
    diff = a_hat.values[iu, ju] - a1.values[iu, ju]
    return float(np.mean(diff ** 2))


# ---------------------------------------------------------------------------
# Velocity network
# ---------------------------------------------------------------------------

class VelocityNet:
    """Time-conditioned pair-channel network from N x N states to N x N
    velocities.

    The state is a stack of symmetric pair channels, initially the matrix
    itself and its normalized square. Each of the L layers applies a shared
    per-pair two-linear MLP across channels and then aggregates over
    neighborhoods by squaring every produced channel (matrix products), so
    entrywise remappings and path-counting alternate; all operations are
    node-index symmetric and the output commutes with relabelings by
    construction. Time enters per layer through a sinusoidal-embedding MLP
    whose output scales the RMS-normalized hidden features. The final
    per-pair MLP starts at zero so a fresh network is the identity flow.
    """

    def __init__(self, cfg: FlowConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self.params = self._init_params(np.random.default_rng(seed))

    def _layer_in_channels(self, layer: int) -> int:
        if layer == 0:
            return self.cfg.c_init
        return 2 * self.cfg.c_hid + self.cfg.c_init

    def _init_params(self, rng: np.random.Generator) -> ParameterSet:
        cfg = self.cfg
        d = cfg.hidden_dim
        ps = ParameterSet()
        for layer in range(cfg.num_layers):
            c_in = self._layer_in_channels(layer)
            ps.add(f"w1_{layer}", rng.normal(0, 1.0, size=(c_in, d)) / math.sqrt(c_in))
            ps.add(f"b1_{layer}", np.zeros(d))
            ps.add(f"gain_{layer}", np.ones(d))
            ps.add(f"time1_w_{layer}",
                   rng.normal(0, 1.0, size=(cfg.time_dim, d)) / math.sqrt(cfg.time_dim))
            ps.add(f"time1_b_{layer}", np.zeros(d))
            ps.add(f"time2_w_{layer}", rng.normal(0, 1.0, size=(d, d)) / math.sqrt(d))
            ps.add(f"time2_b_{layer}", np.zeros(d))
            for extra in range(cfg.num_linears - 2):
                ps.add(f"wm_{layer}_{extra}", rng.normal(0, 1.0, size=(d, d)) / math.sqrt(d))
                ps.add(f"bm_{layer}_{extra}", np.zeros(d))
            ps.add(f"w2_{layer}", rng.normal(0, 1.0, size=(d, cfg.c_hid)) / math.sqrt(d))
            ps.add(f"b2_{layer}", np.zeros(cfg.c_hid))
        n_channels = self._layer_in_channels(1)
        ps.add("mlp1_w", rng.normal(0, 1.0, size=(n_channels, cfg.c_final)) / math.sqrt(n_channels))
        ps.add("mlp1_b", np.zeros(cfg.c_final))
        ps.add("mlp2_w", np.zeros((cfg.c_final, 1)))
        ps.add("mlp2_b", np.zeros(1))
        return ps

    def forward_tensor(self, a_t: np.ndarray, t: float, train_mode: bool = False,
                       rng: np.random.Generator | None = None) -> ad.Tensor:
        """Autodiff forward pass; output is symmetric with a zero diagonal."""
        cfg = self.cfg
        ps = self.params
        n = a_t.shape[0]
        if n > cfg.max_nodes:
            raise CapacityError(f"graph has {n} nodes, exceeding the configured cap {cfg.max_nodes}")
        a2 = (a_t @ a_t) / n
        raw = ad.constant(np.stack([a_t.reshape(-1), a2.reshape(-1)], axis=1))

        temb = ad.constant(time_embedding(t, cfg.time_dim).reshape(1, -1))
        ones_d = ad.constant(np.ones(cfg.hidden_dim))
        stack = raw
        for layer in range(cfg.num_layers):
            h = ad.silu(ad.add(ad.matmul(stack, ps[f"w1_{layer}"]), ps[f"b1_{layer}"]))
            th = ad.silu(ad.add(ad.matmul(temb, ps[f"time1_w_{layer}"]),
                                ps[f"time1_b_{layer}"]))
            gamma = ad.add(ad.matmul(th, ps[f"time2_w_{layer}"]), ps[f"time2_b_{layer}"])
            gamma = ad.add(ad.reshape(gamma, (cfg.hidden_dim,)), ones_d)
            h = ad.mul(ad.rms_scale(h, ps[f"gain_{layer}"]), gamma)
            h = ad.dropout(h, cfg.dropout, rng, train_mode)
            for extra in range(cfg.num_linears - 2):
                h = ad.silu(ad.add(ad.matmul(h, ps[f"wm_{layer}_{extra}"]),
                                   ps[f"bm_{layer}_{extra}"]))
            chans = ad.add(ad.matmul(h, ps[f"w2_{layer}"]), ps[f"b2_{layer}"])
            squares = ad.channel_matrix_squares(chans, n)
            stack = ad.concat_cols([chans, squares, raw])

        h = ad.silu(ad.add(ad.matmul(stack, ps["mlp1_w"]), ps["mlp1_b"]))
        out = ad.add(ad.matmul(h, ps["mlp2_w"]), ps["mlp2_b"])
        out = ad.reshape(out, (n, n))
        out = ad.scale(ad.add(out, ad.transpose(out)), 0.5)
        return ad.mul(out, ad.constant(1.0 - np.eye(n)))

    def save(self, path, opt_state: AdamState | None = None, extra_meta: dict | None = None) -> None:
        meta = {"kind": "velocity_net", "seed": self.seed,
                "config": {k: getattr(self.cfg, k) for k in vars(self.cfg)}}
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, self.params.as_arrays(), meta, opt_state)

    @staticmethod
    def load(path) -> "VelocityNet":
        arrays, meta, _ = load_checkpoint(path)
        if meta.get("kind") != "velocity_net":
            raise StateError("checkpoint does not hold a velocity network")
        net = VelocityNet(FlowConfig(**meta["config"]), seed=meta["seed"])
        net.params.load_arrays(arrays)
        return net


def velocity_forward(net: VelocityNet, a_t: AdjacencyState, t: float,
                     train_mode: bool = False,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Evaluate the velocity field; deterministic when train_mode is off."""
    out = net.forward_tensor(a_t.values, t, train_mode=train_mode, rng=rng)
    return out.data


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _upper_mask(n: int) -> np.ndarray:
    return np.triu(np.ones((n, n)), 1)


def flow_matching_loss(net: VelocityNet, a1: AdjacencyState, a_obs: AdjacencyState,
                       xi: ObservationMask, prior_probs: AdjacencyState, t: float,
                       sigma_s: float, rng: np.random.Generator,
                       train_mode: bool) -> ad.Tensor:
    """Single-graph regression of the velocity onto A1 - A0 at one time."""
    a0 = build_A0(a_obs, xi, prior_probs, sigma_s, None, rng)
    at = interpolate(a0, a1, t)
    target = a1.values - a0.values
    out = net.forward_tensor(at.values, t, train_mode=train_mode, rng=rng)
    diff = ad.sub(out, ad.constant(target))
    return ad.masked_mean_square(diff, _upper_mask(a1.n))


def task_mask_fn(task: TaskSpec):
    """Default mask provider: fresh task corruption from the step rng."""
    def fn(g: GraphRecord, rng: np.random.Generator):
        return make_task_input(g, task, rng)
    return fn


def fixed_mask_fn(xi: ObservationMask):
    """Mask provider pinning one observation pattern (used by the coupled-edge
    toy, whose hidden pairs are structural rather than random)."""
    def fn(g: GraphRecord, rng: np.random.Generator):
        a_obs = AdjacencyState(xi.values * g.adjacency.values, is_binary=True)
        return a_obs, xi
    return fn


class _TrainBatcher:
    """Draws (graph, mask, prior) triples; caches fixed masks and all prior
    predictions keyed by the exact observation."""

    def __init__(self, graphs: list[GraphRecord], prior: PriorModel, task: TaskSpec,
                 resample_masks: bool, mask_fn=None):
        self.graphs = graphs
        self.prior = prior
        self.task = task
        self.resample_masks = resample_masks
        self.mask_fn = mask_fn if mask_fn is not None else task_mask_fn(task)
        self._fixed: dict[int, tuple] = {}
        self._prior_cache: dict[bytes, AdjacencyState] = {}

    def sample(self, idx: int, rng: np.random.Generator):
        g = self.graphs[idx]
        if self.resample_masks:
            a_obs, xi = self.mask_fn(g, rng)
        else:
            if idx not in self._fixed:
                mask_rng = np.random.default_rng(self.task.seed * 100003 + g.graph_id)
                self._fixed[idx] = self.mask_fn(g, mask_rng)
            a_obs, xi = self._fixed[idx]
        key = a_obs.values.tobytes() + xi.values.tobytes()
        probs = self._prior_cache.get(key)
        if probs is None:
            probs = prior_predict(self.prior, a_obs, xi)
            if len(self._prior_cache) > 4096:
                self._prior_cache.clear()
            self._prior_cache[key] = probs
        return g.adjacency, a_obs, xi, probs


def train_flow(train_graphs: list[GraphRecord], val_graphs: list[GraphRecord],
               prior: PriorModel, task: TaskSpec, cfg: FlowConfig,
               rng: np.random.Generator, net_seed: int = 0,
               log_every: int = 0, mask_fn=None) -> tuple[VelocityNet, dict]:
    """Flow-matching training with Adam; returns the best-validation checkpoint.

    Each step draws a graph batch, fresh masks (unless frozen), fresh times,
    builds the noisy prior-informed source, and regresses the velocity onto
    A1 - A0 with MSE over upper-triangle entries. Divergent (non-finite)
    losses raise TrainingDiverged carrying the last good parameters.
    """
    if not train_graphs:
        raise ConfigurationError("train_flow: empty training set")
    if not prior.is_fitted:
        raise StateError("train_flow: prior must be trained first")
    net = VelocityNet(cfg, seed=net_seed)
    opt = AdamState(lr=cfg.lr)
    batcher = _TrainBatcher(train_graphs, prior, task, cfg.resample_masks, mask_fn)
    val_batcher = (_TrainBatcher(val_graphs, prior, task, resample_masks=False, mask_fn=mask_fn)
                   if val_graphs else None)
    val_seed = int(rng.integers(2 ** 31))

    def validation_loss() -> float:
        vrng = np.random.default_rng(val_seed)
        total = 0.0
        count = 0
        for _ in range(cfg.val_batches):
            for vi in range(len(val_graphs)):
                a1, a_obs, xi, probs = val_batcher.sample(vi, vrng)
                t = vrng.uniform()
                loss = flow_matching_loss(net, a1, a_obs, xi, probs, t,
                                          cfg.sigma_s_train, vrng, train_mode=False)
                total += float(loss.data)
                count += 1
        return total / max(count, 1)

    best_val = math.inf
    best_params = net.params.as_arrays()
    last_good = best_params
    train_curve: list[float] = []
    val_curve: list[tuple[int, float]] = []

    for step in range(cfg.train_steps):
        snapshot = net.params.as_arrays()
        idxs = rng.integers(len(train_graphs), size=min(cfg.batch_size, len(train_graphs)))
        total = None
        for idx in idxs:
            a1, a_obs, xi, probs = batcher.sample(int(idx), rng)
            t = float(rng.uniform())
            loss = flow_matching_loss(net, a1, a_obs, xi, probs, t,
                                      cfg.sigma_s_train, rng, train_mode=True)
            total = loss if total is None else ad.add(total, loss)
        total = ad.scale(total, 1.0 / len(idxs))
        value = ad.backprop(total)
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite loss at step {step}",
                                   best_params if best_val < math.inf else last_good)
        last_good = snapshot
        adam_step(net.params, opt)
        train_curve.append(value)
        if log_every and step % log_every == 0:
            print(f"step {step}: train loss {value:.6f}")

        if val_batcher is not None and ((step + 1) % cfg.val_every == 0 or step + 1 == cfg.train_steps):
            vloss = validation_loss()
            val_curve.append((step + 1, vloss))
            if vloss < best_val:
                best_val = vloss
                best_params = net.params.as_arrays()

    if val_batcher is not None:
        net.params.load_arrays(best_params)
    info = {"train_curve": train_curve, "val_curve": val_curve,
            "best_val": best_val if best_val < math.inf else None}
    return net, info


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

@dataclass
class FlowSample:
    final: AdjacencyState
    k: int
    seed: int | None = None
    trajectory: list[AdjacencyState] | None = None


def euler_sample(net: VelocityNet, a_obs: AdjacencyState, xi: ObservationMask,
                 prior_probs: AdjacencyState, k: int, sigma_s_sample: float,
                 rng: np.random.Generator | None, clamp_observed: bool = False,
                 keep_trajectory: bool = False, seed: int | None = None,
                 task: TaskSpec | None = None) -> FlowSample:
    """K fixed Euler steps from the prior-informed source along the learned flow."""
    if k < 1:
        raise ConfigurationError("Euler sampling needs k >= 1")
    a_hat = build_A0(a_obs, xi, prior_probs, sigma_s_sample, task, rng)
    trajectory = [a_hat] if keep_trajectory else None
    for i in range(k):
        v = velocity_forward(net, a_hat, i / k, train_mode=False)
        nxt = a_hat.values + v / k
        nxt = (nxt + nxt.T) / 2.0
        np.fill_diagonal(nxt, 0.0)
        if clamp_observed:
            nxt = xi.values * a_obs.values + (1.0 - xi.values) * nxt
            np.fill_diagonal(nxt, 0.0)
        a_hat = AdjacencyState(nxt)
        if keep_trajectory:
            trajectory.append(a_hat)
    return FlowSample(final=a_hat, k=k, seed=seed, trajectory=trajectory)


# ---------------------------------------------------------------------------
# Log-density diagnostic
# ---------------------------------------------------------------------------

class DegenerateBaseError(ValueError):
    """Log-density needs sigma_s > 0 for an absolutely continuous base."""


def log_density(net: VelocityNet, a1: AdjacencyState, a0: AdjacencyState,
                xi: ObservationMask, prior_probs: AdjacencyState,
                quad_steps: int, sigma_s: float) -> float:
    """Gaussian base log-density minus the integrated velocity divergence
    along the straight path from A0 to A1.

    The divergence is the exact Jacobian trace over upper-triangle
    coordinates, computed by central finite differences with symmetric
    perturbations; the time integral uses the midpoint rule. Intended for
    small graphs (n <= 12).
    """
    if sigma_s <= 0:
        raise DegenerateBaseError("log_density requires sigma_s > 0")
    if quad_steps < 1:
        raise ConfigurationError("quad_steps must be at least 1")
    n = a1.n
    if a0.n != n or xi.n != n or prior_probs.n != n:
        raise DimensionError("log_density: sizes disagree")
    if n > 12:
        warnings.warn("log_density: exact Jacobian traces are quadratic in pairs; "
                      "n > 12 will be slow")

    iu, ju = np.where(np.triu(xi.values == 0.0, 1))
    resid = a0.values[iu, ju] - prior_probs.values[iu, ju]
    base = float(np.sum(-0.5 * math.log(2.0 * math.pi * sigma_s ** 2)
                        - resid ** 2 / (2.0 * sigma_s ** 2)))

    h = 1e-5
    all_iu, all_ju = np.triu_indices(n, 1)
    divergence = 0.0
    for step in range(quad_steps):
        t = (step + 0.5) / quad_steps
        at = (1.0 - t) * a0.values + t * a1.values
        trace = 0.0
        for i, j in zip(all_iu, all_ju):
            plus = at.copy()
            plus[i, j] += h
            plus[j, i] += h
            minus = at.copy()
            minus[i, j] -= h
            minus[j, i] -= h
            v_plus = net.forward_tensor(plus, t).data[i, j]
            v_minus = net.forward_tensor(minus, t).data[i, j]
            trace += (v_plus - v_minus) / (2.0 * h)
        divergence += trace / quad_steps
    return base - divergence

"""Experiment orchestration: the reconstruction pipeline, the coupled-edge
toy, and K/sigma sweeps.

Stages communicate through artifacts under the configured output directory
(TU-layout dataset, split JSON, mask/prediction CSV matrices, checkpoints),
so the CLI can run them one at a time, and a full run is reproducible from
the resolved config and seed alone. PIFM_THREADS caps thread parallelism in
the per-graph reconstruction loop.
"""

from __future__ import annotations

import functools
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .data import (DatasetSplit, TaskSpec, make_task_input, parse_tu_dataset,
                   sample_graphon_dataset, split_dataset, synthetic_graphon,
                   write_tu_dataset)
from .flow import FlowConfig, VelocityNet, euler_sample, fixed_mask_fn, train_flow
from .graphs import AdjacencyState, GraphRecord, ObservationMask
from .metrics import (MetricsReport, UndefinedMetricError, auc, average_precision,
                      confusion_rates, mmd2_with_bandwidth, statistic_summary,
                      threshold_adjacency)
from .nn import ConfigurationError
from .priors import Node2VecPrior, make_prior, prior_predict
from . import report as rpt


class StageError(RuntimeError):
    """A pipeline stage failed; the message names the stage and partial
    artifacts written so far stay on disk."""


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("PIFM_THREADS", "1")))
    except ValueError:
        return 1


def _rng_for(*entropy: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(entropy)))


def _stage(name):
    def deco(fn):
        @functools.wraps(fn)
        def wrapped(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(f"stage {name!r} failed: {exc}") from exc
        return wrapped
    return deco


# ---------------------------------------------------------------------------
# Artifact store
# ---------------------------------------------------------------------------

class ArtifactStore:
    """Fixed on-disk layout for pipeline artifacts under one run directory."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir

    def path(self, *parts: str) -> str:
        return os.path.join(self.out_dir, *parts)

    # dataset
    def save_dataset(self, graphs: list[GraphRecord], manifest: dict) -> None:
        ddir = self.path("dataset")
        write_tu_dataset(graphs, ddir, name="DS")
        rpt.write_json(os.path.join(ddir, "dataset.json"), manifest)

    def load_dataset(self) -> list[GraphRecord]:
        return parse_tu_dataset(self.path("dataset"))

    # split
    def save_split(self, split: DatasetSplit) -> None:
        rpt.write_json(self.path("split.json"),
                       {"train_ids": list(split.train_ids),
                        "val_ids": list(split.val_ids),
                        "test_ids": list(split.test_ids)})

    def load_split(self) -> DatasetSplit:
        with open(self.path("split.json")) as fh:
            raw = json.load(fh)
        return DatasetSplit(tuple(raw["train_ids"]), tuple(raw["val_ids"]),
                            tuple(raw["test_ids"]))

    # masks
    def save_masks(self, masks: dict[int, tuple[AdjacencyState, ObservationMask]],
                   task: TaskSpec, config: dict | None = None) -> None:
        mdir = self.path("masks")
        os.makedirs(mdir, exist_ok=True)
        for gid, (a_obs, xi) in masks.items():
            rpt.write_matrix(os.path.join(mdir, f"a_obs_{gid}.csv"), a_obs.values)
            rpt.write_matrix(os.path.join(mdir, f"xi_{gid}.csv"), xi.values)
        rpt.write_json(os.path.join(mdir, "masks.json"),
                       {"graph_ids": sorted(masks), "task": vars(task),
                        "config": config})

    def load_masks(self) -> dict[int, tuple[AdjacencyState, ObservationMask]]:
        mdir = self.path("masks")
        with open(os.path.join(mdir, "masks.json")) as fh:
            manifest = json.load(fh)
        out = {}
        for gid in manifest["graph_ids"]:
            a_obs = AdjacencyState(rpt.read_matrix(os.path.join(mdir, f"a_obs_{gid}.csv")),
                                   is_binary=True)
            xi = ObservationMask(rpt.read_matrix(os.path.join(mdir, f"xi_{gid}.csv")))
            out[gid] = (a_obs, xi)
        return out

    @property
    def prior_path(self) -> str:
        return self.path("prior.ckpt")

    @property
    def flow_path(self) -> str:
        return self.path("flow.ckpt")

    # reconstructions
    def save_reconstructions(self, recon: list[dict], manifest: dict) -> None:
        rdir = self.path("reconstructions")
        os.makedirs(rdir, exist_ok=True)
        for item in recon:
            gid = item["graph_id"]
            rpt.write_matrix(os.path.join(rdir, f"pred_{gid}.csv"), item["mean_pred"])
            rpt.write_matrix(os.path.join(rdir, f"prior_{gid}.csv"), item["prior_pred"])
            for s, sample in enumerate(item["samples"]):
                rpt.write_matrix(os.path.join(rdir, f"sample_{gid}_{s}.csv"), sample)
            if item.get("trajectory"):
                for step, snap in enumerate(item["trajectory"]):
                    rpt.write_matrix(os.path.join(rdir, f"traj_{gid}_{step:04d}.csv"), snap)
        rpt.write_json(os.path.join(rdir, "manifest.json"), manifest)

    def load_reconstructions(self) -> tuple[list[dict], dict]:
        rdir = self.path("reconstructions")
        with open(os.path.join(rdir, "manifest.json")) as fh:
            manifest = json.load(fh)
        recon = []
        for gid in manifest["graph_ids"]:
            item = {"graph_id": gid,
                    "mean_pred": rpt.read_matrix(os.path.join(rdir, f"pred_{gid}.csv")),
                    "prior_pred": rpt.read_matrix(os.path.join(rdir, f"prior_{gid}.csv")),
                    "samples": []}
            s = 0
            while os.path.exists(os.path.join(rdir, f"sample_{gid}_{s}.csv")):
                item["samples"].append(rpt.read_matrix(os.path.join(rdir, f"sample_{gid}_{s}.csv")))
                s += 1
            recon.append(item)
        return recon, manifest


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

@_stage("ingest")
def stage_ingest(config: ExperimentConfig, store: ArtifactStore | None = None) -> list[GraphRecord]:
    ds = config.dataset
    if ds["kind"] == "tu":
        graphs = parse_tu_dataset(ds["path"])
        manifest = {"kind": "tu", "path": ds["path"], "count": len(graphs)}
    else:
        grid = synthetic_graphon(ds["family"], resolution=int(ds["resolution"]),
                                 p_in=ds["p_in"], p_out=ds["p_out"], c=ds["c"])
        graphs = sample_graphon_dataset(grid, int(ds["count"]), int(ds["n"]),
                                        seed=config.seed)
        manifest = {"kind": "synthetic", "family": ds["family"], "count": len(graphs),
                    "n": int(ds["n"]), "seed": config.seed}
    manifest["mean_nodes"] = float(np.mean([g.n for g in graphs]))
    manifest["mean_edges"] = float(np.mean([g.adjacency.edge_count() for g in graphs]))
    manifest["config"] = config.resolved()
    if store is not None:
        store.save_dataset(graphs, manifest)
    return graphs


@_stage("split")
def stage_split(config: ExperimentConfig, graphs: list[GraphRecord],
                store: ArtifactStore | None = None) -> DatasetSplit:
    split = split_dataset(len(graphs), config.seed)
    if store is not None:
        store.save_split(split)
    return split


def test_mask_for(config: ExperimentConfig, g: GraphRecord) -> tuple[AdjacencyState, ObservationMask]:
    """Deterministic per-graph test corruption, independent of sweep position."""
    return make_task_input(g, config.task_spec(), _rng_for(config.seed, 7, g.graph_id))


@_stage("mask")
def stage_masks(config: ExperimentConfig, graphs: list[GraphRecord], split: DatasetSplit,
                store: ArtifactStore | None = None) -> dict[int, tuple]:
    masks = {graphs[i].graph_id: test_mask_for(config, graphs[i]) for i in split.test_ids}
    if store is not None:
        store.save_masks(masks, config.task_spec(), config.resolved())
    return masks


@_stage("train-prior")
def stage_train_prior(config: ExperimentConfig, graphs: list[GraphRecord],
                      split: DatasetSplit, store: ArtifactStore | None = None):
    prior = make_prior(config.prior["variant"], seed=config.seed, **config.prior_kwargs())
    train = [graphs[i] for i in split.train_ids]
    prior.fit(train, config.task_spec(), _rng_for(config.seed, 13))
    if store is not None:
        prior.save(store.prior_path)
        if prior.variant == "graphon":
            prior.export_grid_csv(store.path("graphon_grid.csv"))
    return prior


@_stage("train-flow")
def stage_train_flow(config: ExperimentConfig, graphs: list[GraphRecord],
                     split: DatasetSplit, prior, store: ArtifactStore | None = None,
                     log_every: int = 0) -> tuple[VelocityNet, dict]:
    cfg = config.flow_config()
    train = [graphs[i] for i in split.train_ids]
    val = [graphs[i] for i in split.val_ids]
    net, info = train_flow(train, val, prior, config.task_spec(), cfg,
                           _rng_for(config.seed, 17), net_seed=config.seed,
                           log_every=log_every)
    if store is not None:
        net.save(store.flow_path, extra_meta={"prior_variant": prior.variant})
        rpt.write_csv(store.path("training_curve.csv"), ["step", "train_loss"],
                      [[i + 1, v] for i, v in enumerate(info["train_curve"])])
        if info["val_curve"]:
            rpt.write_csv(store.path("validation_curve.csv"), ["step", "val_loss"],
                          [[s, v] for s, v in info["val_curve"]])
        os.makedirs(store.path("figures"), exist_ok=True)
        rpt.render_training_curve(store.path("figures", "training_loss.png"),
                                  info["train_curve"], info["val_curve"])
    return net, info


def _reconstruct_one(net: VelocityNet, prior, g: GraphRecord, a_obs: AdjacencyState,
                     xi: ObservationMask, k: int, sigma: float, n_samples: int,
                     clamp_observed: bool, base_seed: int, task: TaskSpec,
                     keep_trajectory: bool = False) -> dict:
    prior_pred = prior_predict(prior, a_obs, xi)
    samples = []
    trajectory = None
    for s in range(n_samples):
        rng = _rng_for(base_seed, 11, g.graph_id, s)
        out = euler_sample(net, a_obs, xi, prior_pred, k=k, sigma_s_sample=sigma,
                           rng=rng, clamp_observed=clamp_observed, task=task,
                           keep_trajectory=keep_trajectory and s == 0, seed=base_seed)
        samples.append(out.final.values)
        if out.trajectory is not None:
            trajectory = [snap.values for snap in out.trajectory]
    mean_pred = np.mean(samples, axis=0)
    return {"graph_id": g.graph_id, "truth": g.adjacency.values, "a_obs": a_obs.values,
            "xi": xi.values, "prior_pred": prior_pred.values, "samples": samples,
            "mean_pred": mean_pred, "trajectory": trajectory}


@_stage("reconstruct")
def stage_reconstruct(config: ExperimentConfig, graphs: list[GraphRecord],
                      split: DatasetSplit, prior, net: VelocityNet,
                      masks: dict[int, tuple] | None = None,
                      store: ArtifactStore | None = None,
                      k: int | None = None, sigma: float | None = None,
                      n_samples: int | None = None) -> list[dict]:
    cfg = config.flow_config()
    k = cfg.k if k is None else k
    sigma = cfg.sigma_s_sample if sigma is None else sigma
    n_samples = int(config.eval["samples_per_graph"]) if n_samples is None else n_samples
    task = config.task_spec()
    test_graphs = [graphs[i] for i in split.test_ids]
    if masks is None:
        masks = {g.graph_id: test_mask_for(config, g) for g in test_graphs}

    keep_traj = bool(config.eval.get("save_trajectory", False))

    def work(g: GraphRecord) -> dict:
        a_obs, xi = masks[g.graph_id]
        return _reconstruct_one(net, prior, g, a_obs, xi, k, sigma, n_samples,
                                cfg.clamp_observed, config.seed, task,
                                keep_trajectory=keep_traj)

    threads = _thread_count()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            recon = list(pool.map(work, test_graphs))
    else:
        recon = [work(g) for g in test_graphs]
    if store is not None:
        store.save_reconstructions(
            recon, {"graph_ids": [r["graph_id"] for r in recon], "k": k,
                    "sigma_s_sample": sigma, "samples_per_graph": n_samples,
                    "task": vars(task), "seed": config.seed,
                    "prior_variant": prior.variant, "config": config.resolved()})
    return recon


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _hidden_scores(item: dict, source: str) -> tuple[np.ndarray, np.ndarray]:
    hidden = np.triu(item["xi"] == 0.0, 1)
    return item[source][hidden], item["truth"][hidden]


def _safe(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetricError:
        return float("nan")


def score_reconstructions(recon: list[dict], source: str, threshold: float) -> dict:
    """Macro (per-graph mean) and pooled ranking/confusion metrics plus
    masked MSE for one prediction source ('mean_pred' or 'prior_pred')."""
    per_graph = []
    pooled_scores, pooled_labels = [], []
    for item in recon:
        scores, labels = _hidden_scores(item, source)
        if scores.size == 0:
            continue
        pooled_scores.append(scores)
        pooled_labels.append(labels)
        fpr, fnr = confusion_rates(scores, labels, threshold)
        per_graph.append({
            "graph_id": item["graph_id"],
            "auc": _safe(auc, scores, labels),
            "ap": _safe(average_precision, scores, labels),
            "fpr": fpr,
            "fnr": fnr,
            "mse": float(np.mean((scores - labels) ** 2)),
        })
    if not per_graph:
        raise UndefinedMetricError("no graphs with a nonempty hidden region")
    pooled_scores = np.concatenate(pooled_scores)
    pooled_labels = np.concatenate(pooled_labels)
    pooled_fpr, pooled_fnr = confusion_rates(pooled_scores, pooled_labels, threshold)

    def macro(key):
        vals = np.array([row[key] for row in per_graph])
        finite = vals[np.isfinite(vals)]
        return float(finite.mean()) if finite.size else float("nan")

    return {
        "macro": {"auc": 100 * macro("auc"), "ap": 100 * macro("ap"),
                  "fpr": 100 * macro("fpr"), "fnr": 100 * macro("fnr"),
                  "mse": macro("mse")},
        "pooled": {"auc": 100 * _safe(auc, pooled_scores, pooled_labels),
                   "ap": 100 * _safe(average_precision, pooled_scores, pooled_labels),
                   "fpr": 100 * pooled_fpr, "fnr": 100 * pooled_fnr,
                   "mse": float(np.mean((pooled_scores - pooled_labels) ** 2))},
        "skipped": {key: int(np.sum(~np.isfinite([row[key] for row in per_graph])))
                    for key in ("auc", "ap", "fpr", "fnr")},
        "per_graph": per_graph,
    }


def mmd_scores(recon: list[dict], statistics: list[str], threshold: float,
               with_bandwidths: bool = False):
    truth = [AdjacencyState(item["truth"], is_binary=True) for item in recon]
    generated = [threshold_adjacency(AdjacencyState((s + s.T) / 2.0), threshold)
                 for item in recon for s in item["samples"]]
    values, bandwidths = {}, {}
    for stat in statistics:
        values[stat], bandwidths[stat] = mmd2_with_bandwidth(generated, truth,
                                                             statistic=stat)
    if with_bandwidths:
        return values, bandwidths
    return values


def reconstruction_statistics(recon: list[dict], threshold: float) -> dict:
    """Mean/std of graph statistics for generated samples vs ground truth."""
    truth = [AdjacencyState(item["truth"], is_binary=True) for item in recon]
    generated = [threshold_adjacency(AdjacencyState((s + s.T) / 2.0), threshold)
                 for item in recon for s in item["samples"]]
    return {"generated": statistic_summary(generated), "truth": statistic_summary(truth)}


def observed_drift(recon: list[dict]) -> float:
    """Mean absolute deviation of predictions from the observation on the
    observed off-diagonal region (monitored, not asserted)."""
    devs = []
    for item in recon:
        obs = item["xi"] == 1.0
        np.fill_diagonal(obs, False)
        if obs.any():
            devs.append(np.mean(np.abs(item["mean_pred"][obs] - item["a_obs"][obs])))
    return float(np.mean(devs)) if devs else 0.0


@_stage("evaluate")
def stage_evaluate(config: ExperimentConfig, recon: list[dict],
                   flow_info: dict | None = None) -> dict:
    threshold = float(config.eval["threshold"])
    pifm = score_reconstructions(recon, "mean_pred", threshold)
    prior = score_reconstructions(recon, "prior_pred", threshold)
    stat_summary = reconstruction_statistics(recon, threshold)
    headline = MetricsReport(
        auc=pifm["macro"]["auc"], ap=pifm["macro"]["ap"],
        fpr=pifm["macro"]["fpr"], fnr=pifm["macro"]["fnr"],
        extras={"mse": pifm["macro"]["mse"],
                "prior_auc": prior["macro"]["auc"],
                "prior_ap": prior["macro"]["ap"]})
    metrics = {
        "headline": headline.as_dict(),
        "pifm": {k: v for k, v in pifm.items() if k != "per_graph"},
        "prior": {k: v for k, v in prior.items() if k != "per_graph"},
        "graph_statistics": stat_summary,
        "observed_drift_mean_abs": observed_drift(recon),
        "provenance": {
            "config": config.resolved(),
            "threshold": threshold,
            "mmd_kernel": "gaussian on normalized statistic histograms, "
                          "median-heuristic bandwidth",
            "n_test_graphs": len(recon),
        },
    }
    if config.eval.get("compute_mmd"):
        stats = list(config.eval["mmd_statistics"])
        values, bandwidths = mmd_scores(recon, stats, threshold, with_bandwidths=True)
        metrics["mmd2"] = values
        metrics["provenance"]["mmd_bandwidths"] = bandwidths
        first = stats[0]
        metrics["headline"]["mmd2"] = values[first]
        metrics["headline"][f"mmd2_{first}"] = values[first]

    per_rows = [[row["graph_id"],
                 row["auc"], row["ap"], row["fpr"], row["fnr"], row["mse"],
                 prow["auc"], prow["ap"]]
                for row, prow in zip(pifm["per_graph"], prior["per_graph"])]
    results = {
        "title": f"reconstruction report ({config.task['kind']}, "
                 f"rate {config.task['rate']}, prior {config.prior['variant']})",
        "metrics": metrics,
        "predictions": {item["graph_id"]: item["mean_pred"] for item in recon},
        "per_graph_rows": (["graph_id", "auc", "ap", "fpr", "fnr", "mse",
                            "prior_auc", "prior_ap"], per_rows),
        "tables": {
            "headline": (sorted(metrics["headline"]),
                         [[metrics["headline"][k] for k in sorted(metrics["headline"])]]),
        },
        "summary_lines": [
            f"macro AUC {pifm['macro']['auc']:.2f} (prior {prior['macro']['auc']:.2f})",
            f"macro AP  {pifm['macro']['ap']:.2f} (prior {prior['macro']['ap']:.2f})",
            f"masked MSE {pifm['macro']['mse']:.4f}",
            f"observed drift (mean abs) {metrics['observed_drift_mean_abs']:.4f}",
        ],
    }

    def figures(figdir: str, _pifm=pifm, _prior=prior, _info=flow_info):
        rpt.render_metric_bars(
            os.path.join(figdir, "metrics_vs_prior.png"),
            ["pifm", "prior"],
            {"AUC": [_pifm["macro"]["auc"], _prior["macro"]["auc"]],
             "AP": [_pifm["macro"]["ap"], _prior["macro"]["ap"]],
             "FPR": [_pifm["macro"]["fpr"], _prior["macro"]["fpr"]],
             "FNR": [_pifm["macro"]["fnr"], _prior["macro"]["fnr"]]},
            "reconstruction vs one-shot prior")
        rpt.render_histogram(
            os.path.join(figdir, "per_graph_auc.png"),
            [100 * row["auc"] for row in _pifm["per_graph"]],
            "per-graph AUC (%)", "test-set AUC distribution")
    results["figures"] = [figures]
    return results


# ---------------------------------------------------------------------------
# run_experiment / run_toy / run_sweep
# ---------------------------------------------------------------------------

def run_experiment(config: ExperimentConfig, force: bool = False,
                   log_every: int = 0) -> tuple[dict, int]:
    """Ingest, split, train prior and flow, reconstruct, evaluate, emit.

    Returns (results, exit_code). Every artifact lands under config.out_dir;
    rerunning with an identical config and seed reproduces metrics.json byte
    for byte.
    """
    rpt.ensure_out_dir(config.out_dir, force)
    store = ArtifactStore(config.out_dir)
    graphs = stage_ingest(config, store)
    split = stage_split(config, graphs, store)
    masks = stage_masks(config, graphs, split, store)
    prior = stage_train_prior(config, graphs, split, store)
    net, info = stage_train_flow(config, graphs, split, prior, store, log_every=log_every)
    recon = stage_reconstruct(config, graphs, split, prior, net, masks, store)
    results = stage_evaluate(config, recon, info)
    code = rpt.emit_report(results, config.out_dir, force=True,
                           strict=bool(config.eval["strict"]))
    return results, code


# ---------------------------------------------------------------------------
# Toy coupled-edge experiment
# ---------------------------------------------------------------------------

TOY_DEFAULTS = {
    "train_draws": 400,
    "train_steps": 4000,
    "batch_size": 16,
    "lr": 1e-3,
    "sigma_s": 0.15,
    "k": 100,
    "n_samples": 200,
    "mode_prob": 0.6,
}


def toy_graph(with_diagonals: bool, graph_id: int = 0) -> GraphRecord:
    """Four-node cycle 0-1-2-3; the two diagonals are present together or
    absent together."""
    a = np.zeros((4, 4))
    for i, j in ((0, 1), (1, 2), (2, 3), (0, 3)):
        a[i, j] = a[j, i] = 1.0
    if with_diagonals:
        a[0, 2] = a[2, 0] = 1.0
        a[1, 3] = a[3, 1] = 1.0
    return GraphRecord(AdjacencyState(a, is_binary=True), graph_id=graph_id)


def toy_mask() -> ObservationMask:
    xi = np.ones((4, 4))
    for i, j in ((0, 2), (1, 3)):
        xi[i, j] = xi[j, i] = 0.0
    return ObservationMask(xi)


def _classify_toy_sample(values: np.ndarray, threshold: float = 0.5) -> str:
    e1 = values[0, 2] >= threshold
    e2 = values[1, 3] >= threshold
    if e1 and e2:
        return "both_present"
    if not e1 and not e2:
        return "both_absent"
    return "invalid"


def run_toy(seed: int = 0, out_dir: str | None = None, force: bool = False,
            overrides: dict | None = None, log_every: int = 0) -> tuple[dict, int]:
    """Train PIFM on the two-mode four-node distribution and compare mode
    statistics against the conditionally independent prior baseline."""
    opts = {**TOY_DEFAULTS, **(overrides or {})}
    rng = _rng_for(seed, 23)
    p_mode = float(opts["mode_prob"])
    graphs = [toy_graph(bool(rng.uniform() < p_mode), graph_id=i)
              for i in range(int(opts["train_draws"]))]
    val = graphs[: max(8, len(graphs) // 20)]
    xi = toy_mask()
    a_obs = AdjacencyState(xi.values * toy_graph(True).adjacency.values, is_binary=True)

    prior = Node2VecPrior(seed=seed)
    with warnings.catch_warnings():
        # the 4-cycle observation has no negative pairs; the constant-density
        # fallback is the expected behavior here
        warnings.simplefilter("ignore")
        prior_pred = prior_predict(prior, a_obs, xi)
    p02 = float(prior_pred.values[0, 2])
    p13 = float(prior_pred.values[1, 3])

    cfg = FlowConfig(sigma_s_train=float(opts["sigma_s"]),
                     sigma_s_sample=float(opts["sigma_s"]),
                     k=int(opts["k"]), lr=float(opts["lr"]),
                     batch_size=int(opts["batch_size"]),
                     train_steps=int(opts["train_steps"]),
                     dropout=0.0, val_every=max(1, int(opts["train_steps"]) // 4))
    task = TaskSpec("linkpred", 0.5, seed=seed)  # nominal; masks come from mask_fn
    net, info = train_flow(graphs, val, prior, task, cfg, _rng_for(seed, 29),
                           net_seed=seed, log_every=log_every,
                           mask_fn=fixed_mask_fn(xi))

    n_samples = int(opts["n_samples"])
    counts = {"both_present": 0, "both_absent": 0, "invalid": 0}
    sample_rows = []
    for s in range(n_samples):
        out = euler_sample(net, a_obs, xi, prior_pred, k=cfg.k,
                           sigma_s_sample=cfg.sigma_s_sample,
                           rng=_rng_for(seed, 31, s), task=task)
        mode = _classify_toy_sample(out.final.values)
        counts[mode] += 1
        sample_rows.append([s, out.final.values[0, 2], out.final.values[1, 3], mode])
    pifm_prop = {k: v / n_samples for k, v in counts.items()}

    base_counts = {"both_present": 0, "both_absent": 0, "invalid": 0}
    brng = _rng_for(seed, 37)
    for _ in range(n_samples):
        e1 = brng.uniform() < p02
        e2 = brng.uniform() < p13
        key = "both_present" if (e1 and e2) else ("both_absent" if not (e1 or e2) else "invalid")
        base_counts[key] += 1
    base_prop = {k: v / n_samples for k, v in base_counts.items()}
    closed_form_invalid = p02 * (1 - p13) + (1 - p02) * p13

    metrics = {
        "headline": {
            "pifm_valid": pifm_prop["both_present"] + pifm_prop["both_absent"],
            "pifm_mode_both_present": pifm_prop["both_present"],
            "baseline_invalid": base_prop["invalid"],
            "closed_form_baseline_invalid": closed_form_invalid,
            "prior_edge_probability": p02,
        },
        "pifm": pifm_prop,
        "baseline": base_prop,
        "truth": {"both_present": p_mode, "both_absent": 1 - p_mode, "invalid": 0.0},
        "prior": {"edge_02": p02, "edge_13": p13,
                  "fallback": bool(prior.last_model and prior.last_model.fallback)},
        "provenance": {"seed": seed, "options": opts,
                       "final_train_loss": info["train_curve"][-1]},
    }
    results = {
        "title": "coupled-edge toy experiment",
        "metrics": metrics,
        "tables": {"toy_samples": (["sample", "edge_02", "edge_13", "mode"], sample_rows)},
        "summary_lines": [
            f"valid-mode fraction {metrics['headline']['pifm_valid']:.3f}",
            f"mode [1,1] proportion {pifm_prop['both_present']:.3f} (target {p_mode})",
            f"baseline invalid {base_prop['invalid']:.3f} "
            f"(closed form {closed_form_invalid:.3f})",
        ],
    }

    def figures(figdir: str):
        rpt.render_mode_bars(os.path.join(figdir, "mode_proportions.png"),
                             {"pifm": pifm_prop, "prior baseline": base_prop,
                              "truth": metrics["truth"]},
                             "mode proportions over 200 samples")
        rpt.render_training_curve(os.path.join(figdir, "training_loss.png"),
                                  info["train_curve"], info["val_curve"])
    results["figures"] = [figures]

    code = 0
    if out_dir is not None:
        code = rpt.emit_report(results, out_dir, force=force)
    return results, code


# ---------------------------------------------------------------------------
# K / sigma sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    """Grid of Euler step counts and sample-time noise levels."""

    k_values: tuple = (1, 10, 100)
    sigma_values: tuple = (0.1,)
    samples_per_graph: int = 10

    def __post_init__(self):
        if not self.k_values or not self.sigma_values:
            raise ConfigurationError("sweep needs nonempty k and sigma lists")
        if any(k < 1 for k in self.k_values):
            raise ConfigurationError("sweep k values must be >= 1")


def run_sweep(config: ExperimentConfig, sweep: SweepSpec, force: bool = False,
              log_every: int = 0) -> tuple[dict, int]:
    """Train once, then reconstruct the test set over the (K, sigma) grid,
    emitting AUC-vs-K and MMD^2-vs-K tables, figures, and JSON.

    The flow is trained at the config's sigma_s_train; sweep sigmas apply to
    sampling only.
    """
    rpt.ensure_out_dir(config.out_dir, force)
    store = ArtifactStore(config.out_dir)
    graphs = stage_ingest(config, store)
    split = stage_split(config, graphs, store)
    masks = stage_masks(config, graphs, split, store)
    prior = stage_train_prior(config, graphs, split, store)
    net, info = stage_train_flow(config, graphs, split, prior, store, log_every=log_every)

    threshold = float(config.eval["threshold"])
    stats = list(config.eval["mmd_statistics"])
    rows = []
    grid = {}
    for sigma in sweep.sigma_values:
        for k in sweep.k_values:
            recon = stage_reconstruct(config, graphs, split, prior, net, masks,
                                      store=None, k=int(k), sigma=float(sigma),
                                      n_samples=int(sweep.samples_per_graph))
            scored = score_reconstructions(recon, "mean_pred", threshold)
            mmd = mmd_scores(recon, stats, threshold)
            row = {"k": int(k), "sigma_s": float(sigma),
                   "auc": scored["macro"]["auc"], "ap": scored["macro"]["ap"],
                   "mse": scored["macro"]["mse"]}
            for stat in stats:
                row[f"mmd2_{stat}"] = mmd[stat]
            rows.append(row)
            grid[(float(sigma), int(k))] = row

    header = ["k", "sigma_s", "auc", "ap", "mse"] + [f"mmd2_{s}" for s in stats]
    table_rows = [[row[h] for h in header] for row in rows]
    metrics = {
        "headline": {"best_auc": max(r["auc"] for r in rows),
                     "best_auc_k": min(((-r["auc"], r["k"]) for r in rows))[1],
                     f"min_mmd2_{stats[0]}": min(r[f"mmd2_{stats[0]}"] for r in rows)},
        "rows": rows,
        "provenance": {"config": config.resolved(),
                       "sweep": {"k_values": list(sweep.k_values),
                                 "sigma_values": list(sweep.sigma_values),
                                 "samples_per_graph": sweep.samples_per_graph}},
    }
    results = {
        "title": "K / sigma sweep",
        "metrics": metrics,
        "tables": {
            "sweep": (header, table_rows),
            "auc_vs_k": (["k"] + [f"sigma={s}" for s in sweep.sigma_values],
                         [[k] + [grid[(float(s), int(k))]["auc"] for s in sweep.sigma_values]
                          for k in sweep.k_values]),
            f"mmd2_{stats[0]}_vs_k": (
                ["k"] + [f"sigma={s}" for s in sweep.sigma_values],
                [[k] + [grid[(float(s), int(k))][f"mmd2_{stats[0]}"] for s in sweep.sigma_values]
                 for k in sweep.k_values]),
        },
        "summary_lines": [f"grid: K={list(sweep.k_values)} sigma={list(sweep.sigma_values)}",
                          f"samples per test graph: {sweep.samples_per_graph}"],
    }

    def figures(figdir: str):
        ks = [int(k) for k in sweep.k_values]
        rpt.render_curve(os.path.join(figdir, "auc_vs_k.png"), ks,
                         {f"sigma={s}": [grid[(float(s), k)]["auc"] for k in ks]
                          for s in sweep.sigma_values},
                         "Euler steps K", "macro AUC (%)", "distortion vs steps",
                         logx=len(ks) > 2)
        rpt.render_curve(os.path.join(figdir, f"mmd2_{stats[0]}_vs_k.png"), ks,
                         {f"sigma={s}": [grid[(float(s), k)][f"mmd2_{stats[0]}"] for k in ks]
                          for s in sweep.sigma_values},
                         "Euler steps K", f"MMD^2 ({stats[0]})", "perception vs steps",
                         logx=len(ks) > 2)
    results["figures"] = [figures]

    code = rpt.emit_report(results, config.out_dir, force=True,
                           strict=bool(config.eval["strict"]))
    return results, code

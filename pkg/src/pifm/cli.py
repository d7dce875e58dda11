"""Command-line interface.

Subcommands: ingest | split | mask | train-prior | train-flow | reconstruct |
evaluate | toy | sweep. Stage subcommands read and write artifacts under the
run directory, so a full experiment is the stages chained in order; `toy`
and `sweep` are self-contained. PIFM_THREADS caps reconstruction
parallelism.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import ExperimentConfig, config_from_dict, load_config
from .experiment import (ArtifactStore, StageError, SweepSpec, run_sweep, run_toy,
                         stage_evaluate, stage_ingest, stage_masks, stage_reconstruct,
                         stage_split, stage_train_flow, stage_train_prior)
from .flow import VelocityNet
from .priors import load_prior
from . import report as rpt


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--k", type=int, help="Euler step count override")
    p.add_argument("--sigma-s", type=float, help="sampling noise std-dev override")
    p.add_argument("--prior", choices=["node2vec", "sage", "graphon", "gaussian"],
                   help="prior variant override")
    p.add_argument("--task", choices=["linkpred", "expansion", "denoise"],
                   help="task kind override")
    p.add_argument("--rate", type=float, help="mask/flip rate override")
    p.add_argument("--threshold", type=float, help="binarization threshold (default 0.5)")
    p.add_argument("--clamp-observed", action="store_true", default=None,
                   help="re-impose observed entries after every Euler step")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("--log-every", type=int, default=0,
                   help="print training loss every N steps")


def _config_from_args(args) -> ExperimentConfig:
    overrides = {
        "seed": args.seed,
        "out_dir": args.out,
        "flow.k": args.k,
        "flow.sigma_s_sample": args.sigma_s,
        "prior.variant": args.prior,
        "task.kind": args.task,
        "task.rate": args.rate,
        "eval.threshold": args.threshold,
        "flow.clamp_observed": args.clamp_observed,
    }
    if args.config:
        return load_config(args.config, overrides)
    return config_from_dict({}, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pifm",
        description="prior-informed flow matching for graph reconstruction")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in [
        ("ingest", "load or synthesize the dataset into the run directory"),
        ("split", "write the train/val/test split"),
        ("mask", "write task corruptions for the test graphs"),
        ("train-prior", "fit the edge-probability prior"),
        ("train-flow", "train the velocity network"),
        ("reconstruct", "sample reconstructions for the test graphs"),
        ("evaluate", "score reconstructions and emit the report"),
        ("toy", "run the 4-node coupled-edge experiment"),
        ("sweep", "grid over Euler steps and sampling noise"),
    ]:
        p = sub.add_parser(name, help=desc)
        _add_common(p)
        if name == "toy":
            p.add_argument("--train-steps", type=int, help="toy training steps")
            p.add_argument("--samples", type=int, help="number of samples to draw")
        if name == "sweep":
            p.add_argument("--k-list", default="1,10,100",
                           help="comma-separated Euler step counts")
            p.add_argument("--sigma-list", default=None,
                           help="comma-separated sampling noise levels")
            p.add_argument("--samples-per-graph", type=int, default=10)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except rpt.ReportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "toy":
        overrides = {}
        if args.train_steps is not None:
            overrides["train_steps"] = args.train_steps
        if args.samples is not None:
            overrides["n_samples"] = args.samples
        if args.sigma_s is not None:
            overrides["sigma_s"] = args.sigma_s
        if args.k is not None:
            overrides["k"] = args.k
        seed = args.seed if args.seed is not None else 0
        out = args.out or "runs/toy"
        results, code = run_toy(seed=seed, out_dir=out, force=args.force,
                                overrides=overrides, log_every=args.log_every)
        print(json.dumps(rpt._jsonable(results["metrics"]["headline"]), indent=2))
        return code

    config = _config_from_args(args)

    if args.command == "sweep":
        k_values = tuple(int(x) for x in args.k_list.split(","))
        if args.sigma_list:
            sigma_values = tuple(float(x) for x in args.sigma_list.split(","))
        else:
            sigma_values = (config.flow["sigma_s_sample"],)
        sweep = SweepSpec(k_values=k_values, sigma_values=sigma_values,
                          samples_per_graph=args.samples_per_graph)
        if not config.eval["compute_mmd"]:
            config.eval["compute_mmd"] = True
        results, code = run_sweep(config, sweep, force=args.force,
                                  log_every=args.log_every)
        for row in results["metrics"]["rows"]:
            print(json.dumps(rpt._jsonable(row)))
        return code

    store = ArtifactStore(config.out_dir)

    if args.command == "ingest":
        rpt.ensure_out_dir(config.out_dir, args.force)
        graphs = stage_ingest(config, store)
        print(f"ingested {len(graphs)} graphs -> {store.path('dataset')}")
        return 0

    if args.command == "split":
        graphs = store.load_dataset()
        split = stage_split(config, graphs, store)
        print(f"split {len(split.train_ids)}/{len(split.val_ids)}/{len(split.test_ids)} "
              f"-> {store.path('split.json')}")
        return 0

    if args.command == "mask":
        graphs = store.load_dataset()
        split = store.load_split()
        masks = stage_masks(config, graphs, split, store)
        print(f"wrote {len(masks)} task corruptions -> {store.path('masks')}")
        return 0

    if args.command == "train-prior":
        graphs = store.load_dataset()
        split = store.load_split()
        prior = stage_train_prior(config, graphs, split, store)
        print(f"trained {prior.variant} prior -> {store.prior_path}")
        return 0

    if args.command == "train-flow":
        graphs = store.load_dataset()
        split = store.load_split()
        prior = load_prior(store.prior_path)
        net, info = stage_train_flow(config, graphs, split, prior, store,
                                     log_every=args.log_every)
        final = info["train_curve"][-1] if info["train_curve"] else float("nan")
        print(f"trained flow (final loss {final:.3e}) -> {store.flow_path}")
        return 0

    if args.command == "reconstruct":
        graphs = store.load_dataset()
        split = store.load_split()
        prior = load_prior(store.prior_path)
        net = VelocityNet.load(store.flow_path)
        masks = store.load_masks()
        recon = stage_reconstruct(config, graphs, split, prior, net, masks, store)
        print(f"reconstructed {len(recon)} graphs -> {store.path('reconstructions')}")
        return 0

    if args.command == "evaluate":
        graphs = store.load_dataset()
        recon_raw, manifest = store.load_reconstructions()
        by_id = {g.graph_id: g for g in graphs}
        masks = store.load_masks()
        recon = []
        for item in recon_raw:
            gid = item["graph_id"]
            a_obs, xi = masks[gid]
            recon.append({**item, "truth": by_id[gid].adjacency.values,
                          "a_obs": a_obs.values, "xi": xi.values})
        results = stage_evaluate(config, recon)
        code = rpt.emit_report(results, config.out_dir, force=True,
                               strict=bool(config.eval["strict"]))
        print(json.dumps(rpt._jsonable(results["metrics"]["headline"]), indent=2))
        return code

    raise StageError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())

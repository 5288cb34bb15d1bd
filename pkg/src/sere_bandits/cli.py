"""Command-line entry point.

Runs experiments from a JSON config file with flag overrides, switches to
a grid sweep when --grid is given, and preprocesses ratings files into
cached datasets with --ingest. Output lands in --out (or $SERE_BANDITS_OUT).
Exit codes: 0 success, 1 numeric failure during a run, 2 bad configuration.
"""

import argparse
import json
import sys
from pathlib import Path

from .harness import (ConfigError, ExperimentConfig, grid_search,
                      resolve_out_dir, run_experiment, sensitivity_sweep)
from .ratings import RatingsError, ingest_ratings


def build_parser():
    p = argparse.ArgumentParser(
        prog="sere-bandits",
        description="Clustering-of-neural-bandits simulations with selective "
                    "unit reinitialization.")
    p.add_argument("--config", help="JSON experiment config file")
    p.add_argument("--algo", choices=["club_n", "mcnb_lite"],
                   help="bandit algorithm variant")
    p.add_argument("--env", choices=["piecewise", "perturbed", "dataset"],
                   help="environment kind")
    p.add_argument("--rounds", type=int, help="horizon T")
    p.add_argument("--seeds", help="comma-separated seed list, e.g. 1,2,3")
    p.add_argument("--out", help="output directory for CSV/JSON logs")
    p.add_argument("--grid", help="JSON file of parameter ranges to sweep, or "
                                  "'eta_m' for the built-in decay/maturity sweep")
    p.add_argument("--sere", choices=["on", "off"],
                   help="override selective reinitialization")
    p.add_argument("--dataset", help="cached .npz dataset for env=dataset")
    p.add_argument("--profile", choices=["perturbed"],
                   help="start from a tuned profile instead of bare defaults")
    p.add_argument("--ingest", help="ratings file to preprocess (then exit)")
    p.add_argument("--cache", help="output .npz path for --ingest")
    p.add_argument("--svd-rank", type=int, default=10,
                   help="SVD rank per side for --ingest")
    p.add_argument("--groups", type=int, default=50,
                   help="k-means user groups for --ingest")
    return p


def config_from_args(args):
    if args.config:
        config = ExperimentConfig.from_file(args.config)
    elif args.profile == "perturbed":
        config = ExperimentConfig.perturbed_default()
    else:
        config = ExperimentConfig()
    overrides = {}
    if args.algo:
        overrides["algo"] = args.algo
    if args.env:
        overrides["env"] = args.env
    if args.rounds is not None:
        overrides["T"] = args.rounds
    if args.seeds:
        overrides["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    if args.out:
        overrides["out_dir"] = args.out
    if args.sere:
        overrides["sere_enabled"] = args.sere == "on"
    if args.dataset:
        overrides["dataset_path"] = args.dataset
    return config.replace(**overrides) if overrides else config


def main(argv=None):
    args = build_parser().parse_args(argv)

    if args.ingest:
        if not args.cache:
            print("--ingest requires --cache OUT.npz", file=sys.stderr)
            return 2
        try:
            dataset = ingest_ratings(args.ingest, rank=args.svd_rank,
                                     n_groups=args.groups)
            dataset.save(args.cache)
        except (RatingsError, OSError) as exc:
            print(f"ingest failed: {exc}", file=sys.stderr)
            return 2
        print(f"cached {len(dataset.user_ids)} users x {len(dataset.item_ids)} "
              f"items -> {args.cache}")
        return 0

    try:
        config = config_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.grid:
            if args.grid == "eta_m":
                result = sensitivity_sweep(config)
            else:
                with open(args.grid) as f:
                    ranges = json.load(f)
                result = grid_search(config, ranges)
            out_dir = resolve_out_dir(config)
            if out_dir is not None:
                out_dir.mkdir(parents=True, exist_ok=True)
                path = Path(out_dir) / "grid_results.json"
                payload = {k: v for k, v in result.items() if k != "best_config"}
                with open(path, "w") as f:
                    json.dump(payload, f, indent=2, sort_keys=True)
                print(f"wrote {path}")
            best = result["best"]
            print(f"best point: {best['point']} "
                  f"(avg regret {best['avg_regret_mean']:.4f})")
            return 0
        result = run_experiment(config)
        agg = result.aggregate
        print(f"{config.algo} / {config.env} / "
              f"{'sere' if config.sere_enabled else 'baseline'}: "
              f"avg regret {agg['avg_regret_mean']:.4f} "
              f"+/- {agg['avg_regret_std']:.4f} over {len(config.seeds)} seed(s)")
        out_dir = resolve_out_dir(config)
        if out_dir is not None:
            print(f"logs in {out_dir}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FloatingPointError, ArithmeticError, RuntimeError) as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

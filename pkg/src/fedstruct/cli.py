"""Command line entry point: ``fedstruct run | sweep | partition-export``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .graphcore import load_graph
from .partition import PARTITIONERS, interconnection_fraction, make_partition, save_partition
from .xp import METHODS, NSF_METHODS, make_config, read_config_file, run_experiment, run_label_ratio_sweep


def _add_experiment_args(p):
    p.add_argument("--config", help="key = value file; command line flags override it")
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--nsf", choices=NSF_METHODS)
    p.add_argument("--h2v-mode", dest="h2v_mode", choices=("folded", "chain"))
    p.add_argument("--partition", choices=sorted(PARTITIONERS))
    p.add_argument("--clients", type=int)
    p.add_argument("--train-ratio", dest="train_ratio", type=float)
    p.add_argument("--val-ratio", dest="val_ratio", type=float)
    p.add_argument("--seeds", help="comma-separated list")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-s", dest="lr_s", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--layers-f", dest="layers_f", help="widths after the input, ending in c")
    p.add_argument("--layers-s", dest="layers_s", help="widths after the input, ending in c")
    p.add_argument("--L", dest="L", type=int)
    p.add_argument("--Ls", dest="Ls", type=int)
    p.add_argument("--ds", dest="ds", type=int)
    p.add_argument("--beta", help="'uniform' or comma-separated weights")
    p.add_argument("--prune", type=int)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--degree-cap", dest="degree_cap", type=int)
    p.add_argument("--out", help="output directory")


def _config(args):
    values = read_config_file(args.config) if args.config else {}
    skip = {"command", "config", "ratios", "verbose"}
    values.update({k: v for k, v in vars(args).items() if k not in skip and v is not None})
    if "dataset" not in values:
        raise SystemExit("error: --dataset is required (on the command line or in --config)")
    return make_config(**values)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fedstruct", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="multi-seed experiment")
    _add_experiment_args(run)
    sweep = sub.add_parser("sweep", help="accuracy versus training-label ratio")
    _add_experiment_args(sweep)
    sweep.add_argument("--ratios", required=True, help="comma-separated training ratios")

    exp = sub.add_parser("partition-export", help="write partition.tsv")
    exp.add_argument("--dataset", required=True)
    exp.add_argument("--partition", choices=sorted(PARTITIONERS), default="random")
    exp.add_argument("--clients", type=int, default=10)
    exp.add_argument("--seed", type=int, default=0)
    exp.add_argument("--out", required=True, help="path of the partition.tsv to write")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.command == "partition-export":
        g = load_graph(args.dataset)
        p = make_partition(g, args.partition, args.clients, args.seed)
        save_partition(p, args.out)
        print(json.dumps({"sizes": p.sizes().tolist(),
                          "interconnection_fraction": interconnection_fraction(g, p)}))
        return 0

    cfg = _config(args)
    if args.command == "run":
        s = run_experiment(cfg)
        print(f"{s['dataset']} {s['method']} K={s['K']} {s['partitioner']}: "
              f"{s['acc_mean']:.2f} +- {s['acc_std']:.2f} over {s['n_seeds']} seeds "
              f"(final epoch {s['final_acc_mean']:.2f}) [{s['status']}]")
        return 0 if s["status"] == "complete" else 1
    rows = run_label_ratio_sweep(cfg, [float(x) for x in args.ratios.split(",")])
    for r in rows:
        print(f"ratio {r['train_ratio']:g}: {r['acc_mean']:.2f} +- {r['acc_std']:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

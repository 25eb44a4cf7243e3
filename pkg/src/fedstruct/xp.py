"""Experiment configuration, multi-seed runner and CSV emission."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import fed
from .graphcore import load_graph, split_labels
from .partition import build_client_views, make_partition
from .propagate import BetaSchedule, MessageLedger, acquire_partitions

log = logging.getLogger(__name__)

METHODS = ("fedstruct", "central-dgcn", "local-dgcn", "central-mlp", "fedsgd-mlp")
NSF_METHODS = ("deg", "fedstar", "hop2vec")

# per-dataset defaults; layer widths exclude the input dimension
PRESETS = {
    "cora": dict(lr=0.002, lr_s=0.002, weight_decay=5e-4, epochs=40, L=2, L_s=10, d_s=256,
                 layers_f=(64, 7), layers_s=(256, 7)),
    "citeseer": dict(lr=0.002, lr_s=0.002, weight_decay=5e-4, epochs=60, L=2, L_s=20, d_s=256,
                     layers_f=(64, 6), layers_s=(128, 64, 6)),
    "pubmed": dict(lr=0.008, lr_s=0.008, weight_decay=1e-3, epochs=125, L=2, L_s=20, d_s=256,
                   layers_f=(128, 3), layers_s=(128, 3)),
    "chameleon": dict(lr=0.003, lr_s=0.003, weight_decay=3e-4, epochs=60, L=1, L_s=1, d_s=256,
                      layers_f=(64, 5), layers_s=(256, 5)),
}


@dataclass
class ExperimentConfig:
    dataset: str
    method: str = "fedstruct"
    nsf: str = "hop2vec"
    h2v_mode: str = "chain"
    partition: str = "random"
    clients: int = 10
    train_ratio: float = 0.1
    val_ratio: float = 0.1
    seeds: tuple = (0,)
    out: str | None = None
    # hyperparameters; None means the dataset preset (or the HyperParams default)
    epochs: int | None = None
    lr: float | None = None
    lr_s: float | None = None
    weight_decay: float | None = None
    layers_f: tuple | None = None
    layers_s: tuple | None = None
    L: int | None = None
    Ls: int | None = None
    ds: int | None = None
    beta: str = "uniform"
    prune: int | None = None
    optimizer: str = "adam"
    degree_cap: int = 50

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.nsf not in NSF_METHODS:
            raise ValueError(f"unknown NSF method {self.nsf!r}")
        if self.h2v_mode not in ("folded", "chain"):
            raise ValueError(f"unknown Hop2Vec mode {self.h2v_mode!r}")
        if self.clients < 1:
            raise ValueError("need at least one client")

    def hyperparams(self, name: str | None = None) -> fed.HyperParams:
        preset = dict(PRESETS.get((name or "").lower(), {}))
        overrides = {"epochs": self.epochs, "lr": self.lr, "lr_s": self.lr_s, "weight_decay": self.weight_decay,
                     "layers_f": self.layers_f, "layers_s": self.layers_s, "L": self.L, "L_s": self.Ls,
                     "d_s": self.ds}
        preset.update({k: v for k, v in overrides.items() if v is not None})
        L_s = preset.get("L_s", fed.HyperParams.L_s)
        mode = "generic" if self.nsf != "hop2vec" else f"hop2vec_{self.h2v_mode}"
        return fed.HyperParams(beta=BetaSchedule.parse(self.beta, L_s), prune=self.prune, nsf_method=self.nsf,
                               mode=mode, optimizer=self.optimizer, degree_cap=self.degree_cap, **preset)

    def label(self) -> str:
        if self.method != "fedstruct":
            return self.method
        tag = "fedstruct-p" if self.prune else "fedstruct"
        return f"{tag}({self.nsf})"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        for k in ("layers_f", "layers_s"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# config files


def _int_list(text):
    return tuple(int(x) for x in str(text).split(",") if x.strip())


_PARSERS = {
    "clients": int, "train_ratio": float, "val_ratio": float, "seeds": _int_list, "epochs": int, "lr": float,
    "lr_s": float, "weight_decay": float, "layers_f": _int_list, "layers_s": _int_list, "L": int, "Ls": int,
    "ds": int, "prune": int, "degree_cap": int,
}
_ALIASES = {"K": "clients", "partitioner": "partition", "Ls": "Ls", "ls": "Ls", "h2v-mode": "h2v_mode"}


def normalize_key(key: str) -> str:
    key = key.strip()
    key = _ALIASES.get(key, key)
    key = key.replace("-", "_")
    return _ALIASES.get(key, key)


def parse_value(key: str, value):
    if value is None or not isinstance(value, str):
        return value
    return _PARSERS.get(key, str)(value.strip())


def read_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    names = {f.name for f in fields(ExperimentConfig)}
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (x.strip() for x in line.split("=", 1))
            key = normalize_key(key)
            if key not in names:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = parse_value(key, value)
    return out


def make_config(**kwargs) -> ExperimentConfig:
    return ExperimentConfig(**{normalize_key(k): parse_value(normalize_key(k), v) for k, v in kwargs.items()})


# ---------------------------------------------------------------------------
# running


_GRAPHS = {}
_ACQUIRED = OrderedDict()
ACQUIRE_CACHE_SIZE = 8


def _graph(path):
    key = os.path.abspath(path)
    if key not in _GRAPHS:
        _GRAPHS[key] = load_graph(path)
    return _GRAPHS[key]


def _acquire(key, views, hp):
    """Adjacency acquisition with a small in-process cache; a hit replays the ledger."""
    if key in _ACQUIRED:
        _ACQUIRED.move_to_end(key)
        parts, msgs = _ACQUIRED[key]
        ledger = MessageLedger(list(msgs))
        return parts, ledger
    ledger = MessageLedger()
    parts = acquire_partitions(views, hp.beta, prune=hp.prune, ledger=ledger)
    _ACQUIRED[key] = (parts, list(ledger.messages))
    while len(_ACQUIRED) > ACQUIRE_CACHE_SIZE:
        _ACQUIRED.popitem(last=False)
    return parts, ledger


def run_single(cfg: ExperimentConfig, seed: int, g=None) -> fed.TrainReport:
    g = _graph(cfg.dataset) if g is None else g
    hp = cfg.hyperparams(g.name)
    if hp.c != g.c:
        raise ValueError(f"output width {hp.c} does not match the {g.c} classes of {g.name}")
    split = split_labels(g, cfg.train_ratio, cfg.val_ratio, seed)
    if cfg.method == "central-dgcn":
        return fed.train_central_dgcn(g, split, hp, seed)
    if cfg.method == "central-mlp":
        return fed.train_central_mlp(g, split, hp, seed)
    part = make_partition(g, cfg.partition, cfg.clients, seed)
    views = build_client_views(g, part, split)
    if cfg.method == "local-dgcn":
        return fed.train_local_dgcn(g, part, views, split, hp, seed)
    if cfg.method == "fedsgd-mlp":
        return fed.train_fedsgd_mlp(g, part, views, split, hp, seed)
    key = (g.name, g.n, cfg.partition, cfg.clients, seed, hp.beta.weights, hp.prune)
    parts, ledger = _acquire(key, views, hp)
    if cfg.nsf == "hop2vec":
        return fed.train_fedstruct_hop2vec(g, part, views, split, hp, seed, partitions=parts, ledger=ledger)
    return fed.train_fedstruct(g, part, views, split, hp, seed, partitions=parts, ledger=ledger)


RESULT_FIELDS = ["dataset", "method", "nsf", "partitioner", "K", "train_ratio", "n_seeds", "acc_mean", "acc_std",
                 "final_acc_mean", "final_acc_std", "wall_time_mean", "status", "config_hash"]


def _append_csv(path, row, fieldnames):
    new = not os.path.exists(path)
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames)
        if new:
            w.writeheader()
        w.writerow(row)


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Independent runs over ``cfg.seeds``; accuracies are percentages.

    Returns a summary dict; when ``cfg.out`` is set, per-seed reports go to
    ``out/seed-<s>/`` and a row is appended to ``out/results.csv``.
    """
    g = _graph(cfg.dataset)
    runs, failures = [], []
    for seed in sorted(cfg.seeds):
        try:
            rep = run_single(cfg, seed, g)
        except Exception as exc:  # recorded, summary marked partial
            log.error("seed %d failed: %s", seed, exc)
            failures.append({"seed": seed, "error": f"{type(exc).__name__}: {exc}"})
            continue
        runs.append({"seed": seed, "acc": 100 * rep.best_val_test_acc, "final_acc": 100 * rep.final_test_acc,
                     "best_epoch": rep.best_epoch, "wall_time": rep.wall_time})
        if cfg.out:
            rep.write(os.path.join(cfg.out, f"seed-{seed}"))
    acc = np.array([r["acc"] for r in runs])
    fin = np.array([r["final_acc"] for r in runs])
    summary = {
        "dataset": g.name,
        "method": cfg.label(),
        "nsf": cfg.nsf if cfg.method == "fedstruct" else "",
        "partitioner": cfg.partition,
        "K": cfg.clients,
        "train_ratio": cfg.train_ratio,
        "n_seeds": len(runs),
        "acc_mean": float(acc.mean()) if runs else float("nan"),
        "acc_std": float(acc.std()) if runs else float("nan"),
        "final_acc_mean": float(fin.mean()) if runs else float("nan"),
        "final_acc_std": float(fin.std()) if runs else float("nan"),
        "wall_time_mean": float(np.mean([r["wall_time"] for r in runs])) if runs else float("nan"),
        "status": "partial" if failures else "complete",
        "config_hash": cfg.config_hash(),
        "runs": runs,
        "failures": failures,
    }
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        _append_csv(os.path.join(cfg.out, "results.csv"), {k: summary[k] for k in RESULT_FIELDS}, RESULT_FIELDS)
        with open(os.path.join(cfg.out, f"config-{summary['config_hash']}.json"), "w", encoding="utf-8") as fh:
            json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        for r in runs:
            _append_csv(os.path.join(cfg.out, "runs.csv"), dict(config_hash=summary["config_hash"], **r),
                        ["config_hash", "seed", "acc", "final_acc", "best_epoch", "wall_time"])
    return summary


def run_label_ratio_sweep(cfg: ExperimentConfig, ratios) -> list:
    """One experiment per training ratio, validation ratio held at 0.1."""
    ratios = [float(r) for r in ratios]
    if any(not 0 < r < 1 for r in ratios):
        raise ValueError("ratios must lie strictly between 0 and 1")
    rows = []
    for r in ratios:
        sub = replace(cfg, train_ratio=r, val_ratio=0.1,
                      out=os.path.join(cfg.out, f"ratio-{r:g}") if cfg.out else None)
        s = run_experiment(sub)
        rows.append({k: s[k] for k in RESULT_FIELDS})
        if cfg.out:
            _append_csv(os.path.join(cfg.out, "sweep.csv"), rows[-1], RESULT_FIELDS)
    return rows

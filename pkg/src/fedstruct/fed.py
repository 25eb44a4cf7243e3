"""Server/client orchestration, baselines and evaluation.

Federated trainers only touch ``ClientView`` objects and the per-client
combined adjacency rows; the ``GlobalGraph`` argument is accepted for a
uniform call signature but never read. The centralized trainers work on
the global graph directly and act as reference implementations.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .graphcore import normalized_self_loop_adjacency
from .model import (ModelParams, forward_client, init_mlp, init_model, local_loss_and_gradients,
                    mlp_backward, mlp_forward, softmax_cross_entropy)
from .nsf import NsfMatrix, nsf_degree, nsf_fedstar, nsf_hop2vec_init, one_hot_degree
from .propagate import (BetaSchedule, MessageLedger, acquire_partitions, combined_adjacency,
                        local_combined_adjacency, message_meter)
from .rng import child_rng

log = logging.getLogger(__name__)


@dataclass
class HyperParams:
    """Widths in ``layers_f`` / ``layers_s`` exclude the input dimension and end in ``c``."""

    lr: float = 0.002
    lr_s: float = 0.002
    weight_decay: float = 5e-4
    epochs: int = 40
    L: int = 2
    L_s: int = 10
    d_s: int = 256
    layers_f: tuple = (64, 7)
    layers_s: tuple = (256, 7)
    beta: BetaSchedule | None = None
    prune: int | None = None
    nsf_method: str = "hop2vec"
    mode: str = "hop2vec_chain"
    optimizer: str = "adam"
    degree_cap: int = 50
    bias: bool = True

    def __post_init__(self):
        if self.lr <= 0 or self.lr_s < 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.L < 0 or self.L_s < 1:
            raise ValueError("need L >= 0 and L_s >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        self.layers_f = tuple(int(x) for x in self.layers_f)
        self.layers_s = tuple(int(x) for x in self.layers_s)
        if self.beta is None:
            self.beta = BetaSchedule.uniform(self.L_s)
        if self.beta.hops != self.L_s:
            raise ValueError(f"beta has {self.beta.hops} weights but L_s = {self.L_s}")

    @property
    def c(self) -> int:
        return self.layers_f[-1]

    def structure_input_dim(self) -> int:
        if self.nsf_method == "deg":
            return self.degree_cap
        if self.nsf_method == "fedstar":
            return self.degree_cap + self.L_s
        return self.c if self.mode == "hop2vec_folded" else self.d_s


# ---------------------------------------------------------------------------
# server primitives


def aggregate_gradients(local_grads, n_labeled_total: int):
    """``(1 / |V~|) sum_i grad_i`` summed in the given (ascending client) order.

    Each gradient is a list of arrays or a ``ModelParams``.
    """
    if n_labeled_total <= 0:
        raise ValueError("no labeled nodes across clients")
    if not local_grads:
        raise ValueError("no client gradients")
    as_list = [g.arrays() if hasattr(g, "arrays") else list(g) for g in local_grads]
    total = [a.copy() for a in as_list[0]]
    for grads in as_list[1:]:
        if len(grads) != len(total) or any(a.shape != t.shape for a, t in zip(grads, total)):
            raise ValueError("client gradients differ in shape")
        for t, a in zip(total, grads):
            t += a
    return [t / n_labeled_total for t in total]


def _check_finite(grad, what="gradient"):
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError(f"non-finite {what}; lower the learning rate or check the inputs")


def apply_update(x, grad, lr: float, weight_decay: float = 0.0, decay: bool = True):
    """Plain gradient step with the L2 term added to the gradient."""
    _check_finite(grad)
    step = grad + weight_decay * x if decay and weight_decay else grad
    return x - lr * step


class Sgd:
    def __init__(self, lr, weight_decay=0.0):
        self.lr, self.weight_decay = lr, weight_decay

    def step(self, arrays, grads, decay_mask):
        for x, g, d in zip(arrays, grads, decay_mask):
            x[...] = apply_update(x, g, self.lr, self.weight_decay, d)


class Adam:
    """Adam with the L2 term added to the gradient (no decoupled decay)."""

    def __init__(self, lr, weight_decay=0.0, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.weight_decay, self.b1, self.b2, self.eps = lr, weight_decay, b1, b2, eps
        self.t = 0
        self.m = self.v = None

    def step(self, arrays, grads, decay_mask):
        if self.m is None:
            self.m = [np.zeros_like(x) for x in arrays]
            self.v = [np.zeros_like(x) for x in arrays]
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for x, g, d, m, v in zip(arrays, grads, decay_mask, self.m, self.v):
            _check_finite(g)
            if d and self.weight_decay:
                g = g + self.weight_decay * x
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            x -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


def make_optimizer(kind, lr, weight_decay=0.0):
    return Adam(lr, weight_decay) if kind == "adam" else Sgd(lr, weight_decay)


# ---------------------------------------------------------------------------
# reports


@dataclass
class TrainReport:
    """Entry ``e`` of ``history`` describes the model after ``e`` updates."""

    method: str
    history: list = field(default_factory=list)
    params: object = None
    S: np.ndarray | None = None
    wall_time: float = 0.0
    comm: object = None
    best_epoch: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def best_val_test_acc(self) -> float:
        if "best_val_test_acc" in self.extra:
            return self.extra["best_val_test_acc"]
        return self.history[self.best_epoch]["test_acc"]

    @property
    def final_test_acc(self) -> float:
        return self.history[-1]["test_acc"]

    def finalize(self):
        # best validation accuracy over trained epochs, earliest on ties
        cands = self.history[1:] or self.history
        best = max(cands, key=lambda h: (h["val_acc"], -h["epoch"]))
        self.best_epoch = best["epoch"]
        return self

    def final_metrics(self) -> dict:
        out = {
            "method": self.method,
            "epochs": len(self.history) - 1,
            "best_epoch": self.best_epoch,
            "best_val_test_acc": self.best_val_test_acc,
            "final_test_acc": self.final_test_acc,
            "final_val_acc": self.history[-1]["val_acc"],
            "final_loss": self.history[-1]["loss"],
            "wall_time": self.wall_time,
        }
        out.update({k: v for k, v in self.extra.items() if k != "best_val_test_acc"})
        return out

    def write(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "history.jsonl"), "w", encoding="utf-8") as fh:
            for h in self.history:
                fh.write(json.dumps(h, sort_keys=True) + "\n")
        with open(os.path.join(out_dir, "final_metrics.json"), "w", encoding="utf-8") as fh:
            json.dump(self.final_metrics(), fh, indent=2, sort_keys=True)
        if self.comm is not None:
            with open(os.path.join(out_dir, "comm_report.json"), "w", encoding="utf-8") as fh:
                fh.write(self.comm.to_json())


def _entry(epoch, loss, correct, total):
    return {
        "epoch": epoch,
        "loss": loss,
        "train_acc": correct["train"] / max(total["train"], 1),
        "val_acc": correct["val"] / max(total["val"], 1),
        "test_acc": correct["test"] / max(total["test"], 1),
    }


def _predict(probs):
    # np.argmax returns the first maximum, i.e. the smaller class id on ties
    return np.argmax(probs, axis=1)


# ---------------------------------------------------------------------------
# evaluation


def evaluate(params, S, abars, views, mask, local_abars=None) -> float:
    """Top-1 accuracy over the global boolean ``mask`` of node ids."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty evaluation mask")
    correct = total = 0
    for k, view in enumerate(views):
        nodes = np.flatnonzero(mask[view.internal])
        if nodes.size == 0:
            continue
        abar = abars[k] if abars is not None else None
        la = local_abars[k] if local_abars is not None else None
        cache = forward_client(view, abar, S, params, nodes=nodes, local_abar=la)
        correct += int(np.sum(_predict(cache.probs) == view.labels[nodes]))
        total += nodes.size
    return correct / total


# ---------------------------------------------------------------------------
# federated training


def _labeled_train(view):
    return view.train[view.labels[view.train] >= 0]


def _share_nsf(ledger, views, d_s):
    K = len(views)
    for v in views:
        for j in range(K):
            if j != v.client_id:
                ledger.record("offline", "nsf-share", v.client_id, j, v.n_i * d_s)


def _federated_loop(method, views, abars, local_abars, S, params, hp, ledger, s_trainable):
    t0 = time.perf_counter()
    n_lab = sum(_labeled_train(v).size for v in views)
    if n_lab == 0:
        raise ValueError("no labeled training nodes across clients")
    opt = make_optimizer(hp.optimizer, hp.lr, hp.weight_decay)
    opt_s = make_optimizer(hp.optimizer, hp.lr_s) if s_trainable else None
    pending = None if not s_trainable else np.zeros_like(S.values)
    n_theta = sum(a.size for a in params.arrays())
    decay = params.decay_mask()
    report = TrainReport(method)

    for epoch in range(hp.epochs + 1):
        if s_trainable and epoch > 0:
            # relayed average of last epoch's NSF gradients; the first epoch's
            # relay is zero and is skipped so Adam's step count is not advanced
            opt_s.step([S.values], [pending], [False])
        loss_total = 0.0
        correct = {"train": 0, "val": 0, "test": 0}
        total = {"train": 0, "val": 0, "test": 0}
        grads, s_grad = [], None
        for k, view in enumerate(views):
            abar = abars[k] if abars is not None else None
            la = local_abars[k] if local_abars is not None else None
            cache = forward_client(view, abar, S, params, local_abar=la)
            pred = _predict(cache.probs)
            for part in correct:
                idx = getattr(view, part)
                idx = idx[view.labels[idx] >= 0]
                correct[part] += int(np.sum(pred[idx] == view.labels[idx]))
                total[part] += idx.size
            if _labeled_train(view).size == 0:
                continue
            if epoch == hp.epochs:
                # final state: the loss is evaluated without a gradient step
                tr = _labeled_train(view)
                loss_total += softmax_cross_entropy(cache.logits[tr], np.eye(params.c)[view.labels[tr]])[0]
                continue
            loss, grad, gs_rows = local_loss_and_gradients(view, abar, S, params, local_abar=la, cache=cache,
                                                           s_grad=s_trainable)
            loss_total += loss
            grads.append(grad)
            ledger.record("online", "param-grad", view.client_id, -1, n_theta)
            if s_trainable:
                if s_grad is None:
                    s_grad = np.zeros_like(S.values)
                s_grad[gs_rows[0]] += gs_rows[1]
                ledger.record("online", "nsf-grad", view.client_id, -1, gs_rows[1].size)
        report.history.append(_entry(epoch, loss_total / n_lab, correct, total))
        if epoch == hp.epochs:
            break
        agg = aggregate_gradients(grads, n_lab)
        opt.step(params.arrays(), agg, decay)
        for v in views:
            ledger.record("online", "param-broadcast", -1, v.client_id, n_theta)
        if s_trainable:
            pending = s_grad / n_lab
            for v in views:
                ledger.record("online", "nsf-broadcast", -1, v.client_id, pending.size)
    ledger.epochs = hp.epochs
    report.params, report.S = params, (S.values if S is not None else None)
    report.wall_time = time.perf_counter() - t0
    report.comm = message_meter(ledger)
    return report.finalize()


def _local_abars(views, L):
    if L == 0:
        return None
    return [local_combined_adjacency(v, L) for v in views]


def prepare_structure(views, hp, partitions=None, ledger=None):
    """Run the offline phase: adjacency acquisition (if needed) and NSF construction."""
    if ledger is None:
        ledger = MessageLedger()
    if partitions is None:
        partitions = acquire_partitions(views, hp.beta, prune=hp.prune, ledger=ledger)
    if hp.nsf_method == "deg":
        S = nsf_degree(views, hp.degree_cap)
    elif hp.nsf_method == "fedstar":
        S = nsf_fedstar(views, partitions, hp.degree_cap)
    else:
        raise ValueError(f"NSF method {hp.nsf_method!r} is not a fixed feature")
    return partitions, S, ledger


def train_fedstruct(g, partition, views, split, hp: HyperParams, seed: int, partitions=None,
                    ledger=None) -> TrainReport:
    """Fixed NSFs (degree or degree + return probabilities), generic two-path model."""
    if hp.nsf_method not in ("deg", "fedstar"):
        raise ValueError("train_fedstruct needs nsf_method 'deg' or 'fedstar'")
    views = sorted(views, key=lambda v: v.client_id)
    partitions, S, ledger = prepare_structure(views, hp, partitions, ledger)
    _share_nsf(ledger, views, S.d_s)
    params = init_model((views[0].features.shape[1],) + hp.layers_f, (S.d_s,) + hp.layers_s,
                        "generic", seed, hp.bias)
    return _federated_loop(f"fedstruct-{hp.nsf_method}", views, list(partitions),
                           _local_abars(views, hp.L), S, params, hp, ledger, s_trainable=False)


def train_fedstruct_hop2vec(g, partition, views, split, hp: HyperParams, seed: int, partitions=None,
                            ledger=None) -> TrainReport:
    """Learnable NSFs co-trained with the model through relayed gradients."""
    if hp.mode not in ("hop2vec_folded", "hop2vec_chain"):
        raise ValueError("hop2vec training needs mode hop2vec_folded or hop2vec_chain")
    views = sorted(views, key=lambda v: v.client_id)
    if ledger is None:
        ledger = MessageLedger()
    if partitions is None:
        partitions = acquire_partitions(views, hp.beta, prune=hp.prune, ledger=ledger)
    n = sum(v.n_i for v in views)
    d_s = hp.structure_input_dim()
    S = nsf_hop2vec_init(n, d_s, seed)
    _share_nsf(ledger, views, d_s)
    params = init_model((views[0].features.shape[1],) + hp.layers_f, (d_s,) + hp.layers_s, hp.mode, seed,
                        hp.bias)
    return _federated_loop(f"fedstruct-hop2vec-{hp.mode.split('_')[1]}", views, list(partitions),
                           _local_abars(views, hp.L), S, params, hp, ledger, s_trainable=hp.lr_s > 0)


def train_fedsgd_mlp(g, partition, views, split, hp: HyperParams, seed: int) -> TrainReport:
    views = sorted(views, key=lambda v: v.client_id)
    params = init_model((views[0].features.shape[1],) + hp.layers_f, None, "generic", seed, hp.bias)
    return _federated_loop("fedsgd-mlp", views, None, None, None, params, hp, MessageLedger(), False)


def train_local_dgcn(g, partition, views, split, hp: HyperParams, seed: int) -> TrainReport:
    """Every client trains its own feature model on its own subgraph.

    Accuracy is pooled over clients (node-weighted); each client keeps the
    epoch with its best validation accuracy.
    """
    t0 = time.perf_counter()
    views = sorted(views, key=lambda v: v.client_id)
    local = _local_abars(views, hp.L)
    E = hp.epochs
    parts = ("train", "val", "test")
    correct = {p: np.zeros((len(views), E + 1), dtype=np.int64) for p in parts}
    losses = np.zeros(E + 1)
    size = {p: np.zeros(len(views), dtype=np.int64) for p in parts}
    active = []
    for k, view in enumerate(views):
        tr = _labeled_train(view)
        if tr.size == 0:
            log.warning("client %d has no labeled training nodes; skipped", view.client_id)
            continue
        active.append(k)
        for p in parts:
            idx = getattr(view, p)
            size[p][k] = np.sum(view.labels[idx] >= 0)
        f = init_mlp((view.features.shape[1],) + hp.layers_f, child_rng(seed, "init-local", view.client_id), hp.bias)
        params = ModelParams(f, None, "generic")
        opt = make_optimizer(hp.optimizer, hp.lr, hp.weight_decay)
        la = local[k] if local is not None else None
        for epoch in range(E + 1):
            cache = forward_client(view, None, None, params, local_abar=la)
            pred = _predict(cache.probs)
            for p in parts:
                idx = getattr(view, p)
                idx = idx[view.labels[idx] >= 0]
                correct[p][k, epoch] = np.sum(pred[idx] == view.labels[idx])
            loss, grad, _ = local_loss_and_gradients(view, None, None, params, local_abar=la, cache=cache)
            losses[epoch] += loss / tr.size
            if epoch < E:
                opt.step(params.arrays(), [a / tr.size for a in grad.arrays()], params.decay_mask())
    report = TrainReport("local-dgcn")
    for epoch in range(E + 1):
        c = {p: int(correct[p][:, epoch].sum()) for p in parts}
        t = {p: int(size[p].sum()) for p in parts}
        report.history.append(_entry(epoch, losses[epoch] / max(len(active), 1), c, t))
    report.finalize()
    # per-client model selection on validation accuracy
    best_correct = 0
    for k in active:
        cands = range(1, E + 1) if E else range(1)
        b = max(cands, key=lambda e: (correct["val"][k, e], -e))
        best_correct += correct["test"][k, b]
    report.extra["best_val_test_acc"] = best_correct / max(int(size["test"].sum()), 1)
    report.extra["clients_skipped"] = len(views) - len(active)
    report.wall_time = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# centralized reference trainers


def _global_structure(g, hp, seed):
    a_hat = normalized_self_loop_adjacency(g)
    if hp.nsf_method == "deg":
        return NsfMatrix(one_hot_degree(g.degrees(), hp.degree_cap), "deg")
    if hp.nsf_method == "fedstar":
        dense = a_hat.toarray()
        power = np.eye(g.n)
        diag = []
        for _ in range(hp.L_s):
            power = dense @ power
            diag.append(np.diag(power).copy())
        return NsfMatrix(np.hstack([one_hot_degree(g.degrees(), hp.degree_cap), np.array(diag).T]), "fedstar")
    return nsf_hop2vec_init(g.n, hp.structure_input_dim(), seed)


def train_central_dgcn(g, split, hp: HyperParams, seed: int, structure: bool = False) -> TrainReport:
    """Single-party training on the global graph.

    Without ``structure`` this is the feature-only decoupled GCN with
    ``L`` propagation hops; with it, the structure path uses the NSF method
    and mode from ``hp`` and the combined adjacency over ``L_s`` hops.
    """
    t0 = time.perf_counter()
    a_hat = normalized_self_loop_adjacency(g)
    a_f = combined_adjacency(a_hat, BetaSchedule.uniform(hp.L)) if hp.L > 0 else sp.identity(g.n, format="csr")
    a_f_t = a_f.T.tocsr()
    mode = hp.mode if structure and hp.nsf_method == "hop2vec" else "generic"
    S = a_s = None
    if structure:
        a_s = combined_adjacency(a_hat, hp.beta)
        S = _global_structure(g, hp, seed)
        params = init_model((g.d,) + hp.layers_f, (S.d_s,) + hp.layers_s, mode, seed, hp.bias)
    else:
        params = init_model((g.d,) + hp.layers_f, None, "generic", seed, hp.bias)
    s_trainable = structure and hp.nsf_method == "hop2vec" and hp.lr_s > 0
    opt = make_optimizer(hp.optimizer, hp.lr, hp.weight_decay)
    opt_s = make_optimizer(hp.optimizer, hp.lr_s) if s_trainable else None
    train = split.train[g.labels[split.train] >= 0]
    y = np.zeros((train.size, g.c))
    y[np.arange(train.size), g.labels[train]] = 1.0
    report = TrainReport("central-dgcn" + ("-structure" if structure else ""))
    for epoch in range(hp.epochs + 1):
        fx, f_cache = mlp_forward(params.f, g.features)
        z = np.asarray(a_f @ fx)
        if structure:
            if mode == "hop2vec_folded":
                gs, g_cache = S.values, None
            else:
                gs, g_cache = mlp_forward(params.s, S.values)
            z = z + np.asarray(a_s @ gs)
        pred = _predict(z)
        correct, total = {}, {}
        for part in ("train", "val", "test"):
            idx = getattr(split, part)
            idx = idx[g.labels[idx] >= 0]
            correct[part] = int(np.sum(pred[idx] == g.labels[idx]))
            total[part] = idx.size
        loss, dz_t = softmax_cross_entropy(z[train], y)
        report.history.append(_entry(epoch, loss / train.size, correct, total))
        if epoch == hp.epochs:
            break
        dz = np.zeros_like(z)
        dz[train] = dz_t / train.size
        grad = params.zeros_like()
        grad.f, _ = mlp_backward(params.f, f_cache, np.asarray(a_f_t @ dz), input_grad=False)
        if structure:
            dgs = np.asarray(a_s.T @ dz)
            if mode == "hop2vec_folded":
                ds = dgs
            else:
                grad.s, ds = mlp_backward(params.s, g_cache, dgs)
        opt.step(params.arrays(), grad.arrays(), params.decay_mask())
        if s_trainable:
            opt_s.step([S.values], [ds], [False])
    report.params, report.S = params, (S.values if S is not None else None)
    report.wall_time = time.perf_counter() - t0
    return report.finalize()


def train_central_mlp(g, split, hp: HyperParams, seed: int) -> TrainReport:
    report = train_central_dgcn(g, split, replace(hp, L=0), seed)
    report.method = "central-mlp"
    return report

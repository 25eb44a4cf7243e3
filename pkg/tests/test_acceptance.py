"""Acceptance checks. Each criterion prints one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` or directly with
``python tests/test_acceptance.py``. Measured accuracies are written to
``results/acceptance.json``.
"""

import functools
import json
import os
import sys
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import fedstruct.fed as fed  # noqa: E402
import fedstruct.model as model  # noqa: E402
from fedstruct import xp  # noqa: E402
from fedstruct.graphcore import load_graph, normalized_self_loop_adjacency, split_labels  # noqa: E402
from fedstruct.partition import build_client_views, make_partition, partition_random  # noqa: E402
from fedstruct.propagate import (BetaSchedule, MessageLedger, acquire_partitions,  # noqa: E402
                                 acquire_partitions_pruned, combined_adjacency_dense, message_meter)

from conftest import ROOT, dataset_path, have_dataset, random_graph  # noqa: E402
from test_fed import LoggedFeatures, SealedGraph  # noqa: E402
from test_model import setup, total_loss  # noqa: E402

SEEDS = tuple(range(10))
RESULTS = os.path.join(ROOT, "results", "acceptance.json")

# (mean, std) reported for each target; the band is mean +- max(3, 2 std)
TARGETS = {
    "cora/central-dgcn": (83.72, 0.64),
    "cora/h2v": (80.28, 1.44),
    "cora/deg": (68.64, 1.51),
    "cora/local-dgcn": (41.85, 1.23),
    "citeseer/h2v": (66.29, 0.87),
    "chameleon/h2v": (52.36, 2.63),
    "chameleon/deg": (41.01, 1.0),
    "cora/h2v-p30": (78.75, 1.09),
}


def band(key):
    mean, std = TARGETS[key]
    tol = max(3.0, 2 * std)
    return mean - tol, mean + tol


_CAPSYS = [None]


@pytest.fixture(autouse=True)
def _show_verdicts(capsys):
    # verdict lines bypass output capture so they land in the run log
    _CAPSYS[0] = capsys
    yield
    _CAPSYS[0] = None


def _print(text):
    if _CAPSYS[0] is None:
        print(text, flush=True)
    else:
        with _CAPSYS[0].disabled():
            print(text, flush=True)


def emit(number, ok, text):
    _print(f"\n[criterion {number:>2}] {'PASS' if ok else 'FAIL'}  {text}")
    return ok


def record(key, accs):
    data = {}
    if os.path.exists(RESULTS):
        with open(RESULTS) as fh:
            data = json.load(fh)
    data[key] = {"seeds": list(SEEDS), "acc": [float(a) for a in accs], "mean": float(np.mean(accs)),
                 "std": float(np.std(accs))}
    os.makedirs(os.path.dirname(RESULTS), exist_ok=True)
    with open(RESULTS, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)


def need(name):
    if not have_dataset(name):
        pytest.skip(f"{name} not built")
    return dataset_path(name)


# ---------------------------------------------------------------------------
# experiment runs shared by several criteria


CORA_RUNS = {
    # name: config overrides; all use K=10 random, 10%/10% unless stated
    "h2v": dict(nsf="hop2vec"),
    "deg": dict(nsf="deg"),
    "h2v@0.05": dict(nsf="hop2vec", train_ratio=0.05),
    "central-dgcn": dict(method="central-dgcn"),
    "local-dgcn": dict(method="local-dgcn"),
    "local-dgcn@0.05": dict(method="local-dgcn", train_ratio=0.05),
    "local-dgcn@0.5": dict(method="local-dgcn", train_ratio=0.5),
    "h2v-p30": dict(nsf="hop2vec", prune=30),
}


def _run(path, name, overrides, seed):
    cfg = xp.make_config(dataset=path, partition="random", clients=10, seeds=(seed,), **overrides)
    rep = xp.run_single(cfg, seed)
    return 100 * rep.best_val_test_acc


@functools.lru_cache(maxsize=None)
def cora_runs():
    path = need("cora")
    out = {name: [] for name in CORA_RUNS}
    t0 = time.perf_counter()
    # seed-major order so each seed's adjacency acquisition is reused across methods
    for seed in SEEDS:
        for name, overrides in CORA_RUNS.items():
            out[name].append(_run(path, name, overrides, seed))
    for name, accs in out.items():
        record(f"cora/{name}", accs)
    _print(f"\ncora runs: {time.perf_counter() - t0:.0f}s")
    return {k: np.array(v) for k, v in out.items()}


@functools.lru_cache(maxsize=None)
def dataset_runs(name, nsf):
    path = need(name)
    accs = np.array([_run(path, nsf, dict(nsf=nsf), s) for s in SEEDS])
    record(f"{name}/{nsf}", accs)
    return accs


def in_band(number, key, accs):
    lo, hi = band(key)
    m, s = accs.mean(), accs.std()
    return emit(number, lo <= m <= hi, f"{key}: {m:.2f} +- {s:.2f} over {accs.size} seeds, band [{lo:.2f}, {hi:.2f}]")


# ---------------------------------------------------------------------------
# property criteria


def test_c01_gradient_oracle():
    # central differences with h = 1e-5; relative error is judged where the
    # derivative is not tiny, absolute error (1e-9) on near-zero components
    h, rel, small, count = 1e-5, 0.0, 0.0, 0
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    for i in range(25):
        n, K = int(rng.integers(4, 21)), int(rng.integers(1, 4))
        for mode in ("generic", "hop2vec_chain", "hop2vec_folded"):
            g, split, views, parts, local, params, S = setup(1000 + i, n, min(K, n), mode)
            grads = params.zeros_like().arrays()
            gS = np.zeros_like(S)
            for v, p, la in zip(views, parts, local):
                if not v.train.size:
                    continue
                _, gr, rows = model.local_loss_and_gradients(v, p, S, params, local_abar=la)
                for acc, x in zip(grads, gr.arrays()):
                    acc += x
                gS[rows[0]] += rows[1]
            for x, gx in zip(params.arrays() + [S], grads + [gS]):
                for idx in np.ndindex(x.shape):
                    old = x[idx]
                    x[idx] = old + h
                    up = total_loss(views, parts, S, params, local)
                    x[idx] = old - h
                    down = total_loss(views, parts, S, params, local)
                    x[idx] = old
                    fd = (up - down) / (2 * h)
                    err = abs(gx[idx] - fd)
                    if abs(fd) >= 1e-3:
                        rel = max(rel, err / abs(fd))
                    else:
                        small = max(small, err)
                    count += 1
    dt = time.perf_counter() - t0
    ok = rel <= 1e-5 and small <= 1e-9 and dt < 60
    assert emit(1, ok, f"{count} gradient components on 75 instances vs finite differences: max rel err "
                       f"{rel:.1e} (|fd| >= 1e-3), max abs err {small:.1e} elsewhere, {dt:.1f}s")


def test_c02_protocol_exactness():
    rng = np.random.default_rng(7)
    worst = 0.0
    t0 = time.perf_counter()
    for i in range(50):
        n = int(rng.integers(2, 201))
        K = min(int(rng.choice([1, 2, 3, 5, 10])), n)
        method = ["random", "louvain", "kmeans"][i % 3]
        hops = int(rng.integers(1, 6))
        w = rng.random(hops)
        beta = BetaSchedule(tuple(w / w.sum()))
        g = random_graph(np.random.default_rng(i), n, min(1.0, 4.0 / n))
        views = build_client_views(g, make_partition(g, method, K, i), split_labels(g, 0.3, 0.2, i))
        ledger = MessageLedger()
        parts = acquire_partitions(views, beta, ledger=ledger)
        ref = combined_adjacency_dense(normalized_self_loop_adjacency(g).toarray(), beta)
        got = np.zeros((n, n))
        for part, v in zip(parts, views):
            got[v.internal] = part.rows.toarray()
        worst = max(worst, float(np.max(np.abs(got - ref))))
        assert message_meter(ledger).blocks_sent == hops * K * (K - 1)
    dt = time.perf_counter() - t0
    assert emit(2, worst <= 1e-12 and dt < 60, f"protocol vs oracle on 50 instances, max abs err {worst:.1e}, "
                                               f"{dt:.1f}s")


def test_c03_single_client_equivalence():
    path = need("cora")
    g = load_graph(path)
    split = split_labels(g, 0.1, 0.1, 0)
    p = partition_random(g, 1, 0)
    views = build_client_views(g, p, split)
    worst = 0.0
    t0 = time.perf_counter()
    for nsf in ("deg", "hop2vec"):
        hp = xp.make_config(dataset=path, epochs=5, nsf=nsf).hyperparams("cora")
        trainer = fed.train_fedstruct_hop2vec if nsf == "hop2vec" else fed.train_fedstruct
        a = trainer(g, p, views, split, hp, 0)
        b = fed.train_central_dgcn(g, split, hp, 0, structure=True)
        assert len(a.history) == len(b.history) == 6
        worst = max(worst, max(abs(x["loss"] - y["loss"]) for x, y in zip(a.history, b.history)))
    dt = time.perf_counter() - t0
    assert emit(3, worst <= 1e-12 and dt < 120, f"K=1 federated vs centralized losses on Cora, 5 epochs, "
                                                f"max diff {worst:.1e}, {dt:.1f}s")


def test_c04_row_stochastic():
    worst, checked = 0.0, []
    for name in ("cora", "citeseer", "pubmed", "chameleon"):
        if not have_dataset(name):
            continue
        g = load_graph(dataset_path(name))
        a = normalized_self_loop_adjacency(g)
        hops = xp.PRESETS[name]["L_s"]
        beta = BetaSchedule.uniform(hops)
        # row sums of sum_l beta_l A^l are sum_l beta_l A^l 1
        v, sums = np.ones(g.n), np.zeros(g.n)
        for w in beta.weights:
            v = a @ v
            sums += w * v
        worst = max(worst, float(np.max(np.abs(sums - 1))))
        checked.append(name)
    # the protocol's own rows on Cora, K=10
    g = load_graph(dataset_path("cora"))
    views = build_client_views(g, partition_random(g, 10, 0), split_labels(g, 0.1, 0.1, 0))
    for part in acquire_partitions(views, BetaSchedule.uniform(10)):
        worst = max(worst, float(np.max(np.abs(np.asarray(part.rows.sum(axis=1)).ravel() - 1))))
    missing = sorted({"cora", "citeseer", "pubmed", "chameleon"} - set(checked))
    note = f"; not available: {', '.join(missing)}" if missing else ""
    assert emit(4, worst <= 1e-9, f"row sums of the combined adjacency on {', '.join(checked)}, "
                                  f"max |sum - 1| {worst:.1e}{note}")


def test_c05_privacy_boundary(monkeypatch):
    path = need("cora")
    g = load_graph(path)
    split = split_labels(g, 0.1, 0.1, 0)
    p = partition_random(g, 10, 0)
    real = model.forward_client

    def tracking(view, *a, **kw):
        LoggedFeatures.active[0] = view.client_id
        try:
            return real(view, *a, **kw)
        finally:
            LoggedFeatures.active[0] = None

    monkeypatch.setattr(fed, "forward_client", tracking)
    monkeypatch.setattr(model, "forward_client", tracking)
    bad, reads = 0, 0
    for nsf, method in [("deg", "fedstruct"), ("fedstar", "fedstruct"), ("hop2vec", "fedstruct"),
                        ("deg", "local-dgcn"), ("deg", "fedsgd-mlp")]:
        views = build_client_views(g, p, split)
        for v in views:
            v.features = LoggedFeatures(v.features, v.client_id)
        LoggedFeatures.log.clear()
        SealedGraph.accessed.clear()
        hp = xp.make_config(dataset=path, nsf=nsf, epochs=2, Ls=3).hyperparams("cora")
        sealed = SealedGraph()
        if method == "local-dgcn":
            fed.train_local_dgcn(sealed, p, views, split, hp, 0)
        elif method == "fedsgd-mlp":
            fed.train_fedsgd_mlp(sealed, p, views, split, hp, 0)
        elif nsf == "hop2vec":
            fed.train_fedstruct_hop2vec(sealed, p, views, split, hp, 0)
        else:
            fed.train_fedstruct(sealed, p, views, split, hp, 0)
        reads += len(LoggedFeatures.log)
        bad += sum(owner != reader for owner, reader in LoggedFeatures.log) + len(SealedGraph.accessed)
    assert emit(5, bad == 0 and reads > 0, f"{reads} logged feature reads over 5 federated runs on Cora, "
                                           f"{bad} by a non-owner or via the global graph")


def test_c06_pruning_degenerate():
    path = need("cora")
    g = load_graph(path)
    views = build_client_views(g, partition_random(g, 10, 0), split_labels(g, 0.1, 0.1, 0))
    beta = BetaSchedule.uniform(4)
    full = acquire_partitions(views, beta)
    pruned = acquire_partitions_pruned(views, beta, g.n)
    exact = all((a.rows != b.rows).nnz == 0 and np.array_equal(a.rows.indices, b.rows.indices)
                and np.array_equal(a.rows.data, b.rows.data) for a, b in zip(full, pruned))
    assert emit(6, exact, f"pruning with p = n = {g.n} on Cora K=10 is {'bit-identical' if exact else 'DIFFERENT'} "
                          f"to the unpruned rows")


# ---------------------------------------------------------------------------
# quantitative criteria


def test_c07_cora_central():
    accs = cora_runs()["central-dgcn"]
    assert in_band(7, "cora/central-dgcn", accs)


def test_c08_cora_federated():
    runs = cora_runs()
    oks = [in_band(8, f"cora/{k}", runs[k]) for k in ("h2v", "deg", "local-dgcn")]
    assert all(oks)


def test_c09_citeseer():
    assert in_band(9, "citeseer/h2v", dataset_runs("citeseer", "hop2vec"))


def test_c10_chameleon():
    if not have_dataset("chameleon"):
        emit(10, False, "chameleon/h2v: dataset not available in this environment (no source in the package "
                        "mirror); criterion not evaluated")
        pytest.fail("chameleon dataset not available")
    h2v = dataset_runs("chameleon", "hop2vec")
    deg = dataset_runs("chameleon", "deg")
    ok = in_band(10, "chameleon/h2v", h2v)
    gap = h2v.mean() - deg.mean()
    ok = emit(10, gap >= 5, f"chameleon h2v - deg = {gap:.2f} (need >= 5)") and ok
    assert ok


def test_c11_pruned():
    runs = cora_runs()
    ok = in_band(11, "cora/h2v-p30", runs["h2v-p30"])
    gap = runs["h2v"].mean() - runs["h2v-p30"].mean()
    ok = emit(11, abs(gap) <= 3, f"cora unpruned - pruned(p=30) = {gap:.2f} (need |gap| <= 3)") and ok
    assert ok


def test_c12_ordering():
    r = cora_runs()
    means = [r[k].mean() for k in ("central-dgcn", "h2v", "deg", "local-dgcn")]
    ok = all(a > b for a, b in zip(means, means[1:]))
    assert emit(12, ok, "cora central {:.2f} > h2v {:.2f} > deg {:.2f} > local {:.2f}".format(*means))


def test_c13_label_ratio():
    r = cora_runs()
    h2v = r["h2v@0.05"].mean()
    drop = r["local-dgcn@0.5"].mean() - r["local-dgcn@0.05"].mean()
    ok = emit(13, h2v >= 70, f"cora h2v at train ratio 0.05: {h2v:.2f} (need >= 70)")
    ok = emit(13, drop >= 15, f"cora local drop from ratio 0.5 ({r['local-dgcn@0.5'].mean():.2f}) to 0.05 "
                              f"({r['local-dgcn@0.05'].mean():.2f}): {drop:.2f} (need >= 15)") and ok
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))

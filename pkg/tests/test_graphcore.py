import gzip
import json
import os

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from fedstruct.graphcore import (GlobalGraph, GraphFormatError, canonical_edges, edge_homophily, load_graph,
                                 normalized_self_loop_adjacency, save_graph, sp_sp_mul, split_labels, spmm)

from conftest import path_graph, random_graph


def write_dataset(tmp_path, nodes, edges, n=None, d=1, c=2):
    n = len(nodes) if n is None else n
    (tmp_path / "meta.json").write_text(json.dumps({"name": "t", "n": n, "d": d, "c": c}))
    (tmp_path / "nodes.tsv").write_text("".join(l + "\n" for l in nodes))
    (tmp_path / "edges.tsv").write_text("".join(l + "\n" for l in edges))
    return str(tmp_path)


def test_cora_statistics(cora):
    assert (cora.n, cora.num_edges, cora.d, cora.c) == (2708, 5278, 1433, 7)
    assert abs(edge_homophily(cora) - 0.81) <= 0.01


def test_single_node_graph(tmp_path):
    g = load_graph(write_dataset(tmp_path, ["0\t0\t1.5"], []))
    assert g.n == 1 and g.num_edges == 0
    assert normalized_self_loop_adjacency(g).toarray().tolist() == [[1.0]]


@pytest.mark.parametrize("edges, msg", [
    (["0\t1", "1\t1"], "self-loop"),
    (["0\t1", "0\t1"], "duplicate"),
    (["1\t0"], "u < v"),
    (["0\t7"], "out of range"),
])
def test_bad_edges_report_line(tmp_path, edges, msg):
    path = write_dataset(tmp_path, ["0\t0\t1", "1\t1\t2"], edges)
    with pytest.raises(GraphFormatError, match=msg) as exc:
        load_graph(path)
    assert "edges.tsv:" in str(exc.value)


@pytest.mark.parametrize("nodes, msg", [
    (["0\t0\t1,2", "1\t0\t1"], "expected 1 features"),
    (["0\t5\t1", "1\t0\t1"], "label 5"),
    (["0\t0\tx", "1\t0\t1"], "non-numeric"),
    (["1\t0\t1", "0\t0\t1"], "expected node id 0"),
])
def test_bad_nodes_report_line(tmp_path, nodes, msg):
    with pytest.raises(GraphFormatError, match=msg):
        load_graph(write_dataset(tmp_path, nodes, []))


def test_missing_file(tmp_path):
    with pytest.raises(GraphFormatError, match="missing file"):
        load_graph(str(tmp_path))


def test_save_load_roundtrip(tmp_path):
    g = random_graph(np.random.default_rng(3), 12, d=3)
    for compress in (False, True):
        out = tmp_path / f"g{compress}"
        save_graph(g, str(out), compress=compress)
        h = load_graph(str(out))
        assert np.array_equal(h.features, g.features)
        assert np.array_equal(h.labels, g.labels)
        assert np.array_equal(h.edges, g.edges)
    assert os.path.exists(tmp_path / "gTrue" / "edges.tsv.gz")
    with gzip.open(tmp_path / "gTrue" / "nodes.tsv.gz", "rt") as fh:
        assert fh.readline().startswith("0\t")


def test_graph_invariants_enforced():
    with pytest.raises(ValueError, match="self-loop"):
        GlobalGraph("x", np.zeros((2, 1)), np.zeros(2), np.array([[1, 1]]), 1)
    with pytest.raises(ValueError, match="u < v"):
        GlobalGraph("x", np.zeros((2, 1)), np.zeros(2), np.array([[1, 0]]), 1)
    with pytest.raises(ValueError, match="labels"):
        GlobalGraph("x", np.zeros((2, 1)), np.array([0, 3]), np.zeros((0, 2)), 2)
    with pytest.raises(ValueError, match="non-finite"):
        GlobalGraph("x", np.array([[np.nan], [0]]), np.zeros(2), np.zeros((0, 2)), 1)


def test_canonical_edges():
    e = canonical_edges([(2, 1), (1, 2), (0, 0), (0, 3)], 4)
    assert e.tolist() == [[0, 3], [1, 2]]


def test_normalized_adjacency_paths():
    assert np.allclose(normalized_self_loop_adjacency(path_graph(2)).toarray(), 0.5)
    a = normalized_self_loop_adjacency(path_graph(3)).toarray()
    expect = np.array([[1 / 2, 1 / 2, 0], [1 / 3, 1 / 3, 1 / 3], [0, 1 / 2, 1 / 2]])
    assert np.allclose(a, expect, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.floats(0, 1), st.integers(0, 2**31))
def test_rows_stochastic(n, p, seed):
    g = random_graph(np.random.default_rng(seed), n, p)
    a = normalized_self_loop_adjacency(g)
    assert np.all(np.abs(np.asarray(a.sum(axis=1)).ravel() - 1) <= 1e-12)
    assert np.all(a.diagonal() > 0)
    assert np.all(np.diff(a.indptr) >= 1)
    for r in range(n):
        cols = a.indices[a.indptr[r]:a.indptr[r + 1]]
        assert np.all(np.diff(cols) > 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 16), st.integers(1, 5), st.integers(0, 2**31))
def test_sparse_products_match_dense(n, k, seed):
    rng = np.random.default_rng(seed)
    a = sp.random(n, n, density=0.3, random_state=rng, format="csr")
    b = sp.random(n, n, density=0.3, random_state=rng, format="csr")
    x = rng.normal(size=(n, k))
    ref = a.toarray() @ x
    assert np.allclose(spmm(a, x), ref, rtol=1e-12, atol=1e-14)
    assert np.allclose(sp_sp_mul(a, b).toarray(), a.toarray() @ b.toarray(), rtol=1e-12, atol=1e-14)


def test_spmm_trivial_and_errors():
    x = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(spmm(sp.identity(3), x), x)
    assert np.array_equal(spmm(sp.csr_matrix((2, 3)), x), np.zeros((2, 2)))
    with pytest.raises(ValueError, match="dimension"):
        spmm(sp.identity(2), x)
    with pytest.raises(ValueError, match="dimension"):
        sp_sp_mul(sp.identity(2), sp.identity(3))
    a = normalized_self_loop_adjacency(path_graph(2))
    assert np.allclose(sp_sp_mul(a, a).toarray(), a.toarray())


def test_homophily_cases():
    g = path_graph(2, c=2)
    assert edge_homophily(g) == 0.0
    same = GlobalGraph("s", np.zeros((3, 1)), np.zeros(3), np.array([[0, 1], [1, 2]]), 1)
    assert edge_homophily(same) == 1.0
    with pytest.raises(ValueError):
        edge_homophily(GlobalGraph("e", np.zeros((2, 1)), np.zeros(2), np.zeros((0, 2)), 1))


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 25), st.integers(0, 2**31))
def test_homophily_permutation_invariant(n, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, 0.4)
    if g.num_edges == 0:
        return
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    h = GlobalGraph("p", g.features[perm], g.labels[perm], canonical_edges(inv[g.edges], n), g.c)
    assert edge_homophily(h) == pytest.approx(edge_homophily(g), abs=1e-15)


def test_split_sizes(cora):
    s = split_labels(cora, 0.1, 0.1, 0)
    assert (s.train.size, s.val.size, s.test.size) == (270, 270, 2168)
    t = split_labels(cora, 0.1, 0.1, 0)
    assert np.array_equal(s.train, t.train) and np.array_equal(s.test, t.test)
    full = split_labels(cora, 1.0, 0.0, 1)
    assert full.train.size == cora.n
    with pytest.raises(ValueError):
        split_labels(cora, 0.6, 0.5, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60), st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**31))
def test_split_partitions_nodes(n, tr, va, seed):
    if tr + va > 1:
        va = 1 - tr
    g = random_graph(np.random.default_rng(0), n, 0.1)
    s = split_labels(g, tr, va, seed)
    allnodes = np.concatenate([s.train, s.val, s.test])
    assert np.array_equal(np.sort(allnodes), np.arange(n))
    assert s.train.size == int(np.floor(n * tr + 1e-9))

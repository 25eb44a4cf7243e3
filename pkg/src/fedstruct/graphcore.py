"""Global graph container, CSR helpers and dataset I/O.

A dataset directory holds three UTF-8 text files::

    meta.json   {"name": str, "n": int, "d": int, "c": int}
    nodes.tsv   <node_id> TAB <label|-1> TAB <f_1>,<f_2>,...,<f_d>
    edges.tsv   <u> TAB <v>        (one undirected edge per line, u < v)

``nodes.tsv.gz`` / ``edges.tsv.gz`` are accepted in place of the plain files.
Node ids are dense integers assigned by file order.
"""

from __future__ import annotations

import gzip
import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .rng import child_rng


class GraphFormatError(ValueError):
    """Raised for a malformed dataset directory."""


@dataclass(frozen=True)
class GlobalGraph:
    """Undirected attributed graph with optional node labels.

    ``edges`` is an ``(m, 2)`` integer array with ``u < v`` on every row and
    rows in lexicographic order. ``labels`` uses ``-1`` for unlabeled nodes.
    """

    name: str
    features: np.ndarray
    labels: np.ndarray
    edges: np.ndarray
    c: int

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        validate_graph(self)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        np.add.at(deg, self.edges[:, 0], 1)
        np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency matrix ``A`` (no self-loops)."""
        return adjacency_from_edges(self.n, self.edges)

    def one_hot_labels(self) -> np.ndarray:
        y = np.zeros((self.n, self.c))
        mask = self.labels >= 0
        y[np.flatnonzero(mask), self.labels[mask]] = 1.0
        return y


def validate_graph(g: GlobalGraph) -> None:
    n = g.features.shape[0]
    if g.features.ndim != 2:
        raise ValueError("features must be a 2-d array")
    if not np.all(np.isfinite(g.features)):
        raise ValueError("features contain non-finite values")
    if g.labels.shape != (n,):
        raise ValueError(f"labels must have shape ({n},), got {g.labels.shape}")
    if np.any(g.labels >= g.c) or np.any(g.labels < -1):
        raise ValueError(f"labels must lie in [0, {g.c}) or be -1")
    e = g.edges
    if e.size:
        if e.min() < 0 or e.max() >= n:
            raise ValueError("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise ValueError("self-loop in edge list")
        if np.any(e[:, 0] > e[:, 1]):
            raise ValueError("edges must be stored with u < v")
        key = e[:, 0] * n + e[:, 1]
        if np.any(np.diff(key) <= 0):
            raise ValueError("edges must be sorted and free of duplicates")


def canonical_edges(pairs, n: int) -> np.ndarray:
    """Sort, orient (u < v) and deduplicate an edge list; drops self-loops."""
    e = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    e = np.sort(e, axis=1)
    e = e[e[:, 0] != e[:, 1]]
    key = np.unique(e[:, 0] * n + e[:, 1])
    return np.stack([key // n, key % n], axis=1)


def adjacency_from_edges(n: int, edges: np.ndarray) -> sp.csr_matrix:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    a = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    return canonical_csr(a)


# ---------------------------------------------------------------------------
# sparse helpers


def canonical_csr(a) -> sp.csr_matrix:
    """CSR with sorted column indices and merged duplicates."""
    a = sp.csr_matrix(a, dtype=np.float64)
    a.sum_duplicates()
    a.sort_indices()
    return a


def normalized_self_loop_adjacency(g: GlobalGraph) -> sp.csr_matrix:
    """Row-stochastic ``D~^-1 (A + I)``."""
    return row_normalized_self_loop(g.adjacency())


def row_normalized_self_loop(a: sp.spmatrix) -> sp.csr_matrix:
    a_tilde = canonical_csr(a + sp.identity(a.shape[0], format="csr"))
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    return canonical_csr(sp.diags(1.0 / deg) @ a_tilde)


def spmm(a: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    """Sparse times dense. Rows accumulate in ascending column order."""
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    a = canonical_csr(a)
    out = a @ b
    return np.asarray(out)


def sp_sp_mul(a: sp.spmatrix, b: sp.spmatrix) -> sp.csr_matrix:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return canonical_csr(canonical_csr(a) @ canonical_csr(b))


# ---------------------------------------------------------------------------
# statistics and splits


def edge_homophily(g: GlobalGraph) -> float:
    """Fraction of edges whose endpoints share a label."""
    if g.num_edges == 0:
        raise ValueError("edge homophily is undefined for a graph without edges")
    lu = g.labels[g.edges[:, 0]]
    lv = g.labels[g.edges[:, 1]]
    if np.any(lu < 0) or np.any(lv < 0):
        raise ValueError("edge homophily needs every edge endpoint to be labeled")
    return float(np.mean(lu == lv))


@dataclass(frozen=True)
class LabelSplit:
    """Disjoint sorted node-id arrays covering every node."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    n: int = field(default=0)

    def mask(self, part: str) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[getattr(self, part)] = True
        return m


def split_labels(g: GlobalGraph, train_ratio: float, val_ratio: float, seed: int) -> LabelSplit:
    """Uniform (not stratified) train/val/test split of all nodes."""
    if train_ratio < 0 or val_ratio < 0:
        raise ValueError("ratios must be non-negative")
    if train_ratio + val_ratio > 1 + 1e-12:
        raise ValueError(f"train_ratio + val_ratio = {train_ratio + val_ratio} exceeds 1")
    n = g.n
    n_train = int(np.floor(n * train_ratio + 1e-9))
    n_val = min(int(np.floor(n * val_ratio + 1e-9)), n - n_train)
    perm = child_rng(seed, "split").permutation(n)
    return LabelSplit(
        train=np.sort(perm[:n_train]),
        val=np.sort(perm[n_train:n_train + n_val]),
        test=np.sort(perm[n_train + n_val:]),
        n=n,
    )


# ---------------------------------------------------------------------------
# dataset directory I/O


def _open_text(directory: str, name: str):
    plain = os.path.join(directory, name)
    if os.path.exists(plain):
        return open(plain, encoding="utf-8"), plain
    gz = plain + ".gz"
    if os.path.exists(gz):
        return gzip.open(gz, "rt", encoding="utf-8"), gz
    raise GraphFormatError(f"missing file: {plain}")


def load_graph(path: str) -> GlobalGraph:
    meta_path = os.path.join(path, "meta.json")
    if not os.path.exists(meta_path):
        raise GraphFormatError(f"missing file: {meta_path}")
    with open(meta_path, encoding="utf-8") as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GraphFormatError(f"{meta_path}: invalid JSON ({exc})") from exc
    for key in ("name", "n", "d", "c"):
        if key not in meta:
            raise GraphFormatError(f"{meta_path}: missing key {key!r}")
    n, d, c = int(meta["n"]), int(meta["d"]), int(meta["c"])

    features = np.zeros((n, d))
    labels = np.full(n, -1, dtype=np.int64)
    fh, fname = _open_text(path, "nodes.tsv")
    with fh:
        count = 0
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise GraphFormatError(f"{fname}:{lineno}: expected 3 tab-separated fields")
            try:
                node, label = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(f"{fname}:{lineno}: node id and label must be integers") from None
            if node != count:
                raise GraphFormatError(f"{fname}:{lineno}: expected node id {count}, got {node}")
            if node >= n:
                raise GraphFormatError(f"{fname}:{lineno}: more nodes than n={n}")
            if label >= c or label < -1:
                raise GraphFormatError(f"{fname}:{lineno}: label {label} outside [0, {c}) and not -1")
            vals = parts[2].split(",") if parts[2] else []
            if len(vals) != d:
                raise GraphFormatError(f"{fname}:{lineno}: expected {d} features, got {len(vals)}")
            try:
                row = np.array(vals, dtype=np.float64)
            except ValueError:
                raise GraphFormatError(f"{fname}:{lineno}: non-numeric feature value") from None
            if not np.all(np.isfinite(row)):
                raise GraphFormatError(f"{fname}:{lineno}: non-finite feature value")
            features[node] = row
            labels[node] = label
            count += 1
    if count != n:
        raise GraphFormatError(f"{fname}: expected {n} nodes, found {count}")

    pairs = []
    seen = set()
    fh, fname = _open_text(path, "edges.tsv")
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphFormatError(f"{fname}:{lineno}: expected two node ids")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(f"{fname}:{lineno}: node ids must be integers") from None
            if u == v:
                raise GraphFormatError(f"{fname}:{lineno}: self-loop on node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise GraphFormatError(f"{fname}:{lineno}: node id out of range [0, {n})")
            if u > v:
                raise GraphFormatError(f"{fname}:{lineno}: expected u < v, got {u} {v}")
            if (u, v) in seen:
                raise GraphFormatError(f"{fname}:{lineno}: duplicate edge {u} {v}")
            seen.add((u, v))
            pairs.append((u, v))
    edges = canonical_edges(pairs, n) if pairs else np.zeros((0, 2), dtype=np.int64)
    return GlobalGraph(name=str(meta["name"]), features=features, labels=labels, edges=edges, c=c)


def _fmt(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def save_graph(g: GlobalGraph, path: str, compress: bool = False) -> None:
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump({"name": g.name, "n": g.n, "d": g.d, "c": g.c}, fh)
        fh.write("\n")
    suffix = ".gz" if compress else ""
    opener = (lambda p: gzip.open(p, "wt", encoding="utf-8", newline="\n")) if compress else (
        lambda p: open(p, "w", encoding="utf-8", newline="\n"))
    with opener(os.path.join(path, "nodes.tsv" + suffix)) as fh:
        for v in range(g.n):
            feats = ",".join(_fmt(x) for x in g.features[v])
            fh.write(f"{v}\t{int(g.labels[v])}\t{feats}\n")
    with opener(os.path.join(path, "edges.tsv" + suffix)) as fh:
        for u, v in g.edges:
            fh.write(f"{u}\t{v}\n")

"""Partitioning a global graph into interconnected client subgraphs."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graphcore import GlobalGraph, LabelSplit, adjacency_from_edges, row_normalized_self_loop
from .rng import child_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Partition:
    K: int
    assignment: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        object.__setattr__(self, "assignment", a)
        if a.size and (a.min() < 0 or a.max() >= self.K):
            raise ValueError("client id outside [0, K)")
        sizes = np.bincount(a, minlength=self.K)
        if np.any(sizes == 0):
            raise ValueError(f"empty client(s): {np.flatnonzero(sizes == 0).tolist()}")

    def members(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == i)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.K)


def interconnection_fraction(g: GlobalGraph, p: Partition) -> float:
    if g.num_edges == 0:
        return 0.0
    a = p.assignment
    return float(np.mean(a[g.edges[:, 0]] != a[g.edges[:, 1]]))


def _check_k(g: GlobalGraph, K: int) -> None:
    if K < 1:
        raise ValueError("K must be at least 1")
    if K > g.n:
        raise ValueError(f"K={K} exceeds the number of nodes n={g.n}")


# ---------------------------------------------------------------------------
# random


def partition_random(g: GlobalGraph, K: int, seed: int) -> Partition:
    """Each node picks a client uniformly at random.

    An empty client takes the smallest-id node of the currently largest client.
    """
    _check_k(g, K)
    a = child_rng(seed, "partition-random").integers(0, K, size=g.n)
    while True:
        sizes = np.bincount(a, minlength=K)
        empty = np.flatnonzero(sizes == 0)
        if empty.size == 0:
            break
        donor = int(np.argmax(sizes))
        a[np.flatnonzero(a == donor)[0]] = empty[0]
    return Partition(K, a)


# ---------------------------------------------------------------------------
# Louvain


def _one_level(w: sp.csr_matrix, order: np.ndarray):
    """Local-move phase on weighted graph ``w`` (symmetric, may carry self-loops).

    Returns the community of each node and whether anything moved.
    """
    n = w.shape[0]
    k = np.asarray(w.sum(axis=1)).ravel()
    two_m = k.sum()
    comm = np.arange(n)
    tot = k.copy()
    indptr, indices, data = w.indptr, w.indices, w.data
    moved_any = False
    improved = True
    while improved:
        improved = False
        for i in order:
            ci = comm[i]
            links = {}
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                if j == i:
                    continue
                cj = comm[j]
                links[cj] = links.get(cj, 0.0) + data[p]
            tot[ci] -= k[i]
            best_c = ci
            best_gain = links.get(ci, 0.0) - tot[ci] * k[i] / two_m
            for c in sorted(links):
                gain = links[c] - tot[c] * k[i] / two_m
                if gain > best_gain + 1e-12 or (abs(gain - best_gain) <= 1e-12 and c < best_c):
                    best_gain, best_c = gain, c
            tot[best_c] += k[i]
            if best_c != ci:
                comm[i] = best_c
                improved = True
                moved_any = True
    _, comm = np.unique(comm, return_inverse=True)
    return comm, moved_any


def louvain_communities(g: GlobalGraph, seed: int) -> list[np.ndarray]:
    """Modularity maximisation (resolution 1) to convergence.

    Nodes are visited in a seeded random order; among equal gains the
    community with the smaller id wins.
    """
    if g.num_edges == 0:
        return [np.array([v]) for v in range(g.n)]
    rng = child_rng(seed, "louvain")
    w = g.adjacency()
    node_comm = np.arange(g.n)
    while True:
        order = rng.permutation(w.shape[0])
        comm, moved = _one_level(w, order)
        if not moved:
            break
        node_comm = comm[node_comm]
        nc = comm.max() + 1
        p = sp.csr_matrix((np.ones(comm.size), (np.arange(comm.size), comm)), shape=(comm.size, nc))
        w = sp.csr_matrix(p.T @ w @ p)
        w.sort_indices()
    _, node_comm = np.unique(node_comm, return_inverse=True)
    return [np.flatnonzero(node_comm == c) for c in range(node_comm.max() + 1)]


def modularity(g: GlobalGraph, communities) -> float:
    """Newman modularity of a node grouping, resolution 1."""
    m = g.num_edges
    if m == 0:
        return 0.0
    label = np.empty(g.n, dtype=np.int64)
    for c, members in enumerate(communities):
        label[members] = c
    deg = g.degrees()
    inside = np.sum(label[g.edges[:, 0]] == label[g.edges[:, 1]])
    deg_tot = np.bincount(label, weights=deg)
    return float(inside / m - np.sum((deg_tot / (2 * m)) ** 2))


# ---------------------------------------------------------------------------
# size control shared by Louvain and K-means


def _bfs_order(members: np.ndarray, adj: sp.csr_matrix) -> list[int]:
    inside = set(members.tolist())
    seen = set()
    order = []
    for start in sorted(inside):
        if start in seen:
            continue
        seen.add(start)
        queue = deque([start])
        while queue:
            u = queue.popleft()
            order.append(u)
            for v in adj.indices[adj.indptr[u]:adj.indptr[u + 1]]:
                v = int(v)
                if v in inside and v not in seen:
                    seen.add(v)
                    queue.append(v)
    return order


def split_in_two(members: np.ndarray, adj: sp.csr_matrix):
    """BFS from the smallest id inside the group; first half / second half."""
    order = _bfs_order(members, adj)
    half = (len(order) + 1) // 2
    return np.sort(np.array(order[:half])), np.sort(np.array(order[half:]))


def balance_groups(g: GlobalGraph, groups, K: int) -> Partition:
    """Split groups above ceil(n/K) in two, then merge down to K clients.

    Groups are sorted by size (descending, ties by smallest member id); the
    first K seed the clients and every further group joins the first client
    that stays within ceil(n/K), else the currently smallest client.
    """
    cap = -(-g.n // K)
    adj = g.adjacency()
    pending = [np.sort(np.asarray(x)) for x in groups if len(x)]
    done = []
    while pending:
        grp = pending.pop()
        if grp.size > cap:
            pending.extend(split_in_two(grp, adj))
        else:
            done.append(grp)
    while len(done) < K:
        done.sort(key=lambda x: (-x.size, x[0]))
        a, b = split_in_two(done.pop(0), adj)
        done.extend([a, b])
    done.sort(key=lambda x: (-x.size, x[0]))

    assignment = np.empty(g.n, dtype=np.int64)
    sizes = np.zeros(K, dtype=np.int64)
    for i in range(K):
        assignment[done[i]] = i
        sizes[i] = done[i].size
    for grp in done[K:]:
        fits = np.flatnonzero(sizes + grp.size <= cap)
        if fits.size:
            target = int(fits[0])
        else:
            target = int(np.argmin(sizes))
            log.info("merge fallback: group of %d nodes sent to smallest client %d", grp.size, target)
        assignment[grp] = target
        sizes[target] += grp.size
    return Partition(K, assignment)


def partition_louvain(g: GlobalGraph, K: int, seed: int) -> Partition:
    _check_k(g, K)
    if K == 1:
        return Partition(1, np.zeros(g.n, dtype=np.int64))
    return balance_groups(g, louvain_communities(g, seed), K)


# ---------------------------------------------------------------------------
# K-means


def kmeans(x: np.ndarray, K: int, seed: int, max_iter: int = 100, tol: float = 1e-6):
    """Lloyd iterations from K distinct random data points.

    An empty cluster is re-seeded at the point farthest from its nearest
    centroid. Returns ``(labels, centroids)``.
    """
    x = np.asarray(x, dtype=np.float64)
    rng = child_rng(seed, "kmeans")
    centroids = x[rng.choice(x.shape[0], size=K, replace=False)].copy()
    sq = np.einsum("ij,ij->i", x, x)
    labels = np.zeros(x.shape[0], dtype=np.int64)
    for _ in range(max_iter):
        dist = sq[:, None] - 2 * x @ centroids.T + np.einsum("ij,ij->i", centroids, centroids)[None, :]
        labels = np.argmin(dist, axis=1)
        new = centroids.copy()
        for c in range(K):
            members = labels == c
            if members.any():
                new[c] = x[members].mean(axis=0)
        counts = np.bincount(labels, minlength=K)
        nearest = np.min(dist, axis=1)
        for c in np.flatnonzero(counts == 0):
            far = int(np.argmax(nearest))
            new[c] = x[far]
            labels[far] = c
            nearest[far] = -np.inf
        shift = np.max(np.linalg.norm(new - centroids, axis=1))
        centroids = new
        if shift < tol:
            break
    return labels, centroids


def partition_kmeans(g: GlobalGraph, K: int, seed: int) -> Partition:
    _check_k(g, K)
    if K == 1:
        return Partition(1, np.zeros(g.n, dtype=np.int64))
    labels, _ = kmeans(g.features, K, seed)
    groups = [np.flatnonzero(labels == c) for c in range(K)]
    return balance_groups(g, groups, K)


PARTITIONERS = {
    "random": partition_random,
    "louvain": partition_louvain,
    "kmeans": partition_kmeans,
}


def make_partition(g: GlobalGraph, method: str, K: int, seed: int) -> Partition:
    try:
        fn = PARTITIONERS[method]
    except KeyError:
        raise ValueError(f"unknown partitioner {method!r}") from None
    return fn(g, K, seed)


def save_partition(p: Partition, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for v, c in enumerate(p.assignment):
            fh.write(f"{v}\t{c}\n")


def load_partition(path: str, K: int | None = None) -> Partition:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected '<node_id>\\t<client_id>'")
            v, c = int(parts[0]), int(parts[1])
            if v != len(rows):
                raise ValueError(f"{path}:{lineno}: expected node id {len(rows)}, got {v}")
            rows.append(c)
    a = np.array(rows, dtype=np.int64)
    return Partition(K if K is not None else int(a.max()) + 1, a)


# ---------------------------------------------------------------------------
# client views


@dataclass
class ClientView:
    """Everything client ``client_id`` is allowed to know.

    Local arrays are indexed by position in ``internal``; every id stored
    here (``internal``, ``external``, edge endpoints, stub targets) is a
    global node id. ``stubs[j]`` lists interconnections to client ``j`` as
    ``(local position, global id of the remote node)`` pairs.
    """

    client_id: int
    K: int
    internal: np.ndarray
    external: np.ndarray
    intra_edges: np.ndarray
    stubs: dict
    features: np.ndarray
    labels: np.ndarray
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    local_norm_adj: sp.csr_matrix
    self_loop_degree: np.ndarray
    _pos: dict = field(default_factory=dict, repr=False)

    @property
    def n_i(self) -> int:
        return self.internal.size

    def position(self, global_ids) -> np.ndarray:
        """Local positions of owned nodes."""
        if not self._pos:
            self._pos.update({int(u): k for k, u in enumerate(self.internal)})
        return np.array([self._pos[int(u)] for u in np.atleast_1d(global_ids)], dtype=np.int64)

    def stub_matrix(self, j: int, n: int) -> sp.csr_matrix:
        """``A~^[i]_j`` as an ``n_i x n`` matrix over global columns.

        The block towards the client itself includes the self-loops.
        """
        if j == self.client_id:
            rows = np.concatenate([self.position(self.intra_edges[:, 0]),
                                   self.position(self.intra_edges[:, 1]),
                                   np.arange(self.n_i)]) if self.intra_edges.size else np.arange(self.n_i)
            cols = np.concatenate([self.intra_edges[:, 1], self.intra_edges[:, 0],
                                   self.internal]) if self.intra_edges.size else self.internal
        else:
            pairs = self.stubs.get(j, np.zeros((0, 2), dtype=np.int64))
            rows, cols = pairs[:, 0], pairs[:, 1]
        m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_i, n))
        m.sum_duplicates()
        m.sort_indices()
        return m


def build_client_views(g: GlobalGraph, p: Partition, split: LabelSplit) -> list[ClientView]:
    """Materialise each client's permitted slice of the global graph.

    The local normalised adjacency uses intra-client edges only; the
    self-loop degree counts every incident edge, interconnections included.
    """
    a = p.assignment
    deg = g.degrees()
    train_m, val_m, test_m = split.mask("train"), split.mask("val"), split.mask("test")
    eu, ev = g.edges[:, 0], g.edges[:, 1]
    cu, cv = a[eu], a[ev]
    views = []
    for i in range(p.K):
        internal = p.members(i)
        pos = np.full(g.n, -1, dtype=np.int64)
        pos[internal] = np.arange(internal.size)
        intra = g.edges[(cu == i) & (cv == i)]
        # interconnections seen from i: (local u, remote v)
        out_u = np.concatenate([eu[(cu == i) & (cv != i)], ev[(cv == i) & (cu != i)]])
        out_v = np.concatenate([ev[(cu == i) & (cv != i)], eu[(cv == i) & (cu != i)]])
        order = np.lexsort((out_v, out_u))
        out_u, out_v = out_u[order], out_v[order]
        stubs = {}
        for j in range(p.K):
            if j == i:
                continue
            sel = a[out_v] == j
            if sel.any():
                stubs[j] = np.stack([pos[out_u[sel]], out_v[sel]], axis=1)
        local_adj = adjacency_from_edges(internal.size, pos[intra]) if intra.size else sp.csr_matrix(
            (internal.size, internal.size))
        views.append(ClientView(
            client_id=i,
            K=p.K,
            internal=internal,
            external=np.unique(out_v),
            intra_edges=intra,
            stubs=stubs,
            features=g.features[internal].copy(),
            labels=g.labels[internal].copy(),
            train=np.flatnonzero(train_m[internal]),
            val=np.flatnonzero(val_m[internal]),
            test=np.flatnonzero(test_m[internal]),
            local_norm_adj=row_normalized_self_loop(local_adj),
            self_loop_degree=(1 + deg[internal]).astype(np.float64),
        ))
    return views

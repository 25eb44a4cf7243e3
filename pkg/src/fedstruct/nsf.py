"""Node structure features: one-hot degree, degree plus return probabilities, Hop2Vec init."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphcore import GlobalGraph
from .rng import child_rng


@dataclass
class NsfMatrix:
    values: np.ndarray
    method: str
    trainable: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("NSF values must be a 2-d array")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("NSF values must be finite")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d_s(self) -> int:
        return self.values.shape[1]


def one_hot_degree(deg: np.ndarray, cap: int) -> np.ndarray:
    if cap < 1:
        raise ValueError("degree cap must be >= 1")
    deg = np.asarray(deg, dtype=np.int64)
    out = np.zeros((deg.size, cap))
    out[np.arange(deg.size), np.minimum(deg, cap - 1)] = 1.0
    return out


def _degrees_from_views(views) -> np.ndarray:
    # the self-loop degree of each owned node is known to its owner from its stubs
    n = sum(v.n_i for v in views)
    deg = np.zeros(n, dtype=np.int64)
    for v in views:
        deg[v.internal] = np.rint(v.self_loop_degree).astype(np.int64) - 1
    return deg


def nsf_degree(g_or_views, cap: int = 50) -> NsfMatrix:
    """Row ``v`` is one-hot at ``min(deg(v), cap - 1)``; degrees count interconnections."""
    if isinstance(g_or_views, GlobalGraph):
        deg = g_or_views.degrees()
    else:
        deg = _degrees_from_views(g_or_views)
    return NsfMatrix(one_hot_degree(deg, cap), "deg")


def nsf_fedstar(views, partitions, cap: int = 50) -> NsfMatrix:
    """One-hot degree followed by ``(A_hat^l)_vv`` for ``l = 1..L_s``.

    ``partitions`` are the outputs of the acquisition protocol, which
    harvests the diagonal of every power it forms.
    """
    if partitions is None or any(getattr(p, "diag_powers", None) is None for p in partitions):
        raise ValueError("return probabilities unavailable: run the acquisition protocol first")
    deg = _degrees_from_views(views)
    hops = partitions[0].diag_powers.shape[0]
    diag = np.zeros((deg.size, hops))
    by_id = {p.client_id: p for p in partitions}
    for v in views:
        diag[v.internal] = by_id[v.client_id].diag_powers.T
    return NsfMatrix(np.hstack([one_hot_degree(deg, cap), diag]), "fedstar")


def nsf_hop2vec_init(n: int, d_s: int, seed: int) -> NsfMatrix:
    if d_s < 1:
        raise ValueError("d_s must be >= 1")
    r = 1.0 / np.sqrt(d_s)
    values = child_rng(seed, "hop2vec").uniform(-r, r, size=(n, d_s))
    return NsfMatrix(values, "hop2vec", trainable=True)


def save_nsf(s: NsfMatrix, path: str) -> None:
    """``node_id <TAB> v1,v2,...`` per line, full float precision."""
    with open(path, "w", encoding="utf-8") as fh:
        for u, row in enumerate(s.values):
            fh.write(f"{u}\t{','.join(repr(float(x)) for x in row)}\n")


def load_nsf(path: str, method: str = "loaded") -> NsfMatrix:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            node, _, vals = line.rstrip("\n").partition("\t")
            if int(node) != len(rows):
                raise ValueError(f"{path}:{lineno}: expected node id {len(rows)}, got {node}")
            rows.append([float(x) for x in vals.split(",")])
    return NsfMatrix(np.array(rows), method)

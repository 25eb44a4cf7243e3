"""Two-path decoupled predictor with hand-written backpropagation.

For a node ``v`` of client ``i`` the logits are

    z_v = sum_u abar_vu g(s_u) + sum_{u in V_i} abar(i)_vu f(x_u)

where ``abar`` are the client's rows of the global combined adjacency and
``abar(i)`` the combined adjacency of its own subgraph. ``f`` and ``g`` are
ReLU MLPs ending in ``c`` outputs. In folded Hop2Vec mode ``g`` is absent
and the structure features enter the sum directly (``d_s = c``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .rng import child_rng

MODES = ("generic", "hop2vec_folded", "hop2vec_chain")
CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: bias shape {b.shape} does not match weight {w.shape}")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {k}: input dim {w.shape[0]} does not chain")

    @property
    def dims(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    @classmethod
    def zeros_like(cls, p: "MlpParams") -> "MlpParams":
        return cls([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases])


def init_mlp(dims, rng: np.random.Generator, bias: bool = True) -> MlpParams:
    """Uniform in ``+-1/sqrt(fan_in)`` for weights and biases."""
    dims = [int(x) for x in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"invalid layer widths {dims}")
    ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        r = 1.0 / np.sqrt(fan_in)
        ws.append(rng.uniform(-r, r, size=(fan_in, fan_out)))
        bs.append(rng.uniform(-r, r, size=fan_out) if bias else np.zeros(fan_out))
    return MlpParams(ws, bs)


@dataclass
class ModelParams:
    f: MlpParams
    s: MlpParams | None
    mode: str = "generic"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "hop2vec_folded" and self.s is not None:
            raise ValueError("folded mode has no structure MLP")
        if self.mode == "hop2vec_chain" and self.s is None:
            raise ValueError("chain mode needs a structure MLP")
        if self.s is not None and self.s.dims[-1] != self.f.dims[-1]:
            raise ValueError("feature and structure paths must end in the same width")

    @property
    def c(self) -> int:
        return self.f.dims[-1]

    def arrays(self):
        return self.f.arrays() + (self.s.arrays() if self.s is not None else [])

    def decay_mask(self):
        """True for weight matrices, False for biases."""
        n = len(self.arrays())
        return [k % 2 == 0 for k in range(n)]

    def copy(self) -> "ModelParams":
        return ModelParams(self.f.copy(), self.s.copy() if self.s is not None else None, self.mode)

    def zeros_like(self) -> "ModelParams":
        return ModelParams(MlpParams.zeros_like(self.f),
                           MlpParams.zeros_like(self.s) if self.s is not None else None, self.mode)


def init_model(layers_f, layers_s, mode: str, seed: int, bias: bool = True) -> ModelParams:
    """``layers_*`` are full width lists including the input dimension."""
    f = init_mlp(layers_f, child_rng(seed, "init-f"), bias)
    s = None if mode == "hop2vec_folded" or layers_s is None else init_mlp(layers_s, child_rng(seed, "init-s"), bias)
    return ModelParams(f, s, mode)


# ---------------------------------------------------------------------------
# MLP


def mlp_forward(p: MlpParams, x):
    """Affine + ReLU stack with a linear output layer. Accepts a vector or row batch."""
    x = np.asarray(x, dtype=np.float64)
    vec = x.ndim == 1
    h = x[None, :] if vec else x
    if h.shape[1] != p.weights[0].shape[0]:
        raise ValueError(f"input width {h.shape[1]} does not match layer width {p.weights[0].shape[0]}")
    cache = [h]
    last = len(p.weights) - 1
    for k, (w, b) in enumerate(zip(p.weights, p.biases)):
        pre = h @ w + b
        h = pre if k == last else np.maximum(pre, 0.0)
        cache.append(pre)
    return (h[0] if vec else h), cache


def mlp_backward(p: MlpParams, cache, upstream, input_grad=True):
    """Gradients of ``sum(output * upstream)`` w.r.t. parameters and input.

    With ``input_grad=False`` the input gradient is skipped and returned as None.
    """
    up = np.asarray(upstream, dtype=np.float64)
    vec = up.ndim == 1
    dh = up[None, :] if vec else up
    if len(cache) != len(p.weights) + 1 or cache[-1].shape != dh.shape:
        raise ValueError("cache does not match parameters or upstream gradient")
    gw, gb = [None] * len(p.weights), [None] * len(p.weights)
    last = len(p.weights) - 1
    for k in range(last, -1, -1):
        dpre = dh if k == last else dh * (cache[k + 1] > 0)
        inp = cache[0] if k == 0 else np.maximum(cache[k], 0.0)
        gw[k] = inp.T @ dpre
        gb[k] = dpre.sum(axis=0)
        if k == 0 and not input_grad:
            return MlpParams(gw, gb), None
        dh = dpre @ p.weights[k].T
    return MlpParams(gw, gb), (dh[0] if vec else dh)


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(z, y):
    """Summed cross-entropy and its gradient ``softmax(z) - y``."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError(f"logits {z.shape} and targets {y.shape} differ")
    m = z.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True))
    loss = float(np.sum(y * (lse - z)))
    return loss, softmax(z) - y


# ---------------------------------------------------------------------------
# client computation


@dataclass
class ForwardCache:
    nodes: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    support: np.ndarray
    f_cache: list
    g_cache: list | None
    a_s: sp.csr_matrix
    a_f: sp.csr_matrix
    extra: dict = field(default_factory=dict)


def _rows(m, nodes):
    return m[nodes] if nodes is not None else m


def compact_columns(m):
    """Drop all-zero columns: returns the kept column ids and the narrowed matrix."""
    m = sp.csr_matrix(m)
    support = np.unique(m.indices)
    return support, m[:, support]


def forward_client(view, abar, S, params: ModelParams, nodes=None, local_abar=None) -> ForwardCache:
    """Logits for ``nodes`` (local positions, default all internal nodes).

    ``abar`` is the client's ``CombinedAdjacencyPartition`` or its row
    matrix, or ``None`` for a feature-only model. ``local_abar`` is the
    client's own combined adjacency for the feature path (identity if None).
    """
    n_i = view.n_i
    nodes = np.arange(n_i) if nodes is None else np.asarray(nodes, dtype=np.int64)
    a_f = sp.identity(n_i, format="csr") if local_abar is None else local_abar
    a_f = sp.csr_matrix(a_f)[nodes]
    if a_f.shape[1] != n_i:
        raise ValueError("local adjacency does not match the client's node count")
    fx, f_cache = mlp_forward(params.f, view.features)
    z = np.asarray(a_f @ fx)

    g_cache, support, a_s = None, np.zeros(0, dtype=np.int64), None
    if abar is not None:
        if S is None:
            raise ValueError("structure path needs NSF values")
        s_vals = getattr(S, "values", S)
        rows = getattr(abar, "rows", abar)
        if rows.shape[1] != s_vals.shape[0]:
            raise ValueError("combined adjacency columns do not match NSF rows")
        if nodes.size == n_i and hasattr(abar, "compact"):
            support, a_s = abar.compact()
        else:
            support, a_s = compact_columns(sp.csr_matrix(rows)[nodes])
        s_sup = s_vals[support]
        if params.mode == "hop2vec_folded":
            if s_sup.shape[1] != params.c:
                raise ValueError("folded mode needs d_s = c")
            gs = s_sup
        else:
            if params.s is None:
                raise ValueError("structure MLP missing")
            gs, g_cache = mlp_forward(params.s, s_sup)
        z = z + np.asarray(a_s @ gs)
    return ForwardCache(nodes, z, softmax(z), support, f_cache, g_cache, a_s, a_f)


def local_loss_and_gradients(view, abar, S, params: ModelParams, local_abar=None, cache=None,
                             train=None, s_grad=True):
    """Summed loss over the client's labeled training nodes and exact gradients.

    Returns ``(loss, grad_params, grad_S_rows)`` where ``grad_S_rows`` is a
    ``(support ids, gradient rows)`` pair, or ``None`` when S is not used.
    A precomputed ``cache`` covering all internal nodes may be passed to
    avoid a second forward pass. ``s_grad=False`` skips the gradient
    w.r.t. S (fixed NSFs); ``grad_S_rows`` is then None.
    """
    train = view.train if train is None else np.asarray(train, dtype=np.int64)
    train = train[view.labels[train] >= 0]
    if train.size == 0:
        raise ValueError(f"client {view.client_id} has no labeled training nodes")
    if cache is None:
        cache = forward_client(view, abar, S, params, nodes=train, local_abar=local_abar)
        sel = np.arange(train.size)
    else:
        sel = train if cache.nodes.size == view.n_i else np.searchsorted(cache.nodes, train)
    y = np.zeros((train.size, params.c))
    y[np.arange(train.size), view.labels[train]] = 1.0
    loss, dz = softmax_cross_entropy(cache.logits[sel], y)

    grad = params.zeros_like()
    a_f = cache.a_f[sel]
    gf, _ = mlp_backward(params.f, cache.f_cache, np.asarray(a_f.T @ dz), input_grad=False)
    grad.f = gf
    grad_s_rows = None
    if cache.a_s is not None:
        dgs = np.asarray(cache.a_s[sel].T @ dz)
        if params.mode == "hop2vec_folded":
            ds = dgs
        else:
            gs, ds = mlp_backward(params.s, cache.g_cache, dgs, input_grad=s_grad)
            grad.s = gs
        if s_grad:
            grad_s_rows = (cache.support, ds)
    return loss, grad, grad_s_rows


# ---------------------------------------------------------------------------
# checkpoints


def _mlp_to_dict(p: MlpParams):
    return [{"shape": list(w.shape), "weight": w.ravel().tolist(), "bias": b.tolist()}
            for w, b in zip(p.weights, p.biases)]


def _mlp_from_dict(layers):
    ws = [np.array(l["weight"], dtype=np.float64).reshape(l["shape"]) for l in layers]
    bs = [np.array(l["bias"], dtype=np.float64) for l in layers]
    return MlpParams(ws, bs)


def save_checkpoint(params: ModelParams, path: str, S=None) -> None:
    doc = {
        "format": "fedstruct-checkpoint",
        "version": CHECKPOINT_VERSION,
        "mode": params.mode,
        "f": _mlp_to_dict(params.f),
        "s": _mlp_to_dict(params.s) if params.s is not None else None,
    }
    if S is not None:
        vals = getattr(S, "values", S)
        doc["S"] = {"shape": list(vals.shape), "values": vals.ravel().tolist()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path: str):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "fedstruct-checkpoint":
        raise ValueError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    params = ModelParams(_mlp_from_dict(doc["f"]),
                         _mlp_from_dict(doc["s"]) if doc["s"] is not None else None, doc["mode"])
    S = None
    if "S" in doc:
        S = np.array(doc["S"]["values"], dtype=np.float64).reshape(doc["S"]["shape"])
    return params, S

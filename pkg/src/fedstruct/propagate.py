"""Combined multi-hop adjacency and its private, collaborative acquisition.

``combined_adjacency`` builds ``sum_l beta_l * A_hat^l`` on a graph that is
fully known; it is the reference for :func:`acquire_partitions`, which
reconstructs the rows owned by each client using only client views and
explicit block messages between clients.

Protocol rounds run ``l = 1 .. L_s``. At the start of round ``l`` client
``k`` holds ``P_k = rows of A_hat^(l-1)`` for its own nodes (the identity
rows when ``l = 1``). For each other client ``i`` it multiplies the
interconnection block ``A~[i]_k`` (known to ``k`` from its own edge stubs)
by ``P_k`` and sends the product to ``i``. Client ``i`` adds its own
intra-client product, scales by its self-loop degrees and obtains its rows
of ``A_hat^l``. Every round moves ``K(K-1)`` blocks, ``L_s K (K-1)`` in
total.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .graphcore import canonical_csr


@dataclass(frozen=True)
class BetaSchedule:
    weights: tuple

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if not w:
            raise ValueError("beta schedule must contain at least one weight")
        if any(x < 0 or not np.isfinite(x) for x in w):
            raise ValueError("beta weights must be finite and non-negative")
        object.__setattr__(self, "weights", w)

    @property
    def hops(self) -> int:
        return len(self.weights)

    @classmethod
    def uniform(cls, hops: int) -> "BetaSchedule":
        if hops < 1:
            raise ValueError("need at least one hop")
        return cls(tuple([1.0 / hops] * hops))

    @classmethod
    def parse(cls, text: str, hops: int, normalize: bool = True) -> "BetaSchedule":
        """``"uniform"`` or a comma-separated list of ``hops`` weights."""
        if text.strip() == "uniform":
            return cls.uniform(hops)
        w = [float(x) for x in text.split(",") if x.strip()]
        if len(w) != hops:
            raise ValueError(f"beta has {len(w)} weights but {hops} hops were requested")
        if normalize:
            total = sum(w)
            if total <= 0:
                raise ValueError("beta weights sum to zero")
            w = [x / total for x in w]
        return cls(tuple(w))


def combined_adjacency(a_hat: sp.spmatrix, beta: BetaSchedule) -> sp.csr_matrix:
    """``sum_l beta_l A_hat^l`` by repeated sparse products."""
    a_hat = canonical_csr(a_hat)
    if a_hat.shape[0] != a_hat.shape[1]:
        raise ValueError("a_hat must be square")
    power = a_hat
    out = beta.weights[0] * power
    for w in beta.weights[1:]:
        power = canonical_csr(a_hat @ power)
        out = out + w * power
    return canonical_csr(out)


def combined_adjacency_dense(a_hat: np.ndarray, beta: BetaSchedule) -> np.ndarray:
    a_hat = np.asarray(a_hat, dtype=np.float64)
    power = a_hat.copy()
    out = beta.weights[0] * power
    for w in beta.weights[1:]:
        power = a_hat @ power
        out = out + w * power
    return out


# ---------------------------------------------------------------------------
# message accounting


@dataclass
class Message:
    phase: str
    kind: str
    sender: int
    receiver: int
    scalars: int
    round: int = 0


@dataclass
class MessageLedger:
    """Append-only record of simulated transfers. ``-1`` denotes the server."""

    messages: list = field(default_factory=list)
    epochs: int = 0

    def record(self, phase, kind, sender, receiver, scalars, round=0):
        self.messages.append(Message(phase, kind, int(sender), int(receiver), int(scalars), int(round)))

    def total(self, phase=None, kind=None) -> int:
        return sum(m.scalars for m in self.messages
                   if (phase is None or m.phase == phase) and (kind is None or m.kind == kind))

    def count(self, phase=None, kind=None) -> int:
        return sum(1 for m in self.messages
                   if (phase is None or m.phase == phase) and (kind is None or m.kind == kind))


@dataclass
class CommReport:
    offline_scalars: int
    online_scalars_per_epoch: float
    blocks_sent: int
    rounds: int
    online_scalars_total: int = 0
    epochs: int = 0
    by_kind: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def message_meter(ledger: MessageLedger) -> CommReport:
    """Summarise a ledger into offline/online scalar counts.

    Offline covers adjacency acquisition and NSF sharing; online covers the
    per-epoch uploads of parameter (and NSF) gradients.
    """
    by_kind = {}
    for m in ledger.messages:
        key = f"{m.phase}:{m.kind}"
        by_kind[key] = by_kind.get(key, 0) + m.scalars
    online = ledger.total(phase="online")
    rounds = max((m.round for m in ledger.messages if m.kind == "adjacency-block"), default=0)
    return CommReport(
        offline_scalars=ledger.total(phase="offline"),
        online_scalars_per_epoch=online / ledger.epochs if ledger.epochs else 0.0,
        blocks_sent=ledger.count(kind="adjacency-block"),
        rounds=rounds,
        online_scalars_total=online,
        epochs=ledger.epochs,
        by_kind=by_kind,
    )


# ---------------------------------------------------------------------------
# collaborative acquisition


@dataclass
class CombinedAdjacencyPartition:
    """Rows of the combined adjacency owned by one client.

    ``rows`` is ``n_i x n`` over global columns, ordered like the client's
    ``internal`` nodes. ``diag_powers[l - 1, r]`` is the return probability
    ``(A_hat^l)_{vv}`` for the ``r``-th internal node ``v``.
    """

    client_id: int
    rows: sp.csr_matrix
    diag_powers: np.ndarray
    _compact: tuple = field(default=None, repr=False, compare=False)

    def compact(self):
        """``(support, rows[:, support])``, computed once."""
        if self._compact is None:
            support = np.unique(self.rows.indices)
            self._compact = (support, sp.csr_matrix(self.rows[:, support]))
        return self._compact


def _identity_rows(view, n: int) -> sp.csr_matrix:
    return sp.csr_matrix((np.ones(view.n_i), (np.arange(view.n_i), view.internal)), shape=(view.n_i, n))


def _outgoing_block(view, target: int):
    """Interconnections of ``view`` towards client ``target``.

    Returns the sorted global ids of the target's adjacent nodes and the
    ``len(ids) x n_k`` 0/1 matrix joining them to the sender's nodes.
    """
    pairs = view.stubs.get(target)
    if pairs is None or len(pairs) == 0:
        return np.zeros(0, dtype=np.int64), sp.csr_matrix((0, view.n_i))
    remote, row = np.unique(pairs[:, 1], return_inverse=True)
    t = sp.csr_matrix((np.ones(len(pairs)), (row, pairs[:, 0])), shape=(remote.size, view.n_i))
    return remote, canonical_csr(t)


def prune_block(block: sp.csr_matrix, owner: np.ndarray, keep: int) -> sp.csr_matrix:
    """Keep the ``keep`` largest-magnitude entries of every column group.

    Columns are grouped by owning client (``owner[col]``); ties go to the
    smaller ``(row, col)``.
    """
    coo = block.tocoo()
    if coo.nnz == 0:
        return canonical_csr(block)
    grp = owner[coo.col]
    order = np.lexsort((coo.col, coo.row, -np.abs(coo.data), grp))
    grp_sorted = grp[order]
    start = np.searchsorted(grp_sorted, grp_sorted, side="left")
    rank = np.arange(order.size) - start
    sel = order[rank < keep]
    out = sp.csr_matrix((coo.data[sel], (coo.row[sel], coo.col[sel])), shape=block.shape)
    return canonical_csr(out)


def acquire_partitions(views, beta: BetaSchedule, prune: int | None = None,
                       ledger: MessageLedger | None = None):
    """Simulate the multi-round protocol; returns one partition per client.

    With ``prune = p`` each transmitted block ``B_ijk`` keeps only its
    ``p * n_i`` largest entries.
    """
    K = len(views)
    ids = sorted(v.client_id for v in views)
    if ids != list(range(K)):
        raise ValueError("views must carry client ids 0..K-1")
    views = sorted(views, key=lambda v: v.client_id)
    seen = np.concatenate([v.internal for v in views])
    if np.unique(seen).size != seen.size:
        raise ValueError("inconsistent views: internal node sets overlap")
    n = seen.size
    if prune is not None and prune < 1:
        raise ValueError("pruning parameter p must be >= 1")
    owner = np.empty(n, dtype=np.int64)
    for v in views:
        owner[v.internal] = v.client_id
    if ledger is None:
        ledger = MessageLedger()

    own_blocks = [v.stub_matrix(v.client_id, n)[:, v.internal] for v in views]
    outgoing = {(k, i): _outgoing_block(views[k], i) for k in range(K) for i in range(K) if i != k}
    inv_deg = [sp.diags(1.0 / v.self_loop_degree) for v in views]

    power = [_identity_rows(v, n) for v in views]
    abar = [sp.csr_matrix((v.n_i, n)) for v in views]
    diags = [np.zeros((beta.hops, v.n_i)) for v in views]

    for ell, w in enumerate(beta.weights, start=1):
        # per receiver: [own | scatter_1 | ...] @ [power_i; block_1; ...] in one product
        left = [[own_blocks[i]] for i in range(K)]
        right = [[power[i]] for i in range(K)]
        for i in range(K):
            for k in range(K):
                if k == i:
                    continue
                remote, t = outgoing[(k, i)]
                block = canonical_csr(t @ power[k])
                if prune is not None:
                    block = prune_block(block, owner, prune * views[i].n_i)
                ledger.record("offline", "adjacency-block", k, i, block.nnz, round=ell)
                if remote.size:
                    rows = views[i].position(remote)
                    left[i].append(sp.csr_matrix((np.ones(remote.size), (rows, np.arange(remote.size))),
                                                 shape=(views[i].n_i, remote.size)))
                    right[i].append(block)
        acc = [sp.hstack(left[i], format="csr") @ sp.vstack(right[i], format="csr") for i in range(K)]
        for i in range(K):
            power[i] = canonical_csr(inv_deg[i] @ acc[i])
            abar[i] = abar[i] + w * power[i]
            diags[i][ell - 1] = np.asarray(power[i][np.arange(views[i].n_i), views[i].internal]).ravel()

    return [CombinedAdjacencyPartition(views[i].client_id, canonical_csr(abar[i]), diags[i]) for i in range(K)]


def acquire_partitions_pruned(views, beta: BetaSchedule, p: int, ledger: MessageLedger | None = None):
    if p < 1:
        raise ValueError("pruning parameter p must be >= 1")
    return acquire_partitions(views, beta, prune=p, ledger=ledger)


def local_combined_adjacency(view, hops: int) -> sp.csr_matrix:
    """Combined adjacency of the client's own subgraph (uniform weights)."""
    return combined_adjacency(view.local_norm_adj, BetaSchedule.uniform(hops))

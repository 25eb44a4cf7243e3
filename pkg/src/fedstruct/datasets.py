"""Converters from public citation-graph releases to the dataset directory format.

Two source layouts are understood:

* LINQS ``cora.content`` / ``cora.cites`` (paper id, binary word vector, class name)
* Planetoid ``ind.<name>.{x,tx,allx,y,ty,ally,graph,test.index}`` pickles

Both are bundled, for example, in the source distribution of the ``pgl``
package on PyPI; :func:`fetch_pgl_sources` extracts them from a downloaded
sdist archive.
"""

from __future__ import annotations

import os
import pickle
import sys
import tarfile

import numpy as np
import scipy.sparse as sp

from .graphcore import GlobalGraph, canonical_edges, save_graph


def convert_linqs(content_path: str, cites_path: str, name: str = "cora") -> GlobalGraph:
    """Nodes keep the order of ``content_path``; classes are sorted by name."""
    ids, rows, classes = [], [], []
    with open(content_path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            ids.append(parts[0])
            rows.append(np.array(parts[1:-1], dtype=np.float64))
            classes.append(parts[-1])
    names = sorted(set(classes))
    labels = np.array([names.index(cl) for cl in classes])
    index = {pid: i for i, pid in enumerate(ids)}
    pairs = []
    with open(cites_path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) == 2 and parts[0] in index and parts[1] in index:
                pairs.append((index[parts[0]], index[parts[1]]))
    n = len(ids)
    return GlobalGraph(name=name, features=np.vstack(rows), labels=labels,
                       edges=canonical_edges(pairs, n), c=len(names))


def _load_pickle(path: str):
    with open(path, "rb") as fh:
        if sys.version_info > (3, 0):
            return pickle.load(fh, encoding="latin1")
        return pickle.load(fh)


def convert_planetoid(directory: str, name: str) -> GlobalGraph:
    """Full-graph view of a Planetoid split (all nodes, all edges).

    Test nodes are reordered into index order, as in the usual loaders.
    Citeseer has isolated test ids without a feature row; they receive a
    zero feature vector and label 0 (argmax of an all-zero label row).
    """
    obj = {}
    for key in ("x", "y", "tx", "ty", "allx", "ally", "graph"):
        obj[key] = _load_pickle(os.path.join(directory, f"ind.{name}.{key}"))
    test_index = np.loadtxt(os.path.join(directory, f"ind.{name}.test.index"), dtype=np.int64)
    test_sorted = np.sort(test_index)

    tx, ty = obj["tx"], obj["ty"]
    if name == "citeseer":
        full = np.arange(test_sorted.min(), test_sorted.max() + 1)
        tx_ext = sp.lil_matrix((full.size, tx.shape[1]))
        tx_ext[test_sorted - test_sorted.min(), :] = tx
        tx = tx_ext
        ty_ext = np.zeros((full.size, ty.shape[1]))
        ty_ext[test_sorted - test_sorted.min(), :] = ty
        ty = ty_ext

    features = sp.vstack([sp.csr_matrix(obj["allx"]), sp.csr_matrix(tx)]).tolil()
    features[test_index, :] = features[test_sorted, :]
    y = np.vstack([obj["ally"], ty])
    y[test_index, :] = y[test_sorted, :]

    n = features.shape[0]
    pairs = [(u, v) for u, nbrs in obj["graph"].items() for v in nbrs if u < n and v < n]
    labels = np.argmax(y, axis=1)
    return GlobalGraph(name=name, features=features.toarray(), labels=labels,
                       edges=canonical_edges(pairs, n), c=y.shape[1])


def fetch_pgl_sources(sdist: str, dest: str) -> str:
    """Extract the ``pgl/data`` citation folders from a ``pgl-*.tar.gz`` sdist."""
    wanted = ("/pgl/data/cora/", "/pgl/data/citeseer/", "/pgl/data/pubmed/")
    with tarfile.open(sdist, "r:gz") as tar:
        members = [m for m in tar.getmembers()
                   if m.isfile() and any(w in m.name for w in wanted) and "/legacy/" not in m.name]
        tar.extractall(dest, members=members)
    root = members[0].name.split("/pgl/data/")[0]
    return os.path.join(dest, root, "pgl", "data")


def build_all(source_root: str, out_root: str, names=("cora", "citeseer", "pubmed"), compress=True):
    """Convert every requested dataset found under ``source_root``."""
    built = {}
    for name in names:
        src = os.path.join(source_root, name)
        if name == "cora":
            g = convert_linqs(os.path.join(src, "cora.content"), os.path.join(src, "cora.cites"))
        else:
            g = convert_planetoid(src, name)
        save_graph(g, os.path.join(out_root, name), compress=compress)
        built[name] = g
    return built


def main(argv=None) -> int:
    """``python -m fedstruct.datasets <pgl sdist or extracted pgl/data dir> <out dir>``"""
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print(main.__doc__, file=sys.stderr)
        return 2
    source, out = argv
    if source.endswith(".tar.gz"):
        source = fetch_pgl_sources(source, os.path.join(out, ".src"))
    for name, g in build_all(source, out).items():
        print(f"{name}: n={g.n} edges={g.num_edges} d={g.d} c={g.c}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Fixed semantic graph: node embeddings from a word-vector file plus a
Gaussian-kernel adjacency.  Also hosts the kernel helpers shared with the
prototype module and the top-k edge export used for visualization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError, ParameterError

DEFAULT_EXPORT_EDGES = 150


def pairwise_sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows, clamped at 0 against roundoff."""
    aa = (a * a).sum(axis=1)[:, None]
    bb = (b * b).sum(axis=1)[None, :]
    d2 = aa + bb - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def gaussian_affinity(a: np.ndarray, b: np.ndarray, sigma: float) -> np.ndarray:
    """exp(-||a_i - b_j||^2 / (2 sigma^2)) for all row pairs."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    return np.exp(-pairwise_sqdist(a, b) / (2.0 * sigma * sigma))


def symmetric_affinity(x: np.ndarray, sigma: float) -> np.ndarray:
    """Self-affinity matrix, exactly symmetric with an exact unit diagonal."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    d2 = pairwise_sqdist(x, x)
    d2 = 0.5 * (d2 + d2.T)
    np.fill_diagonal(d2, 0.0)
    return np.exp(-d2 / (2.0 * sigma * sigma))


@dataclass(frozen=True)
class GlobalGraph:
    """n class nodes with d-dimensional embeddings Z and adjacency A."""

    class_names: tuple
    Z: np.ndarray  # n x d
    A: np.ndarray  # n x n

    def __post_init__(self):
        names = tuple(str(n) for n in self.class_names)
        object.__setattr__(self, "class_names", names)
        z = np.array(self.Z, dtype=np.float64)
        a = np.array(self.A, dtype=np.float64)
        if z.shape[0] != len(names) or a.shape != (len(names), len(names)):
            raise DataError(
                f"graph shapes inconsistent: {len(names)} names, Z {z.shape}, A {a.shape}"
            )
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(a))):
            raise DataError("graph contains non-finite entries")
        z.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "Z", z)
        object.__setattr__(self, "A", a)

    @property
    def n(self) -> int:
        return len(self.class_names)

    @property
    def dim(self) -> int:
        return self.Z.shape[1]

    def index_of(self, name: str) -> int:
        try:
            return self.class_names.index(str(name))
        except ValueError:
            raise DataError(f"class '{name}' is not a node of the graph") from None

    def subset(self, names) -> "GlobalGraph":
        """Rows/columns restricted and reordered to ``names``."""
        idx = np.array([self.index_of(n) for n in names], dtype=int)
        return GlobalGraph(
            class_names=tuple(str(n) for n in names),
            Z=self.Z[idx],
            A=self.A[np.ix_(idx, idx)],
        )


@dataclass(frozen=True)
class WordEmbeddingTable:
    """The subset of a word-vector file that a class list actually needs."""

    dim: int
    entries: dict


def class_tokens(name: str) -> list[str]:
    """Lowercase a class name and split it on whitespace and underscores."""
    return str(name).lower().replace("_", " ").split()


def load_embeddings(path, class_names) -> tuple[WordEmbeddingTable, np.ndarray]:
    """Read ``token v1 ... vd`` lines and average token vectors per class.

    Returns the table of tokens that were looked up and the n x d class
    embedding matrix in ``class_names`` order.
    """
    needed = set()
    for name in class_names:
        toks = class_tokens(name)
        if not toks:
            raise DataError(f"class '{name}' has no tokens")
        needed.update(toks)

    entries = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            token, raw = parts[0], parts[1:]
            if dim is None:
                dim = len(raw)
                if dim == 0:
                    raise FormatError(f"{path}:{lineno}: record has no vector components")
            elif len(raw) != dim:
                raise FormatError(
                    f"{path}:{lineno}: expected {dim} components, found {len(raw)}"
                )
            if token not in needed or token in entries:
                continue
            try:
                vec = np.array([float(v) for v in raw], dtype=np.float64)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric vector component") from None
            if not np.all(np.isfinite(vec)):
                raise FormatError(f"{path}:{lineno}: non-finite vector component")
            entries[token] = vec
    if dim is None:
        raise FormatError(f"{path}: embedding file is empty")

    rows = []
    for name in class_names:
        vecs = []
        for tok in class_tokens(name):
            if tok not in entries:
                raise DataError(f"class '{name}': token '{tok}' not in embedding file")
            vecs.append(entries[tok])
        rows.append(np.mean(vecs, axis=0))
    z = np.array(rows, dtype=np.float64)
    return WordEmbeddingTable(dim=dim, entries=entries), z


def build_global_graph(class_names, z: np.ndarray, sigma_global: float) -> GlobalGraph:
    """Gaussian-kernel adjacency over class embeddings."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise DataError("embeddings contain non-finite entries")
    return GlobalGraph(class_names=tuple(class_names), Z=z,
                       A=symmetric_affinity(z, sigma_global))


def commonality(source_classes, target_classes) -> float:
    """Jaccard overlap of two label sets."""
    s = {str(c) for c in source_classes}
    t = {str(c) for c in target_classes}
    if not s or not t:
        raise ParameterError("commonality: both class sets must be nonempty")
    return len(s & t) / len(s | t)


def top_k_edge_indices(a: np.ndarray, k: int) -> list[tuple[int, int, float]]:
    """The k heaviest undirected edges as (i, j, weight), i < j, sorted by
    descending weight with (i, j) lexicographic tie-breaking."""
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ParameterError(f"adjacency must be square, got {a.shape}")
    if not np.allclose(a, a.T, atol=1e-9):
        raise ParameterError("adjacency must be symmetric")
    max_edges = n * (n - 1) // 2
    if k < 0 or k > max_edges:
        raise ParameterError(f"k={k} outside [0, {max_edges}] for {n} nodes")
    iu, ju = np.triu_indices(n, k=1)
    edges = sorted(zip(iu.tolist(), ju.tolist(), a[iu, ju].tolist()),
                   key=lambda e: (-e[2], e[0], e[1]))
    return edges[:k]


def top_k_edges(a: np.ndarray, class_names, k: int) -> list[tuple[str, str, float]]:
    """Like ``top_k_edge_indices`` but with endpoints as class labels."""
    names = [str(n) for n in class_names]
    return [(names[i], names[j], w) for i, j, w in top_k_edge_indices(a, k)]


def graph_export_json(class_names, a: np.ndarray, k: int) -> dict:
    """Node/edge dict matching the CLI export schema, edges sorted descending."""
    names = [str(n) for n in class_names]
    edges = top_k_edge_indices(a, k)
    return {
        "nodes": [{"id": i, "label": name} for i, name in enumerate(names)],
        "edges": [{"src": i, "dst": j, "weight": w} for i, j, w in edges],
    }


def graph_export_dot(class_names, a: np.ndarray, k: int, max_penwidth: float = 4.0) -> str:
    """Graphviz source with edge pen-width proportional to edge weight."""
    names = [str(n) for n in class_names]
    edges = top_k_edge_indices(a, k)
    wmax = edges[0][2] if edges else 1.0
    if wmax <= 0:
        wmax = 1.0
    lines = ["graph {"]
    for i, name in enumerate(names):
        label = name.replace("\\", "\\\\").replace('"', '\\"')
        lines.append(f'  n{i} [label="{label}"];')
    for i, j, w in edges:
        lines.append(f"  n{i} -- n{j} [penwidth={max_penwidth * w / wmax:.4f}];")
    lines.append("}")
    return "\n".join(lines) + "\n"

"""Pre-treatment undirected networks and ego-network views."""

from __future__ import annotations

import dataclasses
import logging
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple, TextIO

import networkx as nx
import numpy as np
import scipy.sparse as sp

from .utils import StrPath

__all__ = [
    "EdgeListError",
    "EgoView",
    "Graph",
    "ego_view",
    "load_edge_list",
    "read_edge_list",
]

logger = logging.getLogger(__name__)


class EdgeListError(ValueError):
    """Malformed edge list. `lineno` is 1-based; 0 when not tied to a line."""

    def __init__(self, message: str, lineno: int = 0, path: StrPath = None):
        self.lineno = lineno
        self.path = path
        prefix = ""
        if path is not None:
            prefix += f"{path}:"
        if lineno:
            prefix += f"line {lineno}: "
        elif prefix:
            prefix += " "
        super().__init__(prefix + message)


@dataclasses.dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected graph in compressed sparse row form.

    Node ids are the dense integers ``0..n_nodes-1``. Neighbor lists are strictly
    ascending, symmetric, and free of self-loops and duplicates; use
    `Graph.from_edges` (or one of the loaders) to build a graph from raw edges.

    Parameters
    ----------
    n_nodes : int
        Number of nodes.
    indptr : np.ndarray
        Row pointers, length ``n_nodes + 1``.
    indices : np.ndarray
        Concatenated neighbor lists.
    """

    n_nodes: int
    indptr: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        for arr in (self.indptr, self.indices):
            arr.flags.writeable = False

    @classmethod
    def from_edges(cls, n_nodes: int, edges) -> Graph:
        """Build a graph from an ``(E, 2)`` array of node pairs.

        Both orientations and repeated pairs collapse to a single edge.

        Raises
        ------
        IndexError
            If a node id is outside ``0..n_nodes-1``.
        ValueError
            If an edge is a self-loop.
        """
        n_nodes = int(n_nodes)
        if n_nodes < 0:
            raise ValueError(f"n_nodes must be non-negative, got {n_nodes}")
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            bad = (edges < 0) | (edges >= n_nodes)
            if bad.any():
                row = int(np.flatnonzero(bad.any(axis=1))[0])
                raise IndexError(
                    f"edge {tuple(edges[row])} has a node id outside 0..{n_nodes - 1}"
                )
            loops = edges[:, 0] == edges[:, 1]
            if loops.any():
                row = int(np.flatnonzero(loops)[0])
                raise ValueError(f"self-loop on node {edges[row, 0]}")

        both = np.concatenate([edges, edges[:, ::-1]])
        keys = np.unique(both[:, 0] * max(n_nodes, 1) + both[:, 1])
        rows = keys // max(n_nodes, 1)
        cols = keys % max(n_nodes, 1)
        indptr = np.zeros(n_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_nodes), out=indptr[1:])
        return cls(n_nodes, indptr, cols.astype(np.int64))

    @classmethod
    def from_networkx(cls, graph: nx.Graph) -> Graph:
        """Convert a networkx graph whose nodes are the integers 0..n-1."""
        n = graph.number_of_nodes()
        if set(graph.nodes) != set(range(n)):
            raise ValueError("networkx graph nodes must be the integers 0..n-1")
        return cls.from_edges(n, np.array(list(graph.edges), dtype=np.int64))

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n_nodes))
        graph.add_edges_from(self.edges().tolist())
        return graph

    def __len__(self):
        return self.n_nodes

    def __repr__(self):
        return f"<Graph n_nodes={self.n_nodes} n_edges={self.n_edges}>"

    @property
    def n_edges(self) -> int:
        return len(self.indices) // 2

    @cached_property
    def degree(self) -> np.ndarray:
        deg = np.diff(self.indptr)
        deg.flags.writeable = False
        return deg

    @cached_property
    def row_of_slot(self) -> np.ndarray:
        """Owning node of every entry of `indices` (the ego of each dyad slot)."""
        rows = np.repeat(np.arange(self.n_nodes, dtype=np.int64), self.degree)
        rows.flags.writeable = False
        return rows

    def neighbors(self, i: int) -> np.ndarray:
        """Ascending neighbor ids of node `i` (a read-only view)."""
        self._check_node(i)
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        nbrs = self.neighbors(u)
        pos = np.searchsorted(nbrs, v)
        return bool(pos < len(nbrs) and nbrs[pos] == v)

    @cached_property
    def _slot_keys(self) -> np.ndarray:
        # ascending because rows ascend and each neighbor list ascends
        return self.row_of_slot * max(self.n_nodes, 1) + self.indices

    def slot_of(self, egos: np.ndarray, alters: np.ndarray) -> np.ndarray:
        """Positions in `indices` of the (ego, alter) pairs, which must be edges."""
        query = np.asarray(egos) * max(self.n_nodes, 1) + np.asarray(alters)
        return np.searchsorted(self._slot_keys, query)

    def has_edges(self, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
        """Vectorized `has_edge` over paired arrays of node ids."""
        keys = self._slot_keys
        query = np.asarray(us) * max(self.n_nodes, 1) + np.asarray(vs)
        pos = np.searchsorted(keys, query)
        found = pos < len(keys)
        found[found] = keys[pos[found]] == query[found]
        return found

    def edges(self) -> np.ndarray:
        """``(E, 2)`` array of edges with ``u < v``, sorted lexicographically."""
        rows = self.row_of_slot
        upper = rows < self.indices
        return np.column_stack([rows[upper], self.indices[upper]])

    def adjacency_matrix(self) -> sp.csr_array:
        data = np.ones(len(self.indices), dtype=np.int64)
        return sp.csr_array(
            (data, self.indices, self.indptr), shape=(self.n_nodes, self.n_nodes)
        )

    def write_edge_list(self, fid: TextIO):
        """Write the graph as ``u v`` lines (``u < v``), one edge per line."""
        for u, v in self.edges():
            print(u, v, file=fid)

    def _check_node(self, i):
        if not 0 <= i < self.n_nodes:
            raise IndexError(f"node {i} out of range 0..{self.n_nodes - 1}")


class EgoView(NamedTuple):
    """1-hop ego network of `ego`.

    Parameters
    ----------
    ego : int
        The ego node.
    alters : np.ndarray
        Ascending neighbor ids of the ego.
    alter_edges : np.ndarray
        ``(k, 2)`` array of adjacent alter pairs ``(a, b)`` with ``a < b``, sorted.
    """

    ego: int
    alters: np.ndarray
    alter_edges: np.ndarray


def ego_view(g: Graph, i: int) -> EgoView:
    """Return the ego network of node `i`.

    Alter-alter edges are found by merging each alter's sorted neighbor list
    with the ego's later alters.
    """
    alters = g.neighbors(i)
    pairs = []
    for pos, a in enumerate(alters):
        later = alters[pos + 1 :]
        if len(later) == 0:
            break
        common = np.intersect1d(g.neighbors(a), later, assume_unique=True)
        pairs.extend((int(a), int(b)) for b in common)
    alter_edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    return EgoView(int(i), alters, alter_edges)


def _parse_edge_lines(lines: Iterable[str], n_nodes: int, path=None) -> np.ndarray:
    edges = []
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        fields = text.split()
        if len(fields) != 2:
            raise EdgeListError(
                f"expected 2 fields 'u v', got {len(fields)}: {text!r}", lineno, path
            )
        try:
            u, v = int(fields[0]), int(fields[1])
        except ValueError:
            raise EdgeListError(
                f"node ids must be integers: {text!r}", lineno, path
            ) from None
        for node in (u, v):
            if not 0 <= node < n_nodes:
                raise EdgeListError(
                    f"node id {node} out of range 0..{n_nodes - 1}", lineno, path
                )
        if u == v:
            raise EdgeListError(f"self-loop on node {u}", lineno, path)
        edges.append((u, v))
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def load_edge_list(source: TextIO, n_nodes: int) -> Graph:
    """Load a whitespace-separated edge list.

    Lines starting with ``#`` and blank lines are ignored. Duplicate lines and
    both orientations of a pair collapse to one edge.

    Parameters
    ----------
    source : text stream
        Stream of ``u v`` lines with ``0 <= u, v < n_nodes``.
    n_nodes : int
        Number of nodes.

    Raises
    ------
    EdgeListError
        On a malformed line, an out-of-range id, or a self-loop. The message
        carries the offending line number.
    """
    edges = _parse_edge_lines(source, n_nodes, path=getattr(source, "name", None))
    g = Graph.from_edges(n_nodes, edges)
    logger.info("loaded graph with %d nodes and %d edges", g.n_nodes, g.n_edges)
    return g


def read_edge_list(path: StrPath, n_nodes: int) -> Graph:
    """Load an edge list file; see `load_edge_list`."""
    with Path(path).open(encoding="utf-8") as fid:
        return load_edge_list(fid, n_nodes)

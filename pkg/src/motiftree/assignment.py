"""Randomization designs and Monte Carlo re-randomization of treatment vectors."""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from .utils import SeedLike, StrPath, ValueTypeDispatch, resolve_threads, substream

__all__ = [
    "AssignmentFileError",
    "ClusterBernoulli",
    "Design",
    "IndependentBernoulli",
    "draw",
    "draw_replicates",
    "parse_design",
    "read_assignment",
    "read_clusters",
    "ring_clusters",
]

logger = logging.getLogger(__name__)


class AssignmentFileError(ValueError):
    """Malformed assignment or cluster file."""


def _check_probability(p):
    if not 0.0 < p < 1.0:
        raise ValueError(f"assignment probability must be in (0, 1), got {p!r}")


@dataclasses.dataclass(frozen=True)
class IndependentBernoulli:
    """Every node treated independently with probability `p`."""

    p: float = 0.5

    def __post_init__(self):
        _check_probability(self.p)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return (rng.random(n) < self.p).astype(np.uint8)

    def describe(self) -> str:
        return f"bernoulli:{self.p}"


@dataclasses.dataclass(frozen=True, eq=False)
class ClusterBernoulli:
    """One Bernoulli(`p`) draw per cluster, shared by every member.

    Parameters
    ----------
    cluster_of : array_like
        Cluster label of every node. Labels may be any integers; they are
        relabeled densely in ascending order.
    p : float
        Treatment probability of a cluster.
    """

    cluster_of: np.ndarray
    p: float = 0.5

    def __post_init__(self):
        _check_probability(self.p)
        labels = np.asarray(self.cluster_of)
        if labels.ndim != 1:
            raise ValueError("cluster_of must be one-dimensional")
        _, dense = np.unique(labels, return_inverse=True)
        dense = dense.reshape(-1).astype(np.int64)
        dense.flags.writeable = False
        object.__setattr__(self, "cluster_of", dense)

    @property
    def n_clusters(self) -> int:
        return int(self.cluster_of.max()) + 1 if len(self.cluster_of) else 0

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if len(self.cluster_of) != n:
            raise ValueError(
                f"cluster map covers {len(self.cluster_of)} nodes but the graph has {n}"
            )
        per_cluster = rng.random(self.n_clusters) < self.p
        return per_cluster[self.cluster_of].astype(np.uint8)

    def describe(self) -> str:
        return f"cluster:{self.n_clusters} clusters,{self.p}"


Design = Union[IndependentBernoulli, ClusterBernoulli]


def draw(
    design: Design, n: int, seed: SeedLike, stream: Optional[int] = None
) -> np.ndarray:
    """Draw one treatment vector.

    Parameters
    ----------
    design : Design
        Randomization design.
    n : int
        Number of nodes.
    seed : int or SeedSequence
        Master seed.
    stream : int, optional
        Replicate substream. ``None`` draws from the master seed directly; replicate
        `r` of `draw_replicates` equals ``draw(design, n, seed, stream=r)``.

    Returns
    -------
    z : np.ndarray
        Length-`n` array of 0/1 values (``uint8``).
    """
    if stream is None:
        rng = np.random.default_rng(seed)
    else:
        rng = substream(seed, stream)
    return design.sample(n, rng)


def draw_replicates(
    design: Design, n: int, R: int, seed: SeedLike, threads: Optional[int] = None
) -> np.ndarray:
    """Draw `R` re-randomizations of the treatment vector.

    Replicate `r` uses substream `r` of `seed`, so any replicate can be regenerated
    in isolation and the result does not depend on `threads`.

    Returns
    -------
    z : np.ndarray
        ``(R, n)`` array of 0/1 values.
    """
    if R < 1:
        raise ValueError(f"R must be at least 1, got {R}")
    out = np.empty((R, n), dtype=np.uint8)

    def fill(r):
        out[r] = draw(design, n, seed, stream=r)

    threads = resolve_threads(threads)
    if threads == 1:
        for r in range(R):
            fill(r)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, range(R)))
    return out


def ring_clusters(n: int, size: int) -> np.ndarray:
    """Cluster consecutive ring positions: node `i` belongs to cluster ``i // size``."""
    if size < 1:
        raise ValueError(f"cluster size must be at least 1, got {size}")
    return np.arange(n, dtype=np.int64) // size


def _read_node_table(path: StrPath, column: str, n_nodes: Optional[int]) -> np.ndarray:
    try:
        table = pd.read_csv(path, skipinitialspace=True, comment="#")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise AssignmentFileError(f"{path}: {exc}") from None
    if list(table.columns) != ["node", column]:
        raise AssignmentFileError(
            f"{path}: expected header 'node,{column}', got {','.join(map(str, table.columns))!r}"
        )
    for name in table.columns:
        if pd.api.types.is_integer_dtype(table[name]):
            continue
        numeric = pd.to_numeric(table[name], errors="coerce")
        bad = (numeric.isna() | (numeric != numeric.round())).to_numpy()
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            # +2: header line and 1-based numbering
            raise AssignmentFileError(
                f"{path}: line {row + 2}: {name} must be an integer, "
                f"got {table[name].iloc[row]!r}"
            )
        table[name] = numeric.astype(np.int64)
    nodes = table["node"].to_numpy(dtype=np.int64)
    values = table[column].to_numpy(dtype=np.int64)
    n = len(nodes) if n_nodes is None else n_nodes
    if n_nodes is not None and len(nodes) != n_nodes:
        raise AssignmentFileError(f"{path}: expected {n_nodes} rows, got {len(nodes)}")
    if len(nodes) and (nodes.min() < 0 or nodes.max() >= n):
        row = int(np.flatnonzero((nodes < 0) | (nodes >= n))[0])
        raise AssignmentFileError(
            f"{path}: line {row + 2}: node id {nodes[row]} out of range 0..{n - 1}"
        )
    out = np.full(n, -1, dtype=np.int64)
    out[nodes] = values
    if len(np.unique(nodes)) != len(nodes):
        dupes = pd.Series(nodes).duplicated()
        row = int(np.flatnonzero(dupes.to_numpy())[0])
        raise AssignmentFileError(f"{path}: line {row + 2}: duplicate node {nodes[row]}")
    return out


def read_assignment(path: StrPath, n_nodes: Optional[int] = None) -> np.ndarray:
    """Read an observed assignment from a ``node,z`` CSV file.

    Every node ``0..n_nodes-1`` must appear exactly once with ``z`` in {0, 1}.
    """
    z = _read_node_table(path, "z", n_nodes)
    bad = (z != 0) & (z != 1)
    if bad.any():
        node = int(np.flatnonzero(bad)[0])
        raise AssignmentFileError(f"{path}: z of node {node} must be 0 or 1")
    return z.astype(np.uint8)


def read_clusters(path: StrPath, n_nodes: Optional[int] = None) -> np.ndarray:
    """Read a ``node,cluster`` CSV file into a cluster map."""
    return _read_node_table(path, "cluster", n_nodes)


def parse_design(text: str, n_nodes: int, base_dir: StrPath = ".") -> Design:
    """Parse a design specification.

    Accepted forms are ``bernoulli:p`` and ``cluster:path,p``; a relative cluster
    file path is resolved against `base_dir`.

    Example
    -------
    >>> parse_design('bernoulli:0.3', 10)
    IndependentBernoulli(p=0.3)
    """
    kind, sep, arg = text.partition(":")
    if not sep:
        raise ValueError(f"design must look like 'bernoulli:p' or 'cluster:path,p', got {text!r}")
    parser = _design_dispatch[kind.strip().lower()]
    return parser(arg, text, n_nodes, Path(base_dir))


def _parse_bernoulli(arg, text, n_nodes, base_dir):
    return IndependentBernoulli(_parse_p(arg, text))


def _parse_cluster(arg, text, n_nodes, base_dir):
    path, sep, p = arg.rpartition(",")
    if not sep or not path:
        raise ValueError(f"cluster design must look like 'cluster:path,p', got {text!r}")
    path = base_dir / path.strip()
    clusters = read_clusters(path, n_nodes)
    logger.info("read %d clusters from %s", len(np.unique(clusters)), path)
    return ClusterBernoulli(clusters, _parse_p(p, text))


_design_dispatch = ValueTypeDispatch(
    "design", {"bernoulli": _parse_bernoulli, "cluster": _parse_cluster}
)


def _parse_p(arg: str, text: str) -> float:
    try:
        return float(arg)
    except ValueError:
        raise ValueError(f"invalid probability {arg!r} in design {text!r}") from None

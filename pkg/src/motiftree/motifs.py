"""Unlabeled and treatment-labeled network motif counts on 1-hop ego networks.

Four motif kinds are supported, each anchored on the ego:

========  =====================================================  ======
name      pattern                                                alters
========  =====================================================  ======
``2``     dyad: ego and one alter                                1
``3o``    open triad: ego and two non-adjacent alters            2
``3c``    closed triad: ego and two adjacent alters              2
``4o``    open tetrad: ego and three pairwise non-adjacent       3
          alters
========  =====================================================  ======

A labeled motif ``<kind>-<t>`` is an instance with exactly `t` treated alters; the
ego's own assignment never enters the label. The interference vector of an ego is
the fraction of each kind's instances carrying each label.

All counting is vectorized over the whole graph. The structure-only pass
(`census`) enumerates triangles and 4-cliques once; `label_counts` then labels
every kind from those lists and the per-ego treated-neighbor count in linear time,
using inclusion-exclusion for the open tetrads.
"""

from __future__ import annotations

import dataclasses
import logging
import warnings
from typing import Dict, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .graph import Graph
from .utils import ValueTypeDispatch

__all__ = [
    "CLOSED_TRIAD",
    "DYAD",
    "OPEN_TETRAD",
    "OPEN_TRIAD",
    "FeatureMatrix",
    "InterferenceVectors",
    "MissingPolicy",
    "MissingPolicyError",
    "MissingReport",
    "MotifCatalog",
    "MotifCensus",
    "MotifCounts",
    "MotifKind",
    "census",
    "feature_matrix",
    "interference_vector",
    "label_counts",
    "motif_table",
]

logger = logging.getLogger(__name__)

Z_COLUMN = "Z"


class MissingPolicyError(ValueError):
    """The missing-data policy leaves no nodes or no features."""


class MotifKind(NamedTuple):
    name: str
    n_alters: int

    @property
    def labels(self) -> Tuple[str, ...]:
        """Labeled motif names, ``<name>-0`` through ``<name>-<n_alters>``."""
        return tuple(f"{self.name}-{t}" for t in range(self.n_alters + 1))

    @property
    def fully_treated(self) -> str:
        return self.labels[-1]

    @property
    def fully_control(self) -> str:
        return self.labels[0]


DYAD = MotifKind("2", 1)
OPEN_TRIAD = MotifKind("3o", 2)
CLOSED_TRIAD = MotifKind("3c", 2)
OPEN_TETRAD = MotifKind("4o", 3)

_CANONICAL = (DYAD, OPEN_TRIAD, CLOSED_TRIAD, OPEN_TETRAD)


@dataclasses.dataclass(frozen=True)
class MotifCatalog:
    """Ordered selection of motif kinds.

    Kinds are stored in canonical order (dyad, open triad, closed triad, open
    tetrad) regardless of the order given. Dyads are mandatory.
    """

    kinds: Tuple[MotifKind, ...] = _CANONICAL

    def __post_init__(self):
        kinds = tuple(self.kinds)
        unknown = [k for k in kinds if k not in _CANONICAL]
        if unknown:
            raise TypeError(
                f"Invalid motif kind {unknown[0]!r}; must be one of "
                f"{[k.name for k in _CANONICAL]!r}"
            )
        if DYAD not in kinds:
            raise ValueError("motif catalog must include dyads")
        object.__setattr__(self, "kinds", tuple(k for k in _CANONICAL if k in kinds))

    @classmethod
    def named(cls, name: str) -> MotifCatalog:
        """Catalog by name: ``'full'``, ``'dyad'`` or ``'dyad-triad'``."""
        return cls(_catalog_dispatch[name])

    @property
    def columns(self) -> Tuple[str, ...]:
        """Labeled motif names in canonical feature order."""
        return tuple(label for kind in self.kinds for label in kind.labels)

    @property
    def needs_triangles(self) -> bool:
        return any(k in self.kinds for k in (OPEN_TRIAD, CLOSED_TRIAD, OPEN_TETRAD))

    def __contains__(self, kind) -> bool:
        return kind in self.kinds


_catalog_dispatch = ValueTypeDispatch(
    "catalog",
    {
        "full": _CANONICAL,
        "dyad": (DYAD,),
        "dyad-triad": (DYAD, OPEN_TRIAD, CLOSED_TRIAD),
    },
)


def _expand_ranges(starts: np.ndarray, counts: np.ndarray):
    """Flatten the index ranges ``starts[k] : starts[k] + counts[k]``.

    Returns the owning range of every element and the element positions.
    """
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(counts), dtype=np.int64), counts)
    first = np.repeat(np.cumsum(counts) - counts, counts)
    pos = np.repeat(starts, counts) + (np.arange(total, dtype=np.int64) - first)
    return owner, pos


def _extend_cliques(g: Graph, cliques: np.ndarray) -> np.ndarray:
    """Extend ascending k-cliques by every larger node adjacent to all members."""
    k = cliques.shape[1]
    if len(cliques) == 0:
        return np.empty((0, k + 1), dtype=np.int64)
    head = cliques[:, 0]
    owner, pos = _expand_ranges(g.indptr[head], g.degree[head])
    cand = g.indices[pos]
    keep = cand > cliques[owner, -1]
    owner, cand = owner[keep], cand[keep]
    for col in range(1, k):
        keep = g.has_edges(cliques[owner, col], cand)
        owner, cand = owner[keep], cand[keep]
    return np.column_stack([cliques[owner], cand])


def triangles(g: Graph) -> np.ndarray:
    """All triangles ``(u, v, w)`` with ``u < v < w``, lexicographically sorted."""
    return _extend_cliques(g, g.edges())


@dataclasses.dataclass(frozen=True, eq=False)
class MotifCensus:
    """Structure-only motif data for one graph, reused across assignments.

    Parameters
    ----------
    graph : Graph
    catalog : MotifCatalog
    unlabeled : np.ndarray
        ``(N, n_kinds)`` instance counts, one column per catalog kind.
    alter_edges : np.ndarray
        ``(K, 3)`` rows ``(ego, a, b)``, ``a < b``, one per adjacent alter pair.
    entry_slot, entry_other : np.ndarray
        For each end of each alter edge: the adjacency slot of the (ego, center)
        pair and the opposite endpoint. Used to count wedges by label.
    slot_alter_degree : np.ndarray
        Degree of each alter inside its ego's alter graph, per adjacency slot.
    cliques : np.ndarray
        ``(Q, 4)`` ascending 4-cliques; each is one alter triangle for four egos.
    """

    graph: Graph
    catalog: MotifCatalog
    unlabeled: np.ndarray
    alter_edges: np.ndarray
    entry_slot: np.ndarray
    entry_other: np.ndarray
    slot_alter_degree: np.ndarray
    cliques: np.ndarray

    @property
    def degree(self) -> np.ndarray:
        return self.graph.degree

    @property
    def n_nodes(self) -> int:
        return self.graph.n_nodes

    def kind_counts(self, kind: MotifKind) -> np.ndarray:
        return self.unlabeled[:, self.catalog.kinds.index(kind)]


def census(g: Graph, catalog: MotifCatalog) -> MotifCensus:
    """Count unlabeled motifs of every catalog kind for every ego.

    The open tetrad count of an ego with degree `d`, `e` alter edges, alter-graph
    degrees `h` and `T` alter triangles is
    ``C(d, 3) - e (d - 2) + sum C(h, 2) - T``.
    """
    n = g.n_nodes
    deg = g.degree.astype(np.int64)
    nslots = len(g.indices)
    empty3 = np.empty((0, 3), dtype=np.int64)
    empty = np.empty(0, dtype=np.int64)

    if catalog.needs_triangles:
        tri = triangles(g)
        u, v, w = tri.T
        ego = np.concatenate([u, v, w])
        a = np.concatenate([v, u, u])
        b = np.concatenate([w, w, v])
        order = np.lexsort((b, a, ego))
        alter_edges = np.column_stack([ego[order], a[order], b[order]])
        entry_slot = np.concatenate(
            [
                g.slot_of(alter_edges[:, 0], alter_edges[:, 1]),
                g.slot_of(alter_edges[:, 0], alter_edges[:, 2]),
            ]
        )
        entry_other = np.concatenate([alter_edges[:, 2], alter_edges[:, 1]])
        slot_alter_degree = np.bincount(entry_slot, minlength=nslots)
        logger.info("census: %d triangles, %d alter edges", len(tri), len(alter_edges))
    else:
        tri = empty3
        alter_edges = empty3
        entry_slot = entry_other = empty
        slot_alter_degree = np.zeros(nslots, dtype=np.int64)

    if OPEN_TETRAD in catalog:
        cliques = _extend_cliques(g, tri)
        logger.info("census: %d 4-cliques", len(cliques))
    else:
        cliques = np.empty((0, 4), dtype=np.int64)

    n_alter_edges = np.bincount(alter_edges[:, 0], minlength=n)
    columns = []
    for kind in catalog.kinds:
        if kind == DYAD:
            columns.append(deg)
        elif kind == OPEN_TRIAD:
            columns.append(deg * (deg - 1) // 2 - n_alter_edges)
        elif kind == CLOSED_TRIAD:
            columns.append(n_alter_edges)
        elif kind == OPEN_TETRAD:
            wedges = np.bincount(
                g.row_of_slot,
                weights=slot_alter_degree * (slot_alter_degree - 1) // 2,
                minlength=n,
            )
            wedges = np.rint(wedges).astype(np.int64)
            alter_triangles = np.bincount(cliques.ravel(), minlength=n)
            columns.append(
                deg * (deg - 1) * (deg - 2) // 6
                - n_alter_edges * (deg - 2)
                + wedges
                - alter_triangles
            )
    unlabeled = np.column_stack(columns).astype(np.int64)
    return MotifCensus(
        g,
        catalog,
        unlabeled,
        alter_edges,
        entry_slot,
        entry_other,
        slot_alter_degree,
        cliques,
    )


@dataclasses.dataclass(frozen=True, eq=False)
class MotifCounts:
    """Labeled and unlabeled motif counts of every ego under one assignment.

    ``labeled[:, j]`` counts instances of ``catalog.columns[j]``; summing the
    labels of a kind gives that kind's column of `unlabeled`.
    """

    catalog: MotifCatalog
    unlabeled: np.ndarray
    labeled: np.ndarray
    degree: np.ndarray

    @property
    def columns(self) -> Tuple[str, ...]:
        return self.catalog.columns

    def __getitem__(self, label: str) -> np.ndarray:
        return self.labeled[:, self.columns.index(label)]

    def kind_counts(self, kind: MotifKind) -> np.ndarray:
        return self.unlabeled[:, self.catalog.kinds.index(kind)]


def _bincount_int(index, weights, length):
    return np.rint(np.bincount(index, weights=weights, minlength=length)).astype(
        np.int64
    )


def label_counts(
    g: Graph,
    catalog: MotifCatalog,
    z: np.ndarray,
    census_: Optional[MotifCensus] = None,
) -> MotifCounts:
    """Count treatment-labeled motifs for every ego.

    Parameters
    ----------
    g : Graph
    catalog : MotifCatalog
    z : array_like
        0/1 assignment of every node.
    census_ : MotifCensus, optional
        Structure pass for (`g`, `catalog`); computed when not given. Pass it
        when labeling many assignments of the same graph.
    """
    z = np.asarray(z).astype(np.int64)
    if z.shape != (g.n_nodes,):
        raise ValueError(
            f"assignment has shape {z.shape} but the graph has {g.n_nodes} nodes"
        )
    if census_ is None:
        census_ = census(g, catalog)
    elif census_.graph is not g or census_.catalog != catalog:
        raise ValueError("census was computed for a different graph or catalog")

    n = g.n_nodes
    deg = g.degree.astype(np.int64)
    s = _bincount_int(g.row_of_slot, z[g.indices], n)
    c = deg - s

    edges = census_.alter_edges
    edge_ego = edges[:, 0]
    edge_t = z[edges[:, 1]] + z[edges[:, 2]]

    blocks = []
    for kind in catalog.kinds:
        if kind == DYAD:
            blocks.append(np.column_stack([c, s]))
        elif kind in (OPEN_TRIAD, CLOSED_TRIAD):
            closed = np.bincount(edge_ego * 3 + edge_t, minlength=3 * n).reshape(n, 3)
            if kind == CLOSED_TRIAD:
                blocks.append(closed)
            else:
                pairs = np.column_stack([comb2(c), s * c, comb2(s)])
                blocks.append(pairs - closed)
        elif kind == OPEN_TETRAD:
            blocks.append(_label_open_tetrads(g, census_, z, s, c, edge_ego, edge_t))
    labeled = np.concatenate(blocks, axis=1).astype(np.int64)
    return MotifCounts(catalog, census_.unlabeled, labeled, g.degree)


def comb2(x: np.ndarray) -> np.ndarray:
    return x * (x - 1) // 2


def _label_open_tetrads(g, census_, z, s, c, edge_ego, edge_t):
    n = g.n_nodes
    triples = np.column_stack(
        [
            c * (c - 1) * (c - 2) // 6,
            s * comb2(c),
            comb2(s) * c,
            s * (s - 1) * (s - 2) // 6,
        ]
    )

    # triples containing an alter edge, counted once per edge
    with_edge = np.zeros((n, 4), dtype=np.int64)
    more_treated = s[edge_ego] - edge_t
    more_control = c[edge_ego] - (2 - edge_t)
    with_edge += _bincount_int(edge_ego * 4 + edge_t + 1, more_treated, 4 * n).reshape(n, 4)
    with_edge += _bincount_int(edge_ego * 4 + edge_t, more_control, 4 * n).reshape(n, 4)

    # triples containing two alter edges (a path centered on one alter)
    h = census_.slot_alter_degree
    h_treated = _bincount_int(census_.entry_slot, z[census_.entry_other], len(h))
    h_control = h - h_treated
    center_z = z[g.indices]
    slot_ego = g.row_of_slot
    with_path = np.zeros((n, 4), dtype=np.int64)
    by_treated_ends = (comb2(h_control), h_treated * h_control, comb2(h_treated))
    for extra, count in enumerate(by_treated_ends):
        with_path += _bincount_int(
            slot_ego * 4 + center_z + extra, count, 4 * n
        ).reshape(n, 4)

    # alter triangles, one per (4-clique, ego) pair
    cliques = census_.cliques
    clique_z = z[cliques].sum(axis=1)
    with_triangle = np.zeros((n, 4), dtype=np.int64)
    for col in range(4):
        ego = cliques[:, col]
        with_triangle += np.bincount(
            ego * 4 + clique_z - z[ego], minlength=4 * n
        ).reshape(n, 4)

    return triples - with_edge + with_path - with_triangle


@dataclasses.dataclass(frozen=True)
class MissingPolicy:
    """What to do with motif kinds an ego has no instances of.

    Parameters
    ----------
    mode : {'auto', 'drop-feature', 'drop-nodes'}
        - ``'drop-nodes'``: keep every kind; drop egos with any undefined kind.
        - ``'drop-feature'``: drop every kind (other than dyads) that is undefined
          for any ego of positive degree.
        - ``'auto'``: drop kinds undefined for more than `threshold` of the egos
          of positive degree, then drop egos still missing a kind.

        Egos of degree 0 have no defined features and are always dropped.
    threshold : float
        Undefined fraction above which ``'auto'`` drops a kind.
    """

    mode: str = "auto"
    threshold: float = 0.05

    def __post_init__(self):
        _policy_modes[self.mode]
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {self.threshold!r}")

    def resolve(self, counts: Union[MotifCensus, MotifCounts], warn: bool = True):
        """Decide the kept kinds and nodes from unlabeled counts (z-independent).

        Returns
        -------
        MissingReport
        """
        catalog = counts.catalog
        undefined = counts.unlabeled == 0
        n = undefined.shape[0]
        active = counts.degree > 0
        n_active = int(active.sum())
        if n_active == 0:
            raise MissingPolicyError("every node has degree 0; no features are defined")
        fraction = undefined[active].mean(axis=0)

        drop_threshold = _policy_modes[self.mode]
        if drop_threshold is None:
            drop_threshold = self.threshold
        kept_kinds = []
        dropped_kinds = []
        for j, kind in enumerate(catalog.kinds):
            if kind != DYAD and fraction[j] > drop_threshold:
                dropped_kinds.append(kind)
            else:
                kept_kinds.append(kind)
        if not kept_kinds:
            raise MissingPolicyError("missing-data policy leaves no features")

        keep_idx = [catalog.kinds.index(k) for k in kept_kinds]
        kept_mask = ~undefined[:, keep_idx].any(axis=1)
        kept_nodes = np.flatnonzero(kept_mask)
        if len(kept_nodes) == 0:
            raise MissingPolicyError("missing-data policy leaves no nodes")
        dropped_nodes = np.flatnonzero(~kept_mask)

        report = MissingReport(
            mode=self.mode,
            threshold=self.threshold,
            kept_kinds=tuple(kept_kinds),
            dropped_kinds=tuple(dropped_kinds),
            kept_nodes=kept_nodes,
            dropped_nodes=dropped_nodes,
            undefined_fraction={k.name: float(f) for k, f in zip(catalog.kinds, fraction)},
            n_nodes=n,
        )
        if warn and (dropped_kinds or len(dropped_nodes)):
            warnings.warn(report.summary(), stacklevel=2)
        logger.info(report.summary())
        return report


# threshold on the undefined fraction; None means use the policy threshold
_policy_modes = ValueTypeDispatch(
    "missing-data policy",
    {"auto": None, "drop-feature": 0.0, "drop-nodes": np.inf},
)


@dataclasses.dataclass(frozen=True, eq=False)
class MissingReport:
    """Outcome of a `MissingPolicy` on one graph."""

    mode: str
    threshold: float
    kept_kinds: Tuple[MotifKind, ...]
    dropped_kinds: Tuple[MotifKind, ...]
    kept_nodes: np.ndarray
    dropped_nodes: np.ndarray
    undefined_fraction: Dict[str, float]
    n_nodes: int

    @property
    def kept_columns(self) -> Tuple[str, ...]:
        return tuple(label for kind in self.kept_kinds for label in kind.labels)

    def summary(self) -> str:
        kinds = ", ".join(k.name for k in self.dropped_kinds) or "none"
        return (
            f"missing-data policy {self.mode!r}: dropped kinds: {kinds}; "
            f"dropped {len(self.dropped_nodes)} of {self.n_nodes} nodes"
        )

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "threshold": self.threshold,
            "kept_kinds": [k.name for k in self.kept_kinds],
            "dropped_kinds": [k.name for k in self.dropped_kinds],
            "dropped_nodes": self.dropped_nodes.tolist(),
            "undefined_fraction": dict(self.undefined_fraction),
        }


@dataclasses.dataclass(frozen=True, eq=False)
class InterferenceVectors:
    """Normalized motif fractions for every ego.

    `fractions` and `defined` cover every node and every catalog column (NaN where
    the kind has no instances); `x` is the policy-restricted matrix over
    `report.kept_nodes` and `report.kept_columns`.
    """

    fractions: np.ndarray
    defined: np.ndarray
    columns: Tuple[str, ...]
    report: MissingReport

    @property
    def kept_nodes(self) -> np.ndarray:
        return self.report.kept_nodes

    @property
    def kept_columns(self) -> Tuple[str, ...]:
        return self.report.kept_columns

    @property
    def x(self) -> np.ndarray:
        cols = [self.columns.index(name) for name in self.kept_columns]
        return self.fractions[np.ix_(self.kept_nodes, cols)]


def interference_vector(
    counts: MotifCounts, policy: Union[MissingPolicy, MissingReport] = MissingPolicy()
) -> InterferenceVectors:
    """Normalize labeled counts by their kind's unlabeled count.

    `policy` may be a `MissingPolicy`, resolved here, or the `MissingReport` of
    an earlier resolution on the same graph.
    """
    report = policy.resolve(counts) if isinstance(policy, MissingPolicy) else policy
    fractions, defined = _fractions(counts)
    return InterferenceVectors(fractions, defined, counts.columns, report)


def _fractions(counts: MotifCounts):
    unlabeled = np.repeat(
        counts.unlabeled, [k.n_alters + 1 for k in counts.catalog.kinds], axis=1
    )
    defined = unlabeled > 0
    fractions = np.where(defined, counts.labeled / np.maximum(unlabeled, 1), np.nan)
    return fractions, defined


@dataclasses.dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Rows ``(Z_i, X_i)`` for the retained egos; column 0 is Z."""

    values: np.ndarray
    columns: Tuple[str, ...]
    nodes: np.ndarray

    def __len__(self):
        return len(self.nodes)

    @property
    def z(self) -> np.ndarray:
        return self.values[:, 0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def subset(self, rows: np.ndarray) -> FeatureMatrix:
        """Restrict to row positions (or a boolean row mask)."""
        return FeatureMatrix(self.values[rows], self.columns, self.nodes[rows])

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame(
            self.values, index=pd.Index(self.nodes, name="node"), columns=self.columns
        )


def feature_matrix(z: np.ndarray, vectors: InterferenceVectors) -> FeatureMatrix:
    """Prepend the ego's own assignment to its interference vector."""
    z = np.asarray(z)
    if z.shape != (vectors.fractions.shape[0],):
        raise ValueError(
            f"assignment has shape {z.shape} but the interference vectors cover "
            f"{vectors.fractions.shape[0]} nodes"
        )
    nodes = vectors.kept_nodes
    values = np.column_stack([z[nodes].astype(np.float64), vectors.x])
    return FeatureMatrix(values, (Z_COLUMN, *vectors.kept_columns), nodes)


def motif_table(
    g: Graph,
    catalog: MotifCatalog,
    z: np.ndarray,
    census_: Optional[MotifCensus] = None,
) -> pd.DataFrame:
    """Per-node dump of labeled counts followed by the extras.

    Columns are ``node, deg`` and the labeled counts under their canonical names
    (``2-0, 2-1, 3o-0, ...``), then ``z``, one ``n_<kind>`` per non-dyad kind and
    the fractions as ``x_<label>``. Undefined fractions are NaN.
    """
    counts = label_counts(g, catalog, z, census_)
    fractions, _ = _fractions(counts)
    data = {"node": np.arange(g.n_nodes), "deg": counts.degree}
    for j, name in enumerate(counts.columns):
        data[name] = counts.labeled[:, j]
    data["z"] = np.asarray(z).astype(np.int64)
    for j, kind in enumerate(catalog.kinds):
        if kind != DYAD:
            data[f"n_{kind.name}"] = counts.unlabeled[:, j]
    for j, name in enumerate(counts.columns):
        data[f"x_{name}"] = fractions[:, j]
    return pd.DataFrame(data)


def kind_slices(columns: Sequence[str]) -> Dict[str, slice]:
    """Map kind name to the slice of its labels within `columns`."""
    out = {}
    for j, name in enumerate(columns):
        kind = name.rpartition("-")[0]
        if not kind:
            continue
        start = out[kind].start if kind in out else j
        out[kind] = slice(start, j + 1)
    return out

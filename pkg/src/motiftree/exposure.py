"""Replicate feature tensors, partitions and Monte Carlo inclusion probabilities."""

from __future__ import annotations

import dataclasses
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import xarray as xr

from .assignment import Design, draw_replicates
from .graph import Graph
from .motifs import (
    MissingPolicy,
    MissingReport,
    MotifCatalog,
    MotifCensus,
    census,
    feature_matrix,
    interference_vector,
    label_counts,
)
from .utils import SeedLike, StrPath, ValueTypeDispatch, resolve_threads

__all__ = [
    "Constraint",
    "Partition",
    "PositivityResult",
    "ReplicateFeatures",
    "default_epsilon",
    "features_from_assignments",
    "inclusion_prob",
    "membership",
    "positivity_check",
    "replicate_features",
]

logger = logging.getLogger(__name__)

QUANTIZATION_SCALE = 65535
"""16-bit fixed point: a value v in [0, 1] is stored as round(v * 65535)."""

_MAGIC = b"CNMX"
_VERSION = 1
_HEADER = struct.Struct("<4sHQIIBI")


def encode(values, scale: int) -> np.ndarray:
    """Quantize values in [0, 1] to integers ``round(v * scale)``.

    ``scale == 0`` means full precision; values are returned as float64.
    """
    values = np.asarray(values, dtype=np.float64)
    if not scale:
        return values
    return np.rint(values * scale).astype(np.uint16)


@dataclasses.dataclass(frozen=True, eq=False)
class ReplicateFeatures:
    """Feature rows of every retained node under every re-randomization.

    Parameters
    ----------
    data : np.ndarray
        ``(N, R, m + 1)`` tensor, node-major. ``uint16`` fixed point when `scale`
        is nonzero, otherwise float64.
    columns : tuple of str
        Feature names; column 0 is ``'Z'``.
    nodes : np.ndarray
        Graph node id of every row.
    scale : int
        Quantization scale, 0 for full precision.
    missing : MissingReport, optional
        Missing-data policy outcome the features were built with.
    """

    data: np.ndarray
    columns: Tuple[str, ...]
    nodes: np.ndarray
    scale: int = QUANTIZATION_SCALE
    missing: Optional[MissingReport] = None

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"replicate tensor must be 3-D, got shape {self.data.shape}")
        if self.data.shape[2] != len(self.columns):
            raise ValueError(
                f"replicate tensor has {self.data.shape[2]} features "
                f"but {len(self.columns)} column names"
            )
        if self.data.shape[0] != len(self.nodes):
            raise ValueError(
                f"replicate tensor has {self.data.shape[0]} rows "
                f"but {len(self.nodes)} node ids"
            )

    @property
    def n_nodes(self) -> int:
        return self.data.shape[0]

    @property
    def R(self) -> int:
        return self.data.shape[1]

    @property
    def n_features(self) -> int:
        return self.data.shape[2]

    @property
    def quantized(self) -> bool:
        return bool(self.scale)

    def encode(self, values) -> np.ndarray:
        """Encode feature values or thresholds the way the tensor stores them."""
        return encode(values, self.scale)

    def decode(self, values=None) -> np.ndarray:
        """Stored values (the whole tensor by default) as float64 in [0, 1]."""
        values = self.data if values is None else np.asarray(values)
        if not self.scale:
            return values.astype(np.float64)
        return values.astype(np.float64) / self.scale

    def index_of(self, nodes: Sequence[int]) -> np.ndarray:
        """Row positions of graph node ids; raises if a node is not retained."""
        nodes = np.asarray(nodes)
        pos = np.searchsorted(self.nodes, nodes)
        pos = np.minimum(pos, len(self.nodes) - 1)
        missing = self.nodes[pos] != nodes
        if missing.any():
            raise IndexError(f"node {nodes[missing][0]} is not in the replicate tensor")
        return pos

    def subset(self, rows) -> ReplicateFeatures:
        return ReplicateFeatures(
            self.data[rows], self.columns, self.nodes[rows], self.scale, self.missing
        )

    def to_xarray(self) -> xr.DataArray:
        """Labeled ``(node, replicate, feature)`` view of the stored values."""
        return xr.DataArray(
            self.data,
            dims=("node", "replicate", "feature"),
            coords={
                "node": self.nodes,
                "replicate": np.arange(self.R),
                "feature": list(self.columns),
            },
            name="features",
            attrs={"scale": self.scale},
        )

    def save(self, path: StrPath):
        """Write the tensor as a CNMX cache file."""
        names = [name.encode("utf-8") for name in self.columns]
        with open(path, "wb") as fid:
            fid.write(
                _HEADER.pack(
                    _MAGIC,
                    _VERSION,
                    self.n_nodes,
                    self.R,
                    self.n_features,
                    16 if self.scale else 64,
                    self.scale,
                )
            )
            for name in names:
                fid.write(struct.pack("<H", len(name)))
                fid.write(name)
            fid.write(self.nodes.astype("<i8").tobytes())
            fid.write(np.ascontiguousarray(self.data, dtype=self._file_dtype).tobytes())

    @property
    def _file_dtype(self):
        return "<u2" if self.scale else "<f8"

    @classmethod
    def load(cls, path: StrPath) -> ReplicateFeatures:
        """Read a CNMX cache file written by `save`."""
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER.size:
            raise ValueError(f"{path}: truncated CNMX header")
        magic, version, n, R, ncols, bits, scale = _HEADER.unpack_from(raw)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a CNMX file (magic {magic!r})")
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported CNMX version {version}")
        dtype = _bits_dispatch[bits]
        offset = _HEADER.size
        columns = []
        for _ in range(ncols):
            (length,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            columns.append(raw[offset : offset + length].decode("utf-8"))
            offset += length
        nodes = np.frombuffer(raw, dtype="<i8", count=n, offset=offset).astype(np.int64)
        offset += 8 * n
        count = n * R * ncols
        expected = offset + count * np.dtype(dtype).itemsize
        if len(raw) != expected:
            raise ValueError(f"{path}: expected {expected} bytes, got {len(raw)}")
        data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        data = data.reshape(n, R, ncols).astype(dtype.lstrip("<"))
        return cls(data, tuple(columns), nodes, int(scale) if bits == 16 else 0)


_bits_dispatch = ValueTypeDispatch("CNMX quantization", {16: "<u2", 64: "<f8"})


def features_from_assignments(
    g: Graph,
    catalog: MotifCatalog,
    assignments: np.ndarray,
    policy: Union[MissingPolicy, MissingReport] = MissingPolicy(),
    census_: Optional[MotifCensus] = None,
    quantize: bool = True,
    threads: Optional[int] = None,
) -> ReplicateFeatures:
    """Build the replicate tensor from explicit ``(R, N)`` assignments.

    The missing-data policy is resolved once from the structure-only census, so
    every replicate shares the same retained nodes and features.
    """
    assignments = np.atleast_2d(np.asarray(assignments))
    R = assignments.shape[0]
    if census_ is None:
        census_ = census(g, catalog)
    report = policy.resolve(census_) if isinstance(policy, MissingPolicy) else policy
    scale = QUANTIZATION_SCALE if quantize else 0
    columns = ("Z", *report.kept_columns)
    data = np.empty(
        (len(report.kept_nodes), R, len(columns)),
        dtype=np.uint16 if scale else np.float64,
    )

    def fill(r):
        counts = label_counts(g, catalog, assignments[r], census_)
        rows = feature_matrix(assignments[r], interference_vector(counts, report))
        data[:, r, :] = encode(rows.values, scale)
        if (r + 1) % 10 == 0:
            logger.debug("replicate %d of %d labeled", r + 1, R)

    threads = resolve_threads(threads)
    if threads == 1:
        for r in range(R):
            fill(r)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, range(R)))
    logger.info(
        "built replicate tensor: %d nodes x %d replicates x %d features",
        *data.shape,
    )
    return ReplicateFeatures(data, columns, report.kept_nodes.copy(), scale, report)


def replicate_features(
    g: Graph,
    design: Design,
    catalog: MotifCatalog,
    policy: Union[MissingPolicy, MissingReport] = MissingPolicy(),
    R: int = 100,
    seed: SeedLike = 0,
    quantize: bool = True,
    threads: Optional[int] = None,
    census_: Optional[MotifCensus] = None,
) -> ReplicateFeatures:
    """Re-randomize the design `R` times and build the feature tensor.

    Replicate `r` uses assignment substream `r` of `seed`; the result does not
    depend on `threads`.
    """
    assignments = draw_replicates(design, g.n_nodes, R, seed, threads=threads)
    return features_from_assignments(
        g, catalog, assignments, policy, census_, quantize, threads
    )


class Constraint(NamedTuple):
    """One half-space ``column[axis] <= threshold`` (side ``'le'``) or ``> threshold``."""

    axis: int
    threshold: float
    side: str

    def describe(self, columns: Optional[Sequence[str]] = None) -> str:
        name = columns[self.axis] if columns is not None else f"x[{self.axis}]"
        op = "<=" if self.side == "le" else ">"
        return f"{name} {op} {self.threshold:g}"


_SIDES = ("le", "gt")


@dataclasses.dataclass(frozen=True)
class Partition:
    """Axis-aligned box of the feature cube, as a conjunction of constraints.

    Constraints are canonicalized: at most one upper (``'le'``) and one lower
    (``'gt'``) bound per axis, keeping the tightest, sorted by (axis, side).
    The empty partition is the whole cube.
    """

    constraints: Tuple[Constraint, ...] = ()

    def __post_init__(self):
        upper = {}
        lower = {}
        for c in self.constraints:
            c = Constraint(int(c.axis), float(c.threshold), c.side)
            if c.side not in _SIDES:
                raise TypeError(f"Invalid side {c.side!r}; must be one of {list(_SIDES)!r}")
            if c.axis < 0:
                raise ValueError(f"axis must be non-negative, got {c.axis}")
            if c.side == "le":
                if c.axis not in upper or c.threshold < upper[c.axis].threshold:
                    upper[c.axis] = c
            elif c.axis not in lower or c.threshold > lower[c.axis].threshold:
                lower[c.axis] = c
        canon = sorted([*upper.values(), *lower.values()], key=lambda c: (c.axis, c.side))
        object.__setattr__(self, "constraints", tuple(canon))

    def refine(self, axis: int, threshold: float, side: str) -> Partition:
        return Partition((*self.constraints, Constraint(axis, threshold, side)))

    def split(self, axis: int, threshold: float) -> Tuple[Partition, Partition]:
        """The ``<=`` and ``>`` children of a split at `threshold`."""
        return self.refine(axis, threshold, "le"), self.refine(axis, threshold, "gt")

    def bounds(self, axis: int) -> Tuple[Optional[float], Optional[float]]:
        """(lower, upper) bounds on `axis`; None where unbounded."""
        lo = hi = None
        for c in self.constraints:
            if c.axis == axis:
                if c.side == "le":
                    hi = c.threshold
                else:
                    lo = c.threshold
        return lo, hi

    @property
    def is_empty(self) -> bool:
        """True when some axis has lower bound >= upper bound."""
        axes = {c.axis for c in self.constraints}
        for axis in axes:
            lo, hi = self.bounds(axis)
            if lo is not None and hi is not None and lo >= hi:
                return True
        return False

    def describe(self, columns: Optional[Sequence[str]] = None) -> str:
        if not self.constraints:
            return "all"
        return " & ".join(c.describe(columns) for c in self.constraints)

    def to_list(self) -> list:
        return [[c.axis, c.threshold, c.side] for c in self.constraints]

    @classmethod
    def from_list(cls, items) -> Partition:
        return cls(tuple(Constraint(int(a), float(t), str(s)) for a, t, s in items))


def membership(rows, part: Partition, scale: int = 0) -> np.ndarray:
    """Indicator of rows lying in `part`.

    Parameters
    ----------
    rows : np.ndarray
        ``(..., m + 1)`` feature rows, e.g. a feature matrix or a replicate tensor.
    part : Partition
    scale : int
        Quantization of `rows`; thresholds are encoded with the same scale.

    Returns
    -------
    np.ndarray
        Boolean array of shape ``rows.shape[:-1]``.
    """
    rows = np.asarray(rows)
    inside = np.ones(rows.shape[:-1], dtype=bool)
    for c in part.constraints:
        if c.axis >= rows.shape[-1]:
            raise IndexError(
                f"constraint axis {c.axis} out of range for {rows.shape[-1]} columns"
            )
        theta = encode(c.threshold, scale)
        values = rows[..., c.axis]
        if c.side == "le":
            inside &= values <= theta
        else:
            inside &= values > theta
    return inside


def inclusion_counts(repl: ReplicateFeatures, part: Partition) -> np.ndarray:
    """Number of replicates in which each node's row lies in `part`."""
    return membership(repl.data, part, repl.scale).sum(axis=1)


def inclusion_prob(repl: ReplicateFeatures, part: Partition) -> np.ndarray:
    """Smoothed Monte Carlo inclusion probabilities ``(count + 1) / (R + 1)``."""
    return (inclusion_counts(repl, part) + 1.0) / (repl.R + 1.0)


def default_epsilon(R: int) -> float:
    """Positivity threshold flagging exactly the nodes no replicate reached."""
    return 1.0 / (R + 1) + 1e-12


class PositivityResult(NamedTuple):
    passed: bool
    violating_fraction: float
    n_violating: int
    n_universe: int


def positivity_check(
    pi_hat: np.ndarray, eps: float, delta: float, universe=None
) -> PositivityResult:
    """Check that at most a `delta` fraction of the universe has ``pi_hat <= eps``.

    Parameters
    ----------
    pi_hat : np.ndarray
        Inclusion probabilities of every retained node.
    eps, delta : float
        Positivity parameters, both in [0, 1).
    universe : array_like, optional
        Boolean mask or row positions of the nodes to check; all rows by default.
    """
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must be in [0, 1), got {eps!r}")
    if not 0.0 <= delta < 1.0:
        raise ValueError(f"delta must be in [0, 1), got {delta!r}")
    pi_hat = np.asarray(pi_hat)
    if universe is not None:
        pi_hat = pi_hat[universe]
    n = len(pi_hat)
    violating = int(np.count_nonzero(pi_hat <= eps))
    fraction = violating / n if n else 0.0
    return PositivityResult(violating <= delta * n, fraction, violating, n)

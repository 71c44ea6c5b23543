"""Constrained, honest, inverse-probability-weighted partitioning of the exposure space.

An `ExposureTree` splits the feature cube ``[0, 1]^(m+1)`` (column 0 is the ego's
own assignment) into axis-aligned boxes. Every box is an exposure condition with a
Hajek estimate of its average potential outcome. Splits are chosen on a training
half by weighted squared error, subject to a minimum leaf size and to positivity
of both children over every retained observation; estimates come from the other
half.

In ``'direct-effects'`` mode only the motif axes are split and each node reports
the treated-minus-control contrast within its box.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .estimators import DegenerateDesignError, Estimate, gate, hajek, weighted_ls
from .exposure import (
    Partition,
    PositivityResult,
    ReplicateFeatures,
    default_epsilon,
    encode,
    inclusion_prob,
    membership,
    positivity_check,
)
from .formatting import format_table, format_value
from .motifs import FeatureMatrix, kind_slices
from .utils import ValueTypeDispatch, coerce_numeric, resolve_threads, substream

__all__ = [
    "AnalysisResult",
    "ExposureTree",
    "HyperParams",
    "LeafAudit",
    "Split",
    "TreeNode",
    "analyze",
    "audit_positivity",
    "cross_validate",
    "direct_effect_tree",
    "fit",
    "honest_estimate",
    "import_tree",
    "split_halves",
    "split_search",
]

logger = logging.getLogger(__name__)

TREE_FORMAT = "motiftree-tree"
TREE_FORMAT_VERSION = 1

POTENTIAL_OUTCOMES = "potential-outcomes"
DIRECT_EFFECTS = "direct-effects"

# value is whether the mode estimates treated-minus-control contrasts
_mode_dispatch = ValueTypeDispatch("mode", {POTENTIAL_OUTCOMES: False, DIRECT_EFFECTS: True})

_HALVES_STREAM = 0x48414C46
_CV_STREAM = 0x43562D46


@dataclasses.dataclass(frozen=True)
class HyperParams:
    """Tree-growing hyperparameters.

    Parameters
    ----------
    gamma : float
        Minimum reduction of training WSSE a split must achieve.
    kappa : int, optional
        Minimum number of training members in each child. Default
        ``max(100, ceil(0.005 * N))``.
    delta : float
        Largest fraction of observations allowed to violate positivity.
    epsilon : float, optional
        Inclusion probability at or below which an observation violates
        positivity. Default ``1 / (R + 1) + 1e-12``, flagging exactly the nodes no
        replicate reaches.
    eta : int
        Number of candidate thresholds sampled per axis; 0 uses every member value.
    phi : float, optional
        When set, each child's summed inverse-probability weight must lie within
        ``(1 +/- phi)`` times the training-half size.
    max_depth : int
        Depth limit.
    replicates : int
        Monte Carlo re-randomizations used to build the replicate tensor.
    seed : int
        Seed for threshold subsampling and the honest split.
    """

    gamma: float = 0.0
    kappa: Optional[int] = None
    delta: float = 0.01
    epsilon: Optional[float] = None
    eta: int = 256
    phi: Optional[float] = None
    max_depth: int = 12
    replicates: int = 100
    seed: int = 0

    def __post_init__(self):
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if value is not None:
                object.__setattr__(
                    self, field.name, coerce_numeric(value, _FIELD_TYPES[field.name])
                )
        if self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma!r}")
        if self.kappa is not None and self.kappa < 1:
            raise ValueError(f"kappa must be at least 1, got {self.kappa!r}")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"delta must be in [0, 1), got {self.delta!r}")
        if self.epsilon is not None and not 0.0 <= self.epsilon < 1.0:
            raise ValueError(f"epsilon must be in [0, 1), got {self.epsilon!r}")
        if self.eta < 0:
            raise ValueError(f"eta must be non-negative, got {self.eta!r}")
        if self.phi is not None and self.phi < 0:
            raise ValueError(f"phi must be non-negative, got {self.phi!r}")
        if self.max_depth < 0:
            raise ValueError(f"max_depth must be non-negative, got {self.max_depth!r}")
        if self.replicates < 1:
            raise ValueError(f"replicates must be at least 1, got {self.replicates!r}")

    def resolve(self, n_obs: int, R: int) -> HyperParams:
        """Fill in the data-dependent defaults of `kappa` and `epsilon`."""
        kappa = self.kappa
        if kappa is None:
            kappa = max(100, math.ceil(0.005 * n_obs))
        epsilon = self.epsilon
        if epsilon is None:
            epsilon = default_epsilon(R)
        return dataclasses.replace(self, kappa=kappa, epsilon=epsilon)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> HyperParams:
        unknown = set(mapping) - set(_FIELD_TYPES)
        if unknown:
            raise ValueError(f"unknown hyperparameter {sorted(unknown)[0]!r}")
        return cls(**mapping)


_FIELD_TYPES = {
    "gamma": float,
    "kappa": int,
    "delta": float,
    "epsilon": float,
    "eta": int,
    "phi": float,
    "max_depth": int,
    "replicates": int,
    "seed": int,
}


class Split(NamedTuple):
    objective: float
    axis: int
    threshold: float


@dataclasses.dataclass(eq=False)
class TreeNode:
    """One box of an exposure tree.

    `value_train` and `wsse_train` come from the training half; `estimate` and
    `n_est` from the estimation half (filled in by `honest_estimate`). In
    direct-effects mode values and estimates are treated-minus-control contrasts.
    """

    partition: Partition
    depth: int = 0
    n_train: int = 0
    wsse_train: float = 0.0
    value_train: Optional[float] = None
    split: Optional[Split] = None
    left: Optional[TreeNode] = None
    right: Optional[TreeNode] = None
    id: int = -1
    parent: Optional[int] = None
    name: Optional[str] = None
    n_est: int = 0
    estimate: Optional[Estimate] = None
    degenerate: bool = False

    @property
    def is_leaf(self) -> bool:
        return self.split is None

    def children(self) -> Tuple[TreeNode, ...]:
        return () if self.is_leaf else (self.left, self.right)


@dataclasses.dataclass(eq=False)
class ExposureTree:
    """A fitted exposure tree.

    Parameters
    ----------
    root : TreeNode
    columns : tuple of str
        Feature names; column 0 is ``'Z'``.
    params : HyperParams
        Resolved hyperparameters the tree was grown with.
    mode : str
        ``'potential-outcomes'`` or ``'direct-effects'``.
    scale : int
        Quantization scale of the feature values thresholds were drawn from.
    """

    root: TreeNode
    columns: Tuple[str, ...]
    params: HyperParams
    mode: str = POTENTIAL_OUTCOMES
    scale: int = 0

    def __post_init__(self):
        _mode_dispatch[self.mode]
        self._number()

    def _number(self):
        leaf_count = 0
        for i, node in enumerate(self.nodes()):
            node.id = i
            for child in node.children():
                child.parent = i
            if node.is_leaf:
                leaf_count += 1
                node.name = f"d{leaf_count}"
            else:
                node.name = None

    def nodes(self) -> Iterator[TreeNode]:
        """Nodes in preorder (node, then its ``<=`` subtree, then its ``>`` subtree)."""
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children()))

    @property
    def leaves(self) -> List[TreeNode]:
        return [node for node in self.nodes() if node.is_leaf]

    @property
    def direct(self) -> bool:
        return _mode_dispatch[self.mode]

    def node(self, id_or_name) -> TreeNode:
        for node in self.nodes():
            if id_or_name in (node.id, node.name):
                return node
        raise KeyError(id_or_name)

    def route(self, row) -> TreeNode:
        """Leaf whose box contains the feature row (values in [0, 1])."""
        row = encode(np.asarray(row, dtype=np.float64), self.scale)
        if row.shape != (len(self.columns),):
            raise ValueError(
                f"feature row has shape {row.shape}; expected ({len(self.columns)},)"
            )
        node = self.root
        while not node.is_leaf:
            if node.left is None or node.right is None:
                raise RuntimeError(f"internal node {node.id} is missing a child")
            theta = encode(node.split.threshold, self.scale)
            node = node.left if row[node.split.axis] <= theta else node.right
        return node

    def assign_condition(self, row) -> str:
        """Name of the exposure condition (leaf) of a feature row."""
        return self.route(row).name

    def route_many(self, rows) -> np.ndarray:
        """Leaf names of every row of an ``(n, m + 1)`` array."""
        rows = encode(np.asarray(rows, dtype=np.float64), self.scale)
        out = np.empty(len(rows), dtype=object)

        def descend(node, idx):
            if node.is_leaf:
                out[idx] = node.name
                return
            if node.left is None or node.right is None:
                raise RuntimeError(f"internal node {node.id} is missing a child")
            theta = encode(node.split.threshold, self.scale)
            le = rows[idx, node.split.axis] <= theta
            descend(node.left, idx[le])
            descend(node.right, idx[~le])

        descend(self.root, np.arange(len(rows)))
        return out

    def corner(self, treated: bool) -> np.ndarray:
        """The all-treated (or all-control) corner of the feature cube.

        Z is 1 (0); within every motif kind the fully treated (fully control) label
        is 1 and the other labels 0.
        """
        row = np.zeros(len(self.columns))
        row[0] = 1.0 if treated else 0.0
        for sl in kind_slices(self.columns).values():
            row[sl.stop - 1 if treated else sl.start] = 1.0
        return row

    def corner_leaf(self, treated: bool) -> TreeNode:
        return self.route(self.corner(treated))

    def to_dict(self) -> Dict[str, Any]:
        nodes = []
        for node in self.nodes():
            est = node.estimate
            nodes.append(
                {
                    "id": node.id,
                    "parent": node.parent,
                    "name": node.name,
                    "depth": node.depth,
                    "split": None
                    if node.is_leaf
                    else {
                        "axis": node.split.axis,
                        "axis_name": self.columns[node.split.axis],
                        "theta": node.split.threshold,
                        "objective": node.split.objective,
                    },
                    "children": [c.id for c in node.children()],
                    "partition": node.partition.to_list(),
                    "n_train": node.n_train,
                    "wsse_train": node.wsse_train,
                    "value_train": node.value_train,
                    "n_est": node.n_est,
                    "estimate": None if est is None else est.value,
                    "std_error": None if est is None else est.std_error,
                    "effective_weight": None if est is None else est.effective_weight,
                    "degenerate": node.degenerate,
                }
            )
        return {
            "format": TREE_FORMAT,
            "version": TREE_FORMAT_VERSION,
            "mode": self.mode,
            "columns": list(self.columns),
            "scale": self.scale,
            "hyperparams": self.params.to_dict(),
            "n_leaves": len(self.leaves),
            "nodes": nodes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def node_label(self, node: TreeNode) -> str:
        est = node.estimate
        if est is None:
            value = "no estimate"
        else:
            value = f"{format_value(est.value)} ± {format_value(est.std_error)}"
        head = node.name if node.is_leaf else f"#{node.id}"
        return f"{head}: {value} (n={node.n_est})"

    def to_dot(self) -> str:
        """Graphviz rendering, one box per node labeled ``name: value +/- SE (n)``."""
        lines = ["digraph exposure_tree {", "  node [shape=box];"]
        for node in self.nodes():
            label = self.node_label(node)
            if not node.is_leaf:
                axis = self.columns[node.split.axis]
                label += f"\\nsplit {axis} <= {format_value(node.split.threshold)}"
            lines.append(f'  n{node.id} [label="{label}"];')
        for node in self.nodes():
            if node.is_leaf:
                continue
            lines.append(f'  n{node.id} -> n{node.left.id} [label="<="];')
            lines.append(f'  n{node.id} -> n{node.right.id} [label=">"];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def leaf_table(self) -> str:
        """Plain-text table of leaves: box, member counts and honest estimates."""
        rows = []
        for leaf in self.leaves:
            est = leaf.estimate
            rows.append(
                [
                    leaf.name,
                    leaf.partition.describe(self.columns),
                    leaf.n_train,
                    leaf.n_est,
                    None if est is None else est.value,
                    None if est is None else est.std_error,
                ]
            )
        value = "tau" if self.direct else "estimate"
        return format_table(
            ["leaf", "condition", "n_train", "n_est", value, "std_error"], rows
        )


def import_tree(doc) -> ExposureTree:
    """Rebuild an `ExposureTree` from `ExposureTree.to_dict` output (or its JSON)."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    if doc.get("format") != TREE_FORMAT:
        raise ValueError(f"not an exposure tree document: format {doc.get('format')!r}")
    if doc.get("version") != TREE_FORMAT_VERSION:
        raise ValueError(f"unsupported tree document version {doc.get('version')!r}")
    by_id = {}
    for item in doc["nodes"]:
        split = item["split"]
        estimate = None
        if item["estimate"] is not None:
            estimate = Estimate(
                item["estimate"],
                item["std_error"],
                item["n_est"],
                item["effective_weight"],
            )
        by_id[item["id"]] = (
            TreeNode(
                partition=Partition.from_list(item["partition"]),
                depth=item["depth"],
                n_train=item["n_train"],
                wsse_train=item["wsse_train"],
                value_train=item["value_train"],
                split=None
                if split is None
                else Split(split["objective"], split["axis"], split["theta"]),
                n_est=item["n_est"],
                estimate=estimate,
                degenerate=item["degenerate"],
            ),
            item["children"],
        )
    for node, children in by_id.values():
        if node.split is not None:
            if len(children) != 2:
                raise RuntimeError("internal node without two children")
            node.left, node.right = (by_id[c][0] for c in children)
    return ExposureTree(
        by_id[0][0],
        tuple(doc["columns"]),
        HyperParams(**doc["hyperparams"]),
        doc["mode"],
        doc["scale"],
    )


#
# Fitting
#
@dataclasses.dataclass
class _Arm:
    """Replicate membership and training members of one treatment arm of a node.

    Potential-outcomes mode has a single arm; direct-effects mode has one per
    treatment value, each weighted by its own inclusion probabilities.
    """

    replicates: np.ndarray  # (N, R) bool
    members: np.ndarray  # universe positions of training members
    y: np.ndarray

    @property
    def counts(self) -> np.ndarray:
        return self.replicates.sum(axis=1)


class _Context(NamedTuple):
    repl: ReplicateFeatures
    observed: np.ndarray  # encoded observed rows by universe position; training rows only
    y: np.ndarray  # outcomes by universe position; training rows only
    params: HyperParams
    direct: bool
    n_train: int
    threads: int


def _weighted_moments(y, w):
    s0 = w.sum()
    if s0 <= 0:
        return 0.0, 0.0
    mean = float(np.dot(w, y) / s0)
    return mean, float(np.dot(w, (y - mean) ** 2))


def _node_stats(ctx: _Context, arms: Sequence[_Arm]):
    """Training value and WSSE of a node."""
    R = ctx.repl.R
    means = []
    total = 0.0
    for arm in arms:
        w = (R + 1.0) / (arm.counts[arm.members] + 1.0)
        mean, wss = _weighted_moments(arm.y, w)
        means.append(mean)
        total += wss
    if ctx.direct:
        if any(len(arm.members) == 0 for arm in arms):
            return None, total
        return means[1] - means[0], total
    return means[0], total


def _count_threshold(eps: float, R: int) -> int:
    """Largest replicate count whose smoothed probability is <= eps."""
    return math.floor(eps * (R + 1) - 1 + 1e-9)


def _candidate_thresholds(ctx: _Context, arms, axis: int, path_code: int) -> np.ndarray:
    members = np.concatenate([arm.members for arm in arms])
    values = np.unique(ctx.observed[members, axis])[:-1]
    eta = ctx.params.eta
    if eta and len(values) > eta:
        rng = substream(ctx.params.seed, path_code, axis)
        values = np.sort(rng.choice(values, size=eta, replace=False))
    return values


def _axis_search(ctx: _Context, arms: Sequence[_Arm], axis: int, node_wsse, path_code):
    """Best admissible split on one axis, or None."""
    params = ctx.params
    thetas = _candidate_thresholds(ctx, arms, axis, path_code)
    J = len(thetas)
    if J == 0:
        return None
    R = ctx.repl.R
    n_universe = ctx.repl.n_nodes
    c_eps = _count_threshold(params.epsilon, R)
    column = ctx.repl.data[:, :, axis]
    bins = np.searchsorted(thetas, column, side="left")

    n_left = np.zeros(J)
    n_right = np.zeros(J)
    wsse_left = np.zeros(J)
    wsse_right = np.zeros(J)
    ok = np.ones(J, dtype=bool)
    steps = np.arange(J)
    for arm in arms:
        # replicate bins of arm members; J + 1 marks replicates outside the node
        arm_bins = np.where(arm.replicates, bins, J + 1)
        arm_bins.sort(axis=1)
        counts = arm.counts

        if c_eps >= 0:
            kth = arm_bins[:, c_eps]
            reached = np.cumsum(np.bincount(np.minimum(kth, J), minlength=J + 1))[:J]
            violate_left = n_universe - reached
            need = counts - c_eps
            lth = np.where(
                need > 0,
                arm_bins[np.arange(n_universe), np.clip(need - 1, 0, R - 1)],
                0,
            )
            hit = np.bincount(np.minimum(lth, J), minlength=J + 1)
            violate_right = np.cumsum(hit)[:J]
            ok &= violate_left <= params.delta * n_universe
            ok &= violate_right <= params.delta * n_universe

        members = arm.members
        n_m = len(members)
        if n_m == 0:
            ok[:] = False
            continue
        member_bins = arm_bins[members]
        flat = (np.arange(n_m)[:, None] * (J + 2) + member_bins).ravel()
        hist = np.bincount(flat, minlength=n_m * (J + 2)).reshape(n_m, J + 2)
        left_counts = np.cumsum(hist, axis=1)[:, :J]
        right_counts = counts[members][:, None] - left_counts
        w_left = (R + 1.0) / (left_counts + 1.0)
        w_right = (R + 1.0) / (right_counts + 1.0)

        obs_bin = np.searchsorted(thetas, ctx.observed[members, axis], side="left")
        in_left = steps[None, :] >= obs_bin[:, None]
        y = arm.y - arm.y.mean()
        arm_left = in_left.sum(axis=0)
        arm_right = n_m - arm_left
        if ctx.direct:
            ok &= (arm_left >= 1) & (arm_right >= 1)
        n_left += arm_left
        n_right += arm_right
        for side_mask, w, wsse_out in (
            (in_left, w_left, wsse_left),
            (~in_left, w_right, wsse_right),
        ):
            ws = np.where(side_mask, w, 0.0)
            s0 = ws.sum(axis=0)
            s1 = ws.T @ y
            s2 = ws.T @ (y * y)
            with np.errstate(invalid="ignore", divide="ignore"):
                wsse_out += np.where(s0 > 0, np.maximum(s2 - s1 * s1 / s0, 0.0), 0.0)
            if params.phi is not None and not ctx.direct:
                band = params.phi * ctx.n_train
                ok &= np.abs(s0 - ctx.n_train) <= band

    n_node = n_left + n_right
    objective = (n_left / n_node) * wsse_left + (n_right / n_node) * wsse_right
    ok &= (n_left >= params.kappa) & (n_right >= params.kappa)
    ok &= objective < node_wsse - params.gamma
    if not ok.any():
        return None
    masked = np.where(ok, objective, np.inf)
    j = int(np.argmin(masked))
    return Split(float(objective[j]), axis, float(ctx.repl.decode(thetas[j])))


def split_search(ctx: _Context, arms: Sequence[_Arm], node_wsse: float, path_code: int):
    """Best admissible split of a node over every eligible axis, or None.

    Ties are broken by the lexicographic minimum of (objective, axis, threshold).
    """
    first_axis = 1 if ctx.direct else 0
    axes = range(first_axis, ctx.repl.n_features)

    def search(axis):
        return _axis_search(ctx, arms, axis, node_wsse, path_code)

    if ctx.threads > 1:
        with ThreadPoolExecutor(max_workers=ctx.threads) as pool:
            results = list(pool.map(search, axes))
    else:
        results = [search(axis) for axis in axes]
    candidates = [r for r in results if r is not None]
    if not candidates:
        return None
    return min(candidates)


def _make_arms(ctx: _Context, in_part: np.ndarray, members: np.ndarray) -> List[_Arm]:
    if not ctx.direct:
        return [_Arm(in_part, members, ctx.y[members])]
    treated_rep = ctx.repl.data[:, :, 0] > 0
    treated_obs = ctx.observed[members, 0] > 0
    arms = []
    for reps, obs in (
        (in_part & ~treated_rep, ~treated_obs),
        (in_part & treated_rep, treated_obs),
    ):
        arm_members = members[obs]
        arms.append(_Arm(reps, arm_members, ctx.y[arm_members]))
    return arms


def _grow(ctx: _Context, part, in_part, members, depth, path_code) -> TreeNode:
    arms = _make_arms(ctx, in_part, members)
    value, node_wsse = _node_stats(ctx, arms)
    node = TreeNode(part, depth, len(members), node_wsse, value)
    params = ctx.params
    if depth >= params.max_depth or len(members) < 2 * params.kappa:
        return node
    best = split_search(ctx, arms, node_wsse, path_code)
    if best is None:
        return node
    logger.info(
        "depth %d: split %s <= %.4f (objective %.6g, node WSSE %.6g)",
        depth,
        ctx.repl.columns[best.axis],
        best.threshold,
        best.objective,
        node_wsse,
    )
    node.split = best
    theta = encode(best.threshold, ctx.repl.scale)
    column = ctx.repl.data[:, :, best.axis]
    goes_left = ctx.observed[members, best.axis] <= theta
    left_part, right_part = part.split(best.axis, best.threshold)
    node.left = _grow(
        ctx,
        left_part,
        in_part & (column <= theta),
        members[goes_left],
        depth + 1,
        2 * path_code,
    )
    node.right = _grow(
        ctx,
        right_part,
        in_part & (column > theta),
        members[~goes_left],
        depth + 1,
        2 * path_code + 1,
    )
    return node


def _context(F_train: FeatureMatrix, y_train, repl, params, mode, threads):
    direct = _mode_dispatch[mode]
    if tuple(F_train.columns) != tuple(repl.columns):
        raise ValueError(
            f"feature columns {F_train.columns} do not match "
            f"replicate columns {repl.columns}"
        )
    y_train = np.asarray(y_train, dtype=np.float64)
    if y_train.shape != (len(F_train),):
        raise ValueError(
            f"outcomes have shape {y_train.shape}; expected ({len(F_train)},)"
        )
    if not np.isfinite(y_train).all():
        raise ValueError("outcomes must be finite")
    if len(F_train) == 0:
        raise ValueError("cannot fit a tree on zero observations")
    positions = repl.index_of(F_train.nodes)
    observed = np.zeros((repl.n_nodes, repl.n_features), dtype=repl.data.dtype)
    observed[positions] = repl.encode(F_train.values)
    y = np.zeros(repl.n_nodes)
    y[positions] = y_train
    params = params.resolve(repl.n_nodes, repl.R)
    return _Context(
        repl, observed, y, params, direct, len(F_train), resolve_threads(threads)
    ), positions


def fit(
    F_train: FeatureMatrix,
    y_train,
    repl: ReplicateFeatures,
    params: HyperParams = HyperParams(),
    mode: str = POTENTIAL_OUTCOMES,
    threads: Optional[int] = None,
) -> ExposureTree:
    """Grow an exposure tree on the training half (no honest estimates yet).

    Parameters
    ----------
    F_train : FeatureMatrix
        Observed feature rows of the training observations.
    y_train : array_like
        Their outcomes.
    repl : ReplicateFeatures
        Replicate tensor covering every retained observation; positivity is
        checked over all of its rows.
    params : HyperParams
    mode : {'potential-outcomes', 'direct-effects'}
    threads : int, optional
        Worker threads for the per-axis search; never changes the result.
    """
    ctx, positions = _context(F_train, y_train, repl, params, mode, threads)
    in_part = np.ones((repl.n_nodes, repl.R), dtype=bool)
    root = _grow(ctx, Partition(), in_part, np.sort(positions), 0, 1)
    tree = ExposureTree(root, repl.columns, ctx.params, mode, repl.scale)
    logger.info("fitted tree with %d leaves", len(tree.leaves))
    return tree


def training_wsse(
    F_train: FeatureMatrix,
    y_train,
    repl: ReplicateFeatures,
    mode: str = POTENTIAL_OUTCOMES,
) -> float:
    """WSSE of the unsplit root on the training half."""
    ctx, positions = _context(F_train, y_train, repl, HyperParams(), mode, 1)
    in_part = np.ones((repl.n_nodes, repl.R), dtype=bool)
    return _node_stats(ctx, _make_arms(ctx, in_part, np.sort(positions)))[1]


def _estimate_node(tree, node, rows, y, z, positions, repl):
    members = membership(rows, node.partition, repl.scale)
    node.n_est = int(members.sum())
    if not tree.direct:
        if node.n_est == 0:
            return None
        pi = inclusion_prob(repl, node.partition)[positions]
        return hajek(y, members, pi)
    treated_part = node.partition.refine(0, 0.0, "gt")
    control_part = node.partition.refine(0, 0.0, "le")
    pi = np.where(
        z > 0,
        inclusion_prob(repl, treated_part)[positions],
        inclusion_prob(repl, control_part)[positions],
    )
    try:
        fit_ = weighted_ls(y, members, 1.0 / pi, z)
    except DegenerateDesignError:
        return None
    return fit_.slope


def honest_estimate(
    tree: ExposureTree, F_est: FeatureMatrix, y_est, repl: ReplicateFeatures
) -> ExposureTree:
    """Estimate every node of `tree` from the estimation half, in place.

    Leaves without an estimate (no estimation members, or in direct-effects mode
    a box missing one treatment arm) are flagged degenerate.
    """
    y_est = np.asarray(y_est, dtype=np.float64)
    if y_est.shape != (len(F_est),):
        raise ValueError(f"outcomes have shape {y_est.shape}; expected ({len(F_est)},)")
    positions = repl.index_of(F_est.nodes)
    rows = repl.encode(F_est.values)
    z = F_est.values[:, 0]
    degenerate = []
    for node in tree.nodes():
        node.estimate = _estimate_node(tree, node, rows, y_est, z, positions, repl)
        node.degenerate = node.estimate is None
        if node.degenerate and node.is_leaf:
            degenerate.append(node.name)
    if degenerate:
        warnings.warn(
            f"leaves without an honest estimate: {', '.join(degenerate)}", stacklevel=2
        )
    return tree


def direct_effect_tree(
    F_train: FeatureMatrix,
    y_train,
    repl: ReplicateFeatures,
    params: HyperParams = HyperParams(),
    threads: Optional[int] = None,
) -> ExposureTree:
    """Grow a tree over the motif axes whose nodes carry direct-effect contrasts."""
    return fit(F_train, y_train, repl, params, DIRECT_EFFECTS, threads)


def split_halves(n: int, seed, fraction: float = 0.5) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded random split of ``range(n)`` into training and estimation positions.

    Both halves are returned sorted; the training half has ``round(fraction * n)``
    elements.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction!r}")
    order = substream(seed, _HALVES_STREAM).permutation(n)
    n_train = int(round(fraction * n))
    return np.sort(order[:n_train]), np.sort(order[n_train:])


class LeafAudit(NamedTuple):
    name: str
    partition: Partition
    result: PositivityResult


def audit_positivity(
    tree: ExposureTree,
    repl: ReplicateFeatures,
    eps: Optional[float] = None,
    delta: Optional[float] = None,
) -> List[LeafAudit]:
    """Re-check positivity of every leaf over all retained observations.

    In direct-effects mode both treatment arms of each leaf are checked and
    reported as ``'<leaf> Z=1'`` and ``'<leaf> Z=0'``.
    """
    eps = tree.params.epsilon if eps is None else eps
    delta = tree.params.delta if delta is None else delta
    if eps is None:
        eps = default_epsilon(repl.R)
    out = []
    for leaf in tree.leaves:
        if tree.direct:
            parts = [
                (f"{leaf.name} Z=1", leaf.partition.refine(0, 0.0, "gt")),
                (f"{leaf.name} Z=0", leaf.partition.refine(0, 0.0, "le")),
            ]
        else:
            parts = [(leaf.name, leaf.partition)]
        for name, part in parts:
            result = positivity_check(inclusion_prob(repl, part), eps, delta)
            out.append(LeafAudit(name, part, result))
    return out


@dataclasses.dataclass(eq=False)
class AnalysisResult:
    tree: ExposureTree
    train: np.ndarray
    estimation: np.ndarray
    gate: Optional[Estimate]
    audit: List[LeafAudit]

    @property
    def positivity_ok(self) -> bool:
        return all(a.result.passed for a in self.audit)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_train": len(self.train),
            "n_estimation": len(self.estimation),
            "n_leaves": len(self.tree.leaves),
            "gate": None if self.gate is None else self.gate.to_dict(),
            "positivity": {
                a.name: {
                    "passed": bool(a.result.passed),
                    "violating_fraction": a.result.violating_fraction,
                }
                for a in self.audit
            },
        }


def analyze(
    F: FeatureMatrix,
    y,
    repl: ReplicateFeatures,
    params: HyperParams = HyperParams(),
    mode: str = POTENTIAL_OUTCOMES,
    threads: Optional[int] = None,
    train_outcomes=None,
) -> AnalysisResult:
    """Honest analysis: split halves, fit on one, estimate on the other.

    `train_outcomes` substitutes the outcomes the structure is learned from
    (aligned with `F`); estimation always uses `y`.
    """
    y = np.asarray(y, dtype=np.float64)
    train, est = split_halves(len(F), params.seed)
    fit_y = y if train_outcomes is None else np.asarray(train_outcomes, dtype=np.float64)
    tree = fit(F.subset(train), fit_y[train], repl, params, mode, threads)
    honest_estimate(tree, F.subset(est), y[est], repl)
    gate_estimate = None
    if not tree.direct:
        try:
            gate_estimate = gate(tree)
        except ValueError as exc:
            logger.info("GATE not available: %s", exc)
    return AnalysisResult(tree, train, est, gate_estimate, audit_positivity(tree, repl))


def _grid_candidates(base: HyperParams, grid: Mapping[str, Sequence]) -> List[HyperParams]:
    names = sorted(grid)
    out = []
    for values in itertools.product(*(grid[name] for name in names)):
        out.append(HyperParams.from_mapping({**base.to_dict(), **dict(zip(names, values))}))
    return out


def cross_validate(
    F: FeatureMatrix,
    y,
    repl: ReplicateFeatures,
    grid: Mapping[str, Sequence],
    base: HyperParams = HyperParams(),
    folds: int = 5,
    seed=0,
    threads: Optional[int] = None,
) -> List[Tuple[HyperParams, float]]:
    """K-fold search over hyperparameter candidates (potential-outcomes mode).

    Each candidate is scored by the held-out weighted squared error of the fitted
    leaf means, ``sum w (y - v)^2 / n`` with ``w = 1 / pi`` of the row's leaf,
    summed over folds. Returns ``(params, score)`` pairs, best first.
    """
    if folds < 2:
        raise ValueError(f"folds must be at least 2, got {folds}")
    y = np.asarray(y, dtype=np.float64)
    n = len(F)
    fold_of = substream(seed, _CV_STREAM).permutation(n) % folds
    results = []
    for params in _grid_candidates(base, grid):
        total = 0.0
        for k in range(folds):
            held = fold_of == k
            tree = fit(F.subset(~held), y[~held], repl, params, POTENTIAL_OUTCOMES, threads)
            held_F = F.subset(held)
            positions = repl.index_of(held_F.nodes)
            names = tree.route_many(held_F.values)
            for leaf in tree.leaves:
                rows = names == leaf.name
                if not rows.any():
                    continue
                pi = inclusion_prob(repl, leaf.partition)[positions[rows]]
                total += float(np.sum((y[held][rows] - leaf.value_train) ** 2 / pi))
        score = total / n
        logger.info("cross-validation %s: %.6g", params, score)
        results.append((params, score))
    order = sorted(range(len(results)), key=lambda i: (results[i][1], i))
    return [results[i] for i in order]

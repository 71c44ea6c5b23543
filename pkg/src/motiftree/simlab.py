"""Synthetic experiments with known ground truth on Watts-Strogatz networks.

One run generates a small-world graph, randomizes treatment over ring clusters,
draws outcomes from one of four data-generating processes, and fits honest
exposure trees on full motif features and on dyad features only. The
`RecoveryReport` records the chosen splits, global treatment effect estimates
against the truth, the direct-effect tree and the classic four-condition
baseline.

==============  ============================================================
dgp             outcome
==============  ============================================================
``cutoff``      ``0.1 deg + gender + 2 Z 1[x(3c-2) > 0.7] + e``
``causal-sd``   ``0.1 deg + gender + SDT + Z SDT + e``
``corr-sd``     ``0.1 deg + gender + SD + Z SD + e``
``null``        ``deg + e``
==============  ============================================================

SD is the number of connected components among an ego's neighbors and SDT the
same count among its treated neighbors.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import scipy.sparse as sp
import xarray as xr
from scipy.sparse.csgraph import connected_components

from .assignment import ClusterBernoulli, draw, ring_clusters
from .config import load_toml
from .estimators import Estimate, four_condition_baseline, sutva_difference
from .exposure import ReplicateFeatures, replicate_features
from .formatting import format_table
from .graph import Graph, ego_view
from .motifs import (
    CLOSED_TRIAD,
    MissingPolicy,
    MotifCatalog,
    MotifCensus,
    census,
    feature_matrix,
    interference_vector,
    label_counts,
)
from .tree import (
    DIRECT_EFFECTS,
    POTENTIAL_OUTCOMES,
    AnalysisResult,
    ExposureTree,
    HyperParams,
    TreeNode,
    analyze,
    split_halves,
    training_wsse,
)
from .utils import StrPath, ValueTypeDispatch, coerce_numeric, resolve_threads

__all__ = [
    "DGPSpec",
    "ExperimentConfig",
    "RecoveryReport",
    "WSConfig",
    "generate_outcomes",
    "recovery_checks",
    "run_experiment",
    "run_experiments",
    "structural_diversity",
    "structural_diversity_all",
    "summarize",
    "watts_strogatz",
]

logger = logging.getLogger(__name__)

DGP_NAMES = ("cutoff", "causal-sd", "corr-sd", "null")
_dgp_dispatch = ValueTypeDispatch("dgp", {name: name for name in DGP_NAMES})


@dataclasses.dataclass(frozen=True)
class WSConfig:
    """Watts-Strogatz parameters: `n` nodes on a ring, each linked to its `k`
    nearest neighbors, every edge rewired with probability `beta`."""

    n: int = 20000
    k: int = 10
    beta: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.k % 2:
            raise ValueError(f"k must be even, got {self.k}")
        if not 0 < self.k < self.n:
            raise ValueError(f"k must satisfy 0 < k < n, got k={self.k}, n={self.n}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta!r}")


def watts_strogatz(cfg: WSConfig) -> Graph:
    g = nx.watts_strogatz_graph(cfg.n, cfg.k, cfg.beta, seed=cfg.seed)
    return Graph.from_networkx(g)


@dataclasses.dataclass(frozen=True)
class DGPSpec:
    variant: str = "cutoff"
    noise_sd: float = 1.0

    def __post_init__(self):
        _dgp_dispatch[self.variant]
        if self.noise_sd < 0:
            raise ValueError(f"noise_sd must be non-negative, got {self.noise_sd!r}")


def structural_diversity(g: Graph, i: int, subset: Sequence[int]) -> int:
    """Number of connected components among `subset`, a set of neighbors of `i`."""
    view = ego_view(g, i)
    subset = set(int(v) for v in subset)
    outside = subset.difference(view.alters.tolist())
    if outside:
        raise ValueError(f"nodes {sorted(outside)} are not neighbors of {i}")
    induced = nx.Graph()
    induced.add_nodes_from(subset)
    induced.add_edges_from(
        (a, b) for a, b in view.alter_edges.tolist() if a in subset and b in subset
    )
    return nx.number_connected_components(induced)


def structural_diversity_all(
    g: Graph, subset_mask, census_: Optional[MotifCensus] = None
) -> np.ndarray:
    """Structural diversity of every ego over its neighbors in `subset_mask`.

    Each (ego, alter) adjacency slot is a vertex; alter edges connect slots of the
    same ego, so components never span egos and are counted per ego.
    """
    subset_mask = np.asarray(subset_mask, dtype=bool)
    if subset_mask.shape != (g.n_nodes,):
        raise ValueError(
            f"subset mask has shape {subset_mask.shape}; expected ({g.n_nodes},)"
        )
    if census_ is None or not census_.catalog.needs_triangles:
        census_ = census(g, MotifCatalog.named("dyad-triad"))
    nslots = len(g.indices)
    if nslots == 0:
        return np.zeros(g.n_nodes, dtype=np.int64)
    included = subset_mask[g.indices]
    edges = census_.alter_edges
    keep = subset_mask[edges[:, 1]] & subset_mask[edges[:, 2]]
    src = g.slot_of(edges[keep, 0], edges[keep, 1])
    dst = g.slot_of(edges[keep, 0], edges[keep, 2])
    adjacency = sp.coo_array(
        (np.ones(len(src), dtype=np.int8), (src, dst)), shape=(nslots, nslots)
    )
    _, labels = connected_components(adjacency, directed=False)
    _, first = np.unique(labels[included], return_index=True)
    egos = g.row_of_slot[included][first]
    return np.bincount(egos, minlength=g.n_nodes)


def generate_outcomes(
    g: Graph,
    z,
    spec: DGPSpec,
    seed,
    census_: Optional[MotifCensus] = None,
) -> np.ndarray:
    """Draw outcomes for every node under assignment `z`.

    The gender covariate and the noise come from `seed` alone, so two calls that
    differ only in `z` share them. In the cutoff outcome an ego without closed
    triads has ``x(3c-2) = 0``.
    """
    z = np.asarray(z).astype(np.int64)
    if z.shape != (g.n_nodes,):
        raise ValueError(f"assignment has shape {z.shape}; expected ({g.n_nodes},)")
    rng = np.random.default_rng(seed)
    gender = rng.integers(0, 2, g.n_nodes)
    noise = rng.normal(0.0, 1.0, g.n_nodes) * spec.noise_sd
    deg = g.degree.astype(np.float64)
    base = 0.1 * deg + gender

    variant = _dgp_dispatch[spec.variant]
    if census_ is None or CLOSED_TRIAD not in census_.catalog:
        census_ = census(g, MotifCatalog.named("dyad-triad"))
    if variant == "cutoff":
        counts = label_counts(g, census_.catalog, z, census_)
        closed = counts.kind_counts(CLOSED_TRIAD)
        both = counts["3c-2"]
        x = np.divide(both, closed, out=np.zeros(g.n_nodes), where=closed > 0)
        return base + 2.0 * z * (x > 0.7) + noise
    if variant == "causal-sd":
        sdt = structural_diversity_all(g, z.astype(bool), census_)
        return base + sdt + z * sdt + noise
    if variant == "corr-sd":
        sd = structural_diversity_all(g, np.ones(g.n_nodes, dtype=bool), census_)
        return base + sd + z * sd + noise
    return deg + noise


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Configuration of a synthetic experiment.

    `gamma` left unset is resolved per run as ``gamma_fraction`` times the root
    WSSE on the training half. Runs use the explicit `seeds` when given, otherwise
    run `i` uses seed ``seed + i``.
    """

    n: int = 20000
    k: int = 10
    beta: float = 0.5
    cluster_size: int = 10
    p: float = 0.5
    R: int = 100
    dgp: str = "cutoff"
    noise_sd: float = 1.0
    catalog: str = "full"
    missing: str = "auto"
    missing_threshold: float = 0.05
    gamma: Optional[float] = None
    gamma_fraction: float = 0.01
    kappa: Optional[int] = None
    delta: float = 0.01
    epsilon: Optional[float] = None
    eta: int = 256
    phi: Optional[float] = None
    max_depth: int = 12
    quantize: bool = True
    seed: int = 0
    runs: int = 1
    seeds: Tuple[int, ...] = ()

    def __post_init__(self):
        hints = {f.name: f.default for f in dataclasses.fields(self)}
        for name, default in hints.items():
            value = getattr(self, name)
            if default is not None and value is not None and not isinstance(default, str):
                object.__setattr__(self, name, coerce_numeric(value, type(default)))
        for name in ("gamma", "epsilon", "phi"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, coerce_numeric(value, float))
        if self.kappa is not None:
            object.__setattr__(self, "kappa", coerce_numeric(self.kappa, int))
        object.__setattr__(
            self, "seeds", tuple(coerce_numeric(s, int) for s in self.seeds)
        )
        WSConfig(self.n, self.k, self.beta)
        DGPSpec(self.dgp, self.noise_sd)
        MotifCatalog.named(self.catalog)
        MissingPolicy(self.missing, self.missing_threshold)
        if self.cluster_size < 1:
            raise ValueError(f"cluster_size must be at least 1, got {self.cluster_size}")
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"p must be in (0, 1), got {self.p!r}")
        if self.runs < 1:
            raise ValueError(f"runs must be at least 1, got {self.runs}")
        if self.gamma_fraction < 0:
            raise ValueError(f"gamma_fraction must be non-negative, got {self.gamma_fraction!r}")
        self.hyperparams(self.seed)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> ExperimentConfig:
        """Build from a flat mapping; a nested ``hyperparams`` table is merged in."""
        flat = dict(mapping)
        flat.update(flat.pop("hyperparams", {}) or {})
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(flat) - names)
        if unknown:
            raise ValueError(f"unknown experiment setting {unknown[0]!r}")
        return cls(**flat)

    @classmethod
    def from_toml(cls, path: StrPath) -> ExperimentConfig:
        return cls.from_mapping(load_toml(path))

    def paper_scale(self) -> ExperimentConfig:
        """The full-size configuration: 200,000 nodes and 100 replicates."""
        return dataclasses.replace(self, n=200000, R=100)

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    def hyperparams(self, seed: int, gamma: Optional[float] = None) -> HyperParams:
        return HyperParams(
            gamma=(self.gamma or 0.0) if gamma is None else gamma,
            kappa=self.kappa,
            delta=self.delta,
            epsilon=self.epsilon,
            eta=self.eta,
            phi=self.phi,
            max_depth=self.max_depth,
            replicates=self.R,
            seed=seed,
        )

    def run_seeds(self) -> List[int]:
        if self.seeds:
            return list(self.seeds)
        return [self.seed + i for i in range(self.runs)]

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def _split_dict(tree: ExposureTree, node: Optional[TreeNode]):
    if node is None or node.is_leaf:
        return None
    return {
        "axis": tree.columns[node.split.axis],
        "theta": node.split.threshold,
    }


def treated_first_split(tree: ExposureTree) -> Optional[Dict[str, Any]]:
    """First split of the treated branch below the shallowest split on Z.

    None when the tree never splits on Z or the treated child is a leaf.
    """
    z_splits = [node for node in tree.nodes() if not node.is_leaf and node.split.axis == 0]
    if not z_splits:
        return None
    return _split_dict(tree, min(z_splits, key=lambda node: node.depth).right)


def significant_feature_splits(tree: ExposureTree, z_score: float = 2.0) -> List[dict]:
    """Splits on motif axes whose children's honest estimates differ significantly."""
    out = []
    for node in tree.nodes():
        if node.is_leaf or node.split.axis == 0:
            continue
        left, right = node.left.estimate, node.right.estimate
        if left is None or right is None:
            continue
        se = math.hypot(left.std_error, right.std_error)
        diff = right.value - left.value
        if abs(diff) > z_score * se:
            out.append({**_split_dict(tree, node), "difference": diff, "std_error": se})
    return out


def _estimate_dict(est: Optional[Estimate]):
    return None if est is None else est.to_dict()


@dataclasses.dataclass
class RecoveryReport:
    """Everything one synthetic run recovered, with the truth it is judged against."""

    config: ExperimentConfig
    seed: int
    n_nodes: int
    n_retained: int
    missing: Dict[str, Any]
    true_gate: float
    gamma_full: float
    gamma_direct: float
    full: Dict[str, Any]
    dyad: Dict[str, Any]
    direct: Dict[str, Any]
    sutva: Estimate
    four_conditions: List[Dict[str, Any]]
    positivity_ok: bool

    def to_dict(self) -> Dict[str, Any]:
        out = dataclasses.asdict(self)
        out["config"] = self.config.to_dict()
        out["sutva"] = self.sutva.to_dict()
        out["checks"] = recovery_checks(self)
        return out

    @property
    def gate_full(self) -> Optional[float]:
        return None if self.full["gate"] is None else self.full["gate"]["value"]

    @property
    def gate_dyad(self) -> Optional[float]:
        return None if self.dyad["gate"] is None else self.dyad["gate"]["value"]


def _tree_summary(result: AnalysisResult) -> Dict[str, Any]:
    tree = result.tree
    return {
        "gate": _estimate_dict(result.gate),
        "treated_first_split": treated_first_split(tree),
        "root_split": _split_dict(tree, tree.root),
        "significant_feature_splits": significant_feature_splits(tree),
        "leaves": [
            {
                "name": leaf.name,
                "condition": leaf.partition.describe(tree.columns),
                "n_train": leaf.n_train,
                "n_est": leaf.n_est,
                "estimate": _estimate_dict(leaf.estimate),
            }
            for leaf in tree.leaves
        ],
        "positivity_ok": result.positivity_ok,
        "tree": tree.to_dict(),
    }


def _direct_summary(result: AnalysisResult) -> Dict[str, Any]:
    summary = _tree_summary(result)
    root = result.tree.root
    below = above = None
    if not root.is_leaf:
        below = _estimate_dict(root.left.estimate)
        above = _estimate_dict(root.right.estimate)
    summary.update(root_tau=_estimate_dict(root.estimate), tau_below=below, tau_above=above)
    return summary


def _dyad_slice(F, repl: ReplicateFeatures):
    keep = [0, *(F.columns.index(c) for c in ("2-0", "2-1"))]
    F_dyad = type(F)(F.values[:, keep], tuple(F.columns[j] for j in keep), F.nodes)
    repl_dyad = ReplicateFeatures(
        np.ascontiguousarray(repl.data[:, :, keep]),
        F_dyad.columns,
        repl.nodes,
        repl.scale,
        repl.missing,
    )
    return F_dyad, repl_dyad


def _resolve_gamma(cfg, F, y, repl, mode, seed) -> float:
    if cfg.gamma is not None:
        return float(cfg.gamma)
    train, _ = split_halves(len(F), seed)
    root = training_wsse(F.subset(train), y[train], repl, mode)
    return cfg.gamma_fraction * root


def run_experiment(cfg: ExperimentConfig, seed: Optional[int] = None) -> RecoveryReport:
    """Run one seeded synthetic experiment end to end."""
    seed = cfg.seed if seed is None else seed
    graph_seed, assign_seed, outcome_seed, repl_seed, tree_seed = (
        int(s) for s in np.random.SeedSequence(seed).generate_state(5)
    )
    logger.info("run %d: generating graph with %d nodes", seed, cfg.n)
    g = watts_strogatz(WSConfig(cfg.n, cfg.k, cfg.beta, graph_seed))
    design = ClusterBernoulli(ring_clusters(cfg.n, cfg.cluster_size), cfg.p)
    z = draw(design, cfg.n, assign_seed)

    catalog = MotifCatalog.named(cfg.catalog)
    census_ = census(g, catalog)
    missing = MissingPolicy(cfg.missing, cfg.missing_threshold).resolve(census_, warn=False)
    kept = missing.kept_nodes

    spec = DGPSpec(cfg.dgp, cfg.noise_sd)
    outcome_census = census_ if CLOSED_TRIAD in catalog else None
    y_all = generate_outcomes(g, z, spec, outcome_seed, outcome_census)
    y1 = generate_outcomes(g, np.ones(cfg.n), spec, outcome_seed, outcome_census)
    y0 = generate_outcomes(g, np.zeros(cfg.n), spec, outcome_seed, outcome_census)
    true_gate = float(np.mean((y1 - y0)[kept]))
    y = y_all[kept]

    logger.info("run %d: building %d replicates", seed, cfg.R)
    repl = replicate_features(
        g, design, catalog, missing, cfg.R, repl_seed, cfg.quantize, census_=census_
    )
    F = feature_matrix(z, interference_vector(label_counts(g, catalog, z, census_), missing))

    gamma_full = _resolve_gamma(cfg, F, y, repl, POTENTIAL_OUTCOMES, tree_seed)
    full = analyze(F, y, repl, cfg.hyperparams(tree_seed, gamma_full))

    F_dyad, repl_dyad = _dyad_slice(F, repl)
    gamma_dyad = _resolve_gamma(cfg, F_dyad, y, repl_dyad, POTENTIAL_OUTCOMES, tree_seed)
    dyad = analyze(F_dyad, y, repl_dyad, cfg.hyperparams(tree_seed, gamma_dyad))

    gamma_direct = _resolve_gamma(cfg, F, y, repl, DIRECT_EFFECTS, tree_seed)
    direct = analyze(F, y, repl, cfg.hyperparams(tree_seed, gamma_direct), DIRECT_EFFECTS)

    four = [
        {
            "name": c.name,
            "share": c.share,
            "estimate": _estimate_dict(c.estimate),
        }
        for c in four_condition_baseline(y, F, repl)
    ]
    report = RecoveryReport(
        config=cfg,
        seed=seed,
        n_nodes=cfg.n,
        n_retained=len(kept),
        missing=missing.to_dict() | {"dropped_nodes": len(missing.dropped_nodes)},
        true_gate=true_gate,
        gamma_full=gamma_full,
        gamma_direct=gamma_direct,
        full=_tree_summary(full),
        dyad=_tree_summary(dyad),
        direct=_direct_summary(direct),
        sutva=sutva_difference(y, F.z),
        four_conditions=four,
        positivity_ok=full.positivity_ok and dyad.positivity_ok and direct.positivity_ok,
    )
    logger.info("run %d: done", seed)
    return report


def _in_window(split, axis, lo, hi) -> bool:
    return split is not None and split["axis"] == axis and lo <= split["theta"] <= hi


def recovery_checks(report: RecoveryReport) -> Dict[str, bool]:
    """Acceptance predicates of one run for its data-generating process."""
    dgp = report.config.dgp
    checks = {"positivity": bool(report.positivity_ok)}
    if dgp == "cutoff":
        checks["treated_split"] = _in_window(
            report.full["treated_first_split"], "3c-2", 0.60, 0.80
        )
        full, dyad = report.gate_full, report.gate_dyad
        truth = report.true_gate
        if full is None or dyad is None:
            checks["gate_ordering"] = False
            checks["gate_window"] = False
        else:
            checks["gate_ordering"] = (
                abs(full - truth) < abs(dyad - truth) < abs(report.sutva.value - truth)
            )
            checks["gate_window"] = abs(full - truth) <= 0.2
        direct = report.direct
        checks["direct_split"] = _in_window(direct["root_split"], "3c-2", 0.60, 0.80)
        above, below = direct["tau_above"], direct["tau_below"]
        checks["direct_effects"] = (
            above is not None
            and below is not None
            and above["value"] > 1.5
            and abs(below["value"]) < 0.3
        )
    elif dgp == "causal-sd":
        split = report.full["treated_first_split"]
        checks["treated_split"] = _in_window(split, "4o-3", 0.0, 0.20)
    else:
        checks["no_feature_splits"] = not report.full["significant_feature_splits"]
        checks["no_direct_splits"] = not report.direct["significant_feature_splits"]
    return checks


def _run_one(args: Tuple[ExperimentConfig, int]) -> RecoveryReport:
    cfg, seed = args
    return run_experiment(cfg, seed)


def run_experiments(
    cfg: ExperimentConfig, workers: Optional[int] = None
) -> List[RecoveryReport]:
    """Run every seed of `cfg`, in worker processes when `workers > 1`.

    Reports come back in seed order and equal those of a serial run.
    """
    jobs = [(cfg, seed) for seed in cfg.run_seeds()]
    workers = min(resolve_threads(workers), len(jobs))
    if workers == 1:
        return [_run_one(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


def _split_fields(split):
    if split is None:
        return "", math.nan
    return split["axis"], split["theta"]


def summarize(reports: Sequence[RecoveryReport]) -> xr.Dataset:
    """Collect per-run headline numbers into a dataset over ``run``."""
    if not reports:
        raise ValueError("no reports to summarize")
    columns: Dict[str, list] = {}

    def add(name, value):
        columns.setdefault(name, []).append(value)

    checks = [recovery_checks(r) for r in reports]
    check_names = sorted(set().union(*checks))
    for report, check in zip(reports, checks):
        add("seed", report.seed)
        add("true_gate", report.true_gate)
        add("gate_full", _nan_if_none(report.gate_full))
        add("gate_dyad", _nan_if_none(report.gate_dyad))
        add("sutva", report.sutva.value)
        add("gamma_full", report.gamma_full)
        axis, theta = _split_fields(report.full["treated_first_split"])
        add("treated_split_axis", axis)
        add("treated_split_theta", theta)
        axis, theta = _split_fields(report.dyad["treated_first_split"])
        add("dyad_split_axis", axis)
        add("dyad_split_theta", theta)
        axis, theta = _split_fields(report.direct["root_split"])
        add("direct_split_axis", axis)
        add("direct_split_theta", theta)
        for name in check_names:
            add(f"check_{name}", bool(check.get(name, False)))
    runs = np.arange(len(reports))
    ds = xr.Dataset(
        {name: ("run", np.asarray(values)) for name, values in columns.items()},
        coords={"run": runs},
    )
    ds.attrs["dgp"] = reports[0].config.dgp
    ds.attrs["n"] = reports[0].config.n
    ds.attrs["R"] = reports[0].config.R
    return ds


def _nan_if_none(value):
    return math.nan if value is None else value


def summary_table(ds: xr.Dataset) -> str:
    """Per-run table of chosen splits, effects and check outcomes."""
    check_vars = [name for name in ds.data_vars if name.startswith("check_")]
    headers = [
        "seed",
        "treated split",
        "theta",
        "GATE full",
        "GATE dyad",
        "SUTVA",
        "truth",
        *(name[len("check_") :] for name in check_vars),
    ]
    rows = []
    for i in range(ds.sizes["run"]):
        rows.append(
            [
                int(ds["seed"][i]),
                str(ds["treated_split_axis"][i].item()) or "-",
                float(ds["treated_split_theta"][i]),
                float(ds["gate_full"][i]),
                float(ds["gate_dyad"][i]),
                float(ds["sutva"][i]),
                float(ds["true_gate"][i]),
                *("pass" if bool(ds[name][i]) else "FAIL" for name in check_vars),
            ]
        )
    return format_table(headers, rows)

"""Command-line interface: ``motiftree {analyze,simulate,motifs,tune}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from . import __version__
from .assignment import parse_design, read_assignment
from .config import settings
from .estimators import four_condition_baseline
from .exposure import replicate_features
from .formatting import format_table
from .graph import read_edge_list
from .motifs import (
    MissingPolicy,
    MotifCatalog,
    census,
    feature_matrix,
    interference_vector,
    label_counts,
    motif_table,
)
from .simlab import (
    DGP_NAMES,
    ExperimentConfig,
    recovery_checks,
    run_experiments,
    summarize,
    summary_table,
)
from .tree import (
    DIRECT_EFFECTS,
    POTENTIAL_OUTCOMES,
    HyperParams,
    analyze,
    cross_validate,
    split_halves,
)

logger = logging.getLogger(__name__)

_MODES = {"po": POTENTIAL_OUTCOMES, "direct": DIRECT_EFFECTS}


class OutcomeFileError(ValueError):
    """Malformed outcome file."""


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path: Path, obj) -> None:
    """Write `obj` as sorted, indented UTF-8 JSON."""
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default)
    path.write_text(text + "\n", encoding="utf-8")


def write_text(path: Path, text: str) -> None:
    path.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")


def read_outcomes(path, n_nodes: int) -> np.ndarray:
    """Read a ``node,y`` CSV file with one finite outcome per node."""
    try:
        table = pd.read_csv(path, skipinitialspace=True, comment="#")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise OutcomeFileError(f"{path}: {exc}") from None
    if list(table.columns) != ["node", "y"]:
        raise OutcomeFileError(
            f"{path}: expected header 'node,y', got {','.join(map(str, table.columns))!r}"
        )
    nodes = pd.to_numeric(table["node"], errors="coerce")
    values = pd.to_numeric(table["y"], errors="coerce")
    bad = (nodes.isna() | (nodes != nodes.round()) | values.isna()).to_numpy()
    bad |= ~np.isfinite(values.to_numpy(dtype=np.float64, na_value=np.nan))
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise OutcomeFileError(
            f"{path}: line {row + 2}: expected an integer node and a finite outcome"
        )
    nodes = nodes.to_numpy(dtype=np.int64)
    if len(nodes) != n_nodes or not np.array_equal(np.sort(nodes), np.arange(n_nodes)):
        raise OutcomeFileError(
            f"{path}: expected one outcome for each node 0..{n_nodes - 1}"
        )
    y = np.empty(n_nodes)
    y[nodes] = values.to_numpy(dtype=np.float64)
    return y


#===============================================================================
# Shared pipeline
#===============================================================================
def _hyperparams(args) -> HyperParams:
    return HyperParams(
        gamma=args.gamma,
        kappa=args.kappa,
        delta=args.delta,
        epsilon=args.epsilon,
        eta=args.eta,
        phi=args.phi,
        max_depth=args.max_depth,
        replicates=args.R,
        seed=args.seed,
    )


def _load_experiment(args):
    """Read the observed experiment and build features and replicates."""
    if args.R is None:
        args.R = settings.get_int("replicates")
    if args.seed is None:
        args.seed = settings.get_int("seed")
    z = read_assignment(args.assign)
    n = len(z)
    g = read_edge_list(args.graph, n)
    y_all = read_outcomes(args.outcomes, n)
    if args.log1p:
        if (y_all <= -1).any():
            raise ValueError("--log1p needs every outcome to exceed -1")
        y_all = np.log10(y_all + 1.0)
    design = parse_design(args.design, n)
    catalog = MotifCatalog.named(args.catalog)
    census_ = census(g, catalog)
    missing = MissingPolicy(args.missing, args.missing_threshold).resolve(census_)
    logger.info(missing.summary())
    repl = replicate_features(
        g, design, catalog, missing, args.R, args.seed, threads=args.threads,
        census_=census_,
    )
    F = feature_matrix(z, interference_vector(label_counts(g, catalog, z, census_), missing))
    return {
        "graph": g,
        "design": design,
        "missing": missing,
        "repl": repl,
        "F": F,
        "y": y_all[missing.kept_nodes],
    }


def _resolved_config(args, design) -> Dict[str, Any]:
    return {
        "graph": str(args.graph),
        "assign": str(args.assign),
        "outcomes": str(args.outcomes),
        "design": design.describe(),
        "catalog": args.catalog,
        "missing": args.missing,
        "missing_threshold": args.missing_threshold,
        "mode": _MODES[args.mode],
        "log1p": bool(args.log1p),
        "hyperparams": _hyperparams(args).to_dict(),
    }


#===============================================================================
# Commands
#===============================================================================
def cmd_analyze(args) -> int:
    data = _load_experiment(args)
    F, y, repl, missing = data["F"], data["y"], data["repl"], data["missing"]
    params = _hyperparams(args)
    result = analyze(F, y, repl, params, _MODES[args.mode], args.threads)
    tree = result.tree

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_text(out / "tree.json", tree.to_json())
    write_text(out / "tree.dot", tree.to_dot())
    write_text(out / "leaves.txt", tree.leaf_table())
    report = {
        "version": __version__.strip(),
        "config": _resolved_config(args, data["design"]),
        "seed": args.seed,
        "n_nodes": data["graph"].n_nodes,
        "n_retained": len(F),
        "missing": missing.to_dict(),
        "resolved_hyperparams": tree.params.to_dict(),
        "analysis": result.to_dict(),
        "four_conditions": [
            {
                "name": c.name,
                "share": c.share,
                "estimate": None if c.estimate is None else c.estimate.to_dict(),
            }
            for c in four_condition_baseline(y, F, repl)
        ],
    }
    write_json(out / "report.json", report)

    print(tree.leaf_table())
    if result.gate is not None:
        lo, hi = result.gate.interval()
        print(f"\nGATE: {result.gate.value:.4f} (SE {result.gate.std_error:.4f}; "
              f"95% CI {lo:.4f} to {hi:.4f})")
    if not result.positivity_ok:
        failed = [a.name for a in result.audit if not a.result.passed]
        logger.warning("positivity audit failed for %s", ", ".join(failed))
    return 0


def _experiment_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_toml(args.config) if args.config else ExperimentConfig()
    overrides = {
        name: getattr(args, name)
        for name in ("dgp", "n", "k", "beta", "cluster_size", "p", "R", "runs", "seed")
        if getattr(args, name) is not None
    }
    if "runs" in overrides or "seed" in overrides:
        overrides["seeds"] = ()
    cfg = cfg.replace(**overrides)
    if args.paper_scale:
        cfg = cfg.paper_scale()
    return cfg


def cmd_simulate(args) -> int:
    cfg = _experiment_config(args)
    logger.info("simulating %d run(s) of %r on %d nodes", len(cfg.run_seeds()), cfg.dgp, cfg.n)
    reports = run_experiments(cfg, workers=args.workers)
    ds = summarize(reports)
    print(summary_table(ds))

    failed = [r.seed for r in reports if not all(recovery_checks(r).values())]
    passed = len(reports) - len(failed)
    print(f"\n{passed} of {len(reports)} runs passed every recovery check")

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(
            out / "report.json",
            {
                "version": __version__.strip(),
                "config": cfg.to_dict(),
                "runs": [r.to_dict() for r in reports],
            },
        )
        ds.to_dataframe().to_csv(out / "summary.csv", encoding="utf-8")
    if args.check and failed:
        print(f"error: recovery checks failed for seeds {failed}", file=sys.stderr)
        return 1
    return 0


def cmd_motifs(args) -> int:
    z = read_assignment(args.assign)
    g = read_edge_list(args.graph, len(z))
    table = motif_table(g, MotifCatalog.named(args.catalog), z)
    if args.out == "-":
        table.to_csv(sys.stdout, index=False)
    else:
        table.to_csv(args.out, index=False, encoding="utf-8")
    return 0


def parse_grid(items: Sequence[str]) -> Dict[str, List[str]]:
    """Parse ``name=v1,v2`` items into a candidate grid.

    Example
    -------
    >>> parse_grid(['gamma=0,5', 'kappa=100'])
    {'gamma': ['0', '5'], 'kappa': ['100']}
    """
    grid = {}
    for item in items:
        name, sep, values = item.partition("=")
        name = name.strip()
        if not sep or not name or not values.strip():
            raise ValueError(f"grid item must look like 'name=v1,v2', got {item!r}")
        if name in grid:
            raise ValueError(f"grid parameter {name!r} given twice")
        grid[name] = [v.strip() for v in values.split(",")]
    return grid


def cmd_tune(args) -> int:
    grid = parse_grid(args.grid)
    data = _load_experiment(args)
    F, y, repl = data["F"], data["y"], data["repl"]
    train, _ = split_halves(len(F), args.seed)
    ranked = cross_validate(
        F.subset(train), y[train], repl, grid, _hyperparams(args), args.folds,
        args.seed, args.threads,
    )
    names = sorted(grid)
    rows = [
        [rank, *(getattr(params, name) for name in names), score]
        for rank, (params, score) in enumerate(ranked, 1)
    ]
    print(format_table(["rank", *names, "score"], rows))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(
        out / "tune.json",
        {
            "version": __version__.strip(),
            "config": _resolved_config(args, data["design"]),
            "folds": args.folds,
            "grid": grid,
            "ranking": [
                {"params": params.to_dict(), "score": score} for params, score in ranked
            ],
        },
    )
    return 0


#===============================================================================
# Parser
#===============================================================================
def _add_common_arguments(parser, default=None):
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=default,
        help="more logging (repeatable)",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=default,
        help="worker threads (default: MOTIFTREE_THREADS or 'threads' setting)",
    )


def _add_data_arguments(parser):
    parser.add_argument("--graph", required=True, help="edge list, one 'u v' pair per line")
    parser.add_argument("--assign", required=True, help="observed assignment CSV (node,z)")
    parser.add_argument("--outcomes", required=True, help="outcome CSV (node,y)")
    parser.add_argument(
        "--design",
        required=True,
        help="assignment mechanism: 'bernoulli:p' or 'cluster:path,p'",
    )
    parser.add_argument(
        "--catalog", choices=["full", "dyad", "dyad-triad"], default="full"
    )
    parser.add_argument(
        "--missing",
        choices=["auto", "drop-feature", "drop-nodes"],
        default="auto",
        help="handling of motif kinds an ego has no instances of (default: auto)",
    )
    parser.add_argument("--missing-threshold", type=float, default=0.05)
    parser.add_argument(
        "--R", type=int, default=None, help="replicates (default: 'replicates' setting)"
    )
    parser.add_argument(
        "--seed", type=int, default=None, help="seed (default: 'seed' setting)"
    )
    parser.add_argument("--mode", choices=sorted(_MODES), default="po")
    parser.add_argument(
        "--log1p", action="store_true", help="analyze log10(y + 1) instead of y"
    )
    parser.add_argument("--gamma", type=float, default=0.0)
    parser.add_argument("--kappa", type=int, default=None)
    parser.add_argument("--delta", type=float, default=0.01)
    parser.add_argument("--epsilon", type=float, default=None)
    parser.add_argument("--eta", type=int, default=256)
    parser.add_argument("--phi", type=float, default=None)
    parser.add_argument("--max-depth", type=int, default=12)
    parser.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motiftree",
        description="Causal network motifs and honest exposure trees.",
    )
    parser.add_argument("--version", action="version", version=__version__.strip())
    _add_common_arguments(parser)
    parser.set_defaults(verbose=0, threads=None)

    # Suppressed defaults keep a value given before the subcommand.
    common = argparse.ArgumentParser(add_help=False)
    _add_common_arguments(common, default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "analyze", parents=[common], help="fit an honest exposure tree to an experiment"
    )
    _add_data_arguments(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser(
        "tune", parents=[common], help="cross-validate tree hyperparameters"
    )
    _add_data_arguments(p)
    p.add_argument(
        "--grid",
        nargs="+",
        required=True,
        metavar="NAME=V1,V2",
        help="candidate values, e.g. gamma=0,5 kappa=100,200",
    )
    p.add_argument("--folds", type=int, default=5)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser(
        "simulate", parents=[common], help="run synthetic recovery experiments"
    )
    p.add_argument("--config", help="experiment TOML file")
    p.add_argument("--dgp", choices=DGP_NAMES, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--cluster-size", type=int, default=None)
    p.add_argument("--p", type=float, default=None)
    p.add_argument("--R", type=int, default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument(
        "--paper-scale", action="store_true", help="200,000 nodes and 100 replicates"
    )
    p.add_argument("--workers", type=int, default=None, help="worker processes")
    p.add_argument(
        "--check", action="store_true", help="exit 1 if any run fails a recovery check"
    )
    p.add_argument("--out", default=None, help="output directory for report.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser(
        "motifs", parents=[common], help="dump per-node motif counts as CSV"
    )
    p.add_argument("--graph", required=True)
    p.add_argument("--assign", required=True)
    p.add_argument(
        "--catalog", choices=["full", "dyad", "dyad-triad"], default="full"
    )
    p.add_argument("--out", default="-", help="CSV path, or '-' for stdout")
    p.set_defaults(func=cmd_motifs)
    return parser


def _configure_logging(verbose: int, force_info: bool = False):
    if verbose:
        level = max(logging.DEBUG, logging.WARNING - 10 * verbose)
    else:
        level = logging.getLevelName(settings["log_level"].upper())
        if not isinstance(level, int):
            level = logging.WARNING
        if force_info:
            level = min(level, logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose, getattr(args, "paper_scale", False))
    try:
        return args.func(args)
    except (ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

import json

import numpy as np
import pytest
from pytest import raises

from motiftree.estimators import Estimate
from motiftree.exposure import Partition
from motiftree.graph import Graph
from motiftree.motifs import CLOSED_TRIAD, MotifCatalog, census
from motiftree.simlab import (
    DGPSpec,
    ExperimentConfig,
    RecoveryReport,
    WSConfig,
    generate_outcomes,
    recovery_checks,
    run_experiment,
    run_experiments,
    structural_diversity,
    structural_diversity_all,
    summarize,
    summary_table,
    treated_first_split,
    watts_strogatz,
)
from motiftree.tree import ExposureTree, HyperParams, Split, TreeNode


@pytest.mark.parametrize(
    "kwargs", [{"k": 5}, {"k": 0}, {"n": 10, "k": 10}, {"beta": 1.5}]
)
def test_ws_config_validation(kwargs):
    with raises(ValueError):
        WSConfig(**{"n": 100, **kwargs})


def test_watts_strogatz_keeps_edge_count():
    g = watts_strogatz(WSConfig(n=200, k=6, beta=0.3, seed=4))
    assert g.n_nodes == 200
    assert g.degree.sum() == 200 * 6
    again = watts_strogatz(WSConfig(n=200, k=6, beta=0.3, seed=4))
    np.testing.assert_array_equal(g.indices, again.indices)


def kite():
    # star 0-{1,2,3} with the alter edge 1-2, plus isolated node 4
    return Graph.from_edges(5, [(0, 1), (0, 2), (0, 3), (1, 2)])


def test_structural_diversity_small():
    g = kite()
    assert structural_diversity(g, 0, [1, 2, 3]) == 2
    assert structural_diversity(g, 0, [1, 2]) == 1
    assert structural_diversity(g, 0, [1, 3]) == 2
    assert structural_diversity(g, 0, []) == 0
    with raises(ValueError, match="not neighbors of"):
        structural_diversity(g, 3, [1])


def test_structural_diversity_all_small():
    g = kite()
    np.testing.assert_array_equal(
        structural_diversity_all(g, np.ones(5, bool)), [2, 1, 1, 1, 0]
    )
    np.testing.assert_array_equal(
        structural_diversity_all(g, np.zeros(5, bool)), [0, 0, 0, 0, 0]
    )
    with raises(ValueError, match="subset mask"):
        structural_diversity_all(g, np.ones(4, bool))


@pytest.mark.parametrize("seed", range(3))
def test_structural_diversity_all_matches_per_ego(seed):
    g = watts_strogatz(WSConfig(n=80, k=6, beta=0.4, seed=seed))
    mask = np.random.default_rng(seed).random(80) < 0.5
    fast = structural_diversity_all(g, mask)
    for i in range(g.n_nodes):
        subset = [v for v in g.neighbors(i) if mask[v]]
        assert fast[i] == structural_diversity(g, i, subset)


def test_structural_diversity_bounded_by_treated_neighbors():
    g = watts_strogatz(WSConfig(n=300, k=10, beta=0.5, seed=1))
    mask = np.random.default_rng(1).random(300) < 0.5
    sdt = structural_diversity_all(g, mask)
    treated_neighbors = np.array([mask[g.neighbors(i)].sum() for i in range(300)])
    assert np.all(sdt <= treated_neighbors)
    assert np.all((sdt > 0) == (treated_neighbors > 0))


def test_dgp_spec_validation():
    with raises(TypeError, match="Invalid dgp"):
        DGPSpec("bogus")
    with raises(ValueError):
        DGPSpec("null", noise_sd=-1.0)


@pytest.fixture(scope="module")
def ws():
    return watts_strogatz(WSConfig(n=400, k=10, beta=0.5, seed=7))


def test_null_outcome_is_degree(ws):
    y = generate_outcomes(ws, np.zeros(400), DGPSpec("null", 0.0), seed=1)
    np.testing.assert_allclose(y, ws.degree)


def test_outcomes_share_noise_across_assignments(ws):
    spec = DGPSpec("null")
    z = np.random.default_rng(0).integers(0, 2, 400)
    np.testing.assert_array_equal(
        generate_outcomes(ws, z, spec, seed=5), generate_outcomes(ws, 1 - z, spec, seed=5)
    )
    assert not np.array_equal(
        generate_outcomes(ws, z, spec, seed=5), generate_outcomes(ws, z, spec, seed=6)
    )


def test_cutoff_outcome_contrast(ws):
    spec = DGPSpec("cutoff", 0.0)
    y1 = generate_outcomes(ws, np.ones(400), spec, seed=2)
    y0 = generate_outcomes(ws, np.zeros(400), spec, seed=2)
    closed = census(ws, MotifCatalog.named("dyad-triad")).kind_counts(CLOSED_TRIAD)
    np.testing.assert_allclose(y1 - y0, 2.0 * (closed > 0))
    gender = y0 - 0.1 * ws.degree
    np.testing.assert_allclose(np.round(gender), gender, atol=1e-9)
    assert set(np.round(gender).astype(int)) <= {0, 1}


def test_cutoff_threshold_on_treated_closed_triads():
    # triangle 0-1-2: with 1 and 2 treated, ego 0 has 3c-2 fraction 1
    g = Graph.from_edges(3, [(0, 1), (0, 2), (1, 2)])
    spec = DGPSpec("cutoff", 0.0)
    base = generate_outcomes(g, [0, 0, 0], spec, seed=0)
    y = generate_outcomes(g, [1, 1, 1], spec, seed=0)
    np.testing.assert_allclose(y - base, [2.0, 2.0, 2.0])
    y = generate_outcomes(g, [1, 0, 1], spec, seed=0)
    np.testing.assert_allclose(y - base, [0.0, 0.0, 0.0])


def test_sd_outcomes(ws):
    spec = DGPSpec("causal-sd", 0.0)
    sd = structural_diversity_all(ws, np.ones(400, bool))
    y1 = generate_outcomes(ws, np.ones(400), spec, seed=3)
    y0 = generate_outcomes(ws, np.zeros(400), spec, seed=3)
    np.testing.assert_allclose(y1 - y0, 2.0 * sd)
    corr = DGPSpec("corr-sd", 0.0)
    z = np.random.default_rng(3).integers(0, 2, 400)
    diff = generate_outcomes(ws, z, corr, seed=3) - generate_outcomes(
        ws, np.zeros(400), corr, seed=3
    )
    np.testing.assert_allclose(diff, z * sd)


def test_generate_outcomes_shape_check(ws):
    with raises(ValueError, match="assignment has shape"):
        generate_outcomes(ws, np.zeros(10), DGPSpec(), seed=0)


def test_experiment_config_coercion_and_seeds():
    cfg = ExperimentConfig(n="2000", R="50", p="0.5", runs=3, seed=4)
    assert cfg.n == 2000 and cfg.R == 50
    assert cfg.run_seeds() == [4, 5, 6]
    assert cfg.replace(seeds=[9, "11"]).run_seeds() == [9, 11]
    big = cfg.paper_scale()
    assert (big.n, big.R) == (200000, 100)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"p": 1.0},
        {"cluster_size": 0},
        {"runs": 0},
        {"k": 3},
        {"catalog": "tetrad"},
        {"missing": "ignore"},
        {"delta": 2.0},
    ],
)
def test_experiment_config_validation(kwargs):
    with raises((ValueError, TypeError)):
        ExperimentConfig(**kwargs)


def test_experiment_config_hyperparams():
    cfg = ExperimentConfig(kappa=40, R=30, gamma=1.5, max_depth=3)
    params = cfg.hyperparams(seed=8)
    assert params == HyperParams(
        gamma=1.5, kappa=40, delta=0.01, eta=256, max_depth=3, replicates=30, seed=8
    )
    assert cfg.hyperparams(seed=8, gamma=0.25).gamma == 0.25


def test_experiment_config_from_toml(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(
        'n = 1000\ndgp = "null"\nseeds = [3, 4]\n\n[hyperparams]\nkappa = 25\nmax_depth = 4\n'
    )
    cfg = ExperimentConfig.from_toml(path)
    assert cfg.n == 1000
    assert cfg.dgp == "null"
    assert cfg.kappa == 25
    assert cfg.run_seeds() == [3, 4]
    with raises(ValueError, match="unknown experiment setting 'size'"):
        ExperimentConfig.from_mapping({"size": 10})


def fake_report(dgp="cutoff", **overrides):
    full = {
        "gate": {"value": 1.95},
        "treated_first_split": {"axis": "3c-2", "theta": 0.7},
        "significant_feature_splits": [],
    }
    dyad = {
        "gate": {"value": 1.7},
        "treated_first_split": {"axis": "2-1", "theta": 0.5},
        "significant_feature_splits": [],
    }
    direct = {
        "root_split": {"axis": "3c-2", "theta": 0.65},
        "tau_above": {"value": 1.9},
        "tau_below": {"value": 0.05},
        "significant_feature_splits": [],
    }
    fields = dict(
        config=ExperimentConfig(n=100, dgp=dgp),
        seed=0,
        n_nodes=100,
        n_retained=100,
        missing={},
        true_gate=2.0,
        gamma_full=0.1,
        gamma_direct=0.1,
        full=full,
        dyad=dyad,
        direct=direct,
        sutva=Estimate(1.4, 0.1, 100, 100.0),
        four_conditions=[],
        positivity_ok=True,
    )
    fields.update(overrides)
    return RecoveryReport(**fields)


def test_recovery_checks_cutoff_pass():
    checks = recovery_checks(fake_report())
    assert checks == {
        "positivity": True,
        "treated_split": True,
        "gate_ordering": True,
        "gate_window": True,
        "direct_split": True,
        "direct_effects": True,
    }


def test_recovery_checks_cutoff_failures():
    report = fake_report(true_gate=1.6, positivity_ok=False)
    report.full["treated_first_split"] = {"axis": "3c-2", "theta": 0.85}
    report.direct["tau_below"] = {"value": 0.5}
    checks = recovery_checks(report)
    assert not checks["positivity"]
    assert not checks["treated_split"]
    assert not checks["gate_ordering"]
    assert not checks["gate_window"]
    assert checks["direct_split"]
    assert not checks["direct_effects"]
    report.dyad["gate"] = None
    assert not recovery_checks(report)["gate_ordering"]


def test_recovery_checks_sd_and_null():
    report = fake_report("causal-sd")
    report.full["treated_first_split"] = {"axis": "4o-3", "theta": 0.1}
    assert recovery_checks(report) == {"positivity": True, "treated_split": True}
    null = fake_report("null")
    assert recovery_checks(null) == {
        "positivity": True,
        "no_feature_splits": True,
        "no_direct_splits": True,
    }
    null.direct["significant_feature_splits"] = [{"axis": "2-1"}]
    assert not recovery_checks(null)["no_direct_splits"]


def test_summarize_fake_reports():
    bad = fake_report(seed=1)
    bad.full["treated_first_split"] = None
    ds = summarize([fake_report(), bad])
    assert ds.sizes["run"] == 2
    assert ds.attrs["dgp"] == "cutoff"
    assert list(ds["seed"].values) == [0, 1]
    assert list(ds["check_treated_split"].values) == [True, False]
    assert np.isnan(ds["treated_split_theta"].values[1])
    table = summary_table(ds)
    assert "FAIL" in table
    assert table.splitlines()[0].split()[:2] == ["seed", "treated"]
    with raises(ValueError):
        summarize([])


SMALL = ExperimentConfig(n=1500, R=20, kappa=40, max_depth=4, seed=3)


@pytest.fixture(scope="module")
def small_report():
    return run_experiment(SMALL)


def test_run_experiment_report(small_report):
    report = small_report
    assert report.n_nodes == 1500
    assert 0 < report.n_retained <= 1500
    assert 0.0 <= report.true_gate <= 2.0
    assert report.full["tree"]["columns"][0] == "Z"
    assert report.dyad["tree"]["columns"] == ["Z", "2-0", "2-1"]
    assert report.direct["tree"]["mode"] == "direct-effects"
    assert [c["name"] for c in report.four_conditions] == [
        "no exposure",
        "direct",
        "indirect",
        "direct + indirect",
    ]
    assert report.gamma_full > 0
    doc = report.to_dict()
    assert doc["config"]["n"] == 1500
    assert set(doc["checks"]) >= {"positivity", "treated_split"}


def test_run_experiment_deterministic(small_report):
    again = run_experiment(SMALL)
    assert again.true_gate == small_report.true_gate
    assert json.dumps(again.full["tree"], sort_keys=True) == json.dumps(
        small_report.full["tree"], sort_keys=True
    )


def test_run_experiments_workers_match_serial():
    cfg = ExperimentConfig(n=600, R=10, kappa=30, max_depth=3, dgp="null", seeds=(1, 2))
    serial = run_experiments(cfg, workers=1)
    parallel = run_experiments(cfg, workers=2)
    assert [r.seed for r in parallel] == [1, 2]
    for a, b in zip(serial, parallel):
        assert a.true_gate == b.true_gate
        assert json.dumps(a.full["tree"], sort_keys=True) == json.dumps(
            b.full["tree"], sort_keys=True
        )


DESK = ExperimentConfig(n=20000, R=100, seeds=tuple(range(10)))


def passed(reports, check):
    return sum(recovery_checks(r)[check] for r in reports)


@pytest.fixture(scope="module")
def cutoff_runs():
    return run_experiments(DESK)


@pytest.mark.slow
def test_cutoff_split_recovered(cutoff_runs):
    assert passed(cutoff_runs, "treated_split") >= 9


@pytest.mark.slow
def test_cutoff_gate_ordering(cutoff_runs):
    assert passed(cutoff_runs, "gate_ordering") >= 8
    assert passed(cutoff_runs, "gate_window") >= 8


@pytest.mark.slow
def test_cutoff_direct_effects(cutoff_runs):
    good = [
        recovery_checks(r)["direct_split"] and recovery_checks(r)["direct_effects"]
        for r in cutoff_runs
    ]
    assert sum(good) >= 8


@pytest.mark.slow
def test_structural_diversity_split_recovered():
    runs = run_experiments(DESK.replace(dgp="causal-sd"))
    assert passed(runs, "treated_split") >= 8


@pytest.mark.slow
@pytest.mark.parametrize("dgp", ["corr-sd", "null"])
def test_null_processes_have_no_feature_splits(dgp):
    runs = run_experiments(DESK.replace(dgp=dgp))
    assert passed(runs, "no_feature_splits") >= 9


COLUMNS = ("Z", "2-0", "2-1", "3c-0", "3c-1", "3c-2")


def split_node(partition, depth, axis, theta, left=None, right=None):
    left = left or TreeNode(partition.refine(axis, theta, "le"), depth=depth + 1)
    right = right or TreeNode(partition.refine(axis, theta, "gt"), depth=depth + 1)
    return TreeNode(partition, depth=depth, split=Split(1.0, axis, theta),
                    left=left, right=right)


def test_treated_first_split_below_root_z():
    treated = split_node(Partition().refine(0, 0.0, "gt"), 1, 5, 0.7)
    root = split_node(Partition(), 0, 0, 0.0, right=treated)
    tree = ExposureTree(root, COLUMNS, HyperParams())
    assert treated_first_split(tree) == {"axis": "3c-2", "theta": 0.7}


def test_treated_first_split_needs_a_z_split():
    tree = ExposureTree(split_node(Partition(), 0, 5, 0.7), COLUMNS, HyperParams())
    assert treated_first_split(tree) is None
    below = Partition().refine(5, 0.7, "le")
    root = split_node(Partition(), 0, 5, 0.7, left=split_node(below, 1, 0, 0.0))
    tree = ExposureTree(root, COLUMNS, HyperParams())
    assert treated_first_split(tree) is None
    tree = ExposureTree(TreeNode(Partition()), COLUMNS, HyperParams())
    assert treated_first_split(tree) is None

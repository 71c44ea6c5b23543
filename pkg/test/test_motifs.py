import itertools
import warnings

import networkx as nx
import numpy as np
import pytest
from pytest import raises

from motiftree import motifs
from motiftree.graph import Graph
from motiftree.motifs import (
    CLOSED_TRIAD,
    DYAD,
    OPEN_TETRAD,
    OPEN_TRIAD,
    MissingPolicy,
    MissingPolicyError,
    MotifCatalog,
)

FULL = MotifCatalog.named("full")


def brute_force_counts(g, z):
    """Label counts by enumerating every alter subset of every ego."""
    columns = FULL.columns
    out = np.zeros((g.n_nodes, len(columns)), dtype=np.int64)
    for ego in range(g.n_nodes):
        alters = g.neighbors(ego).tolist()
        for a in alters:
            out[ego, columns.index(f"2-{z[a]}")] += 1
        for a, b in itertools.combinations(alters, 2):
            kind = "3c" if g.has_edge(a, b) else "3o"
            out[ego, columns.index(f"{kind}-{z[a] + z[b]}")] += 1
        for trio in itertools.combinations(alters, 3):
            if not any(g.has_edge(u, v) for u, v in itertools.combinations(trio, 2)):
                t = sum(z[v] for v in trio)
                out[ego, columns.index(f"4o-{t}")] += 1
    return out


def random_case(seed, p):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 31))
    g = Graph.from_networkx(nx.gnp_random_graph(n, p, seed=seed))
    z = rng.integers(0, 2, n)
    return g, z


@pytest.mark.parametrize("p", [0.2, 0.5, 0.8])
@pytest.mark.parametrize("seed", range(17))
def test_label_counts_match_brute_force(seed, p):
    g, z = random_case(seed, p)
    counts = motifs.label_counts(g, FULL, z)
    np.testing.assert_array_equal(counts.labeled, brute_force_counts(g, z))


@pytest.mark.parametrize("seed", range(5))
def test_label_sums_equal_unlabeled(seed):
    g, z = random_case(seed, 0.5)
    counts = motifs.label_counts(g, FULL, z)
    for kind in FULL.kinds:
        block = np.column_stack([counts[label] for label in kind.labels])
        np.testing.assert_array_equal(block.sum(axis=1), counts.kind_counts(kind))
    np.testing.assert_array_equal(counts.kind_counts(DYAD), g.degree)


def test_census_matches_networkx_triangles():
    nxg = nx.gnp_random_graph(40, 0.3, seed=8)
    g = Graph.from_networkx(nxg)
    census = motifs.census(g, FULL)
    expected = [nx.triangles(nxg, i) for i in range(40)]
    np.testing.assert_array_equal(census.kind_counts(CLOSED_TRIAD), expected)
    assert len(motifs.triangles(g)) == sum(expected) // 3


def test_census_reused_across_assignments():
    g, _ = random_case(3, 0.5)
    census = motifs.census(g, FULL)
    rng = np.random.default_rng(0)
    for _ in range(3):
        z = rng.integers(0, 2, g.n_nodes)
        np.testing.assert_array_equal(
            motifs.label_counts(g, FULL, z, census).labeled,
            motifs.label_counts(g, FULL, z).labeled,
        )


def test_triangle_labels():
    g = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    counts = motifs.label_counts(g, FULL, [0, 1, 0])
    assert counts["3c-1"][0] == 1
    assert counts["3o-1"][0] == 0
    assert counts["2-1"][0] == 1
    assert counts["2-0"][0] == 1


def test_star_counts():
    g = Graph.from_edges(6, [(0, i) for i in range(1, 6)])
    counts = motifs.label_counts(g, FULL, np.ones(6, dtype=int))
    assert counts.kind_counts(OPEN_TRIAD)[0] == 10
    assert counts.kind_counts(CLOSED_TRIAD)[0] == 0
    assert counts.kind_counts(OPEN_TETRAD)[0] == 10
    assert counts["4o-3"][0] == 10
    assert counts["3o-2"][0] == 10
    np.testing.assert_array_equal(counts.kind_counts(OPEN_TRIAD)[1:], 0)


def test_ego_label_ignores_own_assignment():
    g, z = random_case(6, 0.5)
    flipped = z.copy()
    flipped[0] = 1 - flipped[0]
    a = motifs.label_counts(g, FULL, z).labeled[0]
    b = motifs.label_counts(g, FULL, flipped).labeled[0]
    np.testing.assert_array_equal(a, b)


def test_label_counts_errors():
    g = Graph.from_edges(3, [(0, 1)])
    with raises(ValueError, match="3 nodes"):
        motifs.label_counts(g, FULL, [0, 1])
    census = motifs.census(g, MotifCatalog.named("dyad"))
    with raises(ValueError, match="different graph or catalog"):
        motifs.label_counts(g, FULL, [0, 1, 0], census)


def test_catalog():
    catalog = MotifCatalog((OPEN_TETRAD, DYAD))
    assert catalog.kinds == (DYAD, OPEN_TETRAD)
    assert catalog.columns == ("2-0", "2-1", "4o-0", "4o-1", "4o-2", "4o-3")
    assert OPEN_TETRAD in catalog
    assert not MotifCatalog.named("dyad").needs_triangles
    assert MotifCatalog.named("dyad-triad").columns[-1] == "3c-2"
    assert len(FULL.columns) == 12
    assert OPEN_TETRAD.fully_treated == "4o-3"
    assert OPEN_TETRAD.fully_control == "4o-0"


def test_catalog_errors():
    with raises(ValueError, match="must include dyads"):
        MotifCatalog((OPEN_TRIAD,))
    with raises(TypeError, match="Invalid catalog 'triads'"):
        MotifCatalog.named("triads")
    with raises(TypeError, match="Invalid motif kind"):
        MotifCatalog((DYAD, motifs.MotifKind("5o", 4)))


def mixed_graph():
    # star 0-{1,2,3}, triangle 4-5-6, isolated 7
    return Graph.from_edges(8, [(0, 1), (0, 2), (0, 3), (4, 5), (5, 6), (4, 6)])


def test_missing_policy_auto_drops_sparse_kinds():
    g = mixed_graph()
    census = motifs.census(g, FULL)
    report = MissingPolicy("auto", 0.05).resolve(census, warn=False)
    assert report.kept_kinds == (DYAD,)
    assert report.dropped_kinds == (OPEN_TRIAD, CLOSED_TRIAD, OPEN_TETRAD)
    np.testing.assert_array_equal(report.kept_nodes, np.arange(7))
    np.testing.assert_array_equal(report.dropped_nodes, [7])
    assert report.undefined_fraction["3c"] == pytest.approx(4 / 7)
    assert report.undefined_fraction["2"] == 0.0


def test_missing_policy_threshold_keeps_kind():
    census = motifs.census(mixed_graph(), FULL)
    report = MissingPolicy("auto", 0.6).resolve(census, warn=False)
    assert report.kept_kinds == (DYAD, CLOSED_TRIAD)
    np.testing.assert_array_equal(report.kept_nodes, [4, 5, 6])
    assert report.kept_columns == ("2-0", "2-1", "3c-0", "3c-1", "3c-2")


def test_missing_policy_drop_nodes_can_fail():
    census = motifs.census(mixed_graph(), FULL)
    with raises(MissingPolicyError, match="no nodes"):
        MissingPolicy("drop-nodes").resolve(census, warn=False)


def test_missing_policy_drop_feature():
    g = Graph.from_networkx(nx.complete_graph(5))
    census = motifs.census(g, MotifCatalog.named("dyad-triad"))
    report = MissingPolicy("drop-feature").resolve(census, warn=False)
    # every ego of K5 has closed triads and no open ones
    assert report.kept_kinds == (DYAD, CLOSED_TRIAD)
    assert len(report.dropped_nodes) == 0


def test_missing_policy_warns():
    census = motifs.census(mixed_graph(), FULL)
    with pytest.warns(UserWarning, match="dropped 1 of 8 nodes"):
        MissingPolicy().resolve(census)


def test_missing_policy_validation():
    with raises(TypeError, match="Invalid missing-data policy"):
        MissingPolicy("impute")
    with raises(ValueError):
        MissingPolicy("auto", 1.5)
    g = Graph.from_edges(3, [])
    with raises(MissingPolicyError):
        MissingPolicy().resolve(motifs.census(g, FULL), warn=False)


def test_interference_vector_and_features():
    g = mixed_graph()
    z = np.array([1, 1, 0, 1, 0, 1, 1, 0])
    counts = motifs.label_counts(g, FULL, z)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        vectors = motifs.interference_vector(counts, MissingPolicy("auto", 0.6))
    assert np.isnan(vectors.fractions[0, FULL.columns.index("3c-0")])
    np.testing.assert_allclose(vectors.fractions[0, :2], [1 / 3, 2 / 3])
    x = vectors.x
    assert x.shape == (3, 5)
    # node 4: alters 5, 6 both treated
    np.testing.assert_allclose(x[0], [0, 1, 0, 0, 1])

    F = motifs.feature_matrix(z, vectors)
    assert F.columns == ("Z", "2-0", "2-1", "3c-0", "3c-1", "3c-2")
    np.testing.assert_array_equal(F.nodes, [4, 5, 6])
    np.testing.assert_array_equal(F.z, [0, 1, 1])
    np.testing.assert_allclose(F.column("3c-1"), [0, 1, 1])
    sub = F.subset(np.array([False, True, True]))
    assert len(sub) == 2
    assert list(F.to_dataframe().index) == [4, 5, 6]


def test_interference_vector_rows_sum_to_one():
    g, z = random_case(11, 0.5)
    counts = motifs.label_counts(g, FULL, z)
    vectors = motifs.interference_vector(counts, MissingPolicy("drop-feature"))
    for kind, cols in motifs.kind_slices(vectors.kept_columns).items():
        np.testing.assert_allclose(vectors.x[:, cols].sum(axis=1), 1.0)
        assert kind in {"2", "3o", "3c", "4o"}


def test_feature_matrix_shape_check():
    g = mixed_graph()
    counts = motifs.label_counts(g, FULL, np.zeros(8, dtype=int))
    vectors = motifs.interference_vector(counts, MissingPolicy("auto").resolve(counts, warn=False))
    with raises(ValueError, match="cover 8 nodes"):
        motifs.feature_matrix(np.zeros(5), vectors)


def test_motif_table():
    g = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    table = motifs.motif_table(g, FULL, [0, 1, 0])
    labeled = list(FULL.columns)
    assert list(table.columns[:5]) == ["node", "deg", "2-0", "2-1", "3o-0"]
    assert list(table.columns[2 : 2 + len(labeled)]) == labeled
    extras = list(table.columns[2 + len(labeled) : 6 + len(labeled)])
    assert extras == ["z", "n_3o", "n_3c", "n_4o"]
    assert table.loc[0, "3c-1"] == 1
    assert table.loc[0, "x_3c-1"] == 1.0
    assert np.isnan(table.loc[0, "x_3o-0"])


def test_kind_slices():
    slices = motifs.kind_slices(("Z", "2-0", "2-1", "3c-0", "3c-1", "3c-2"))
    assert slices == {"2": slice(1, 3), "3c": slice(3, 6)}

import numpy as np
import pytest
from pytest import raises

from motiftree import assignment
from motiftree.assignment import AssignmentFileError, ClusterBernoulli, IndependentBernoulli


def test_bernoulli_draw_values():
    z = assignment.draw(IndependentBernoulli(0.3), 1000, seed=1)
    assert z.dtype == np.uint8
    assert set(np.unique(z)) <= {0, 1}
    assert 200 < z.sum() < 400


def test_draw_is_seeded():
    design = IndependentBernoulli(0.5)
    np.testing.assert_array_equal(
        assignment.draw(design, 50, seed=3), assignment.draw(design, 50, seed=3)
    )
    assert not np.array_equal(
        assignment.draw(design, 50, seed=3), assignment.draw(design, 50, seed=4)
    )


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_probability_must_be_open_interval(p):
    with raises(ValueError, match=r"\(0, 1\)"):
        IndependentBernoulli(p)
    with raises(ValueError):
        ClusterBernoulli([0, 1], p)


def test_cluster_members_share_assignment():
    design = ClusterBernoulli(assignment.ring_clusters(100, 10), 0.5)
    assert design.n_clusters == 10
    z = assignment.draw(design, 100, seed=5)
    blocks = z.reshape(10, 10)
    assert (blocks == blocks[:, :1]).all()


def test_cluster_labels_relabeled_densely():
    design = ClusterBernoulli([7, 3, 7, -1], 0.5)
    np.testing.assert_array_equal(design.cluster_of, [2, 1, 2, 0])
    assert design.n_clusters == 3


def test_cluster_map_length_checked():
    design = ClusterBernoulli([0, 0, 1], 0.5)
    with raises(ValueError, match="covers 3 nodes"):
        assignment.draw(design, 4, seed=0)


def test_replicates_match_single_draws():
    design = IndependentBernoulli(0.5)
    repl = assignment.draw_replicates(design, 40, 6, seed=11)
    assert repl.shape == (6, 40)
    for r in (0, 5):
        np.testing.assert_array_equal(repl[r], assignment.draw(design, 40, 11, stream=r))


def test_replicates_independent_of_threads():
    design = ClusterBernoulli(assignment.ring_clusters(60, 4), 0.4)
    serial = assignment.draw_replicates(design, 60, 20, seed=2, threads=1)
    threaded = assignment.draw_replicates(design, 60, 20, seed=2, threads=4)
    np.testing.assert_array_equal(serial, threaded)


def test_replicates_need_positive_R():
    with raises(ValueError):
        assignment.draw_replicates(IndependentBernoulli(), 5, 0, seed=0)


def test_ring_clusters():
    np.testing.assert_array_equal(assignment.ring_clusters(7, 3), [0, 0, 0, 1, 1, 1, 2])
    with raises(ValueError):
        assignment.ring_clusters(5, 0)


def test_read_assignment(tmp_path):
    path = tmp_path / "z.csv"
    path.write_text("node,z\n2,1\n0,0\n# trailing comment\n1,1\n")
    z = assignment.read_assignment(path)
    assert z.dtype == np.uint8
    np.testing.assert_array_equal(z, [0, 1, 1])


@pytest.mark.parametrize(
    ("text", "message"),
    [
        ("id,z\n0,1\n", "expected header 'node,z'"),
        ("node,z\n0,1\n1,x\n", "line 3: z must be an integer"),
        ("node,z\n0,1\n0,0\n", "line 3: duplicate node 0"),
        ("node,z\n0,1\n5,0\n", "line 3: node id 5 out of range"),
        ("node,z\n0,2\n1,0\n", "z of node 0 must be 0 or 1"),
    ],
)
def test_read_assignment_errors(tmp_path, text, message):
    path = tmp_path / "z.csv"
    path.write_text(text)
    with raises(AssignmentFileError, match=message):
        assignment.read_assignment(path)


def test_read_assignment_row_count(tmp_path):
    path = tmp_path / "z.csv"
    path.write_text("node,z\n0,1\n1,0\n")
    with raises(AssignmentFileError, match="expected 3 rows"):
        assignment.read_assignment(path, n_nodes=3)


def test_parse_design_bernoulli():
    assert assignment.parse_design("bernoulli:0.3", 10) == IndependentBernoulli(0.3)


def test_parse_design_cluster(tmp_path):
    (tmp_path / "clusters.csv").write_text("node,cluster\n0,0\n1,0\n2,5\n3,5\n")
    design = assignment.parse_design("cluster:clusters.csv,0.25", 4, base_dir=tmp_path)
    assert isinstance(design, ClusterBernoulli)
    assert design.p == 0.25
    np.testing.assert_array_equal(design.cluster_of, [0, 0, 1, 1])


def test_parse_design_errors():
    with raises(TypeError, match="Invalid design 'poisson'"):
        assignment.parse_design("poisson:0.5", 10)
    with raises(ValueError, match="must look like"):
        assignment.parse_design("bernoulli", 10)
    with raises(ValueError, match="invalid probability"):
        assignment.parse_design("bernoulli:half", 10)
    with raises(ValueError, match="cluster:path,p"):
        assignment.parse_design("cluster:0.5", 10)

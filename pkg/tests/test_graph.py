"""Sensor graph construction, Laplacian contracts, and the graph Fourier
transform."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from odecast.errors import ContractViolation, DegenerateInputError
from odecast.graph import (
    SensorGraph,
    adjacency_from_distances,
    euclidean_distances,
    gft,
    great_circle_distances,
    igft,
    load_coordinates_csv,
    load_matrix_csv,
    normalized_laplacian,
    save_coordinates_csv,
    save_matrix_csv,
    synthetic_graph,
)
from odecast.numerics import RngStream

from helpers import random_graph


class TestDistances:
    def test_euclidean_worked_example(self):
        coords = np.array([[0.0, 0.0], [3.0, 4.0], [0.0, 8.0]])
        d = euclidean_distances(coords)
        expected = np.array([[0.0, 5.0, 8.0], [5.0, 0.0, np.sqrt(9 + 16)], [8.0, 5.0, 0.0]])
        assert np.abs(d - expected).max() < 1e-12

    def test_great_circle_quarter_meridian(self):
        # pole to equator along one meridian is a quarter of the circumference
        latlon = np.array([[90.0, 0.0], [0.0, 0.0]])
        d = great_circle_distances(latlon)
        assert d[0, 1] == pytest.approx(np.pi / 2 * 6371.0, rel=1e-12)

    def test_great_circle_symmetry_zero_diag(self):
        stream = RngStream(1, 1)
        latlon = np.column_stack(
            [stream.uniform(-80, 80, (10,)), stream.uniform(-179, 179, (10,))]
        )
        d = great_circle_distances(latlon)
        assert np.abs(d - d.T).max() < 1e-9
        assert np.abs(np.diag(d)).max() == 0.0


class TestAdjacencyKernel:
    def test_worked_example_exact(self):
        # three nodes on a line at 0, 1, 3; off-diagonal distances {1,2,3}
        d = np.array([[0.0, 1.0, 3.0], [1.0, 0.0, 2.0], [3.0, 2.0, 0.0]])
        offdiag = np.array([1.0, 3.0, 1.0, 2.0, 3.0, 2.0])
        sigma = offdiag.std()
        expected = np.exp(-(d**2) / sigma**2)
        expected[expected < 0.1] = 0.0
        np.fill_diagonal(expected, 0.0)
        got = adjacency_from_distances(d)
        assert np.abs(got - expected).max() < 1e-15

    def test_threshold_prunes(self):
        d = np.array([[0.0, 1.0], [1.0, 0.0]])
        got = adjacency_from_distances(d, kernel_width=0.1, threshold=0.5)
        assert np.all(got == 0.0)

    def test_identical_points_degenerate(self):
        d = np.zeros((3, 3))
        with pytest.raises(DegenerateInputError):
            adjacency_from_distances(d)

    def test_explicit_kernel_width_used(self):
        d = np.array([[0.0, 2.0], [2.0, 0.0]])
        got = adjacency_from_distances(d, kernel_width=2.0, threshold=0.0)
        assert got[0, 1] == pytest.approx(np.exp(-1.0), rel=1e-15)

    def test_asymmetric_rejected(self):
        d = np.array([[0.0, 1.0], [2.0, 0.0]])
        with pytest.raises(ContractViolation):
            adjacency_from_distances(d)


class TestLaplacian:
    def test_eigenvalue_range_on_random_graphs(self):
        stream = RngStream(21, 1)
        for trial in range(100):
            n = int(stream.integers(2, 33, ()))
            g = random_graph(stream.substream(trial + 1), n, extra_edges=n // 2)
            assert g.eigenvalues.min() >= -1e-10
            assert g.eigenvalues.max() <= 2.0 + 1e-10

    def test_kernel_vector(self):
        # D^{1/2} 1 is an eigenvector of L with eigenvalue 0
        g = random_graph(RngStream(5, 2), 14, extra_edges=6)
        deg = g.adjacency.sum(axis=1)
        v = np.sqrt(deg)
        assert np.abs(g.laplacian @ v).max() < 1e-10

    def test_isolated_node_row_zeroed(self):
        a = np.zeros((3, 3))
        a[0, 1] = a[1, 0] = 1.0
        lap = normalized_laplacian(a)
        assert np.all(lap[2] == 0.0) and np.all(lap[:, 2] == 0.0)
        # connected part keeps the usual structure
        assert lap[0, 0] == 1.0 and lap[0, 1] == pytest.approx(-1.0)

    def test_symmetry(self):
        g = random_graph(RngStream(6, 2), 9, extra_edges=3)
        assert np.abs(g.laplacian - g.laplacian.T).max() == 0.0


class TestGft:
    def test_round_trip(self):
        g = random_graph(RngStream(7, 3), 10, extra_edges=5)
        x = RngStream(8, 3).gaussian((10, 4))
        back = igft(g, gft(g, x))
        assert np.abs(back - x).max() < 1e-10

    def test_parseval(self):
        g = random_graph(RngStream(9, 3), 12, extra_edges=4)
        x = RngStream(10, 3).gaussian((12,))
        c = gft(g, x)
        assert np.sum(c**2) == pytest.approx(np.sum(x**2), rel=1e-12)

    def test_round_trip_other_axis(self):
        g = random_graph(RngStream(11, 3), 6, extra_edges=2)
        x = RngStream(12, 3).gaussian((3, 6, 2))
        back = igft(g, gft(g, x, axis=1), axis=1)
        assert np.abs(back - x).max() < 1e-10

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000), st.integers(min_value=3, max_value=12))
    def test_permutation_equivariance(self, seed, n):
        # relabeling nodes permutes the smoothed signal the same way
        g = random_graph(RngStream(seed, 40), n, extra_edges=2)
        perm = RngStream(seed, 41).permutation(n)
        x = RngStream(seed, 42).gaussian((n,))
        a_p = g.adjacency[np.ix_(perm, perm)]
        g_p = SensorGraph.from_adjacency(a_p)
        y = g.laplacian @ x
        y_p = g_p.laplacian @ x[perm]
        assert np.abs(y_p - y[perm]).max() < 1e-10


class TestSyntheticGraph:
    def test_connected_and_seeded(self):
        g1, c1 = synthetic_graph(12, RngStream(0, 50))
        g2, c2 = synthetic_graph(12, RngStream(0, 50))
        assert np.array_equal(g1.adjacency, g2.adjacency)
        assert np.array_equal(c1, c2)
        assert np.all(g1.adjacency.sum(axis=1) > 0)
        assert g1.eigenvalues[1] > 1e-8

    def test_small_graphs_work(self):
        for n in (2, 3, 5):
            g, _ = synthetic_graph(n, RngStream(3, 50))
            assert g.n_nodes == n
            assert np.all(g.adjacency.sum(axis=1) > 0)


class TestGraphHash:
    def test_hash_stable_and_sensitive(self):
        g = random_graph(RngStream(13, 4), 8, extra_edges=2)
        same = SensorGraph.from_adjacency(g.adjacency.copy())
        assert g.hash() == same.hash()
        bumped = g.adjacency.copy()
        i, j = np.nonzero(bumped)
        bumped[i[0], j[0]] *= 1.0 + 1e-12
        assert SensorGraph.from_adjacency(bumped).hash() != g.hash()


class TestGraphCsv:
    def test_coordinates_round_trip(self, tmp_path):
        path = tmp_path / "coords.csv"
        ids = ["a", "b", "c"]
        coords = np.array([[0.0, 1.5], [2.25, -1.0], [1e-7, 3.0]])
        save_coordinates_csv(path, ids, coords, kind="xy")
        got_ids, got, kind = load_coordinates_csv(path)
        assert got_ids == ids
        assert kind == "xy"
        assert np.array_equal(got, coords)

    def test_latlon_header_detected(self, tmp_path):
        path = tmp_path / "coords.csv"
        path.write_text("node_id,lat,lon\ns1,40.5,-74.25\ns2,41.0,-73.5\n")
        ids, coords, kind = load_coordinates_csv(path)
        assert kind == "latlon"
        assert ids == ["s1", "s2"]
        assert coords[0, 0] == 40.5

    def test_matrix_round_trip(self, tmp_path):
        path = tmp_path / "adj.csv"
        m = random_graph(RngStream(14, 4), 6, extra_edges=2).adjacency
        save_matrix_csv(path, m)
        got = load_matrix_csv(path)
        assert np.array_equal(got, m)

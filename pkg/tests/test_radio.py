import numpy as np
import pytest
from hypothesis import given, strategies as st

from adhocsim.mobility import NodeState
from adhocsim.radio import LOSSY, UNIT_DISK, RadioModel, connectivity_graph, delivery_probability, probability_at


def node(nid, x, y, enabled=True):
    return NodeState(nid, (float(x), float(y)), enabled=enabled)


class TestDeliveryProbability:
    def test_unit_disk_inside(self):
        r = RadioModel(UNIT_DISK, range=10)
        assert delivery_probability(node(0, 0, 0), node(1, 5, 0), r) == 1.0
        assert delivery_probability(node(0, 0, 0), node(1, 10, 0), r) == 1.0

    def test_unit_disk_outside(self):
        r = RadioModel(UNIT_DISK, range=10)
        assert delivery_probability(node(0, 0, 0), node(1, 10.001, 0), r) == 0.0

    def test_lossless_limit_any_in_range_distance(self):
        r = RadioModel(LOSSY, range=50, reference_loss_prob=0.0)
        for d in (0.5, 1, 7, 49.9, 50):
            assert probability_at(d, r) == 1.0

    def test_falloff_with_explicit_reference_distance(self):
        r = RadioModel(LOSSY, range=100, path_loss_exponent=2.0,
                       reference_loss_prob=0.25, reference_distance=10.0)
        assert probability_at(20.0, r) == pytest.approx(0.75 * 0.25)
        # below the reference distance it saturates at 1-q
        assert probability_at(3.0, r) == pytest.approx(0.75)
        assert probability_at(100.5, r) == 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            RadioModel("fancy")
        with pytest.raises(ValueError):
            RadioModel(UNIT_DISK, range=0)
        with pytest.raises(ValueError):
            RadioModel(LOSSY, reference_loss_prob=1.5)
        with pytest.raises(ValueError):
            RadioModel(LOSSY, path_loss_exponent=0.5)

    @given(st.floats(-500, 500), st.floats(-500, 500), st.floats(-500, 500), st.floats(-500, 500))
    def test_symmetry(self, ax, ay, bx, by):
        r = RadioModel(LOSSY, range=100, reference_loss_prob=0.3, reference_distance=5.0)
        a, b = node(0, ax, ay), node(1, bx, by)
        assert delivery_probability(a, b, r) == delivery_probability(b, a, r)


class TestConnectivityGraph:
    def test_collinear_path_graph(self):
        nodes = [node(1, 0, 0), node(2, 8, 0), node(3, 16, 0)]
        g = connectivity_graph(nodes, RadioModel(UNIT_DISK, range=10))
        assert g == {1: {2}, 2: {1, 3}, 3: {2}}

    def test_all_disabled_gives_empty_graph(self):
        nodes = [node(1, 0, 0, enabled=False), node(2, 1, 0, enabled=False)]
        assert connectivity_graph(nodes, RadioModel(UNIT_DISK, range=10)) == {}

    def test_disabled_nodes_excluded(self):
        nodes = [node(1, 0, 0), node(2, 5, 0, enabled=False), node(3, 8, 0)]
        g = connectivity_graph(nodes, RadioModel(UNIT_DISK, range=10))
        assert g == {1: {3}, 3: {1}}

    def test_certain_loss_gives_empty_edges(self):
        nodes = [node(1, 0, 0), node(2, 1, 0)]
        g = connectivity_graph(nodes, RadioModel(LOSSY, range=10, reference_loss_prob=1.0))
        assert g == {1: set(), 2: set()}

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    @pytest.mark.parametrize("mode", [UNIT_DISK, LOSSY])
    def test_fifty_random_nodes_match_brute_force(self, seed, mode):
        rng = np.random.default_rng(seed)
        radio = RadioModel(mode, range=40, reference_loss_prob=0.2, reference_distance=8.0)
        nodes = [
            NodeState(i, (float(x), float(y)), enabled=bool(e))
            for i, (x, y, e) in enumerate(
                zip(rng.uniform(0, 200, 50), rng.uniform(0, 200, 50), rng.random(50) < 0.9)
            )
        ]
        # oracle: O(n^2) pairwise check straight off the probability function
        expected = {s.node_id: set() for s in nodes if s.enabled}
        live = [s for s in nodes if s.enabled]
        for i, a in enumerate(live):
            for b in live[i + 1:]:
                if delivery_probability(a, b, radio) > 0:
                    expected[a.node_id].add(b.node_id)
                    expected[b.node_id].add(a.node_id)
        assert connectivity_graph(nodes, radio) == expected

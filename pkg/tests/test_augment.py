from collections import deque

import numpy as np
import pytest

from urcl.augment import (FAMILIES, TIME_VARIANTS, Augmentation, AugmentationParams,
                          GraphSample, add_edges, apply_augmentation, draw_view_kinds,
                          drop_edges, drop_nodes, edge_weight_threshold, random_view_pair,
                          sample_subgraph, time_shifting)
from urcl.exceptions import ContractError


def ring_adjacency(nodes, weight=1.0):
    a = np.zeros((nodes, nodes))
    for i in range(nodes):
        a[i, (i + 1) % nodes] = weight
        a[(i + 1) % nodes, i] = weight
    return a


def path_adjacency(nodes):
    a = np.zeros((nodes, nodes))
    for i in range(nodes - 1):
        a[i, i + 1] = 1.0
        a[i + 1, i] = 1.0
    return a


def sample_of(adjacency, batch=2, steps=4, channels=1, rng=None):
    rng = rng or np.random.default_rng(0)
    nodes = adjacency.shape[0]
    return GraphSample(window=rng.normal(size=(batch, steps, nodes, channels)),
                       adjacency=adjacency.astype(np.float64))


def bfs_connected(adjacency, nodes_kept):
    """Breadth-first check that the kept nodes form one connected piece."""
    kept = sorted(nodes_kept)
    if not kept:
        return True
    sym = (adjacency > 0) | (adjacency.T > 0)
    seen = {kept[0]}
    queue = deque([kept[0]])
    while queue:
        node = queue.popleft()
        for nxt in np.nonzero(sym[node])[0]:
            if nxt in nodes_kept and nxt not in seen:
                seen.add(int(nxt))
                queue.append(int(nxt))
    return seen == set(kept)


class TestDropNodes:
    def test_zero_ratio_is_identity(self):
        sample = sample_of(ring_adjacency(6))
        out = drop_nodes(sample, 0.0, np.random.default_rng(1))
        np.testing.assert_array_equal(out.window, sample.window)
        np.testing.assert_array_equal(out.adjacency, sample.adjacency)

    def test_ten_percent_of_ten_nodes_masks_one(self):
        sample = sample_of(ring_adjacency(10))
        out = drop_nodes(sample, 0.1, np.random.default_rng(2))
        zero_rows = np.where(~out.adjacency.any(axis=1))[0]
        assert len(zero_rows) == 1
        node = zero_rows[0]
        assert not out.adjacency[:, node].any()
        assert not out.window[:, :, node, :].any()

    def test_surviving_entries_untouched(self):
        sample = sample_of(path_adjacency(4))
        out = drop_nodes(sample, 0.5, np.random.default_rng(3))
        masked = {v for v in range(4) if not out.window[:, :, v, :].any()}
        assert len(masked) == 2
        for i in range(4):
            for j in range(4):
                if i not in masked and j not in masked:
                    assert out.adjacency[i, j] == sample.adjacency[i, j]

    def test_input_not_mutated(self):
        sample = sample_of(ring_adjacency(8))
        before = sample.adjacency.copy()
        drop_nodes(sample, 0.4, np.random.default_rng(4))
        np.testing.assert_array_equal(sample.adjacency, before)


class TestDropEdges:
    def test_zero_ratio_is_identity(self):
        sample = sample_of(ring_adjacency(6, weight=0.05))
        out = drop_edges(sample, 0.0, 0.1, np.random.default_rng(5))
        np.testing.assert_array_equal(out.adjacency, sample.adjacency)

    def test_strong_edges_survive(self):
        sample = sample_of(ring_adjacency(6, weight=0.5))
        out = drop_edges(sample, 0.9, 0.1, np.random.default_rng(6))
        np.testing.assert_array_equal(out.adjacency, sample.adjacency)

    def test_only_weak_sampled_edges_removed(self):
        a = np.zeros((6, 6))
        weak = [(0, 1), (2, 3)]
        strong = [(1, 2), (3, 4), (4, 5)]
        for i, j in weak:
            a[i, j] = 0.05
        for i, j in strong:
            a[i, j] = 0.5
        sample = sample_of(a)
        # ratio 0.9 samples 4 of 5 entries; find a draw covering both weak edges
        for seed in range(50):
            out = drop_edges(sample, 0.9, 0.1, np.random.default_rng(seed))
            removed = {(i, j) for i, j in np.argwhere((a != 0) & (out.adjacency == 0))}
            if removed == set(weak):
                break
        assert removed == set(weak)
        for i, j in strong:
            assert out.adjacency[i, j] == 0.5

    def test_never_increases_entries(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            sample = sample_of(ring_adjacency(7, weight=float(rng.uniform(0.01, 1))))
            out = drop_edges(sample, float(rng.uniform(0, 0.9)),
                             float(rng.uniform(0, 1)), rng)
            assert (out.adjacency <= sample.adjacency + 1e-15).all()


class TestSampleSubgraph:
    def test_full_coverage_keeps_everything(self):
        sample = sample_of(ring_adjacency(8))
        out = sample_subgraph(sample, 1.0, np.random.default_rng(9))
        np.testing.assert_array_equal(out.adjacency, sample.adjacency)
        np.testing.assert_array_equal(out.window, sample.window)

    def test_two_node_half_coverage(self):
        a = np.zeros((2, 2))
        a[0, 1] = a[1, 0] = 1.0
        out = sample_subgraph(sample_of(a), 0.5, np.random.default_rng(10))
        kept = [v for v in range(2) if out.window[:, :, v, :].any()]
        assert len(kept) == 1

    def test_ring_walk_yields_connected_arc(self):
        for seed in range(25):
            sample = sample_of(ring_adjacency(10))
            out = sample_subgraph(sample, 0.8, np.random.default_rng(seed))
            kept = {v for v in range(10) if out.adjacency[v].any() or v in
                    np.nonzero(out.adjacency.any(axis=0))[0]}
            kept = {v for v in range(10) if out.window[:, :, v, :].any()}
            assert len(kept) == 8
            assert bfs_connected(sample.adjacency, kept)

    def test_disconnected_graph_keeps_component(self, caplog):
        a = np.zeros((4, 4))
        a[0, 1] = a[1, 0] = 1.0   # second component: nodes 2, 3 isolated pair
        a[2, 3] = a[3, 2] = 1.0
        out = sample_subgraph(sample_of(a), 1.0, np.random.default_rng(11))
        kept = {v for v in range(4) if out.window[:, :, v, :].any()}
        assert kept in ({0, 1}, {2, 3})


class TestAddEdges:
    def test_orthogonal_features_zero_weight(self):
        a = path_adjacency(5)
        window = np.zeros((1, 2, 5, 2))
        window[..., 0, 0] = 1.0   # node 0 feature (1, 0)
        window[..., 4, 1] = 1.0   # node 4 feature (0, 1)
        sample = GraphSample(window=window, adjacency=a)
        out = add_edges(sample, 0.3, 3, np.random.default_rng(12))
        changed = (out.adjacency != a)
        if changed.any():
            assert out.adjacency[changed].max() == 0.0

    def test_dot_product_weight_value(self):
        a = path_adjacency(5)
        window = np.zeros((1, 1, 5, 2))
        window[0, 0, 0] = [1.0, 2.0]
        window[0, 0, 4] = [3.0, 4.0]
        sample = GraphSample(window=window, adjacency=a)
        rng = np.random.default_rng(13)
        out = None
        # keep drawing until the (0, 4) pair is selected
        for _ in range(50):
            out = add_edges(sample, 0.2, 4, rng)
            if out.adjacency[0, 4] != 0.0:
                break
        assert out.adjacency[0, 4] == pytest.approx(11.0)
        assert out.adjacency[4, 0] == pytest.approx(11.0)

    def test_three_node_path_has_no_qualifying_pair(self):
        sample = sample_of(path_adjacency(3))
        out = add_edges(sample, 0.9, 3, np.random.default_rng(14))
        np.testing.assert_array_equal(out.adjacency, sample.adjacency)

    def test_min_hop_constraint_respected(self):
        rng = np.random.default_rng(15)
        from urcl.augment import _hop_distances
        for _ in range(20):
            sample = sample_of(ring_adjacency(12), rng=rng)
            hops = _hop_distances(sample.adjacency)
            out = add_edges(sample, 0.3, 3, rng)
            added = np.argwhere((out.adjacency != 0) & (sample.adjacency == 0))
            for i, j in added:
                assert hops[i, j] >= 3

    def test_window_never_modified(self):
        sample = sample_of(ring_adjacency(9))
        out = add_edges(sample, 0.4, 3, np.random.default_rng(16))
        np.testing.assert_array_equal(out.window, sample.window)


class TestTimeShifting:
    def test_flip_reverses_and_is_involution(self):
        sample = sample_of(ring_adjacency(3), steps=5)
        rng = np.random.default_rng(17)
        flipped = time_shifting(sample, Augmentation.TIME_FLIP, 0, rng)
        np.testing.assert_array_equal(flipped.window, sample.window[:, ::-1])
        double = time_shifting(flipped, Augmentation.TIME_FLIP, 0, rng)
        np.testing.assert_array_equal(double.window, sample.window)

    def test_warp_of_constant_window_is_identity(self):
        sample = GraphSample(window=np.full((2, 6, 3, 1), 0.7),
                             adjacency=ring_adjacency(3))
        out = time_shifting(sample, Augmentation.TIME_WARP, 3,
                            np.random.default_rng(18))
        np.testing.assert_allclose(out.window, sample.window)

    def test_warp_linear_interpolation_oracle(self):
        window = np.zeros((1, 4, 1, 1))
        window[0, :, 0, 0] = [0.0, 1.0, 5.0, 9.0]
        sample = GraphSample(window=window, adjacency=np.zeros((1, 1)))
        # slice length 2 must start at one of three offsets; with the full
        # window replaced by the warped slice [x0, x1] -> [x0, x0+1/3(x1-x0), ...]
        out = time_shifting(sample, Augmentation.TIME_WARP, 2,
                            np.random.default_rng(19))
        got = out.window[0, :, 0, 0]
        candidates = []
        for start in range(3):
            x0, x1 = window[0, start, 0, 0], window[0, start + 1, 0, 0]
            candidates.append(x0 + (x1 - x0) * np.array([0.0, 1 / 3, 2 / 3, 1.0]))
        assert any(np.allclose(got, c) for c in candidates)

    def test_slice_pads_with_last_frame(self):
        window = np.zeros((1, 5, 1, 1))
        window[0, :, 0, 0] = [1.0, 2.0, 3.0, 4.0, 5.0]
        sample = GraphSample(window=window, adjacency=np.zeros((1, 1)))
        out = time_shifting(sample, Augmentation.TIME_SLICE, 3,
                            np.random.default_rng(20))
        got = out.window[0, :, 0, 0]
        assert out.window.shape == window.shape
        # slice of length 3 starting at s, padded by repeating its last frame
        starts = [np.array([s + 1.0, s + 2.0, s + 3.0, s + 3.0, s + 3.0])
                  for s in range(3)]
        assert any(np.array_equal(got, c) for c in starts)

    def test_slice_bounds_stay_inside_window(self):
        rng = np.random.default_rng(21)
        values = np.arange(8.0).reshape(1, 8, 1, 1)
        sample = GraphSample(window=values, adjacency=np.zeros((1, 1)))
        for _ in range(100):
            out = time_shifting(sample, Augmentation.TIME_SLICE, 4, rng)
            sliced = out.window[0, :4, 0, 0]
            start = sliced[0]
            assert 0 <= start <= 4
            np.testing.assert_array_equal(sliced, np.arange(start, start + 4))

    def test_bad_slice_length_rejected(self):
        sample = sample_of(ring_adjacency(3), steps=4)
        rng = np.random.default_rng(22)
        with pytest.raises(ContractError):
            time_shifting(sample, Augmentation.TIME_SLICE, 1, rng)
        with pytest.raises(ContractError):
            time_shifting(sample, Augmentation.TIME_WARP, 5, rng)


class TestViewPairs:
    def test_seeded_draws_reproducible(self):
        kinds_a = draw_view_kinds(np.random.default_rng(23))
        kinds_b = draw_view_kinds(np.random.default_rng(23))
        assert kinds_a == kinds_b

    def test_families_never_repeat(self):
        rng = np.random.default_rng(24)

        def family(kind):
            return "ts" if kind in TIME_VARIANTS else kind

        for _ in range(1000):
            k1, k2 = draw_view_kinds(rng)
            assert family(k1) != family(k2)

    def test_time_family_draws_subvariant(self):
        rng = np.random.default_rng(25)
        seen = set()
        for _ in range(500):
            for kind in draw_view_kinds(rng):
                if kind in TIME_VARIANTS:
                    seen.add(kind)
        assert seen == set(TIME_VARIANTS)

    def test_random_view_pair_preserves_shapes(self):
        rng = np.random.default_rng(26)
        params = AugmentationParams(ts_slice_len=3)
        sample = sample_of(ring_adjacency(10), batch=3, steps=6)
        for _ in range(50):
            v1, v2 = random_view_pair(sample, params, rng)
            for view in (v1, v2):
                assert view.window.shape == sample.window.shape
                assert view.adjacency.shape == sample.adjacency.shape

    def test_deterministic_under_seed(self):
        params = AugmentationParams(ts_slice_len=3)
        sample = sample_of(ring_adjacency(6), batch=2, steps=6)
        v1a, v2a = random_view_pair(sample, params, np.random.default_rng(27))
        v1b, v2b = random_view_pair(sample, params, np.random.default_rng(27))
        np.testing.assert_array_equal(v1a.window, v1b.window)
        np.testing.assert_array_equal(v2a.adjacency, v2b.adjacency)


class TestThreshold:
    def test_percentile_of_positive_weights(self):
        a = np.zeros((3, 3))
        a[0, 1] = 0.1
        a[1, 2] = 0.9
        assert 0.1 <= edge_weight_threshold(a) <= 0.9

    def test_empty_graph_gives_zero(self):
        assert edge_weight_threshold(np.zeros((4, 4))) == 0.0

import json

import numpy as np
import pytest

from urcl.data import (ObservationSeries, build_adjacency, count_windows, load_dataset,
                       make_windows, min_max_normalize, split_lengths, split_stream)
from urcl.exceptions import (ConfigError, DomainError, IngestError, ParseError,
                             SchemaError)


def write_dataset(root, node_count, channels, rows, edges, directed=False,
                  interval=5.0):
    (root / "meta.json").write_text(json.dumps({
        "node_count": node_count, "channels": channels,
        "interval_minutes": interval, "directed": directed,
    }))
    lines = ["src,dst,distance"] + [f"{s},{d},{w}" for s, d, w in edges]
    (root / "graph.csv").write_text("\n".join(lines) + "\n")
    header = ["t"] + [f"n{v}_c{c}" for v in range(node_count) for c in range(channels)]
    body = [",".join(header)]
    for t, row in enumerate(rows):
        body.append(",".join([str(t)] + [str(x) for x in row]))
    (root / "observations.csv").write_text("\n".join(body) + "\n")


def series_of(values, interval=5.0):
    return ObservationSeries(values=np.asarray(values, dtype=np.float64),
                             interval_minutes=interval)


class TestBuildAdjacency:
    def test_inverse_distance_weight(self):
        net = build_adjacency([(0, 1, 2.0)], 3)
        assert net.adjacency[0, 1] == 0.5
        assert net.adjacency[1, 0] == 0.0

    def test_no_edges_gives_zero_matrix(self):
        net = build_adjacency([], 4)
        assert not net.adjacency.any()

    def test_multiple_edges(self):
        net = build_adjacency([(0, 1, 1.0), (1, 2, 4.0)], 3)
        expected = np.zeros((3, 3))
        expected[0, 1] = 1.0
        expected[1, 2] = 0.25
        np.testing.assert_array_equal(net.adjacency, expected)

    def test_undirected_mirrors(self):
        net = build_adjacency([(0, 1, 2.0)], 2, directed=False)
        assert net.adjacency[1, 0] == 0.5

    def test_non_positive_distance_rejected(self):
        with pytest.raises(DomainError):
            build_adjacency([(0, 1, 0.0)], 2)

    def test_out_of_range_edge_rejected(self):
        with pytest.raises(SchemaError):
            build_adjacency([(5, 2, 1.0)], 3)


class TestLoadDataset:
    def test_toy_shapes(self, tmp_path):
        rows = [[float(t + v) for v in range(3)] for t in range(10)]
        write_dataset(tmp_path, 3, 1, rows, [(0, 1, 1.0), (1, 2, 2.0)])
        net, series = load_dataset(tmp_path)
        assert series.values.shape == (10, 3, 1)
        assert net.adjacency.shape == (3, 3)
        assert series.mask.all()

    def test_metr_la_shaped_sample(self, tmp_path):
        rng = np.random.default_rng(1)
        rows = rng.normal(size=(1000, 207 * 2))
        write_dataset(tmp_path, 207, 2, rows.tolist(),
                      [(i, (i + 1) % 207, 1.0) for i in range(207)])
        _, series = load_dataset(tmp_path)
        assert series.values.shape == (1000, 207, 2)

    def test_missing_file_is_ingest_error(self, tmp_path):
        with pytest.raises(IngestError):
            load_dataset(tmp_path)

    def test_edge_outside_declared_nodes(self, tmp_path):
        rows = [[0.0, 0.0, 0.0] for _ in range(5)]
        write_dataset(tmp_path, 3, 1, rows, [(5, 2, 1.0)])
        with pytest.raises(SchemaError):
            load_dataset(tmp_path)

    def test_non_numeric_cell_reports_position(self, tmp_path):
        rows = [[1.0, 2.0], [3.0, "oops"]]
        write_dataset(tmp_path, 2, 1, rows, [(0, 1, 1.0)])
        with pytest.raises(ParseError, match=r"row 2.*n1_c0"):
            load_dataset(tmp_path)

    def test_missing_cells_imputed_with_mask(self, tmp_path):
        write_dataset(tmp_path, 2, 1, [[1.0, ""], [2.0, 3.0]], [(0, 1, 1.0)])
        _, series = load_dataset(tmp_path)
        assert series.values[0, 1, 0] == 0.0
        assert series.mask[0, 1, 0] == 0.0
        assert series.mask[1, 1, 0] == 1.0

    def test_load_is_deterministic(self, tmp_path):
        rng = np.random.default_rng(2)
        rows = rng.normal(size=(20, 4)).tolist()
        write_dataset(tmp_path, 4, 1, rows, [(0, 1, 1.0)])
        _, first = load_dataset(tmp_path)
        _, second = load_dataset(tmp_path)
        np.testing.assert_array_equal(first.values, second.values)


class TestNormalize:
    def test_basic_range(self):
        series = series_of(np.array([0.0, 5.0, 10.0]).reshape(3, 1, 1))
        normalized, stats = min_max_normalize(series)
        np.testing.assert_allclose(normalized.values.ravel(), [0.0, 0.5, 1.0])
        assert stats.per_channel_min[0] == 0.0
        assert stats.per_channel_max[0] == 10.0

    def test_constant_channel_maps_to_zero(self):
        series = series_of(np.full((2, 1, 1), 7.0))
        normalized, stats = min_max_normalize(series)
        np.testing.assert_array_equal(normalized.values, 0.0)
        assert stats.per_channel_min[0] == stats.per_channel_max[0] == 7.0

    def test_extrapolation_not_clipped(self):
        series = series_of(np.arange(11, dtype=float).reshape(11, 1, 1))
        _, stats = min_max_normalize(series, fit_range=(0, 11))
        outside = series_of(np.array([[[12.0]]]))
        normalized, _ = min_max_normalize(outside, stats=stats)
        assert normalized.values[0, 0, 0] == pytest.approx(1.2)

    def test_fit_range_maps_to_unit_interval(self):
        rng = np.random.default_rng(3)
        series = series_of(rng.normal(size=(50, 3, 2)))
        normalized, _ = min_max_normalize(series, fit_range=(10, 40))
        fitted = normalized.values[10:40]
        assert fitted.min(axis=(0, 1)) == pytest.approx([0.0, 0.0])
        assert fitted.max(axis=(0, 1)) == pytest.approx([1.0, 1.0])


class TestSplitStream:
    def test_paper_protocol_lengths(self):
        assert split_lengths(1000, 0.3, 4) == [300, 175, 175, 175, 175]

    def test_single_incremental(self):
        assert split_lengths(100, 0.3, 1) == [30, 70]

    def test_too_short_for_window(self):
        series = series_of(np.zeros((20, 1, 1)))
        with pytest.raises(ConfigError):
            split_stream(series, 0.3, 1, input_steps=12, output_steps=1)

    def test_segments_cover_series(self):
        series = series_of(np.zeros((1000, 2, 1)))
        segments = split_stream(series, 0.3, 4, input_steps=12, output_steps=1)
        assert segments[0].start == 0
        assert segments[-1].stop == 1000
        for previous, current in zip(segments, segments[1:]):
            assert previous.stop == current.start
        assert sum(s.length for s in segments) == 1000

    def test_subranges_ordered_and_disjoint(self):
        series = series_of(np.zeros((1000, 2, 1)))
        for segment in split_stream(series, 0.3, 4, input_steps=12, output_steps=1):
            assert segment.train_range[0] == segment.start
            assert segment.train_range[1] == segment.val_range[0]
            assert segment.val_range[1] == segment.test_range[0]
            assert segment.test_range[1] == segment.stop


class TestMakeWindows:
    def test_window_count(self):
        series = series_of(np.arange(14, dtype=float).reshape(14, 1, 1))
        batches = list(make_windows(series, (0, 14), 12, 1, batch_size=8))
        total = sum(b.batch_size for b in batches)
        assert total == 2 == count_windows((0, 14), 12, 1)

    def test_shapes_with_channels(self):
        rng = np.random.default_rng(4)
        series = series_of(rng.normal(size=(30, 207, 2)))
        batch = next(make_windows(series, (0, 30), 12, 1, batch_size=4))
        assert batch.inputs.shape == (4, 12, 207, 2)
        assert batch.targets.shape == (4, 1, 207, 1)

    def test_exact_window_length_range_is_empty(self):
        series = series_of(np.zeros((12, 1, 1)))
        assert list(make_windows(series, (0, 12), 12, 1, batch_size=4)) == []

    def test_final_partial_batch_kept(self):
        series = series_of(np.zeros((20, 1, 1)))
        batches = list(make_windows(series, (0, 20), 12, 1, batch_size=5))
        assert [b.batch_size for b in batches] == [5, 3]

    def test_targets_follow_inputs(self):
        series = series_of(np.arange(40, dtype=float).reshape(20, 1, 2))
        for batch in make_windows(series, (0, 20), 3, 2, batch_size=4):
            for row, origin in enumerate(batch.origin_slots):
                np.testing.assert_array_equal(
                    batch.inputs[row], series.values[origin:origin + 3])
                np.testing.assert_array_equal(
                    batch.targets[row],
                    series.values[origin + 3:origin + 5, :, 0:1])

    def test_round_trip_reassembly(self):
        rng = np.random.default_rng(5)
        series = series_of(rng.normal(size=(40, 3, 2)))
        rebuilt = np.full_like(series.values, np.nan)
        for batch in make_windows(series, (5, 35), 4, 1, batch_size=7):
            for row, origin in enumerate(batch.origin_slots):
                rebuilt[origin:origin + 4] = batch.inputs[row]
                rebuilt[origin + 4:origin + 5, :, 0:1] = batch.targets[row]
        covered = slice(5, 35)
        np.testing.assert_array_equal(rebuilt[covered][..., 0],
                                      series.values[covered][..., 0])
        np.testing.assert_array_equal(rebuilt[5:34][..., 1],
                                      series.values[5:34][..., 1])

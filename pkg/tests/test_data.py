import numpy as np
import pytest

from sctn import data as data_mod
from sctn.data import (FOOT_IN_METRES, T_OBS, WINDOW, TrackRecord,
                       build_segments, normalize, parse_trajectory_csv,
                       resample, segment_windows, select_neighbors,
                       split_dataset, synthesize_scenes)
from sctn.errors import DataError
from sctn.model import Scene


def write_csv(path, rows, header="vehicle_id,frame_id,local_x,local_y"):
    path.write_text(header + "\n" + "\n".join(rows) + ("\n" if rows else ""))
    return path


def make_fixture(tmp_path, n_vehicles=3, n_frames=120):
    """Hand-built log: straight tracks at 10 Hz in feet, 2 ft/frame apart."""
    rows = []
    for vid in range(1, n_vehicles + 1):
        for f in range(n_frames):
            rows.append(f"{vid},{f},{10.0 * vid},{2.0 * f + 5.0 * vid}")
    return write_csv(tmp_path / "tracks.csv", rows)


class TestParse:
    def test_feet_conversion(self, tmp_path):
        path = write_csv(tmp_path / "a.csv", ["7,100,10.0,20.0"])
        rec = parse_trajectory_csv(path, units="feet")[0]
        assert rec.x == pytest.approx(3.048)
        assert rec.y == pytest.approx(6.096)

    def test_empty_after_header(self, tmp_path):
        path = write_csv(tmp_path / "a.csv", [])
        assert parse_trajectory_csv(path) == []

    def test_sorted_output(self, tmp_path):
        rows = ["2,1,0,0", "1,3,0,0", "1,1,0,0", "2,0,0,0"]
        rng = np.random.default_rng(0)
        shuffled = [rows[i] for i in rng.permutation(len(rows))]
        path = write_csv(tmp_path / "a.csv", shuffled)
        recs = parse_trajectory_csv(path)
        keys = [(r.vehicle_id, r.frame_id) for r in recs]
        assert keys == sorted(keys)

    def test_missing_column_named(self, tmp_path):
        path = write_csv(tmp_path / "a.csv", ["1,2,3"],
                         header="vehicle_id,frame_id,local_x")
        with pytest.raises(DataError, match="local_y"):
            parse_trajectory_csv(path)

    def test_bad_row_carries_line_number(self, tmp_path):
        path = write_csv(tmp_path / "a.csv", ["1,0,0,0", "1,nope,0,0"])
        with pytest.raises(DataError, match=r":3:"):
            parse_trajectory_csv(path)

    def test_duplicate_detected(self, tmp_path):
        path = write_csv(tmp_path / "a.csv", ["1,0,0,0", "1,0,5,5"])
        with pytest.raises(DataError, match="duplicate"):
            parse_trajectory_csv(path)

    def test_extra_columns_ignored(self, tmp_path):
        path = write_csv(tmp_path / "a.csv", ["1,0,2.0,3.0,junk"],
                         header="vehicle_id,frame_id,local_x,local_y,speed")
        rec = parse_trajectory_csv(path)[0]
        assert (rec.x, rec.y) == (2.0, 3.0)


class TestResample:
    def recs(self, frames, vid=1):
        return [TrackRecord(vid, f, float(f), 0.0) for f in frames]

    def test_stride_two(self):
        out = resample(self.recs(range(10)), factor=2)
        assert [r.frame_id for r in out] == [0, 2, 4, 6, 8]

    def test_identity(self):
        recs = self.recs(range(5))
        assert resample(recs, factor=1) == recs

    def test_count(self):
        assert len(resample(self.recs(range(80)), factor=2)) == 40

    def test_anchored_at_first_frame(self):
        out = resample(self.recs(range(7, 17)), factor=2)
        assert [r.frame_id for r in out] == [7, 9, 11, 13, 15]


class TestSegment:
    def track(self, n, vid=1):
        return [TrackRecord(vid, f, float(f), 0.0) for f in range(n)]

    def test_exactly_one_window(self):
        assert len(segment_windows(self.track(40), stride=5)) == 1

    def test_two_windows(self):
        wins = segment_windows(self.track(45), stride=5)
        assert [w["start_frame"] for w in wins] == [0, 5]

    def test_too_short(self):
        assert segment_windows(self.track(39), stride=5) == []

    def test_gap_dropped(self):
        recs = [r for r in self.track(40) if r.frame_id != 20]
        assert segment_windows(recs, stride=5) == []


class TestSelectNeighbors:
    def build(self, offsets, n_channels):
        # target at x = 0; neighbours at given x offsets, all fully observed
        recs = []
        for vid, off in enumerate([0.0] + list(offsets), start=1):
            for f in range(WINDOW):
                recs.append(TrackRecord(vid, f, off, float(f)))
        window = segment_windows(recs, stride=WINDOW)[0]
        assert window["vehicle_id"] == 1
        return select_neighbors(window, recs, n_channels)

    def test_padding(self):
        scene = self.build([1.0, 2.0], 5)
        assert scene.channel_mask.tolist() == [True, True, True, False, False]
        np.testing.assert_array_equal(scene.positions[3:], 0.0)

    def test_distance_ranking(self):
        scene = self.build([1.0, 5.0, 2.0], 3)
        assert scene.channel_mask.all()
        assert scene.positions[1, 0, 0] == 1.0
        assert scene.positions[2, 0, 0] == 2.0

    def test_tie_break_lower_id(self):
        scene = self.build([3.0, -3.0], 2)
        # vehicles 2 and 3 are equidistant; vehicle 2 wins the single slot
        assert scene.positions[1, 0, 0] == 3.0

    def test_missing_frames_held_at_last_position(self):
        recs = []
        for f in range(WINDOW):
            recs.append(TrackRecord(1, f, 0.0, float(f)))
        for f in range(20):  # neighbour leaves after frame 19
            recs.append(TrackRecord(2, f, 1.0, float(f)))
        window = segment_windows(recs, stride=WINDOW)[0]
        scene = select_neighbors(window, recs, 2)
        np.testing.assert_array_equal(
            scene.positions[1, 19:], np.broadcast_to([1.0, 19.0], (WINDOW - 19, 2)))


class TestNormalize:
    def scene(self):
        rng = np.random.default_rng(1)
        return Scene(positions=rng.normal(size=(3, WINDOW, 2)) + 50.0,
                     channel_mask=np.ones(3, dtype=bool), target_index=0)

    def test_target_anchor_at_origin(self):
        out = normalize(self.scene())
        np.testing.assert_allclose(out.positions[0, T_OBS - 1], [0.0, 0.0])

    def test_inverse_pair(self):
        scene = self.scene()
        out = normalize(scene)
        restored = data_mod.denormalize_points(out.positions, out.origin)
        np.testing.assert_allclose(restored, scene.positions, atol=1e-9)

    def test_relative_distances_preserved(self):
        scene = self.scene()
        out = normalize(scene)
        np.testing.assert_allclose(out.positions[1] - out.positions[0],
                                   scene.positions[1] - scene.positions[0],
                                   atol=1e-9)


class TestPipelineEndToEnd:
    def test_fixture_segment_count(self, tmp_path):
        # 120 frames at 10 Hz -> 60 at 5 Hz -> starts 0,5,10,15,20 per vehicle
        path = make_fixture(tmp_path)
        records = resample(parse_trajectory_csv(path, units="feet"), factor=2)
        samples = build_segments(records, n_channels=5, stride=5,
                                 source_file=str(path))
        assert len(samples) == 15

    def test_fixture_neighbor_ranking(self, tmp_path):
        path = make_fixture(tmp_path)
        records = resample(parse_trajectory_csv(path, units="feet"), factor=2)
        samples = build_segments(records, n_channels=3, stride=5,
                                 source_file=str(path))
        first = next(s for s in samples if s.vehicle_id == 1 and s.start_frame == 0)
        # vehicle 2 is closer to vehicle 1 than vehicle 3 is
        d1 = np.linalg.norm(first.scene.positions[1, T_OBS - 1])
        d2 = np.linalg.norm(first.scene.positions[2, T_OBS - 1])
        assert d1 < d2

    def test_row_order_independence(self, tmp_path):
        path = make_fixture(tmp_path)
        lines = path.read_text().strip().split("\n")
        header, rows = lines[0], lines[1:]
        rng = np.random.default_rng(2)
        shuffled = [rows[i] for i in rng.permutation(len(rows))]
        path2 = write_csv(tmp_path / "shuffled.csv", shuffled, header=header)
        base = build_segments(resample(parse_trajectory_csv(path, "feet"), 2), 4)
        other = build_segments(resample(parse_trajectory_csv(path2, "feet"), 2), 4)
        assert len(base) == len(other)
        for a, b in zip(base, other):
            np.testing.assert_array_equal(a.scene.positions, b.scene.positions)


class TestSplit:
    def test_deterministic_and_disjoint(self):
        samples = synthesize_scenes(20, seed=0)
        a = split_dataset(samples, seed=3)
        b = split_dataset(samples, seed=3)
        for name in ("train", "validation", "test"):
            assert [id(s) for s in getattr(a, name)] == [id(s) for s in getattr(b, name)]
        ids = [id(s) for part in (a.train, a.validation, a.test) for s in part]
        assert len(ids) == len(set(ids)) == 20


class TestSynthesize:
    def test_linear_constant_displacement(self):
        sample = synthesize_scenes(1, "linear", seed=0, noise=0.0)[0]
        pos = sample.scene.positions[0]
        steps = np.diff(pos, axis=0)
        np.testing.assert_allclose(steps, np.broadcast_to(steps[0], steps.shape),
                                   atol=1e-9)

    def test_same_seed_identical(self):
        a = synthesize_scenes(3, "turn", seed=4)
        b = synthesize_scenes(3, "turn", seed=4)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.scene.positions, sb.scene.positions)

    def test_turn_heading_change(self):
        for sample in synthesize_scenes(5, "turn", seed=6, noise=0.0):
            pos = sample.scene.positions[0]
            first = pos[1] - pos[0]
            last = pos[-1] - pos[-2]
            cosang = np.dot(first, last) / (np.linalg.norm(first) * np.linalg.norm(last))
            assert np.degrees(np.arccos(np.clip(cosang, -1, 1))) > 30.0

    def test_window_and_target_contract(self):
        for kind in ("linear", "turn", "interaction"):
            for sample in synthesize_scenes(3, kind, seed=7):
                assert sample.scene.positions.shape[1] == WINDOW
                assert sample.scene.channel_mask[sample.scene.target_index]

    def test_unknown_kind(self):
        with pytest.raises(DataError):
            synthesize_scenes(1, "zigzag")


class TestRetarget:
    def test_narrow_and_widen(self):
        sample = synthesize_scenes(1, "linear", seed=8, n_agents=6)[0]
        narrow = data_mod.retarget_neighbors(sample, 3)
        assert narrow.scene.positions.shape[0] == 3
        assert narrow.scene.channel_mask.all()
        wide = data_mod.retarget_neighbors(sample, 10)
        assert wide.scene.positions.shape[0] == 10
        assert wide.scene.channel_mask.sum() == 6
        np.testing.assert_array_equal(wide.scene.positions[0],
                                      sample.scene.positions[0])

import numpy as np
import pytest

from ctevo import synth
from ctevo.camera import StereoCameraModel, StereoMeasurement
from ctevo.events import cluster_events
from ctevo.tracklets import (Feature, FeatureObservation, FeatureTracklet,
                             TrackletFilters, TrackletParams, TrackletStore,
                             _QuadObservations, bin_observations,
                             build_tracklets, detect_features,
                             downsample_binary, filter_tracklets, match_features,
                             quad_match, read_tracklets, write_tracklets)

CAM = StereoCameraModel(200.0, 200.0, 160.0, 120.0, 0.1, 320, 240)


def frame_with(pixels, shape=(48, 64)):
    frame = np.zeros(shape, dtype=np.uint8)
    for x, y in pixels:
        frame[y, x] = 1
    return frame


def blob3(cx, cy):
    return [(cx + dx, cy + dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)]


class TestDetector:
    def test_blank_frame(self):
        assert detect_features(np.zeros((32, 32), dtype=np.uint8)) == []

    def test_single_blob_center(self):
        # brute-force oracle: the 3x3 event-count response is maximal only
        # at the blob center
        frame = frame_with(blob3(20, 15))
        response = np.zeros_like(frame, dtype=int)
        for y in range(1, frame.shape[0] - 1):
            for x in range(1, frame.shape[1] - 1):
                response[y, x] = frame[y - 1:y + 2, x - 1:x + 2].sum()
        assert response.max() == response[15, 20]
        features = detect_features(frame)
        assert len(features) == 1
        assert (features[0].x, features[0].y) == (20, 15)

    def test_translation_equivariance(self):
        rng = np.random.default_rng(0)
        base = np.zeros((60, 80), dtype=np.uint8)
        for _ in range(6):
            cx, cy = rng.integers(15, 40), rng.integers(15, 35)
            for x, y in blob3(cx, cy):
                base[y, x] = 1
        shifted = np.zeros_like(base)
        shifted[3:, 5:] = base[:-3, :-5]
        feats_a = sorted((f.x, f.y) for f in detect_features(base))
        feats_b = sorted((f.x, f.y) for f in detect_features(shifted))
        assert feats_b == [(x + 5, y + 3) for x, y in feats_a]

    def test_descriptor_is_local_patch(self):
        frame = frame_with(blob3(20, 15))
        feat = detect_features(frame, patch_radius=5)[0]
        patch = feat.descriptor.reshape(11, 11)
        assert patch[5, 5] == 1
        assert patch.sum() == 9

    def test_determinism(self):
        rng = np.random.default_rng(1)
        frame = (rng.random((40, 50)) < 0.1).astype(np.uint8)
        a = detect_features(frame)
        b = detect_features(frame)
        assert [(f.x, f.y) for f in a] == [(f.x, f.y) for f in b]


class TestDownsample:
    def test_any_pixel_sets_block(self):
        frame = frame_with([(3, 5)], shape=(10, 10))
        half = downsample_binary(frame)
        assert half[2, 1] == 1
        assert half.sum() == 1


def feature_at(x, y, tag, bits=121):
    rng = np.random.default_rng(tag)
    return Feature(x, y, (rng.random(bits) < 0.5).astype(np.uint8), 9)


class TestMatching:
    def test_identical_lists_self_match(self):
        feats = [feature_at(10, 10, 1), feature_at(30, 12, 2)]
        matches = match_features(feats, list(feats))
        assert matches == {0: 0, 1: 1}

    def test_epipolar_gate(self):
        a = [feature_at(10, 10, 1)]
        b = [feature_at(12, 16, 1)]
        assert match_features(a, b, epipolar_tol=2.0) == {}
        b2 = [feature_at(12, 11, 1)]
        assert match_features(a, b2, epipolar_tol=2.0) == {0: 0}

    def test_radius_gate(self):
        a = [feature_at(10, 10, 1)]
        b = [feature_at(90, 10, 1)]
        assert match_features(a, b, radius=50.0) == {}

    def test_ambiguous_duplicates_rejected(self):
        a = [feature_at(10, 10, 1)]
        b = [feature_at(20, 10, 1), feature_at(40, 10, 1)]  # identical descriptors
        assert match_features(a, b) == {}


class TestQuadMatch:
    def test_identical_sets_all_quads(self):
        feats = [feature_at(10, 10, 1), feature_at(40, 20, 2),
                 feature_at(25, 30, 3)]
        quads = quad_match(feats, list(feats), list(feats), list(feats))
        assert sorted(quads) == [(0, 0, 0, 0), (1, 1, 1, 1), (2, 2, 2, 2)]

    def test_missing_in_one_list_breaks_cycle(self):
        feats = [feature_at(10, 10, 1), feature_at(40, 20, 2)]
        three = [feats[0]]
        quads = quad_match(feats, list(feats), three, list(feats))
        assert quads == [(0, 0, 0, 0)]

    def test_synthetic_scene_quads(self):
        # ground-truth correspondence oracle: unique descriptors per landmark,
        # geometry from a rendered constant-velocity scene
        scene = synth.generate_constant_velocity_scene(
            np.array([0.4, 0.1, 0.0, 0.0, 0.0, 0.15]), 0.2, 20, CAM, seed=3)
        t_prev, t_cur = 0.0, 0.05
        lists = {}
        for name, t, side in [("cl", t_cur, 0), ("cr", t_cur, 2),
                              ("pr", t_prev, 2), ("pl", t_prev, 0)]:
            feats = []
            for j in range(20):
                if not scene.landmark_visible(j, t):
                    continue
                y = scene.project_landmark(j, t)
                feats.append(Feature(int(round(y[side])), int(round(y[1])),
                                     feature_at(0, 0, 100 + j).descriptor, 9))
            lists[name] = feats
        quads = quad_match(lists["cl"], lists["cr"], lists["pr"], lists["pl"])
        assert len(quads) >= 18
        # zero false quads: descriptors are unique per landmark, so matched
        # features must agree bitwise
        for icl, icr, ipr, ipl in quads:
            d = lists["cl"][icl].descriptor
            for lst, i in (("cr", icr), ("pr", ipr), ("pl", ipl)):
                assert np.array_equal(lists[lst][i].descriptor, d)


def obs(t, ul, vl, ur, cluster_id, stereo_dt=0.0):
    return FeatureObservation(StereoMeasurement(ul, vl, ur, t), cluster_id,
                              "full", stereo_dt)


def quad_obs(prev_key, cur_key, tag, obs_prev, obs_cur):
    desc = feature_at(0, 0, tag).descriptor
    return _QuadObservations(prev_key, cur_key, desc, desc, obs_prev, obs_cur)


class TestExtension:
    def params(self):
        return TrackletParams()

    def test_depth_zero_never_merges(self):
        store = TrackletStore()
        store.extend([quad_obs(0, 0, 1, obs(0.0, 10, 10, 5, 0),
                               obs(0.1, 11, 10, 6, 1))], 1, 0, 25, 50.0)
        store.extend([quad_obs(0, 0, 1, obs(0.1, 11, 10, 6, 1),
                               obs(0.2, 12, 10, 7, 2))], 2, 0, 25, 50.0)
        assert len(store.observations) == 2

    def test_consecutive_extension(self):
        store = TrackletStore()
        store.extend([quad_obs(3, 7, 1, obs(0.0, 10, 10, 5, 0),
                               obs(0.1, 11, 10, 6, 1))], 1, 3, 25, 50.0)
        store.extend([quad_obs(7, 9, 1, obs(0.1, 11, 10, 6, 1),
                               obs(0.2, 12, 10, 7, 2))], 2, 3, 25, 50.0)
        assert len(store.observations) == 1
        assert len(store.tracklets()[0].observations) == 3

    def test_gap_merge_within_depth(self):
        # tracklet ends at cluster 7; new quad spans clusters 8..9
        store = TrackletStore()
        store.extend([quad_obs(1, 2, 5, obs(0.6, 10, 10, 5, 6),
                               obs(0.7, 11, 10, 6, 7))], 7, 3, 25, 50.0)
        store.extend([quad_obs(4, 5, 5, obs(0.8, 12, 10, 7, 8),
                               obs(0.9, 13, 10, 8, 9))], 9, 3, 25, 50.0)
        assert len(store.observations) == 1
        assert len(store.tracklets()[0].observations) == 4

    def test_gap_not_merged_with_depth_one(self):
        store = TrackletStore()
        store.extend([quad_obs(1, 2, 5, obs(0.6, 10, 10, 5, 6),
                               obs(0.7, 11, 10, 6, 7))], 7, 1, 25, 50.0)
        store.extend([quad_obs(4, 5, 5, obs(0.8, 12, 10, 7, 8),
                               obs(0.9, 13, 10, 8, 9))], 9, 1, 25, 50.0)
        assert len(store.observations) == 2

    def test_times_stay_strictly_increasing(self):
        store = TrackletStore()
        store.extend([quad_obs(3, 7, 1, obs(0.0, 10, 10, 5, 0),
                               obs(0.2, 11, 10, 6, 1))], 1, 3, 25, 50.0)
        # same-time continuation must not corrupt the tracklet
        store.extend([quad_obs(7, 9, 1, obs(0.2, 11, 10, 6, 1),
                               obs(0.2, 12, 10, 7, 2))], 2, 3, 25, 50.0)
        for tracklet in store.tracklets():
            times = [o.t for o in tracklet.observations]
            assert all(b > a for a, b in zip(times, times[1:]))


class TestFilters:
    def tracklet(self, observations):
        return FeatureTracklet(0, observations)

    def test_low_disparity_discarded(self):
        t = self.tracklet([obs(0.0, 10.0, 10.0, 8.5, 0),
                           obs(0.1, 15.0, 10.0, 13.5, 1)])
        kept, discarded = filter_tracklets([t])
        assert kept == []
        assert discarded[0][1] == "disparity"

    def test_short_duration_discarded(self):
        t = self.tracklet([obs(0.0, 10.0, 10.0, 5.0, 0),
                           obs(0.035, 15.0, 10.0, 10.0, 1)])
        kept, discarded = filter_tracklets([t])
        assert discarded[0][1] == "duration"

    def test_stereo_dt_discarded(self):
        t = self.tracklet([obs(0.0, 10.0, 10.0, 5.0, 0, stereo_dt=0.025),
                           obs(0.1, 15.0, 10.0, 10.0, 1)])
        kept, discarded = filter_tracklets([t])
        assert discarded[0][1] == "stereo_dt"

    def test_short_path_discarded(self):
        t = self.tracklet([obs(0.0, 10.0, 10.0, 5.0, 0),
                           obs(0.1, 11.0, 10.0, 6.0, 1)])
        kept, discarded = filter_tracklets([t])
        assert discarded[0][1] == "length"

    def test_passing_tracklet_kept(self):
        t = self.tracklet([obs(0.0, 10.0, 10.0, 5.0, 0),
                           obs(0.1, 15.0, 10.0, 10.0, 1)])
        kept, discarded = filter_tracklets([t])
        assert len(kept) == 1 and discarded == []

    def test_idempotence(self):
        tracklets = [
            self.tracklet([obs(0.0, 10.0, 10.0, 5.0, 0),
                           obs(0.1, 15.0, 10.0, 10.0, 1)]),
            self.tracklet([obs(0.0, 10.0, 10.0, 9.5, 0),
                           obs(0.1, 15.0, 10.0, 14.5, 1)]),
        ]
        once, _ = filter_tracklets(tracklets)
        twice, dropped = filter_tracklets(once)
        assert dropped == []
        assert twice == once


class TestBuildTracklets:
    def build(self, seed=4, n_landmarks=25, duration=1.2):
        varpi = np.array([0.5, 0.2, 0.1, 0.05, -0.08, 0.1])
        scene = synth.generate_constant_velocity_scene(
            varpi, duration, n_landmarks, CAM, seed=seed)
        events = synth.render_events(scene, pattern_size=5)
        clusters = list(cluster_events(events, CAM.width, CAM.height,
                                       0.05, 10**6))
        return scene, clusters, build_tracklets(clusters, CAM, TrackletParams())

    def test_empty_stream(self):
        assert build_tracklets([], CAM, TrackletParams()) == []

    def test_invariants_on_synthetic_scene(self):
        scene, clusters, tracklets = self.build()
        assert len(tracklets) >= 5
        filters = TrackletFilters()
        event_times = {float(t) for c in clusters
                       for sae in (c.sae_left, c.sae_right)
                       for t in sae[~np.isnan(sae)]}
        for tracklet in tracklets:
            times = [o.t for o in tracklet.observations]
            assert all(b > a for a, b in zip(times, times[1:]))
            assert tracklet.duration >= filters.duration_min
            assert tracklet.path_length >= filters.length_min
            for o in tracklet.observations:
                assert o.stereo_dt <= filters.stereo_dt_max
                assert o.y.disparity >= filters.disparity_min
                # temporal fidelity: every time is an SAE event timestamp
                assert o.t in event_times

    def test_determinism_byte_identical(self, tmp_path):
        _, _, tracklets_a = self.build()
        _, _, tracklets_b = self.build()
        pa, pb = tmp_path / "a.txt", tmp_path / "b.txt"
        write_tracklets(pa, tracklets_a)
        write_tracklets(pb, tracklets_b)
        assert pa.read_bytes() == pb.read_bytes()

    def test_half_resolution_contributes(self):
        # a widely-spaced sparse pattern is invisible to the full-resolution
        # 3x3 detector but becomes a dense blob at half resolution
        from ctevo.events import Event
        events = []
        polarity = 1
        for step in range(30):
            t = step * 0.01
            cx = 40 + step
            for side in ("L", "R"):
                u = cx if side == "L" else cx - 8
                for dx in (-2, 0, 2):
                    for dy in (-2, 0, 2):
                        events.append(Event(t, u + dx, 60 + dy, polarity, side))
                        polarity = -polarity
        events.sort(key=lambda e: (e.t, e.side))
        clusters = list(cluster_events(events, CAM.width, CAM.height,
                                       0.03, 10**6))
        params = TrackletParams(resolutions=("full", "half"))
        tracklets = build_tracklets(clusters, CAM, params)
        full_only = build_tracklets(clusters, CAM,
                                    TrackletParams(resolutions=("full",)))
        assert len(tracklets) > len(full_only)
        # merged output carries full-resolution (rescaled) coordinates
        assert any(o.resolution == "half" and o.y.u_left > 50
                   for t in tracklets for o in t.observations)


class TestDumpRoundTrip:
    def test_write_read(self, tmp_path):
        tracklets = [FeatureTracklet(0, [obs(0.0, 10.0, 10.0, 5.0, 0),
                                         obs(0.1, 15.0, 10.0, 10.0, 1)]),
                     FeatureTracklet(1, [obs(0.05, 30.0, 20.0, 22.0, 0),
                                         obs(0.15, 35.0, 20.0, 27.0, 1)])]
        path = tmp_path / "dump.txt"
        write_tracklets(path, tracklets)
        back = read_tracklets(path, CAM)
        assert len(back) == 2
        assert back[0].landmark_seed is not None
        assert back[0].observations[0].y.u_left == 10.0
        n_bins = bin_observations(back, 0.1)
        assert n_bins == 2
        assert [o.cluster_id for o in back[0].observations] == [0, 1]

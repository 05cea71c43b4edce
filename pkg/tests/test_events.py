import numpy as np
import pytest

from ctevo.errors import (EventParseError, NoEventNearbyError,
                          NonMonotonicTimeError)
from ctevo.events import (Event, cluster_events, read_events, sae_lookup,
                          write_events)

W, H = 64, 48


def make_events(spec):
    """spec: list of (t, x, y, side) tuples; polarity alternates."""
    return [Event(t, x, y, 1 if i % 2 == 0 else -1, side)
            for i, (t, x, y, side) in enumerate(spec)]


class TestReadWrite:
    def test_three_valid_lines(self, tmp_path):
        path = tmp_path / "events.txt"
        path.write_text("0.10 3 4 1 L\n0.20 5 6 -1 R\n0.30 7 8 1 L\n")
        events = list(read_events(path, W, H))
        assert len(events) == 3
        assert events[0].t == 0.1 and events[0].x == 3 and events[0].side == "L"
        assert events[1].polarity == -1

    def test_comments_and_blanks_skipped(self, tmp_path):
        path = tmp_path / "events.txt"
        path.write_text("# header\n\n0.1 1 1 1 L\n")
        assert len(list(read_events(path, W, H))) == 1

    def test_out_of_bounds_names_line(self, tmp_path):
        path = tmp_path / "events.txt"
        path.write_text(f"0.1 1 1 1 L\n0.2 {W} 1 1 L\n")
        with pytest.raises(EventParseError, match="line 2"):
            list(read_events(path, W, H))

    def test_bad_field_count(self, tmp_path):
        path = tmp_path / "events.txt"
        path.write_text("0.1 1 1 1\n")
        with pytest.raises(EventParseError, match="line 1"):
            list(read_events(path, W, H))

    def test_bad_polarity_and_side(self, tmp_path):
        path = tmp_path / "events.txt"
        path.write_text("0.1 1 1 2 L\n")
        with pytest.raises(EventParseError):
            list(read_events(path, W, H))
        path.write_text("0.1 1 1 1 X\n")
        with pytest.raises(EventParseError):
            list(read_events(path, W, H))

    def test_non_monotonic_per_side(self, tmp_path):
        path = tmp_path / "events.txt"
        path.write_text("0.2 1 1 1 L\n0.1 1 1 1 L\n")
        with pytest.raises(NonMonotonicTimeError):
            list(read_events(path, W, H))
        # decreasing across sides is fine
        path.write_text("0.2 1 1 1 L\n0.1 1 1 1 R\n")
        assert len(list(read_events(path, W, H))) == 2

    def test_million_event_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        n = 1_000_000
        ts = np.sort(rng.uniform(0.0, 10.0, n))
        xs = rng.integers(0, W, n)
        ys = rng.integers(0, H, n)
        pols = rng.choice([1, -1], n)
        sides = rng.choice(["L", "R"], n)
        events = [Event(round(float(t), 9), int(x), int(y), int(p), str(s))
                  for t, x, y, p, s in zip(ts, xs, ys, pols, sides)]
        path = tmp_path / "big.txt"
        write_events(path, events)
        back = list(read_events(path, W, H))
        assert len(back) == n
        idx = rng.integers(0, n, 200)
        for i in idx:
            a, b = events[i], back[i]
            assert (a.t, a.x, a.y, a.polarity, a.side) == \
                   (b.t, b.x, b.y, b.polarity, b.side)
        # byte-identical second write
        path2 = tmp_path / "big2.txt"
        write_events(path2, back)
        assert path.read_bytes() == path2.read_bytes()


class TestClustering:
    def test_uniform_stream_counting(self):
        # ~1 kHz uniform stream on an exactly-representable binary time grid
        # (dt = 2^-10 s) with a window of exactly 25 periods: every cluster
        # must hold exactly 25 events, the boundary event opening the next.
        dt = 2.0 ** -10
        window = 25 * dt
        events = make_events([(i * dt, i % W, (i * 3) % H, "L")
                              for i in range(100)])
        clusters = list(cluster_events(events, W, H, window, 10**6))
        assert len(clusters) == 4
        for c in clusters:
            assert c.count_left == 25
            assert c.count_right == 0
        assert clusters[0].t_start == 0.0
        assert clusters[0].t_end == pytest.approx(window)

    def test_count_trigger_on_burst(self):
        events = make_events([(i * 1e-5, i % W, 0, "L") for i in range(100)])
        clusters = list(cluster_events(events, W, H, 0.025, 40))
        assert clusters[0].count_left == 40
        assert clusters[0].t_end <= 0.001

    def test_either_side_triggers(self):
        spec = []
        for i in range(60):
            spec.append((i * 1e-4, 1, 1, "R"))
        events = make_events(spec)
        clusters = list(cluster_events(events, W, H, 10.0, 30))
        assert len(clusters) == 2
        assert all(c.count_right == 30 for c in clusters)

    def test_single_event(self):
        events = make_events([(0.5, 10, 10, "L")])
        clusters = list(cluster_events(events, W, H, 0.025, 100))
        assert len(clusters) == 1
        c = clusters[0]
        assert c.frame_left[10, 10] == 1
        assert np.count_nonzero(~np.isnan(c.sae_left)) == 1
        assert c.sae_left[10, 10] == 0.5
        assert c.t_start < c.t_end

    def test_empty_stream(self):
        assert list(cluster_events([], W, H, 0.025, 100)) == []

    def test_partition_preserves_all_events(self):
        rng = np.random.default_rng(1)
        n = 5000
        ts = np.sort(rng.uniform(0.0, 1.0, n))
        events = [Event(float(t), int(rng.integers(0, W)), int(rng.integers(0, H)),
                        1, "L" if rng.random() < 0.5 else "R") for t in ts]
        clusters = list(cluster_events(events, W, H, 0.03, 500))
        assert sum(c.count_left + c.count_right for c in clusters) == n
        # boundaries are ordered and non-overlapping
        for a, b in zip(clusters, clusters[1:]):
            assert a.t_start < a.t_end
            assert a.t_end <= b.t_start + 0.03  # time-trigger bound gap

    def test_sae_is_max_time_per_pixel(self):
        events = make_events([(0.001, 5, 5, "L"), (0.002, 5, 5, "L"),
                              (0.003, 6, 5, "L")])
        clusters = list(cluster_events(events, W, H, 0.025, 100))
        c = clusters[0]
        assert c.sae_left[5, 5] == 0.002
        assert c.sae_left[5, 6] == 0.003

    def test_frame_sae_consistency(self):
        rng = np.random.default_rng(2)
        events = make_events(sorted(
            [(float(rng.uniform(0, 0.02)), int(rng.integers(0, W)),
              int(rng.integers(0, H)), "L") for _ in range(300)]))
        c = list(cluster_events(events, W, H, 0.025, 10**6))[0]
        assert np.array_equal(c.frame_left > 0, ~np.isnan(c.sae_left))

    def test_shared_bounds_left_right(self):
        events = make_events([(0.001, 1, 1, "L"), (0.002, 2, 2, "R"),
                              (0.030, 3, 3, "R")])
        clusters = list(cluster_events(events, W, H, 0.025, 100))
        assert len(clusters) == 2
        assert clusters[0].count_left == 1 and clusters[0].count_right == 1


class TestSaeLookup:
    def cluster_with(self, spec):
        return list(cluster_events(make_events(spec), W, H, 1.0, 10**6))[0]

    def test_exact_hit(self):
        c = self.cluster_with([(0.5, 10, 10, "L")])
        assert sae_lookup(c, "L", 10, 10) == 0.5

    def test_nearest_neighbor(self):
        c = self.cluster_with([(0.4, 11, 10, "L")])
        assert sae_lookup(c, "L", 10, 10, radius=2) == 0.4

    def test_no_event_nearby(self):
        c = self.cluster_with([(0.4, 30, 30, "L")])
        with pytest.raises(NoEventNearbyError):
            sae_lookup(c, "L", 10, 10, radius=2)

    def test_nearer_ring_wins_over_larger_time(self):
        c = self.cluster_with([(0.9, 12, 10, "L"), (0.1, 11, 10, "L")])
        assert sae_lookup(c, "L", 10, 10, radius=2) == 0.1

    def test_tie_broken_by_larger_timestamp(self):
        c = self.cluster_with([(0.2, 9, 10, "L"), (0.7, 11, 10, "L")])
        assert sae_lookup(c, "L", 10, 10, radius=2) == 0.7

    def test_right_side_lookup(self):
        c = self.cluster_with([(0.3, 10, 10, "R")])
        assert sae_lookup(c, "R", 10, 10) == 0.3
        with pytest.raises(NoEventNearbyError):
            sae_lookup(c, "L", 10, 10)

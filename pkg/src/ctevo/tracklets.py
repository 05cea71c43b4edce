"""Feature tracklets from binary event frames.

Detects corner-like keypoints on the per-cluster binary frames, matches them
in a four-way cycle (current-left -> current-right -> previous-right ->
previous-left -> current-left, kept only when the cycle closes), assigns each
feature the nearest event timestamp from the SAE, extends tracklets across
cluster gaps, and filters them on stereo time difference, disparity, image
path length and duration.

The detector/matcher is deliberately pluggable: any source of timestamped
stereo observations can be injected through the tracklet dump format
(``tracklet_id t u_l v_l u_r`` per line) and consumed downstream unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .camera import StereoCameraModel, StereoMeasurement
from .errors import DegenerateDisparityError, NoEventNearbyError
from .events import EventCluster, sae_lookup

_NO_MATCH = 10 ** 9


@dataclass(eq=False)
class Feature:
    """Detected keypoint with a binary patch descriptor (native resolution)."""

    x: int
    y: int
    descriptor: np.ndarray
    response: int


@dataclass(eq=False)
class FeatureObservation:
    """One timestamped stereo observation of a tracklet.

    The observation time is the left-camera SAE time; the right-camera SAE
    time enters only through stereo_dt, used by the stereo-time filter.
    Coordinates are always stored at full resolution.
    """

    y: StereoMeasurement
    cluster_id: int
    resolution: str
    stereo_dt: float

    @property
    def t(self) -> float:
        return self.y.time

    @property
    def uvr(self) -> np.ndarray:
        return self.y.uvr


@dataclass(eq=False)
class FeatureTracklet:
    """A landmark's time-ordered stereo observations."""

    id: int
    observations: list[FeatureObservation]
    landmark_seed: np.ndarray | None = None

    @property
    def duration(self) -> float:
        return self.observations[-1].t - self.observations[0].t

    @property
    def path_length(self) -> float:
        first, last = self.observations[0].y, self.observations[-1].y
        return math.hypot(last.u_left - first.u_left, last.v_left - first.v_left)


@dataclass(eq=False)
class TrackletFilters:
    stereo_dt_max: float = 0.020
    disparity_min: float = 2.0
    length_min: float = 2.0
    duration_min: float = 0.040


@dataclass(eq=False)
class TrackletParams:
    min_response: int = 3
    nms_radius: int = 3
    patch_radius: int = 5
    match_ratio: float = 0.8
    match_max_distance: int = 40
    epipolar_tol: float = 2.0
    match_radius: float = 50.0
    extension_depth: int = 3
    extension_max_distance: int = 25
    sae_radius: int = 2
    resolutions: tuple[str, ...] = ("full", "half")
    filters: TrackletFilters = field(default_factory=TrackletFilters)


def detect_features(frame: np.ndarray, min_response: int = 3,
                    nms_radius: int = 3, patch_radius: int = 5) -> list[Feature]:
    """Corner-like keypoints on a binary event frame.

    The response is the 3x3 event count; keypoints are local response maxima
    on event pixels, greedily non-max suppressed in (response, row-major)
    order, each carrying the surrounding binary patch as descriptor.
    Deterministic for a given frame.
    """
    if frame.sum() == 0:
        return []
    padded = np.pad(frame.astype(np.int32), 1)
    response = sum(padded[dy:dy + frame.shape[0], dx:dx + frame.shape[1]]
                   for dy in range(3) for dx in range(3))
    rpad = np.pad(response, 1, constant_values=-1)
    local_max = np.max(
        [rpad[dy:dy + frame.shape[0], dx:dx + frame.shape[1]]
         for dy in range(3) for dx in range(3)], axis=0)
    ys, xs = np.nonzero((frame > 0) & (response >= min_response)
                        & (response == local_max))
    if len(ys) == 0:
        return []
    order = np.lexsort((xs, ys, -response[ys, xs]))
    patch_pad = np.pad(frame.astype(np.uint8), patch_radius)
    size = 2 * patch_radius + 1
    features: list[Feature] = []
    taken: list[tuple[int, int]] = []
    for idx in order:
        x, y = int(xs[idx]), int(ys[idx])
        if any(max(abs(x - tx), abs(y - ty)) <= nms_radius for tx, ty in taken):
            continue
        taken.append((x, y))
        descriptor = patch_pad[y:y + size, x:x + size].reshape(-1).copy()
        features.append(Feature(x, y, descriptor, int(response[y, x])))
    features.sort(key=lambda f: (f.y, f.x))
    return features


def downsample_binary(frame: np.ndarray) -> np.ndarray:
    """Half-resolution binary frame: a block is set if any of its 2x2 pixels is."""
    h2, w2 = frame.shape[0] // 2 * 2, frame.shape[1] // 2 * 2
    f = frame[:h2, :w2]
    return (f[0::2, 0::2] | f[1::2, 0::2] | f[0::2, 1::2] | f[1::2, 1::2])


def _hamming_matrix(a: Sequence[Feature], b: Sequence[Feature]) -> np.ndarray:
    da = np.stack([f.descriptor for f in a])
    db = np.stack([f.descriptor for f in b])
    return (da[:, None, :] != db[None, :, :]).sum(axis=2)


def match_features(a: Sequence[Feature], b: Sequence[Feature],
                   ratio: float = 0.8, max_distance: int = 40,
                   epipolar_tol: float | None = None,
                   radius: float | None = None) -> dict[int, int]:
    """Mutually-consistent nearest-descriptor matches from a to b.

    Candidates are gated on |dv| for stereo pairs (epipolar_tol) and on a
    Chebyshev search radius for temporal pairs; a match must win a 0.8-style
    ratio test in both directions.
    """
    if not a or not b:
        return {}
    dist = _hamming_matrix(a, b)
    ax = np.array([f.x for f in a])[:, None]
    ay = np.array([f.y for f in a])[:, None]
    bx = np.array([f.x for f in b])[None, :]
    by = np.array([f.y for f in b])[None, :]
    gate = dist <= max_distance
    if epipolar_tol is not None:
        gate &= np.abs(ay - by) <= epipolar_tol
    if radius is not None:
        gate &= np.maximum(np.abs(ax - bx), np.abs(ay - by)) <= radius
    dist = np.where(gate, dist, _NO_MATCH)

    def best_per_row(d: np.ndarray) -> np.ndarray:
        out = np.full(d.shape[0], -1, dtype=int)
        for i in range(d.shape[0]):
            row = d[i]
            j = int(np.argmin(row))
            if row[j] >= _NO_MATCH:
                continue
            rest = np.delete(row, j)
            second = int(rest.min()) if rest.size else _NO_MATCH
            if second >= _NO_MATCH or row[j] <= ratio * second:
                if not (row[j] == 0 and second == 0):
                    out[i] = j
        return out

    forward = best_per_row(dist)
    backward = best_per_row(dist.T)
    return {i: int(j) for i, j in enumerate(forward)
            if j >= 0 and backward[j] == i}


def quad_match(cur_left: Sequence[Feature], cur_right: Sequence[Feature],
               prev_right: Sequence[Feature], prev_left: Sequence[Feature],
               params: TrackletParams | None = None) -> list[tuple[int, int, int, int]]:
    """Closed four-way match cycles (icl, icr, ipr, ipl).

    A quad survives only if chaining current-left -> current-right ->
    previous-right -> previous-left -> current-left returns to the starting
    feature.
    """
    p = params or TrackletParams()
    kw = dict(ratio=p.match_ratio, max_distance=p.match_max_distance)
    m_lr = match_features(cur_left, cur_right, epipolar_tol=p.epipolar_tol, **kw)
    m_rr = match_features(cur_right, prev_right, radius=p.match_radius, **kw)
    m_rl = match_features(prev_right, prev_left, epipolar_tol=p.epipolar_tol, **kw)
    m_lc = match_features(prev_left, cur_left, radius=p.match_radius, **kw)
    quads = []
    for icl, icr in m_lr.items():
        ipr = m_rr.get(icr)
        if ipr is None:
            continue
        ipl = m_rl.get(ipr)
        if ipl is None:
            continue
        if m_lc.get(ipl) == icl:
            quads.append((icl, icr, ipr, ipl))
    return quads


def assign_timestamp(feature: Feature, cluster: EventCluster, side: str,
                     radius: int = 2, scale: int = 1) -> float:
    """Nearest SAE event time at the feature's full-resolution pixel."""
    return sae_lookup(cluster, side, int(round(feature.x * scale)),
                      int(round(feature.y * scale)), radius=radius)


@dataclass(eq=False)
class _TrackletTail:
    cluster_id: int
    feature_key: int
    descriptor: np.ndarray
    u: float
    v: float
    t: float


@dataclass(eq=False)
class _QuadObservations:
    prev_feature_key: int
    cur_feature_key: int
    descriptor_prev: np.ndarray
    descriptor_cur: np.ndarray
    obs_prev: FeatureObservation
    obs_cur: FeatureObservation


class TrackletStore:
    """Single-writer store that grows tracklets as new quads arrive."""

    def __init__(self, id_offset: int = 0):
        self.observations: dict[int, list[FeatureObservation]] = {}
        self.tails: dict[int, _TrackletTail] = {}
        self._next_id = id_offset

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id - 1

    def extend(self, quads: Sequence[_QuadObservations], cluster_id: int,
               depth: int, max_distance: int, match_radius: float) -> None:
        """Merge new quads into tracklets ending within the last `depth`
        clusters, else allocate fresh ids.  depth == 0 never merges."""
        consumed: set[int] = set()
        by_tail_feature = {(tail.cluster_id, tail.feature_key): tid
                           for tid, tail in self.tails.items()}
        for quad in quads:
            if quad.obs_cur.t <= quad.obs_prev.t:
                continue
            target = None
            append_prev = False
            exact = by_tail_feature.get((cluster_id - 1, quad.prev_feature_key))
            if depth >= 1 and exact is not None and exact not in consumed:
                target = exact
            elif depth >= 2:
                target = self._descriptor_merge(
                    quad, cluster_id, depth, max_distance, match_radius, consumed)
                append_prev = target is not None
            if target is None:
                target = self._new_id()
                self.observations[target] = [quad.obs_prev, quad.obs_cur]
            else:
                obs = self.observations[target]
                new_obs = [quad.obs_prev, quad.obs_cur] if append_prev else [quad.obs_cur]
                if new_obs[0].t <= obs[-1].t:
                    target = self._new_id()
                    self.observations[target] = [quad.obs_prev, quad.obs_cur]
                else:
                    obs.extend(new_obs)
            consumed.add(target)
            self.tails[target] = _TrackletTail(
                cluster_id, quad.cur_feature_key, quad.descriptor_cur,
                quad.obs_cur.y.u_left, quad.obs_cur.y.v_left, quad.obs_cur.t)

    def _descriptor_merge(self, quad, cluster_id, depth, max_distance,
                          match_radius, consumed):
        best_id, best_dist = None, max_distance + 1
        for tid in sorted(self.tails):
            if tid in consumed:
                continue
            tail = self.tails[tid]
            if not (cluster_id - depth <= tail.cluster_id <= cluster_id - 2):
                continue
            du = abs(tail.u - quad.obs_prev.y.u_left)
            dv = abs(tail.v - quad.obs_prev.y.v_left)
            if max(du, dv) > match_radius:
                continue
            dist = int((tail.descriptor != quad.descriptor_prev).sum())
            if dist < best_dist:
                best_id, best_dist = tid, dist
        return best_id

    def tracklets(self) -> list[FeatureTracklet]:
        return [FeatureTracklet(tid, obs)
                for tid, obs in sorted(self.observations.items())]


def extend_tracklets(store: TrackletStore, quads: Sequence[_QuadObservations],
                     cluster_id: int, depth: int,
                     params: TrackletParams | None = None) -> TrackletStore:
    p = params or TrackletParams()
    store.extend(quads, cluster_id, depth, p.extension_max_distance, p.match_radius)
    return store


def filter_tracklets(tracklets: Iterable[FeatureTracklet],
                     filters: TrackletFilters | None = None,
                     ) -> tuple[list[FeatureTracklet], list[tuple[FeatureTracklet, str]]]:
    """Split tracklets into (kept, discarded-with-reason).

    Discards on the first failing check among: stereo SAE time difference,
    stereo disparity, left-image path length, total duration.
    """
    f = filters or TrackletFilters()
    kept: list[FeatureTracklet] = []
    discarded: list[tuple[FeatureTracklet, str]] = []
    for tracklet in tracklets:
        reason = None
        if any(o.stereo_dt > f.stereo_dt_max for o in tracklet.observations):
            reason = "stereo_dt"
        elif any(o.y.disparity < f.disparity_min for o in tracklet.observations):
            reason = "disparity"
        elif len(tracklet.observations) < 2 or tracklet.path_length < f.length_min:
            reason = "length"
        elif tracklet.duration < f.duration_min:
            reason = "duration"
        if reason is None:
            kept.append(tracklet)
        else:
            discarded.append((tracklet, reason))
    return kept, discarded


class _ResolutionPipeline:
    """Detect/quad-match/timestamp at one resolution (scale 1 or 2)."""

    def __init__(self, scale: int, resolution: str, params: TrackletParams):
        self.scale = scale
        self.resolution = resolution
        self.params = params
        self.store = TrackletStore(id_offset=0 if scale == 1 else 1_000_000)
        self._prev: tuple | None = None

    def _detect_and_time(self, cluster: EventCluster):
        p = self.params
        frames = {}
        for side in ("L", "R"):
            frame = cluster.frame(side)
            if self.scale == 2:
                frame = downsample_binary(frame)
            feats = detect_features(frame, p.min_response, p.nms_radius,
                                    p.patch_radius)
            times = []
            for feat in feats:
                try:
                    times.append(assign_timestamp(feat, cluster, side,
                                                  p.sae_radius, self.scale))
                except NoEventNearbyError:
                    times.append(None)
            frames[side] = (feats, times)
        return frames

    def _observation(self, fl, fr, tl, tr, cluster_id) -> FeatureObservation | None:
        if tl is None or tr is None:
            return None
        s = float(self.scale)
        measurement = StereoMeasurement(fl.x * s, fl.y * s, fr.x * s, tl)
        return FeatureObservation(measurement, cluster_id, self.resolution,
                                  abs(tl - tr))

    def process(self, cluster: EventCluster) -> None:
        detected = self._detect_and_time(cluster)
        if self._prev is not None:
            prev_cluster_id, prev_detected = self._prev
            quads = quad_match(detected["L"][0], detected["R"][0],
                               prev_detected["R"][0], prev_detected["L"][0],
                               self.params)
            pairs = []
            for icl, icr, ipr, ipl in quads:
                obs_prev = self._observation(
                    prev_detected["L"][0][ipl], prev_detected["R"][0][ipr],
                    prev_detected["L"][1][ipl], prev_detected["R"][1][ipr],
                    prev_cluster_id)
                obs_cur = self._observation(
                    detected["L"][0][icl], detected["R"][0][icr],
                    detected["L"][1][icl], detected["R"][1][icr],
                    cluster.index)
                if obs_prev is None or obs_cur is None:
                    continue
                if obs_cur.t <= obs_prev.t:
                    continue
                pairs.append(_QuadObservations(
                    ipl, icl, prev_detected["L"][0][ipl].descriptor,
                    detected["L"][0][icl].descriptor, obs_prev, obs_cur))
            extend_tracklets(self.store, pairs, cluster.index,
                             self.params.extension_depth, self.params)
        self._prev = (cluster.index, detected)


def _deduplicate(full: list[FeatureTracklet],
                 half: list[FeatureTracklet]) -> list[FeatureTracklet]:
    # Identical-time observations within 1 px across resolutions are the same
    # physical measurement; the full-resolution copy wins.
    seen: dict[float, list[np.ndarray]] = {}
    for tracklet in full:
        for obs in tracklet.observations:
            seen.setdefault(obs.t, []).append(obs.uvr)
    merged = list(full)
    for tracklet in half:
        unique = [obs for obs in tracklet.observations
                  if not any(np.abs(obs.uvr - y).max() < 1.0
                             for y in seen.get(obs.t, []))]
        if len(unique) >= 2:
            merged.append(FeatureTracklet(tracklet.id, unique))
    return merged


def build_tracklets(clusters: Iterable[EventCluster], camera: StereoCameraModel,
                    params: TrackletParams | None = None) -> list[FeatureTracklet]:
    """Run the full front end over a cluster stream and return filtered,
    merged, deduplicated tracklets with triangulated landmark seeds."""
    p = params or TrackletParams()
    pipelines = []
    if "full" in p.resolutions:
        pipelines.append(_ResolutionPipeline(1, "full", p))
    if "half" in p.resolutions:
        pipelines.append(_ResolutionPipeline(2, "half", p))
    for cluster in clusters:
        for pipeline in pipelines:
            pipeline.process(cluster)
    per_resolution: dict[str, list[FeatureTracklet]] = {"full": [], "half": []}
    for pipeline in pipelines:
        kept, _ = filter_tracklets(pipeline.store.tracklets(), p.filters)
        per_resolution[pipeline.resolution] = kept
    merged = _deduplicate(per_resolution["full"], per_resolution["half"])
    out = []
    for new_id, tracklet in enumerate(merged):
        seed = None
        try:
            seed = camera.triangulate(tracklet.observations[0].uvr)
        except DegenerateDisparityError:
            continue
        out.append(FeatureTracklet(new_id, tracklet.observations, seed))
    return out


def write_tracklets(path, tracklets: Iterable[FeatureTracklet]) -> None:
    """Dump format: one observation per line, `tracklet_id t u_l v_l u_r`."""
    with open(path, "w") as handle:
        for tracklet in tracklets:
            for obs in tracklet.observations:
                handle.write(f"{tracklet.id} {obs.t:.9f} {obs.y.u_left:.6f} "
                             f"{obs.y.v_left:.6f} {obs.y.u_right:.6f}\n")


def read_tracklets(path, camera: StereoCameraModel | None = None,
                   ) -> list[FeatureTracklet]:
    """Read a tracklet dump (e.g. from an external tracker).

    Cluster ids start unassigned (-1); call :func:`bin_observations` before
    windowed processing.
    """
    observations: dict[int, list[FeatureObservation]] = {}
    with open(path, "r") as handle:
        for line in handle:
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tid_s, t_s, ul_s, vl_s, ur_s = stripped.split()
            measurement = StereoMeasurement(float(ul_s), float(vl_s),
                                            float(ur_s), float(t_s))
            observations.setdefault(int(tid_s), []).append(
                FeatureObservation(measurement, -1, "full", 0.0))
    out = []
    for tid in sorted(observations):
        obs = sorted(observations[tid], key=lambda o: o.t)
        seed = None
        if camera is not None:
            try:
                seed = camera.triangulate(obs[0].uvr)
            except DegenerateDisparityError:
                continue
        out.append(FeatureTracklet(tid, obs, seed))
    return out


def bin_observations(tracklets: Iterable[FeatureTracklet], window_s: float,
                     t0: float = 0.0) -> int:
    """Assign pseudo-cluster ids by fixed time bins of width window_s.

    Injected tracklets carry no cluster structure; windowed processing needs
    one.  Returns the number of bins spanned.
    """
    max_bin = -1
    for tracklet in tracklets:
        for obs in tracklet.observations:
            obs.cluster_id = int(math.floor((obs.t - t0) / window_s + 1e-9))
            max_bin = max(max_bin, obs.cluster_id)
    return max_bin + 1

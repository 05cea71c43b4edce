"""Synthetic constant-velocity scenes and independent numerical oracles.

Everything here is test harness: exact ground-truth trajectories, landmark
fields, rendered tracklets/events with controllable noise and labeled
outliers, and a brute-force velocity solver kept deliberately independent of
the production solver so the two can cross-check each other.

Scene convention: the trajectory is the camera-to-world pose
``P(t) = exp(t * hat(varpi))`` with the world frame equal to the camera
frame at t = 0.  The relative transform consumed by RANSAC/estimation is
``P(t)^-1 P(t_ref)``, so for these scenes the estimator-side constant
velocity is ``-varpi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import se3
from .camera import StereoCameraModel, StereoMeasurement
from .errors import NoVisibleLandmarksError, SingularSystemError
from .events import Event
from .ransac import TrackletSegment, constant_velocity_transforms
from .tracklets import FeatureObservation, FeatureTracklet


@dataclass(eq=False)
class SyntheticScene:
    varpi: np.ndarray            # camera-to-world twist rate
    duration: float
    camera: StereoCameraModel
    landmarks: np.ndarray        # (M, 4) homogeneous, world frame
    seed: int
    noise_px: float = 0.0
    outlier_fraction: float = 0.0

    def world_pose(self, t: float) -> np.ndarray:
        """Camera-to-world pose at time t."""
        return se3.exp(t * self.varpi)

    def camera_from_world(self, t: float) -> np.ndarray:
        return se3.pose_inverse(self.world_pose(t))

    def relative_pose(self, t: float, t_ref: float) -> np.ndarray:
        """Coordinate transform from the camera frame at t_ref to the one at t."""
        return self.camera_from_world(t) @ self.world_pose(t_ref)

    def body_velocity(self) -> np.ndarray:
        """Constant velocity of the world-to-camera transform chain."""
        return -self.varpi

    def project_landmark(self, index: int, t: float) -> np.ndarray:
        """Exact stereo measurement of one landmark at time t."""
        p_cam = self.camera_from_world(t) @ self.landmarks[index]
        return self.camera.project(p_cam)

    def landmark_visible(self, index: int, t: float, margin: float = 2.0) -> bool:
        p_cam = self.camera_from_world(t) @ self.landmarks[index]
        if p_cam[2] <= self.camera.z_min:
            return False
        y = self.camera.project(p_cam)
        return (self.camera.in_bounds(y[0], y[1], margin)
                and self.camera.in_bounds(y[2], y[1], margin))


def generate_constant_velocity_scene(
        varpi, duration: float, n_landmarks: int, camera: StereoCameraModel,
        seed: int = 0, depth_range: tuple[float, float] = (1.0, 5.0),
        sample_times: Sequence[float] | None = None,
        noise_px: float = 0.0, outlier_fraction: float = 0.0,
        margin: float = 10.0, min_visible: int = 2) -> SyntheticScene:
    """Sample landmarks uniformly in the initial view frustum, rejecting any
    visible from fewer than min_visible of the sample times (default 2)."""
    varpi = np.asarray(varpi, dtype=float)
    if sample_times is None:
        sample_times = np.linspace(0.0, duration, 5)
    min_visible = min(min_visible, len(sample_times))
    rng = np.random.default_rng(seed)
    scene = SyntheticScene(varpi, duration, camera,
                           np.zeros((n_landmarks, 4)), seed,
                           noise_px, outlier_fraction)
    for j in range(n_landmarks):
        for attempt in range(1000):
            u = rng.uniform(margin, camera.width - margin)
            v = rng.uniform(margin, camera.height - margin)
            z = rng.uniform(*depth_range)
            p = se3.hpoint([(u - camera.cu) * z / camera.fu,
                            (v - camera.cv) * z / camera.fv, z])
            scene.landmarks[j] = p
            visible = sum(scene.landmark_visible(j, t) for t in sample_times)
            if visible >= min_visible:
                break
        else:
            raise NoVisibleLandmarksError(
                f"landmark {j}: no visible placement after 1000 attempts")
    return scene


@dataclass(eq=False)
class RenderedTracklets:
    tracklets: list[FeatureTracklet]
    outlier_labels: np.ndarray   # bool per tracklet
    cluster_span: float
    n_clusters: int


def render_tracklets(scene: SyntheticScene, n_clusters: int,
                     cluster_span: float | None = None,
                     observations_per_cluster: int = 1,
                     jitter_fraction: float = 0.9) -> RenderedTracklets:
    """Exact projections plus Gaussian pixel noise at unique jittered times.

    Each landmark is observed once per cluster (its own time inside the
    cluster bin); round(outlier_fraction * N) tracklets are re-pointed at a
    random different landmark after their first observation and labeled.
    """
    rng = np.random.default_rng(scene.seed + 1)
    if cluster_span is None:
        cluster_span = scene.duration / n_clusters
    n = len(scene.landmarks)
    used_times: set[float] = set()
    tracklets: list[FeatureTracklet] = []
    sources: list[int] = []
    for j in range(n):
        observations = []
        for c in range(n_clusters):
            for _ in range(observations_per_cluster):
                while True:
                    t = (c + rng.uniform(0.0, jitter_fraction)) * cluster_span
                    if t not in used_times:
                        used_times.add(t)
                        break
                if not scene.landmark_visible(j, t):
                    continue
                y = scene.project_landmark(j, t)
                if scene.noise_px > 0:
                    y = y + rng.normal(0.0, scene.noise_px, 3)
                observations.append(FeatureObservation(
                    StereoMeasurement(y[0], y[1], y[2], t), c, "full", 0.0))
        if len(observations) >= 2:
            observations.sort(key=lambda o: o.t)
            tracklets.append(FeatureTracklet(len(tracklets), observations))
            sources.append(j)
    labels = np.zeros(len(tracklets), dtype=bool)
    n_outliers = int(round(scene.outlier_fraction * len(tracklets)))
    if n_outliers:
        chosen = rng.choice(len(tracklets), size=n_outliers, replace=False)
        for idx in sorted(chosen):
            labels[idx] = True
            wrong = int(rng.integers(0, n - 1))
            if wrong >= sources[idx]:
                wrong += 1
            for obs in tracklets[idx].observations[1:]:
                if scene.landmark_visible(wrong, obs.t):
                    y = scene.project_landmark(wrong, obs.t)
                else:
                    # Wrong landmark out of view: corrupt by a gross offset.
                    y = obs.uvr + np.array([37.0, -23.0, 31.0])
                if scene.noise_px > 0:
                    y = y + rng.normal(0.0, scene.noise_px, 3)
                obs.y = StereoMeasurement(y[0], y[1], y[2], obs.t)
    for tracklet in tracklets:
        tracklet.landmark_seed = None
        try:
            tracklet.landmark_seed = scene.camera.triangulate(
                tracklet.observations[0].uvr)
        except Exception:
            pass
    return RenderedTracklets(tracklets, labels, cluster_span, n_clusters)


def render_events(scene: SyntheticScene, events_per_pixel: int = 1,
                  pattern_size: int = 5, pattern_radius: int = 2,
                  n_steps: int = 2000) -> list[Event]:
    """Geometric event rendering: each landmark carries a fixed small pixel
    pattern that fires whenever its projected center crosses into a new
    pixel, on both cameras, with timestamps taken from the motion."""
    rng = np.random.default_rng(scene.seed + 2)
    offsets_per_landmark = []
    box = [(dx, dy) for dy in range(-pattern_radius, pattern_radius + 1)
           for dx in range(-pattern_radius, pattern_radius + 1)
           if (dx, dy) != (0, 0)]
    for _ in range(len(scene.landmarks)):
        extra = min(pattern_size - 1, len(box))
        picks = rng.choice(len(box), size=extra, replace=False) if extra else []
        offsets_per_landmark.append([(0, 0)] + [box[i] for i in sorted(picks)])
    times = np.linspace(0.0, scene.duration, n_steps + 1)
    rotations, translations = constant_velocity_transforms(scene.varpi, times)
    cam = scene.camera
    events: list[Event] = []
    polarity = 1
    for j in range(len(scene.landmarks)):
        # world -> camera: R(t)^T (p - t(t)), batched over all step times
        p_cam = np.einsum("tba,tb->ta", rotations,
                          scene.landmarks[j][:3][None, :] - translations)
        projected, valid = cam.project_many(p_cam)
        margin = 2.0
        with np.errstate(invalid="ignore"):
            valid &= ((projected[:, 0] >= margin)
                      & (projected[:, 0] < cam.width - margin)
                      & (projected[:, 2] >= margin)
                      & (projected[:, 2] < cam.width - margin)
                      & (projected[:, 1] >= margin)
                      & (projected[:, 1] < cam.height - margin))
        centers = {"L": np.stack([np.round(projected[:, 0]),
                                  np.round(projected[:, 1])], axis=1),
                   "R": np.stack([np.round(projected[:, 2]),
                                  np.round(projected[:, 1])], axis=1)}
        for side in ("L", "R"):
            last = None
            pixels = centers[side]
            for k in np.nonzero(valid)[0]:
                pixel = (int(pixels[k, 0]), int(pixels[k, 1]))
                if pixel == last:
                    continue
                last = pixel
                for dx, dy in offsets_per_landmark[j]:
                    x, yy = pixel[0] + dx, pixel[1] + dy
                    if not (0 <= x < cam.width and 0 <= yy < cam.height):
                        continue
                    for _ in range(max(1, events_per_pixel)):
                        events.append(Event(float(times[k]), x, yy,
                                            polarity, side))
                        polarity = -polarity
    events.sort(key=lambda e: (e.t, e.side, e.y, e.x))
    return events


def brute_force_velocity(segments: Sequence[TrackletSegment]) -> np.ndarray:
    """Stacked dense least squares over the linearized motion rows.

    Independent oracle for the closed-form solver: builds the full
    3N x 6 system row by row and solves it by SVD, sharing no code with the
    production path.
    """
    if len(segments) < 2:
        raise SingularSystemError("need at least 2 segments for 6 unknowns")
    rows = []
    rhs = []
    for segment in segments:
        p = segment.p_early[:3]
        block = np.zeros((3, 6))
        block[0] = [1.0, 0.0, 0.0, 0.0, p[2], -p[1]]
        block[1] = [0.0, 1.0, 0.0, -p[2], 0.0, p[0]]
        block[2] = [0.0, 0.0, 1.0, p[1], -p[0], 0.0]
        rows.append(segment.dt * block)
        rhs.append(segment.p_late[:3] - segment.p_early[:3])
    a = np.vstack(rows)
    b = np.concatenate(rhs)
    solution, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < 6:
        raise SingularSystemError(f"stacked system rank {rank} < 6")
    return solution

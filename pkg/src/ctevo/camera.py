"""Rectified stereo pinhole model: projection, triangulation, Jacobian.

A stereo measurement is the 3-vector (u_left, v_left, u_right); rectification
is assumed done upstream, so v_right == v_left and is never stored.  Both
cameras share the same intrinsics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDisparityError, NonPositiveDepthError


@dataclass(eq=False)
class StereoMeasurement:
    """One stereo feature observation at a single event time (seconds)."""

    u_left: float
    v_left: float
    u_right: float
    time: float

    @property
    def uvr(self) -> np.ndarray:
        return np.array([self.u_left, self.v_left, self.u_right])

    @property
    def disparity(self) -> float:
        return self.u_left - self.u_right


@dataclass(eq=False)
class StereoCameraModel:
    """Rectified pinhole pair: focal lengths/principal point in px, baseline in m."""

    fu: float
    fv: float
    cu: float
    cv: float
    baseline: float
    width: int
    height: int
    z_min: float = 0.05
    min_disparity: float = 0.1

    def __post_init__(self):
        if self.fu <= 0 or self.fv <= 0 or self.baseline <= 0:
            raise ValueError("fu, fv and baseline must be positive")
        if not (0 <= self.cu < self.width and 0 <= self.cv < self.height):
            raise ValueError("principal point must lie inside the sensor")

    def project(self, p_cam: np.ndarray) -> np.ndarray:
        """Project a camera-frame point to (u_left, v_left, u_right).

        Accepts a homogeneous (4,) or plain (3,) point.  Raises
        NonPositiveDepthError for depth <= z_min.
        """
        x, y, z = p_cam[0], p_cam[1], p_cam[2]
        if z <= self.z_min:
            raise NonPositiveDepthError(f"depth {z:.6f} <= z_min {self.z_min}")
        return np.array([
            self.fu * x / z + self.cu,
            self.fv * y / z + self.cv,
            self.fu * (x - self.baseline) / z + self.cu,
        ])

    def project_many(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized projection of (N, >=3) points.

        Returns (measurements (N, 3), valid (N,) bool); invalid rows (depth
        <= z_min) are left as NaN instead of raising.
        """
        points = np.asarray(points, dtype=float)
        x, y, z = points[:, 0], points[:, 1], points[:, 2]
        valid = z > self.z_min
        out = np.full((points.shape[0], 3), np.nan)
        zv = np.where(valid, z, 1.0)
        out[:, 0] = self.fu * x / zv + self.cu
        out[:, 1] = self.fv * y / zv + self.cv
        out[:, 2] = self.fu * (x - self.baseline) / zv + self.cu
        out[~valid] = np.nan
        return out, valid

    def triangulate(self, y: np.ndarray) -> np.ndarray:
        """Back-project a (u_left, v_left, u_right) measurement to a
        homogeneous camera-frame point."""
        disparity = y[0] - y[2]
        if disparity <= self.min_disparity:
            raise DegenerateDisparityError(
                f"disparity {disparity:.6f} <= min {self.min_disparity}")
        z = self.fu * self.baseline / disparity
        x = (y[0] - self.cu) * z / self.fu
        yy = (y[1] - self.cv) * z / self.fv
        return np.array([x, yy, z, 1.0])

    def projection_jacobian(self, p_cam: np.ndarray) -> np.ndarray:
        """3x4 analytic Jacobian of project() w.r.t. homogeneous coordinates.

        The fourth column is identically zero (the homogeneous coordinate is
        held at 1).
        """
        x, y, z = p_cam[0], p_cam[1], p_cam[2]
        if z <= self.z_min:
            raise NonPositiveDepthError(f"depth {z:.6f} <= z_min {self.z_min}")
        z2 = z * z
        return np.array([
            [self.fu / z, 0.0, -self.fu * x / z2, 0.0],
            [0.0, self.fv / z, -self.fv * y / z2, 0.0],
            [self.fu / z, 0.0, -self.fu * (x - self.baseline) / z2, 0.0],
        ])

    def in_bounds(self, u: float, v: float, margin: float = 0.0) -> bool:
        return (margin <= u < self.width - margin
                and margin <= v < self.height - margin)

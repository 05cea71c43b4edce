"""Continuous pose queries, trajectory file I/O, and error metrics.

Querying interpolates the local state between the two bracketing knots with
the white-noise-on-acceleration prior, so a query at any time inside the
window returns a physically consistent pose and velocity; knot times
reproduce the knots exactly.

Metrics follow the conjugated relative-transform error
``err = log(T_align @ T_rel_est @ T_align^-1 @ T_rel_gt^-1)``: global error
is taken against the first evaluated pose, relative error against the
previous one.  Estimated and ground-truth trajectories are aligned at the
first evaluation time before comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import se3
from .errors import EmptyReportError, OutOfWindowError
from .estimator import (TrajectoryState, WnoaPrior, prior_covariance,
                        prior_information)

_TIME_TOL = 1e-12


@dataclass(eq=False)
class ContinuousTrajectory:
    """Global knot sequence plus the prior that defines poses between knots."""

    knots: list[TrajectoryState]
    prior: WnoaPrior

    def __post_init__(self):
        times = [k.t for k in self.knots]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("knot times must be strictly increasing")

    @property
    def t_start(self) -> float:
        return self.knots[0].t

    @property
    def t_end(self) -> float:
        return self.knots[-1].t

    def query(self, tau: float) -> tuple[np.ndarray, np.ndarray]:
        """Pose (origin->camera) and body velocity at any time in the window."""
        if tau < self.t_start - _TIME_TOL or tau > self.t_end + _TIME_TOL:
            raise OutOfWindowError(
                f"{tau} outside [{self.t_start}, {self.t_end}]")
        times = np.array([k.t for k in self.knots])
        idx = int(np.searchsorted(times, tau))
        for k in (idx - 1, idx):
            if 0 <= k < len(self.knots) and abs(times[k] - tau) <= _TIME_TOL:
                knot = self.knots[k]
                return knot.T.copy(), knot.varpi.copy()
        m, n = self.knots[idx - 1], self.knots[idx]
        xi_n = se3.log(n.T @ se3.pose_inverse(m.T))
        gamma_m = np.concatenate([np.zeros(6), m.varpi])
        gamma_n = np.concatenate([xi_n, se3.left_jacobian_inv(xi_n) @ n.varpi])
        gamma = self._interpolate_local(gamma_m, gamma_n, tau - m.t, n.t - m.t)
        pose = se3.exp(gamma[:6]) @ m.T
        varpi = se3.left_jacobian(gamma[:6]) @ gamma[6:]
        return pose, varpi

    def _interpolate_local(self, gamma_m, gamma_n, offset, span):
        phi_offset = np.kron(np.array([[1.0, offset], [0.0, 1.0]]), np.eye(6))
        phi_span = np.kron(np.array([[1.0, span], [0.0, 1.0]]), np.eye(6))
        phi_rest = np.kron(np.array([[1.0, span - offset], [0.0, 1.0]]), np.eye(6))
        omega = (prior_covariance(self.prior, offset) @ phi_rest.T
                 @ prior_information(self.prior, span))
        lam = phi_offset - omega @ phi_span
        return lam @ gamma_m + omega @ gamma_n


def pose_error(t_est_nm: np.ndarray, t_gt_nm: np.ndarray,
               t_align: np.ndarray) -> np.ndarray:
    """se(3) error of an estimated relative transform against ground truth,
    conjugated into the ground-truth frame by the alignment transform."""
    composed = (t_align @ t_est_nm @ se3.pose_inverse(t_align)
                @ se3.pose_inverse(t_gt_nm))
    return se3.log(composed)


def rotation_to_quaternion(rotation: np.ndarray) -> np.ndarray:
    """Unit quaternion (x, y, z, w) of a rotation matrix."""
    m = rotation
    trace = m[0, 0] + m[1, 1] + m[2, 2]
    if trace > 0:
        s = 2.0 * np.sqrt(1.0 + trace)
        return np.array([(m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s,
                         (m[1, 0] - m[0, 1]) / s, 0.25 * s])
    i = int(np.argmax([m[0, 0], m[1, 1], m[2, 2]]))
    j, k = (i + 1) % 3, (i + 2) % 3
    s = 2.0 * np.sqrt(1.0 + m[i, i] - m[j, j] - m[k, k])
    q = np.zeros(4)
    q[i] = 0.25 * s
    q[j] = (m[j, i] + m[i, j]) / s
    q[k] = (m[k, i] + m[i, k]) / s
    q[3] = (m[k, j] - m[j, k]) / s
    return q


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


@dataclass(eq=False)
class TrajectorySamples:
    """Discrete camera-to-world poses, e.g. read from a TUM-format file."""

    times: np.ndarray
    poses: np.ndarray  # (N, 4, 4)

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def sample_at(self, t: float) -> np.ndarray:
        """Pose at t: exact sample if present, otherwise log-linear
        interpolation (linear translation, geodesic rotation)."""
        if t < self.times[0] - _TIME_TOL or t > self.times[-1] + _TIME_TOL:
            raise OutOfWindowError(
                f"{t} outside [{self.times[0]}, {self.times[-1]}]")
        idx = int(np.searchsorted(self.times, t))
        for k in (idx - 1, idx):
            if 0 <= k < len(self.times) and abs(self.times[k] - t) <= _TIME_TOL:
                return self.poses[k].copy()
        a, b = self.poses[idx - 1], self.poses[idx]
        alpha = (t - self.times[idx - 1]) / (self.times[idx] - self.times[idx - 1])
        rotation = a[:3, :3] @ se3.so3_exp(
            alpha * se3.so3_log(a[:3, :3].T @ b[:3, :3]))
        translation = (1.0 - alpha) * a[:3, 3] + alpha * b[:3, 3]
        return se3.pose_from_rt(rotation, translation)


def write_tum(path, times, poses) -> None:
    """TUM convention: `t tx ty tz qx qy qz qw` per line, camera-to-world."""
    with open(path, "w") as handle:
        for t, pose in zip(times, poses):
            q = rotation_to_quaternion(pose[:3, :3])
            tx, ty, tz = pose[:3, 3]
            handle.write(f"{t:.12f} {tx:.12f} {ty:.12f} {tz:.12f} "
                         f"{q[0]:.12f} {q[1]:.12f} {q[2]:.12f} {q[3]:.12f}\n")


def read_tum(path) -> TrajectorySamples:
    times = []
    poses = []
    with open(path, "r") as handle:
        for line in handle:
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            values = [float(part) for part in stripped.split()]
            times.append(values[0])
            poses.append(se3.pose_from_rt(
                quaternion_to_rotation(np.array(values[4:8])),
                np.array(values[1:4])))
    if not times:
        raise EmptyReportError(f"no poses in {path}")
    order = np.argsort(np.array(times), kind="stable")
    return TrajectorySamples(np.array(times)[order], np.stack(poses)[order])


def _aligned_poses(est: TrajectorySamples, gt: TrajectorySamples,
                   eval_times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    est_poses = np.stack([est.sample_at(t) for t in eval_times])
    gt_poses = np.stack([gt.sample_at(t) for t in eval_times])
    if np.array_equal(est_poses[0], gt_poses[0]):
        align = np.eye(4)
    else:
        align = gt_poses[0] @ se3.pose_inverse(est_poses[0])
    est_aligned = np.einsum("ab,nbc->nac", align, est_poses)
    if np.array_equal(align, np.eye(4)):
        est_aligned = est_poses
    return est_aligned, gt_poses


def _pairwise_error(est_n, est_m, gt_n, gt_m) -> np.ndarray:
    # A pose compared against bitwise-identical ground truth has exactly
    # zero error; skip the float round trip that would say 1e-16.
    if np.array_equal(est_n, gt_n) and np.array_equal(est_m, gt_m):
        return np.zeros(6)
    t_est = se3.pose_inverse(est_n) @ est_m
    t_gt = se3.pose_inverse(gt_n) @ gt_m
    t_align = se3.pose_inverse(gt_m) @ est_m
    return pose_error(t_est, t_gt, t_align)


def global_error(est: TrajectorySamples, gt: TrajectorySamples,
                 eval_times) -> np.ndarray:
    """(N, 6) error of each evaluated pose relative to the first one."""
    eval_times = np.asarray(eval_times, dtype=float)
    est_poses, gt_poses = _aligned_poses(est, gt, eval_times)
    return np.stack([
        _pairwise_error(est_poses[k], est_poses[0], gt_poses[k], gt_poses[0])
        for k in range(len(eval_times))])


def relative_error(est: TrajectorySamples, gt: TrajectorySamples,
                   eval_times) -> np.ndarray:
    """(N-1, 6) error of each evaluated pose relative to the previous one."""
    eval_times = np.asarray(eval_times, dtype=float)
    est_poses, gt_poses = _aligned_poses(est, gt, eval_times)
    return np.stack([
        _pairwise_error(est_poses[k], est_poses[k - 1],
                        gt_poses[k], gt_poses[k - 1])
        for k in range(1, len(eval_times))])


def gt_path_integrals(gt_poses: np.ndarray) -> dict[str, float]:
    """Integrated ground-truth motion norms used as percentage denominators."""
    tran = rota = full = 0.0
    for a, b in zip(gt_poses, gt_poses[1:]):
        xi = se3.log(se3.pose_inverse(a) @ b)
        tran += float(np.linalg.norm(xi[:3]))
        rota += float(np.linalg.norm(xi[3:]))
        full += float(np.linalg.norm(xi))
    return {"tran": tran, "rota": rota, "se3": full}


_COMPONENTS = {"tran": slice(0, 3), "rota": slice(3, 6), "se3": slice(0, 6)}


@dataclass(eq=False)
class RowStats:
    max: float
    rms: float
    std: float
    max_pct: float | None = None
    final_pct: float | None = None


@dataclass(eq=False)
class ErrorReport:
    ge: dict[str, RowStats]
    re: dict[str, RowStats]


def aggregate(ge: np.ndarray, re: np.ndarray,
              gt_poses: np.ndarray) -> ErrorReport:
    """Max / Max% / Final% / RMS / St.Dev. per component class.

    Percentages (global error only) are relative to the integrated norm of
    the matching ground-truth component over the evaluated path.
    """
    if len(ge) == 0:
        raise EmptyReportError("no error samples to aggregate")
    paths = gt_path_integrals(gt_poses)

    def stats(errors: np.ndarray, component: str,
              with_pct: bool) -> RowStats:
        norms = np.linalg.norm(errors[:, _COMPONENTS[component]], axis=1)
        row = RowStats(max=float(norms.max()),
                       rms=float(np.sqrt(np.mean(norms**2))),
                       std=float(np.std(norms)))
        if with_pct:
            path = paths[component]
            if path > 1e-12:
                row.max_pct = row.max / path * 100.0
                row.final_pct = float(norms[-1]) / path * 100.0
        return row

    return ErrorReport(
        ge={c: stats(ge, c, True) for c in _COMPONENTS},
        re={c: stats(re, c, False) for c in _COMPONENTS} if len(re) else {},
    )


def format_metrics_table(report: ErrorReport) -> str:
    """Tab-separated table with the Max / Max% / Final% / RMS / St.Dev. columns."""
    def fmt(value: float | None) -> str:
        return "-" if value is None else f"{value:.9g}"

    lines = ["metric\tcomponent\tmax\tmax_pct\tfinal_pct\trms\tstd"]
    for label, rows in (("GE", report.ge), ("RE", report.re)):
        for component in ("tran", "rota", "se3"):
            if component not in rows:
                continue
            r = rows[component]
            lines.append("\t".join([
                label, component, fmt(r.max), fmt(r.max_pct),
                fmt(r.final_pct), fmt(r.rms), fmt(r.std)]))
    return "\n".join(lines) + "\n"

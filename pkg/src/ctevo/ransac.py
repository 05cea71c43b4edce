"""Motion-compensated RANSAC over asynchronous tracklet segments.

Hypotheses are constant body velocities on SE(3); every correspondence is
compensated by its own time offset, so segments never need a shared
timestamp.  A fast closed-form stage (Euclidean-space cost, linearized
transform) proposes velocities from random minimal samples; the winning
inlier set is refined by Gauss-Newton on the image-space reprojection error,
and the refined velocity reclassifies all segments.

Classification compares the reprojection error against the image-space
tracklet length (relative error); segments shorter than 1e-6 px fall back to
an absolute 1 px test.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import se3
from .camera import StereoCameraModel
from .errors import (DegenerateDisparityError, NoValidHypothesisError,
                     SingularNormalMatrixError)
from .tracklets import FeatureTracklet

_COND_LIMIT = 1e12
_ZERO_LENGTH_PX = 1e-6
_ABSOLUTE_FALLBACK_PX = 1.0
_DEFAULT_R_INV_DIAG = (0.5, 0.5, 0.1)


@dataclass(eq=False)
class TrackletSegment:
    """Two triangulated observations of one landmark, each in its own
    camera frame, dt seconds apart (late minus early, always positive)."""

    p_early: np.ndarray
    p_late: np.ndarray
    y_early: np.ndarray
    y_late: np.ndarray
    dt: float
    tracklet_id: int = -1


@dataclass(eq=False)
class RansacResult:
    velocity: np.ndarray
    inliers: np.ndarray
    outliers: np.ndarray
    iterations_used: int
    converged: bool = True
    mean_inlier_error: float = np.inf


@dataclass(eq=False)
class RansacParams:
    iterations: int = 10000
    sample_size: int = 3
    threshold: float = 0.05
    seed: int = 0
    r_inv_diag: tuple[float, float, float] = _DEFAULT_R_INV_DIAG
    gn_tol: float = 1e-6
    gn_max_iters: int = 50


def build_segments(tracklets: Sequence[FeatureTracklet],
                   camera: StereoCameraModel,
                   cluster_range: tuple[int, int] | None = None,
                   ) -> list[TrackletSegment]:
    """One segment per tracklet per consecutive observation pair, optionally
    restricted to a closed cluster-id range."""
    segments = []
    for tracklet in tracklets:
        observations = tracklet.observations
        if cluster_range is not None:
            lo, hi = cluster_range
            observations = [o for o in observations if lo <= o.cluster_id <= hi]
        for early, late in zip(observations, observations[1:]):
            if late.t <= early.t:
                continue
            try:
                p_early = camera.triangulate(early.uvr)
                p_late = camera.triangulate(late.uvr)
            except DegenerateDisparityError:
                continue
            segments.append(TrackletSegment(
                p_early, p_late, early.uvr, late.uvr,
                late.t - early.t, tracklet.id))
    return segments


@dataclass(eq=False)
class _SegmentArrays:
    p_early: np.ndarray   # (N, 3)
    d: np.ndarray         # (N, 3) displacement p_late - p_early
    design: np.ndarray    # (N, 3, 6) rows of the linearized model
    y_early: np.ndarray   # (N, 3)
    y_late: np.ndarray    # (N, 3)
    dt: np.ndarray        # (N,)
    length: np.ndarray    # (N,) image-space tracklet length


def _segment_arrays(segments: Sequence[TrackletSegment]) -> _SegmentArrays:
    p_early = np.stack([s.p_early[:3] for s in segments])
    p_late = np.stack([s.p_late[:3] for s in segments])
    n = len(segments)
    design = np.zeros((n, 3, 6))
    design[:, :, :3] = np.eye(3)
    for i in range(n):
        design[i, :, 3:] = -se3.skew(p_early[i])
    y_early = np.stack([s.y_early for s in segments])
    y_late = np.stack([s.y_late for s in segments])
    return _SegmentArrays(
        p_early=p_early,
        d=p_late - p_early,
        design=design,
        y_early=y_early,
        y_late=y_late,
        dt=np.array([s.dt for s in segments]),
        length=np.linalg.norm(y_late - y_early, axis=1),
    )


def fast_velocity_solve(segments: Sequence[TrackletSegment]) -> np.ndarray:
    """Closed-form constant velocity from the linearized Euclidean cost.

    Solves (sum dt^2 D^T D) varpi = sum dt D^T d with d the camera-frame
    displacement and D the linear action of a twist on the early point.
    """
    if len(segments) < 2:
        raise SingularNormalMatrixError(
            f"{len(segments)} segment(s) cannot constrain 6 DOF")
    arrays = _segment_arrays(segments)
    scaled = arrays.design * arrays.dt[:, None, None]
    normal = np.einsum("nai,naj->ij", scaled, scaled)
    rhs = np.einsum("nai,na->i", scaled, arrays.d)
    if not np.isfinite(normal).all() or np.linalg.cond(normal) >= _COND_LIMIT:
        raise SingularNormalMatrixError("degenerate segment geometry")
    return np.linalg.solve(normal, rhs)


def constant_velocity_transforms(varpi: np.ndarray, dts: np.ndarray,
                                 ) -> tuple[np.ndarray, np.ndarray]:
    """Rotations (N,3,3) and translations (N,3) of exp(dt * hat(varpi)).

    All rotations share one axis, so Rodrigues terms batch over the angle.
    """
    v, omega = varpi[:3], varpi[3:]
    rate = np.linalg.norm(omega)
    axis = omega / rate if rate > 0 else np.zeros(3)
    k = se3.skew(axis)
    kk = k @ k
    angles = dts * rate
    sin_a = np.sin(angles)
    cos_a = np.cos(angles)
    rotations = (np.eye(3)[None]
                 + sin_a[:, None, None] * k[None]
                 + (1.0 - cos_a)[:, None, None] * kk[None])
    small = np.abs(angles) < 1e-4
    with np.errstate(divide="ignore", invalid="ignore"):
        c1 = np.where(small, angles / 2.0 - angles**3 / 24.0,
                      (1.0 - cos_a) / np.where(small, 1.0, angles))
        c2 = np.where(small, angles**2 / 6.0 - angles**4 / 120.0,
                      (angles - sin_a) / np.where(small, 1.0, angles))
    kv = k @ v
    kkv = kk @ v
    translations = dts[:, None] * (v[None] + c1[:, None] * kv[None]
                                   + c2[:, None] * kkv[None])
    return rotations, translations


def _relative_errors(arrays: _SegmentArrays, varpi: np.ndarray,
                     camera: StereoCameraModel,
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(score, zero_length_mask, valid_depth_mask) for one velocity."""
    rotations, translations = constant_velocity_transforms(varpi, arrays.dt)
    moved = np.einsum("nab,nb->na", rotations, arrays.p_early) + translations
    projected, valid = camera.project_many(moved)
    error = np.linalg.norm(arrays.y_late - projected, axis=1)
    zero_length = arrays.length < _ZERO_LENGTH_PX
    with np.errstate(invalid="ignore"):
        score = np.where(zero_length, error,
                         error / np.where(zero_length, 1.0, arrays.length))
    return score, zero_length, valid


def classify(segments: Sequence[TrackletSegment], varpi: np.ndarray,
             camera: StereoCameraModel, threshold: float = 0.05,
             ) -> tuple[np.ndarray, np.ndarray]:
    """Partition segment indices into (inliers, outliers) for a velocity.

    A segment is an inlier when its reprojection error relative to its
    image-space length is at most `threshold`; near-zero-length segments use
    an absolute 1 px test; points that land behind the camera are outliers.
    """
    arrays = _segment_arrays(segments)
    inlier_mask = _classify_arrays(arrays, varpi, camera, threshold)[0]
    indices = np.arange(len(segments))
    return indices[inlier_mask], indices[~inlier_mask]


def _classify_arrays(arrays: _SegmentArrays, varpi: np.ndarray,
                     camera: StereoCameraModel, threshold: float,
                     ) -> tuple[np.ndarray, np.ndarray]:
    score, zero_length, valid = _relative_errors(arrays, varpi, camera)
    limit = np.where(zero_length, _ABSOLUTE_FALLBACK_PX, threshold)
    mask = valid & np.isfinite(score) & (score <= limit)
    return mask, score


def fast_mc_ransac(segments: Sequence[TrackletSegment], camera: StereoCameraModel,
                   iterations: int = 10000, sample_size: int = 3,
                   threshold: float = 0.05, seed: int = 0,
                   chunk: int = 1024) -> RansacResult:
    """Best-by-inlier-count constant velocity over random minimal samples.

    Ties go to the lower mean relative error over inliers, then to the
    earlier hypothesis; deterministic for a given seed.
    """
    n = len(segments)
    if n < max(2, sample_size):
        raise NoValidHypothesisError(
            f"{n} segment(s) < sample size {sample_size}")
    arrays = _segment_arrays(segments)
    rng = np.random.default_rng(seed)
    best: tuple[int, float, int] | None = None  # (count, mean_err, index)
    best_varpi = None
    done = 0
    while done < iterations:
        size = min(chunk, iterations - done)
        keys = rng.random((size, n))
        samples = np.argpartition(keys, sample_size - 1, axis=1)[:, :sample_size]
        scaled = (arrays.design[samples]
                  * arrays.dt[samples][:, :, None, None])
        normals = np.einsum("hsai,hsaj->hij", scaled, scaled)
        rhs = np.einsum("hsai,hsa->hi", scaled, arrays.d[samples])
        with np.errstate(all="ignore"):
            conds = np.linalg.cond(normals)
        usable = np.isfinite(conds) & (conds < _COND_LIMIT)
        if usable.any():
            varpis = np.linalg.solve(normals[usable],
                                     rhs[usable][:, :, None])[:, :, 0]
            for local, varpi in zip(np.nonzero(usable)[0], varpis):
                mask, score = _classify_arrays(arrays, varpi, camera, threshold)
                count = int(mask.sum())
                mean_err = float(score[mask].mean()) if count else np.inf
                candidate = (count, mean_err, done + int(local))
                if best is None or (candidate[0], -candidate[1], -candidate[2]) > (
                        best[0], -best[1], -best[2]):
                    best = candidate
                    best_varpi = varpi
        done += size
    if best_varpi is None:
        raise NoValidHypothesisError("all sampled hypotheses were singular")
    inliers, outliers = classify(segments, best_varpi, camera, threshold)
    return RansacResult(best_varpi, inliers, outliers, iterations,
                        mean_inlier_error=best[1])


def velocity_jacobian(p_early: np.ndarray, dt: float, varpi: np.ndarray,
                      camera: StereoCameraModel) -> np.ndarray:
    """3x6 Jacobian of the projected, motion-compensated point w.r.t. the
    velocity, evaluated at the nominal velocity.

    Composition: sensor Jacobian at the transformed point, times dt, times
    the transform acting on the early point through the odot operator, the
    inverse adjoint and the left Jacobian of the relative transform.
    """
    transform = se3.exp(dt * varpi)
    moved = transform @ p_early
    sensor = camera.projection_jacobian(moved)
    adjoint_inv = se3.adjoint(se3.pose_inverse(transform))
    left_jac = se3.left_jacobian(dt * varpi)
    return sensor @ (dt * transform @ se3.odot(p_early) @ adjoint_inv @ left_jac)


def _weighted_cost(arrays: _SegmentArrays, varpi: np.ndarray,
                   camera: StereoCameraModel, r_inv: np.ndarray,
                   subset: np.ndarray) -> float:
    rotations, translations = constant_velocity_transforms(varpi, arrays.dt[subset])
    moved = (np.einsum("nab,nb->na", rotations, arrays.p_early[subset])
             + translations)
    projected, valid = camera.project_many(moved)
    residuals = (arrays.y_late[subset] - projected)[valid]
    return 0.5 * float(np.einsum("na,ab,nb->", residuals, r_inv, residuals))


def iterative_mc_ransac(segments: Sequence[TrackletSegment],
                        init_velocity: np.ndarray, camera: StereoCameraModel,
                        threshold: float = 0.05,
                        refine_indices: np.ndarray | None = None,
                        r_inv_diag: Sequence[float] = _DEFAULT_R_INV_DIAG,
                        tol: float = 1e-6, max_iters: int = 50) -> RansacResult:
    """Gauss-Newton refinement of the velocity on the image-space cost,
    followed by reclassification of every segment.

    Plain steps with halving (up to 8) on cost increase; stops when the
    relative cost change drops below `tol`.  A result that hits the
    iteration cap is returned flagged as unconverged.
    """
    arrays = _segment_arrays(segments)
    subset = (np.arange(len(segments)) if refine_indices is None
              else np.asarray(refine_indices, dtype=int))
    if subset.size == 0:
        raise NoValidHypothesisError("no segments to refine on")
    r_inv = np.diag(r_inv_diag)
    varpi = np.asarray(init_velocity, dtype=float).copy()
    cost = _weighted_cost(arrays, varpi, camera, r_inv, subset)
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        normal = np.zeros((6, 6))
        rhs = np.zeros(6)
        for i in subset:
            transform = se3.exp(arrays.dt[i] * varpi)
            moved = transform @ np.append(arrays.p_early[i], 1.0)
            if moved[2] <= camera.z_min:
                continue
            jac = velocity_jacobian(np.append(arrays.p_early[i], 1.0),
                                    arrays.dt[i], varpi, camera)
            residual = arrays.y_late[i] - camera.project(moved)
            normal += jac.T @ r_inv @ jac
            rhs += jac.T @ r_inv @ residual
        if np.linalg.cond(normal) >= _COND_LIMIT:
            raise SingularNormalMatrixError("refinement normal matrix singular")
        step = np.linalg.solve(normal, rhs)
        scale = 1.0
        new_cost = _weighted_cost(arrays, varpi + step, camera, r_inv, subset)
        halvings = 0
        while new_cost > cost and halvings < 8:
            scale *= 0.5
            halvings += 1
            new_cost = _weighted_cost(arrays, varpi + scale * step, camera,
                                      r_inv, subset)
        if new_cost > cost:
            converged = abs(cost) < 1e-18
            break
        varpi = varpi + scale * step
        change = abs(cost - new_cost) / cost if cost > 0 else 0.0
        cost = new_cost
        if change < tol or cost < 1e-24:
            converged = True
            break
    inliers, outliers = classify(segments, varpi, camera, threshold)
    _, score = _classify_arrays(arrays, varpi, camera, threshold)
    mean_err = float(score[inliers].mean()) if inliers.size else np.inf
    return RansacResult(varpi, inliers, outliers, iterations, converged,
                        mean_err)

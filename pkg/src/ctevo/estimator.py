"""Sliding-window continuous-time Gauss-Newton estimator.

State per window: one knot {pose relative to the window origin, body-centric
6-DOF velocity} at every unique observation time, plus one homogeneous
landmark per tracklet in the window-origin frame.  A white-noise-on-
acceleration prior couples consecutive knots; stereo reprojection residuals
couple knots to landmarks.  The first knot's pose is the gauge and is held
fixed by removing its perturbation block from the normal equations.

Consecutive windows overlap by width-1 clusters; each new window's origin is
composed from the previous solution at the shared boundary knot, so the
concatenated trajectory is continuous.  Old states are dropped without
marginalization.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import ransac as mcransac
from . import se3
from .camera import StereoCameraModel
from .errors import (DegenerateDisparityError, EmptyTrackletSetError,
                     NonPositiveDepthError, NonPositiveDtError,
                     NoValidHypothesisError, SingularNormalMatrixError,
                     SingularSystemError)
from .tracklets import FeatureTracklet

log = logging.getLogger(__name__)

_HOMOGENEOUS_LIFT = np.vstack([np.eye(3), np.zeros((1, 3))])  # 4x3
_KNOT_TIME_TOL = 1e-9
_COST_FLOOR = 1e-18

# Bernoulli numbers B_0..B_16 (B_1 = -1/2 convention).
_BERNOULLI = np.array([
    1.0, -0.5, 1.0 / 6.0, 0.0, -1.0 / 30.0, 0.0, 1.0 / 42.0, 0.0,
    -1.0 / 30.0, 0.0, 5.0 / 66.0, 0.0, -691.0 / 2730.0, 0.0, 7.0 / 6.0, 0.0,
    -3617.0 / 510.0,
])


@dataclass(eq=False)
class TrajectoryState:
    """Pose relative to the window (or global) origin plus body velocity."""

    T: np.ndarray       # (4, 4) transform origin-frame -> knot-frame
    varpi: np.ndarray   # (6,) body-centric [linear, angular] velocity
    t: float


@dataclass(eq=False)
class WnoaPrior:
    """Diagonal power-spectral density of the white acceleration noise."""

    qc_diag: np.ndarray

    def __post_init__(self):
        self.qc_diag = np.asarray(self.qc_diag, dtype=float)
        if self.qc_diag.shape != (6,) or (self.qc_diag <= 0).any():
            raise ValueError("Qc must be a positive 6-vector diagonal")

    @classmethod
    def from_information_diag(cls, qc_inv_diag: Sequence[float]) -> "WnoaPrior":
        return cls(1.0 / np.asarray(qc_inv_diag, dtype=float))


@dataclass(eq=False)
class EstimationWindow:
    states: list[TrajectoryState]
    landmarks: dict[int, np.ndarray]
    observations: list[tuple[int, int, np.ndarray]]  # (landmark id, knot, y)
    r_inv: np.ndarray

    @property
    def landmark_order(self) -> list[int]:
        return sorted(self.landmarks)


def prior_error(state_k: TrajectoryState, state_k1: TrajectoryState) -> np.ndarray:
    """12-vector WNOA residual between consecutive knots.

    Vanishes exactly on locally constant-velocity pairs: the top half is the
    pose increment minus the integrated velocity, the bottom half compares
    velocities through the inverse left Jacobian of the increment.
    """
    dt = state_k1.t - state_k.t
    if dt <= 0:
        raise NonPositiveDtError(f"knot times not increasing: dt={dt}")
    xi_rel = se3.log(state_k1.T @ se3.pose_inverse(state_k.T))
    top = xi_rel - dt * state_k.varpi
    bottom = se3.left_jacobian_inv(xi_rel) @ state_k1.varpi - state_k.varpi
    return np.concatenate([top, bottom])


def prior_covariance(prior: WnoaPrior, dt: float) -> np.ndarray:
    """12x12 covariance of the WNOA prior over a time step."""
    if dt <= 0:
        raise NonPositiveDtError(f"dt must be positive, got {dt}")
    blocks = np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])
    return np.kron(blocks, np.diag(prior.qc_diag))


def prior_information(prior: WnoaPrior, dt: float) -> np.ndarray:
    """Closed-form inverse of :func:`prior_covariance`."""
    if dt <= 0:
        raise NonPositiveDtError(f"dt must be positive, got {dt}")
    blocks = np.array([[12.0 / dt**3, -6.0 / dt**2], [-6.0 / dt**2, 4.0 / dt]])
    return np.kron(blocks, np.diag(1.0 / prior.qc_diag))


def _jinv_varpi_jacobian(xi: np.ndarray, varpi: np.ndarray,
                         terms: int = 16) -> np.ndarray:
    """Exact 6x6 Jacobian of xi -> left_jacobian_inv(xi) @ varpi.

    Built from the Bernoulli series of the inverse left Jacobian; the n=1
    term alone reproduces the usual half-curlyhat approximation.
    """
    c = se3.curlyhat(xi)
    powers = [np.eye(6)]
    vectors = [np.asarray(varpi, dtype=float)]
    for _ in range(terms - 1):
        powers.append(powers[-1] @ c)
        vectors.append(c @ vectors[-1])
    out = np.zeros((6, 6))
    factorial = 1.0
    for n in range(1, terms):
        factorial *= n
        coeff = _BERNOULLI[n] / factorial if n < len(_BERNOULLI) else 0.0
        if coeff == 0.0:
            continue
        inner = np.zeros((6, 6))
        for i in range(n):
            inner += powers[i] @ se3.curlyhat(vectors[n - 1 - i])
        out -= coeff * inner
    return out


def prior_jacobian(state_k: TrajectoryState,
                   state_k1: TrajectoryState) -> np.ndarray:
    """12x24 Jacobian of the prior residual w.r.t. [dxi_k, dvarpi_k,
    dxi_{k+1}, dvarpi_{k+1}], in the residual convention e(dx) ~ e - E dx."""
    dt = state_k1.t - state_k.t
    transform_rel = state_k1.T @ se3.pose_inverse(state_k.T)
    xi_rel = se3.log(transform_rel)
    j_inv = se3.left_jacobian_inv(xi_rel)
    adj = se3.adjoint(transform_rel)
    rate = _jinv_varpi_jacobian(xi_rel, state_k1.varpi)
    jac = np.zeros((12, 24))
    jac[:6, 0:6] = j_inv @ adj
    jac[:6, 6:12] = dt * np.eye(6)
    jac[:6, 12:18] = -j_inv
    jac[6:, 0:6] = rate @ j_inv @ adj
    jac[6:, 6:12] = np.eye(6)
    jac[6:, 12:18] = -rate @ j_inv
    jac[6:, 18:24] = -j_inv
    return jac


def measurement_error(state: TrajectoryState, landmark: np.ndarray,
                      y: np.ndarray, camera: StereoCameraModel) -> np.ndarray:
    """Stereo pixel residual y - project(T_k @ landmark)."""
    moved = state.T @ landmark
    return np.asarray(y, dtype=float) - camera.project(moved)


def measurement_jacobian(state: TrajectoryState, landmark: np.ndarray,
                         camera: StereoCameraModel) -> np.ndarray:
    """3x9 Jacobian over [pose perturbation | landmark shift]."""
    moved = state.T @ landmark
    sensor = camera.projection_jacobian(moved)
    out = np.zeros((3, 9))
    out[:, :6] = sensor @ se3.odot(moved)
    out[:, 6:] = sensor @ state.T @ _HOMOGENEOUS_LIFT
    return out


def joint_cost(window: EstimationWindow, prior: WnoaPrior,
               camera: StereoCameraModel) -> float:
    cost = 0.0
    for k in range(len(window.states) - 1):
        e = prior_error(window.states[k], window.states[k + 1])
        q_inv = prior_information(prior, window.states[k + 1].t - window.states[k].t)
        cost += 0.5 * float(e @ q_inv @ e)
    for lm_id, k, y in window.observations:
        try:
            e = measurement_error(window.states[k], window.landmarks[lm_id],
                                  y, camera)
        except NonPositiveDepthError:
            continue
        cost += 0.5 * float(e @ window.r_inv @ e)
    return cost


def build_normal_equations(window: EstimationWindow, prior: WnoaPrior,
                           camera: StereoCameraModel,
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Newton system (A, b) with the gauge block (first knot pose)
    removed.

    Ordering: [dxi_1, dvarpi_1, ..., dxi_K, dvarpi_K, dzeta_1, ..., dzeta_M]
    minus the leading 6 gauge rows/columns.
    """
    n_states = len(window.states)
    order = window.landmark_order
    lm_col = {lm_id: 12 * n_states + 3 * i for i, lm_id in enumerate(order)}
    dim = 12 * n_states + 3 * len(order)
    normal = np.zeros((dim, dim))
    rhs = np.zeros(dim)
    for k in range(n_states - 1):
        e = prior_error(window.states[k], window.states[k + 1])
        jac = prior_jacobian(window.states[k], window.states[k + 1])
        q_inv = prior_information(prior, window.states[k + 1].t - window.states[k].t)
        weighted = jac.T @ q_inv
        sl = slice(12 * k, 12 * k + 24)
        normal[sl, sl] += weighted @ jac
        rhs[sl] += weighted @ e
    dropped = 0
    for lm_id, k, y in window.observations:
        try:
            e = measurement_error(window.states[k], window.landmarks[lm_id],
                                  y, camera)
        except NonPositiveDepthError:
            dropped += 1
            continue
        jac = measurement_jacobian(window.states[k], window.landmarks[lm_id],
                                   camera)
        pose = slice(12 * k, 12 * k + 6)
        lm = slice(lm_col[lm_id], lm_col[lm_id] + 3)
        g_pose, g_lm = jac[:, :6], jac[:, 6:]
        w_pose = g_pose.T @ window.r_inv
        w_lm = g_lm.T @ window.r_inv
        normal[pose, pose] += w_pose @ g_pose
        normal[pose, lm] += w_pose @ g_lm
        normal[lm, pose] += w_lm @ g_pose
        normal[lm, lm] += w_lm @ g_lm
        rhs[pose] += w_pose @ e
        rhs[lm] += w_lm @ e
    if dropped:
        log.warning("dropped %d observation(s) with non-positive depth", dropped)
    return normal[6:, 6:], rhs[6:]


@dataclass(eq=False)
class SolveStats:
    iterations: int
    costs: list[float]
    converged: bool

    @property
    def initial_cost(self) -> float:
        return self.costs[0]

    @property
    def final_cost(self) -> float:
        return self.costs[-1]


def _apply_step(window: EstimationWindow, delta: np.ndarray) -> EstimationWindow:
    n_states = len(window.states)
    full = np.concatenate([np.zeros(6), delta])
    states = []
    for k, state in enumerate(window.states):
        dxi = full[12 * k:12 * k + 6]
        dvarpi = full[12 * k + 6:12 * k + 12]
        states.append(TrajectoryState(se3.exp(dxi) @ state.T,
                                      state.varpi + dvarpi, state.t))
    landmarks = {}
    for i, lm_id in enumerate(window.landmark_order):
        dzeta = full[12 * n_states + 3 * i:12 * n_states + 3 * i + 3]
        p = window.landmarks[lm_id].copy()
        p[:3] += dzeta
        landmarks[lm_id] = p
    return EstimationWindow(states, landmarks, window.observations, window.r_inv)


def gauss_newton_solve(window: EstimationWindow, prior: WnoaPrior,
                       camera: StereoCameraModel, convergence_tol: float = 0.01,
                       max_iters: int = 50,
                       ) -> tuple[EstimationWindow, SolveStats]:
    """Iterate Gauss-Newton until the relative cost change falls below
    convergence_tol.  Steps that increase the cost are halved up to 8 times;
    hitting the iteration cap returns a result flagged as unconverged."""
    current = EstimationWindow([TrajectoryState(s.T.copy(), s.varpi.copy(), s.t)
                                for s in window.states],
                               {k: v.copy() for k, v in window.landmarks.items()},
                               window.observations, window.r_inv)
    cost = joint_cost(current, prior, camera)
    costs = [cost]
    converged = cost < _COST_FLOOR
    iterations = 0
    while not converged and iterations < max_iters:
        iterations += 1
        normal, rhs = build_normal_equations(current, prior, camera)
        try:
            factor = cho_factor(normal, lower=True)
        except LinAlgError as exc:
            raise SingularSystemError(f"normal equations not SPD: {exc}") from None
        delta = cho_solve(factor, rhs)
        scale = 1.0
        candidate = _apply_step(current, delta)
        new_cost = joint_cost(candidate, prior, camera)
        halvings = 0
        while new_cost > cost and halvings < 8:
            scale *= 0.5
            halvings += 1
            candidate = _apply_step(current, scale * delta)
            new_cost = joint_cost(candidate, prior, camera)
        if new_cost > cost:
            # Numerical floor: no descent direction left at this precision.
            converged = True
            break
        change = (cost - new_cost) / cost if cost > 0 else 0.0
        current = candidate
        cost = new_cost
        costs.append(cost)
        if change < convergence_tol or cost < _COST_FLOOR:
            converged = True
    return current, SolveStats(iterations, costs, converged)


def initialize_window(tracklets: Sequence[FeatureTracklet], velocity: np.ndarray,
                      camera: StereoCameraModel, r_inv: np.ndarray,
                      cluster_range: tuple[int, int] | None = None,
                      ) -> EstimationWindow:
    """Dead-reckon initial knots from a constant velocity and seed landmarks
    from each tracklet's earliest in-window observation.

    One knot per unique observation time (times within 1e-9 s share a knot);
    tracklets with fewer than two in-window observations are excluded.
    """
    per_tracklet: list[tuple[int, list]] = []
    for tracklet in tracklets:
        observations = tracklet.observations
        if cluster_range is not None:
            lo, hi = cluster_range
            observations = [o for o in observations if lo <= o.cluster_id <= hi]
        if len(observations) >= 2:
            per_tracklet.append((tracklet.id, observations))
    if not per_tracklet:
        raise EmptyTrackletSetError("no tracklets with >= 2 observations")
    all_times = sorted(obs.t for _, observations in per_tracklet
                       for obs in observations)
    knot_times: list[float] = []
    for t in all_times:
        if not knot_times or t - knot_times[-1] > _KNOT_TIME_TOL:
            knot_times.append(t)
    velocity = np.asarray(velocity, dtype=float)
    t_origin = knot_times[0]
    states = [TrajectoryState(se3.exp((t - t_origin) * velocity),
                              velocity.copy(), t)
              for t in knot_times]
    knot_of = lambda t: int(np.searchsorted(np.array(knot_times),
                                            t - _KNOT_TIME_TOL))
    landmarks: dict[int, np.ndarray] = {}
    observations_out: list[tuple[int, int, np.ndarray]] = []
    for lm_id, observations in per_tracklet:
        first = observations[0]
        try:
            p_cam = camera.triangulate(first.uvr)
        except DegenerateDisparityError:
            continue
        k0 = knot_of(first.t)
        landmarks[lm_id] = se3.pose_inverse(states[k0].T) @ p_cam
        for obs in observations:
            observations_out.append((lm_id, knot_of(obs.t), obs.uvr))
    if not landmarks:
        raise EmptyTrackletSetError("no tracklets could be triangulated")
    return EstimationWindow(states, landmarks, observations_out,
                            np.asarray(r_inv, dtype=float))


@dataclass(eq=False)
class SlidingWindowParams:
    width: int = 5
    ransac: mcransac.RansacParams = field(default_factory=mcransac.RansacParams)
    r_inv_diag: tuple[float, float, float] = (0.5, 0.5, 0.1)
    convergence_tol: float = 0.01
    max_iters: int = 50
    min_tracklets: int = 3
    refine: bool = True

    def __post_init__(self):
        if self.width < 2:
            raise ValueError("window width must be >= 2")


@dataclass(eq=False)
class WindowDiagnostics:
    index: int
    cluster_lo: int
    cluster_hi: int
    n_tracklets: int = 0
    n_segments: int = 0
    n_inliers: int = 0
    n_knots: int = 0
    n_landmarks: int = 0
    iterations: int = 0
    initial_cost: float = math.nan
    final_cost: float = math.nan
    converged: bool = False
    status: str = "ok"


@dataclass(eq=False)
class SlideResult:
    knots: list[TrajectoryState]
    diagnostics: list[WindowDiagnostics]


def _query_local(states: list[TrajectoryState], t: float) -> np.ndarray:
    """Pose of a solved window at time t: exact knot if present, otherwise
    constant-velocity propagation from the bracketing knot."""
    times = np.array([s.t for s in states])
    idx = int(np.searchsorted(times, t))
    if idx < len(states) and abs(states[idx].t - t) <= _KNOT_TIME_TOL:
        return states[idx].T
    if idx > 0 and abs(states[idx - 1].t - t) <= _KNOT_TIME_TOL:
        return states[idx - 1].T
    anchor = states[min(max(idx - 1, 0), len(states) - 1)]
    return se3.exp((t - anchor.t) * anchor.varpi) @ anchor.T


def slide_window(tracklets: Sequence[FeatureTracklet], n_clusters: int,
                 camera: StereoCameraModel, prior: WnoaPrior,
                 params: SlidingWindowParams) -> SlideResult:
    """Run MC-RANSAC plus the WNOA solver over overlapping cluster windows
    and concatenate the per-window solutions into one global knot sequence."""
    width = min(params.width, n_clusters)
    starts = range(0, max(n_clusters - width, 0) + 1)
    knots: list[TrajectoryState] = []
    diagnostics: list[WindowDiagnostics] = []
    origin = np.eye(4)
    prev_states: list[TrajectoryState] | None = None
    last_emitted = -np.inf
    for wi, lo in enumerate(starts):
        hi = lo + width - 1
        diag = WindowDiagnostics(wi, lo, hi)
        diagnostics.append(diag)
        in_window = [t for t in tracklets
                     if sum(lo <= o.cluster_id <= hi for o in t.observations) >= 2]
        diag.n_tracklets = len(in_window)
        segments = mcransac.build_segments(in_window, camera, (lo, hi))
        diag.n_segments = len(segments)
        if len(segments) < max(params.ransac.sample_size, params.min_tracklets):
            diag.status = "skipped:segments"
            continue
        try:
            fast = mcransac.fast_mc_ransac(
                segments, camera, params.ransac.iterations,
                params.ransac.sample_size, params.ransac.threshold,
                params.ransac.seed + wi)
            refined = mcransac.iterative_mc_ransac(
                segments, fast.velocity, camera, params.ransac.threshold,
                fast.inliers, params.ransac.r_inv_diag, params.ransac.gn_tol,
                params.ransac.gn_max_iters)
        except (NoValidHypothesisError, SingularNormalMatrixError) as exc:
            diag.status = f"skipped:ransac ({exc})"
            continue
        diag.n_inliers = int(refined.inliers.size)
        outlier_ids = {segments[i].tracklet_id for i in refined.outliers}
        inlier_tracklets = [t for t in in_window if t.id not in outlier_ids]
        if len(inlier_tracklets) < params.min_tracklets:
            diag.status = "skipped:inliers"
            continue
        try:
            window = initialize_window(inlier_tracklets, refined.velocity,
                                       camera, np.diag(params.r_inv_diag),
                                       (lo, hi))
        except EmptyTrackletSetError as exc:
            diag.status = f"skipped:init ({exc})"
            continue
        if len(window.states) < 2:
            diag.status = "skipped:knots"
            continue
        if params.refine:
            try:
                solved, stats = gauss_newton_solve(
                    window, prior, camera, params.convergence_tol,
                    params.max_iters)
            except SingularSystemError as exc:
                diag.status = f"skipped:solve ({exc})"
                continue
            diag.iterations = stats.iterations
            diag.initial_cost = stats.initial_cost
            diag.final_cost = stats.final_cost
            diag.converged = stats.converged
        else:
            solved = window
            diag.initial_cost = diag.final_cost = joint_cost(window, prior, camera)
            diag.converged = True
        diag.n_knots = len(solved.states)
        diag.n_landmarks = len(solved.landmarks)
        if prev_states is not None:
            origin = _query_local(prev_states, solved.states[0].t) @ origin
        for state in solved.states:
            if state.t > last_emitted + _KNOT_TIME_TOL:
                knots.append(TrajectoryState(state.T @ origin,
                                             state.varpi.copy(), state.t))
                last_emitted = state.t
        prev_states = solved.states
    return SlideResult(knots, diagnostics)

"""SE(3)/se(3) kernel used by every downstream module.

Conventions:
    - A twist is a (6,) array ``xi = [v, omega]``: translational part first,
      rotational part second.  Same layout for generalized velocities
      ``varpi = [nu, omega]``.
    - A pose is a (4, 4) homogeneous matrix ``T = [[R, t], [0, 1]]``.
    - A homogeneous point is a (4,) array with last entry 1 for finite points.

All functions are pure and operate on float64 arrays; the exponential and
both Jacobians switch to truncated series below ``SMALL_ANGLE`` to avoid
cancellation near the identity.
"""

from __future__ import annotations

import numpy as np

from .errors import AmbiguousBranchError

# Rotation-angle threshold below which closed forms give way to series.
SMALL_ANGLE = 1e-7

# Angle threshold for the closed-form SE(3) left Jacobian; below it the
# coefficient cancellations outweigh series truncation error.
_JACOBIAN_SERIES_ANGLE = 0.05
_JACOBIAN_SERIES_TERMS = 10

# Fixed selector from homogeneous to 3D coordinates.
PROJECT_HOMOGENEOUS = np.hstack([np.eye(3), np.zeros((3, 1))])


def skew(v: np.ndarray) -> np.ndarray:
    """3x3 skew-symmetric matrix such that skew(a) @ b = a x b."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def unskew(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def hat(xi: np.ndarray) -> np.ndarray:
    """Lift a twist to its 4x4 matrix form."""
    out = np.zeros((4, 4))
    out[:3, :3] = skew(xi[3:])
    out[:3, 3] = xi[:3]
    return out


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`hat`."""
    return np.concatenate([m[:3, 3], unskew(m[:3, :3])])


def curlyhat(varpi: np.ndarray) -> np.ndarray:
    """Lift a generalized velocity to its 6x6 adjoint-algebra form."""
    out = np.zeros((6, 6))
    w = skew(varpi[3:])
    out[:3, :3] = w
    out[:3, 3:] = skew(varpi[:3])
    out[3:, 3:] = w
    return out


def odot(p: np.ndarray) -> np.ndarray:
    """4x6 operator with hat(xi) @ p == odot(p) @ xi for every twist xi."""
    out = np.zeros((4, 6))
    out[:3, :3] = p[3] * np.eye(3)
    out[:3, 3:] = -skew(p[:3])
    return out


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rodrigues rotation; 4th-order series below the small-angle threshold."""
    theta = np.linalg.norm(omega)
    w = skew(omega)
    if theta < SMALL_ANGLE:
        w2 = w @ w
        return np.eye(3) + w + w2 / 2.0 + w @ w2 / 6.0 + w2 @ w2 / 24.0
    ww = w @ w
    return np.eye(3) + np.sin(theta) / theta * w + (1.0 - np.cos(theta)) / theta**2 * ww


def so3_log(rotation: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix; raises at the pi branch point."""
    cos_theta = np.clip((np.trace(rotation) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta >= np.pi - 1e-6:
        raise AmbiguousBranchError(f"rotation angle {theta:.9f} too close to pi")
    axis_raw = unskew(rotation - rotation.T) / 2.0
    if theta < SMALL_ANGLE:
        return axis_raw * (1.0 + theta**2 / 6.0 + 7.0 * theta**4 / 360.0)
    return axis_raw * theta / np.sin(theta)


def so3_left_jacobian(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    w = skew(omega)
    ww = w @ w
    if theta < SMALL_ANGLE:
        return np.eye(3) + w / 2.0 + ww / 6.0 + w @ ww / 24.0 + ww @ ww / 120.0
    return (np.eye(3) + (1.0 - np.cos(theta)) / theta**2 * w
            + (theta - np.sin(theta)) / theta**3 * ww)


def so3_left_jacobian_inv(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    w = skew(omega)
    ww = w @ w
    if theta < SMALL_ANGLE:
        return np.eye(3) - w / 2.0 + ww / 12.0 - ww @ ww / 720.0
    coeff = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) - w / 2.0 + coeff * ww


def exp(xi: np.ndarray) -> np.ndarray:
    """Exponential map from a twist to a pose."""
    rotation = so3_exp(xi[3:])
    translation = so3_left_jacobian(xi[3:]) @ xi[:3]
    return pose_from_rt(rotation, translation)


def log(pose: np.ndarray) -> np.ndarray:
    """Principal-branch twist of a pose; inverse of :func:`exp`."""
    omega = so3_log(pose[:3, :3])
    v = so3_left_jacobian_inv(omega) @ pose[:3, 3]
    return np.concatenate([v, omega])


def adjoint(pose: np.ndarray) -> np.ndarray:
    """6x6 adjoint: [[R, skew(t) R], [0, R]]."""
    rotation = pose[:3, :3]
    out = np.zeros((6, 6))
    out[:3, :3] = rotation
    out[:3, 3:] = skew(pose[:3, 3]) @ rotation
    out[3:, 3:] = rotation
    return out


def _coupling_block(xi: np.ndarray) -> np.ndarray:
    # Closed-form upper-right block of the SE(3) left Jacobian.
    rho, phi = xi[:3], xi[3:]
    theta = np.linalg.norm(phi)
    rx = skew(rho)
    px = skew(phi)
    c1 = (theta - np.sin(theta)) / theta**3
    c2 = (1.0 - theta**2 / 2.0 - np.cos(theta)) / theta**4
    c3 = c2 - 3.0 * (theta - np.sin(theta) - theta**3 / 6.0) / theta**5
    m1 = px @ rx + rx @ px + px @ rx @ px
    m2 = px @ px @ rx + rx @ px @ px - 3.0 * px @ rx @ px
    m3 = px @ rx @ px @ px + px @ px @ rx @ px
    return 0.5 * rx + c1 * m1 - c2 * m2 - 0.5 * c3 * m3


def _series_left_jacobian(xi: np.ndarray, terms: int) -> np.ndarray:
    out = np.zeros((6, 6))
    term = np.eye(6)
    factorial = 1.0
    c = curlyhat(xi)
    for n in range(terms):
        out += term / factorial
        term = term @ c
        factorial *= n + 2
    return out


def left_jacobian(xi: np.ndarray) -> np.ndarray:
    """SE(3) left Jacobian; series fallback for small rotation angles."""
    if np.linalg.norm(xi[3:]) < _JACOBIAN_SERIES_ANGLE:
        return _series_left_jacobian(xi, _JACOBIAN_SERIES_TERMS)
    j_rot = so3_left_jacobian(xi[3:])
    out = np.zeros((6, 6))
    out[:3, :3] = j_rot
    out[:3, 3:] = _coupling_block(xi)
    out[3:, 3:] = j_rot
    return out


def left_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    """Inverse SE(3) left Jacobian via the block-triangular closed form."""
    if np.linalg.norm(xi[3:]) < _JACOBIAN_SERIES_ANGLE:
        return np.linalg.inv(_series_left_jacobian(xi, _JACOBIAN_SERIES_TERMS))
    j_rot_inv = so3_left_jacobian_inv(xi[3:])
    out = np.zeros((6, 6))
    out[:3, :3] = j_rot_inv
    out[:3, 3:] = -j_rot_inv @ _coupling_block(xi) @ j_rot_inv
    out[3:, 3:] = j_rot_inv
    return out


def pose_from_rt(rotation: np.ndarray, translation: np.ndarray) -> np.ndarray:
    out = np.eye(4)
    out[:3, :3] = rotation
    out[:3, 3] = translation
    return out


def pose_inverse(pose: np.ndarray) -> np.ndarray:
    rotation_t = pose[:3, :3].T
    return pose_from_rt(rotation_t, -rotation_t @ pose[:3, 3])


def transform_point(pose: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Apply a rigid transform to a homogeneous point."""
    return pose @ p


def hpoint(xyz: np.ndarray) -> np.ndarray:
    """Homogeneous point from 3D coordinates."""
    return np.append(np.asarray(xyz, dtype=float), 1.0)


def is_valid_pose(pose: np.ndarray, tol: float = 1e-9) -> bool:
    """Orthonormality and determinant check for the rotation block."""
    r = pose[:3, :3]
    if np.abs(r.T @ r - np.eye(3)).max() > tol:
        return False
    if abs(np.linalg.det(r) - 1.0) > tol:
        return False
    return bool(np.allclose(pose[3], [0.0, 0.0, 0.0, 1.0], atol=tol))

"""Camera models, pose parameterization, projection and analytic Jacobian blocks.

Conventions used throughout:
  - world -> camera: S = R Q + t with R = Rz(gamma) @ Ry(beta) @ Rx(alpha)
  - pose parameter vector order: (t1, t2, t3, alpha, beta, gamma)
  - projection: normalized point (S1/S3, S2/S3), radial factor
    d = 1 + k1*r^2 + k2*r^4, then pixel = (u + f*d*xn, v + f*d*yn)
  - A blocks hold d(projection)/d(intrinsics), B blocks d(projection)/d(pose);
    residuals are defined as observed - projected, so the residual Jacobian is
    the negative of these. The sign cancels inside J^T J and is applied
    consistently on the gradient side by the solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PointBehindCamera

DEPTH_EPS = 1e-9

MODEL_KINDS = {"pinhole3": 3, "pinhole-k1": 4, "pinhole-k1k2": 5}


@dataclass(frozen=True)
class IntrinsicParams:
    """Intrinsic camera parameters: focal length, principal point, radial distortion."""

    model_kind: str
    f: float
    u: float
    v: float
    k1: float = 0.0
    k2: float = 0.0

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if self.f <= 0:
            raise ValueError("focal length must be positive")
        if self.model_kind == "pinhole3" and (self.k1 or self.k2):
            raise ValueError("pinhole3 has no distortion coefficients")
        if self.model_kind == "pinhole-k1" and self.k2:
            raise ValueError("pinhole-k1 has no k2")

    @property
    def k(self) -> int:
        return MODEL_KINDS[self.model_kind]

    def to_vector(self) -> np.ndarray:
        return np.array([self.f, self.u, self.v, self.k1, self.k2][: self.k])

    @classmethod
    def from_vector(cls, model_kind: str, vec) -> "IntrinsicParams":
        vec = np.asarray(vec, dtype=float)
        k = MODEL_KINDS[model_kind]
        if vec.shape != (k,):
            raise ValueError(f"expected {k} parameters for {model_kind}, got {vec.shape}")
        full = np.zeros(5)
        full[:k] = vec
        return cls(model_kind, *full)

    def to_dict(self) -> dict:
        d = {"model_kind": self.model_kind, "f": self.f, "u": self.u, "v": self.v}
        if self.k >= 4:
            d["k1"] = self.k1
        if self.k >= 5:
            d["k2"] = self.k2
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "IntrinsicParams":
        return cls(d["model_kind"], d["f"], d["u"], d["v"],
                   d.get("k1", 0.0), d.get("k2", 0.0))


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    wrapped = -((-a + np.pi) % (2 * np.pi) - np.pi)
    return wrapped if wrapped.ndim else float(wrapped)


@dataclass(frozen=True)
class Pose:
    """Extrinsic pose: translation plus (alpha, beta, gamma) rotation angles."""

    t: np.ndarray
    angles: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))
        object.__setattr__(self, "angles",
                           np.asarray(wrap_angle(self.angles), dtype=float).reshape(3))

    @property
    def rotation(self) -> np.ndarray:
        return rotation_from_angles(self.angles)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.t, self.angles])

    @classmethod
    def from_vector(cls, vec) -> "Pose":
        vec = np.asarray(vec, dtype=float).reshape(6)
        return cls(vec[:3], vec[3:])

    def camera_center(self) -> np.ndarray:
        return -self.rotation.T @ self.t

    def to_dict(self) -> dict:
        return {"t": self.t.tolist(), "angles": self.angles.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.array(d["t"]), np.array(d["angles"]))


@dataclass(frozen=True)
class TargetSpec:
    """Planar checkerboard target: rows x cols inner corners at a fixed pitch, Z = 0."""

    rows: int
    cols: int
    spacing: float

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("target needs at least a 2x2 corner grid")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")

    @property
    def n_points(self) -> int:
        return self.rows * self.cols

    @property
    def points(self) -> np.ndarray:
        """(rows*cols, 3) corner coordinates, row-major, Z = 0."""
        r, c = np.meshgrid(np.arange(self.rows), np.arange(self.cols), indexing="ij")
        pts = np.zeros((self.n_points, 3))
        pts[:, 0] = c.ravel() * self.spacing
        pts[:, 1] = r.ravel() * self.spacing
        return pts

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.cols - 1) * self.spacing / 2,
                         (self.rows - 1) * self.spacing / 2, 0.0])

    @property
    def diagonal(self) -> float:
        return float(np.hypot((self.rows - 1) * self.spacing,
                              (self.cols - 1) * self.spacing))

    def to_dict(self) -> dict:
        return {"rows": self.rows, "cols": self.cols, "spacing": self.spacing}

    @classmethod
    def from_dict(cls, d: dict) -> "TargetSpec":
        return cls(int(d["rows"]), int(d["cols"]), float(d["spacing"]))


@dataclass(frozen=True)
class JacobianBlocks:
    """Per-point Jacobian split: A (2 x k, intrinsics) and B (2 x 6, pose)."""

    A: np.ndarray
    B: np.ndarray


def _axis_rotations(angles):
    a, b, g = angles
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cg, sg = np.cos(g), np.sin(g)
    Rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    Ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    Rz = np.array([[cg, -sg, 0], [sg, cg, 0], [0, 0, 1]])
    return Rx, Ry, Rz


def rotation_from_angles(angles) -> np.ndarray:
    """R = Rz(gamma) @ Ry(beta) @ Rx(alpha)."""
    Rx, Ry, Rz = _axis_rotations(np.asarray(angles, dtype=float).reshape(3))
    return Rz @ Ry @ Rx


def rotation_angle_derivatives(angles, Q) -> np.ndarray:
    """d(R Q)/d(alpha, beta, gamma) for a batch of points.

    Q: (n, 3) world points. Returns (n, 3, 3): [:, :, j] is dS/d(angle_j).
    """
    a, b, g = np.asarray(angles, dtype=float).reshape(3)
    Rx, Ry, Rz = _axis_rotations((a, b, g))
    dRx = np.array([[0, 0, 0],
                    [0, -np.sin(a), -np.cos(a)],
                    [0, np.cos(a), -np.sin(a)]])
    dRy = np.array([[-np.sin(b), 0, np.cos(b)],
                    [0, 0, 0],
                    [-np.cos(b), 0, -np.sin(b)]])
    dRz = np.array([[-np.sin(g), -np.cos(g), 0],
                    [np.cos(g), -np.sin(g), 0],
                    [0, 0, 0]])
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    cols = np.stack([
        Q @ (Rz @ Ry @ dRx).T,
        Q @ (Rz @ dRy @ Rx).T,
        Q @ (dRz @ Ry @ Rx).T,
    ], axis=2)
    return cols


def angles_from_rotation(R) -> np.ndarray:
    """Inverse of rotation_from_angles (beta taken in [-pi/2, pi/2])."""
    R = np.asarray(R, dtype=float)
    beta = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
    if abs(R[2, 0]) < 1.0 - 1e-12:
        alpha = np.arctan2(R[2, 1], R[2, 2])
        gamma = np.arctan2(R[1, 0], R[0, 0])
    else:
        # gimbal lock: fold gamma into alpha
        alpha = np.arctan2(-R[1, 2], R[1, 1])
        gamma = 0.0
    return np.array([alpha, beta, gamma])


def transform_points(pose: Pose, Q) -> np.ndarray:
    """World points (n, 3) into the camera frame."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    return Q @ pose.rotation.T + pose.t


def _radial(theta: IntrinsicParams, xn, yn):
    r2 = xn * xn + yn * yn
    d = 1.0 + theta.k1 * r2 + theta.k2 * r2 * r2
    return r2, d


def project_camera_points(theta: IntrinsicParams, S) -> np.ndarray:
    """Project points already in the camera frame; raises PointBehindCamera."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    bad = np.nonzero(S[:, 2] <= DEPTH_EPS)[0]
    if bad.size:
        raise PointBehindCamera(float(S[bad[0], 2]), point=int(bad[0]))
    xn = S[:, 0] / S[:, 2]
    yn = S[:, 1] / S[:, 2]
    _, d = _radial(theta, xn, yn)
    out = np.empty((S.shape[0], 2))
    out[:, 0] = theta.u + theta.f * d * xn
    out[:, 1] = theta.v + theta.f * d * yn
    return out


def project_points(theta: IntrinsicParams, pose: Pose, Q) -> np.ndarray:
    """Project world points (n, 3) to pixels (n, 2)."""
    return project_camera_points(theta, transform_points(pose, Q))


def project(theta: IntrinsicParams, pose: Pose, Q) -> np.ndarray:
    """Project a single world point to a pixel (2,)."""
    return project_points(theta, pose, np.asarray(Q).reshape(1, 3))[0]


def intrinsic_derivatives(theta: IntrinsicParams, S) -> np.ndarray:
    """d(projection)/d(intrinsics) at camera points S: (n, 2, k)."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    n = S.shape[0]
    xn = S[:, 0] / S[:, 2]
    yn = S[:, 1] / S[:, 2]
    r2, d = _radial(theta, xn, yn)
    A = np.zeros((n, 2, theta.k))
    A[:, 0, 0] = d * xn
    A[:, 1, 0] = d * yn
    A[:, 0, 1] = 1.0
    A[:, 1, 2] = 1.0
    if theta.k >= 4:
        A[:, 0, 3] = theta.f * xn * r2
        A[:, 1, 3] = theta.f * yn * r2
    if theta.k >= 5:
        A[:, 0, 4] = theta.f * xn * r2 * r2
        A[:, 1, 4] = theta.f * yn * r2 * r2
    return A


def camera_point_derivatives(theta: IntrinsicParams, S) -> np.ndarray:
    """d(projection)/dS at camera points S: (n, 2, 3)."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    n = S.shape[0]
    z = S[:, 2]
    xn = S[:, 0] / z
    yn = S[:, 1] / z
    r2, d = _radial(theta, xn, yn)
    g = theta.k1 + 2.0 * theta.k2 * r2  # d(dist)/d(r^2)
    f = theta.f
    D = np.empty((n, 2, 3))
    D[:, 0, 0] = f * (2.0 * g * xn * xn + d) / z
    D[:, 0, 1] = f * 2.0 * g * xn * yn / z
    D[:, 0, 2] = -f * xn * (2.0 * g * r2 + d) / z
    D[:, 1, 0] = f * 2.0 * g * xn * yn / z
    D[:, 1, 1] = f * (2.0 * g * yn * yn + d) / z
    D[:, 1, 2] = -f * yn * (2.0 * g * r2 + d) / z
    return D


def jacobian_blocks_batch(theta: IntrinsicParams, pose: Pose, Q):
    """A (n, 2, k) and B (n, 2, 6) for all points of one view at once."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    S = transform_points(pose, Q)
    bad = np.nonzero(S[:, 2] <= DEPTH_EPS)[0]
    if bad.size:
        raise PointBehindCamera(float(S[bad[0], 2]), point=int(bad[0]))
    A = intrinsic_derivatives(theta, S)
    dqdS = camera_point_derivatives(theta, S)
    dSdang = rotation_angle_derivatives(pose.angles, Q)
    B = np.empty((Q.shape[0], 2, 6))
    B[:, :, :3] = dqdS  # dS/dt = I
    B[:, :, 3:] = dqdS @ dSdang
    return A, B


def jacobian_blocks(theta: IntrinsicParams, pose: Pose, Q) -> JacobianBlocks:
    """Jacobian blocks for a single world point."""
    A, B = jacobian_blocks_batch(theta, pose, np.asarray(Q).reshape(1, 3))
    return JacobianBlocks(A[0], B[0])

"""Bundle adjustment, information-matrix assembly and intrinsic covariance.

The normal-equations matrix is kept in its natural block-sparse form
(U, V_i, W_i); the intrinsic covariance comes from the Schur complement
Sigma = (U - sum_i W_i V_i^-1 W_i^T)^+ so the full (k + 6m) system is never
inverted densely.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (DegenerateConfiguration, EmptyObservations,
                     PointBehindCamera, SingularNormalEquations)
from .geometry import (IntrinsicParams, Pose, TargetSpec, angles_from_rotation,
                       jacobian_blocks_batch, project_points, transform_points)

PINV_RCOND = 1e-10


@dataclass
class ImageObservation:
    """Detected corners of one image: target indices, pixels, optional 2x2 weights."""

    indices: np.ndarray          # (n,) int target-point indices
    xy: np.ndarray               # (n, 2) pixel coordinates
    weights: np.ndarray | None = None   # (n, 2, 2) SPD weight matrices
    pose_guess: Pose | None = None

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=int).reshape(-1)
        self.xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        if len(self.indices) != len(self.xy):
            raise ValueError("indices/xy length mismatch")
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("duplicate target indices in image")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float).reshape(-1, 2, 2)
            if len(self.weights) != len(self.indices):
                raise ValueError("weights length mismatch")

    @property
    def n(self) -> int:
        return len(self.indices)


@dataclass
class ObservationSet:
    """All images of one calibration session."""

    images: list[ImageObservation] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.images)

    def total_corners(self) -> int:
        return sum(img.n for img in self.images)


@dataclass
class InformationMatrix:
    """Block-sparse J^T C J: U (k x k), per-image V_i (6 x 6) and W_i (k x 6)."""

    U: np.ndarray
    V_blocks: np.ndarray   # (m, 6, 6)
    W_blocks: np.ndarray   # (m, k, 6)

    @property
    def k(self) -> int:
        return self.U.shape[0]

    @property
    def m(self) -> int:
        return len(self.V_blocks)

    def dense(self) -> np.ndarray:
        k, m = self.k, self.m
        H = np.zeros((k + 6 * m, k + 6 * m))
        H[:k, :k] = self.U
        for i in range(m):
            s = k + 6 * i
            H[s:s + 6, s:s + 6] = self.V_blocks[i]
            H[:k, s:s + 6] = self.W_blocks[i]
            H[s:s + 6, :k] = self.W_blocks[i].T
        return H


@dataclass
class CalibrationState:
    """Current estimate: intrinsics, per-image poses, covariance, residual stats."""

    theta: IntrinsicParams
    poses: list[Pose]
    sigma: np.ndarray | None = None
    sigma_rank: int | None = None
    rms: float | None = None
    per_image_info: list | None = None
    converged: bool = True
    iterations: int = 0
    cost_history: list[float] = field(default_factory=list)

    def trace_sigma(self) -> float:
        return float(np.trace(self.sigma))


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 100
    lambda_factor: float = 10.0


def psd_pinv(M, rcond=PINV_RCOND):
    """Pseudo-inverse of a symmetric PSD matrix by eigen-decomposition.

    Eigenvalues below rcond * max are zeroed. Returns (pinv, rank).
    """
    M = 0.5 * (M + M.T)
    w, Q = np.linalg.eigh(M)
    cutoff = rcond * max(w.max(), 0.0) if w.size else 0.0
    keep = w > cutoff
    inv_w = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    return (Q * inv_w) @ Q.T, int(keep.sum())


# ---------------------------------------------------------------------------
# linear (Zhang-style) initialization
# ---------------------------------------------------------------------------

def _normalization(pts):
    mean = pts.mean(axis=0)
    std = pts.std(axis=0)
    std[std < 1e-12] = 1.0
    s = np.sqrt(2.0) / std
    T = np.array([[s[0], 0, -s[0] * mean[0]],
                  [0, s[1], -s[1] * mean[1]],
                  [0, 0, 1.0]])
    return T


def homography_dlt(src, dst) -> np.ndarray:
    """Normalized DLT homography mapping src (n, 2) to dst (n, 2)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if len(src) < 4:
        raise DegenerateConfiguration("need at least 4 correspondences for a homography")
    Ts, Td = _normalization(src), _normalization(dst)
    sh = np.column_stack([src, np.ones(len(src))]) @ Ts.T
    dh = np.column_stack([dst, np.ones(len(dst))]) @ Td.T
    A = np.zeros((2 * len(src), 9))
    A[0::2, 0:3] = sh
    A[0::2, 6:9] = -dh[:, [0]] * sh
    A[1::2, 3:6] = sh
    A[1::2, 6:9] = -dh[:, [1]] * sh
    _, s, vt = np.linalg.svd(A)
    if s[-2] < 1e-10 * s[0]:
        raise DegenerateConfiguration("degenerate point configuration for homography")
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    return H / H[2, 2]


def _b_constraint(h, g):
    """Row of the linear system on b = (B11, B13, B23, B33) for h^T B g = value."""
    return np.array([h[0] * g[0] + h[1] * g[1],
                     h[0] * g[2] + h[2] * g[0],
                     h[1] * g[2] + h[2] * g[1],
                     h[2] * g[2]])


def intrinsics_from_homographies(homographies) -> tuple[float, float, float]:
    """Closed-form (f, u, v) from plane-to-image homography constraints.

    Assumes square pixels and zero skew, so the image of the absolute conic
    has 4 free coefficients; each homography contributes 2 equations.
    """
    rows = []
    for H in homographies:
        h1, h2 = H[:, 0], H[:, 1]
        rows.append(_b_constraint(h1, h2))
        rows.append(_b_constraint(h1, h1) - _b_constraint(h2, h2))
    Vmat = np.array(rows)
    _, s, vt = np.linalg.svd(Vmat)
    if len(s) >= 2 and s[-2] < 1e-7 * s[0]:
        raise DegenerateConfiguration(
            "intrinsic constraints are rank-deficient (poses too similar, "
            "e.g. all fronto-parallel)")
    b11, b13, b23, b33 = vt[-1]
    if abs(b11) < 1e-14:
        raise DegenerateConfiguration("intrinsic constraints are rank-deficient")
    u = -b13 / b11
    v = -b23 / b11
    lam = b33 - (b13 * b13 + b23 * b23) / b11
    f2 = lam / b11
    if f2 <= 0:
        raise DegenerateConfiguration("no real focal length satisfies the constraints")
    return float(np.sqrt(f2)), float(u), float(v)


def pose_from_homography(H, f, u, v) -> Pose:
    """Decompose a plane homography into R, t given pinhole intrinsics."""
    Kinv = np.array([[1.0 / f, 0, -u / f],
                     [0, 1.0 / f, -v / f],
                     [0, 0, 1.0]])
    M = Kinv @ H
    lam = 1.0 / np.linalg.norm(M[:, 0])
    if lam * M[2, 2] < 0:  # keep the target in front of the camera
        lam = -lam
    r1 = lam * M[:, 0]
    r2 = lam * M[:, 1]
    t = lam * M[:, 2]
    R_approx = np.column_stack([r1, r2, np.cross(r1, r2)])
    Uo, _, Vto = np.linalg.svd(R_approx)
    R = Uo @ np.diag([1.0, 1.0, np.linalg.det(Uo @ Vto)]) @ Vto
    return Pose(t, angles_from_rotation(R))


def initialize_calibration(obs: ObservationSet, target: TargetSpec,
                           model_kind: str) -> CalibrationState:
    """Linear initialization: per-image homographies, closed-form intrinsics,
    decomposed poses. Distortion coefficients start at zero."""
    if obs.m < 3:
        raise DegenerateConfiguration(f"need at least 3 images, got {obs.m}")
    pts = target.points
    homographies = []
    for img in obs.images:
        if img.n < 4:
            raise DegenerateConfiguration("need at least 4 corners per image")
        homographies.append(homography_dlt(pts[img.indices, :2], img.xy))
    f, u, v = intrinsics_from_homographies(homographies)
    theta = IntrinsicParams(model_kind, f, u, v)  # distortion starts at zero
    poses = [pose_from_homography(H, f, u, v) for H in homographies]
    state = CalibrationState(theta=theta, poses=poses)
    state.rms = reprojection_rms(state, obs, target)
    return state


# ---------------------------------------------------------------------------
# information matrix and covariance
# ---------------------------------------------------------------------------

def _image_blocks(theta, pose, img: ImageObservation, target: TargetSpec,
                  weighted: bool, image_index=None):
    """Per-image (U_i, V_i, W_i) plus the raw A, B, C arrays."""
    try:
        A, B = jacobian_blocks_batch(theta, pose, target.points[img.indices])
    except PointBehindCamera as exc:
        raise PointBehindCamera(exc.depth, image=image_index, point=exc.point) from None
    if weighted and img.weights is not None:
        C = img.weights
    else:
        C = np.broadcast_to(np.eye(2), (img.n, 2, 2))
    CA = C @ A
    CB = C @ B
    U_i = np.einsum("nij,nik->jk", A, CA)
    V_i = np.einsum("nij,nik->jk", B, CB)
    W_i = np.einsum("nij,nik->jk", A, CB)
    return U_i, V_i, W_i, A, B, C


def assemble_information(state: CalibrationState, obs: ObservationSet,
                         target: TargetSpec, weighted: bool = True) -> InformationMatrix:
    """U, V_i, W_i sums over all observed corners (C_ij = I when unweighted)."""
    k = state.theta.k
    U = np.zeros((k, k))
    V_blocks = np.zeros((obs.m, 6, 6))
    W_blocks = np.zeros((obs.m, k, 6))
    for i, img in enumerate(obs.images):
        U_i, V_i, W_i, *_ = _image_blocks(state.theta, state.poses[i], img,
                                          target, weighted, image_index=i)
        U += U_i
        V_blocks[i] = V_i
        W_blocks[i] = W_i
    return InformationMatrix(U, V_blocks, W_blocks)


def schur_complement(info: InformationMatrix) -> np.ndarray:
    """U - sum_i W_i V_i^-1 W_i^T (singular V_i falls back to pseudo-inverse)."""
    S = info.U.copy()
    for V_i, W_i in zip(info.V_blocks, info.W_blocks):
        try:
            S -= W_i @ np.linalg.solve(V_i, W_i.T)
        except np.linalg.LinAlgError:
            Vp, _ = psd_pinv(V_i)
            S -= W_i @ Vp @ W_i.T
    return 0.5 * (S + S.T)


def intrinsic_covariance(info: InformationMatrix) -> tuple[np.ndarray, int]:
    """Intrinsic covariance: pseudo-inverse of the Schur complement.

    Returns (Sigma, rank); rank < k signals a degenerate configuration.
    """
    return psd_pinv(schur_complement(info))


def residuals(state: CalibrationState, obs: ObservationSet, target: TargetSpec):
    """Per-image residual arrays (observed - projected), each (n, 2)."""
    pts = target.points
    out = []
    for pose, img in zip(state.poses, obs.images):
        proj = project_points(state.theta, pose, pts[img.indices])
        out.append(img.xy - proj)
    return out

def reprojection_rms(state: CalibrationState, obs: ObservationSet,
                     target: TargetSpec) -> float:
    """sqrt(mean squared residual component) in pixels."""
    if obs.total_corners() == 0:
        raise EmptyObservations("no corners to evaluate")
    res = residuals(state, obs, target)
    sq = sum(float((r * r).sum()) for r in res)
    return float(np.sqrt(sq / (2 * obs.total_corners())))


# ---------------------------------------------------------------------------
# Levenberg-Marquardt bundle adjustment
# ---------------------------------------------------------------------------

def _weighted_cost(state, obs, target, weighted):
    cost = 0.0
    for pose, img in zip(state.poses, obs.images):
        proj = project_points(state.theta, pose, target.points[img.indices])
        e = img.xy - proj
        if weighted and img.weights is not None:
            cost += float(np.einsum("ni,nij,nj->", e, img.weights, e))
        else:
            cost += float((e * e).sum())
    return cost


def optimize_bundle(state: CalibrationState, obs: ObservationSet,
                    target: TargetSpec, config: SolverConfig = SolverConfig(),
                    weighted: bool = True) -> CalibrationState:
    """Levenberg-Marquardt over intrinsics and all poses.

    Uses the block-sparse normal equations with Schur elimination of the pose
    blocks. The returned state carries the covariance of the accepted optimum.
    """
    theta = state.theta
    poses = list(state.poses)
    k = theta.k
    m = obs.m
    if m != len(poses):
        raise ValueError("pose count does not match image count")

    cur = CalibrationState(theta=theta, poses=poses)
    cost = _weighted_cost(cur, obs, target, weighted)
    cost_history = [cost]
    lam = None
    converged = False
    it = 0

    for it in range(1, config.max_iter + 1):
        # assemble blocks and gradient at the current estimate
        U = np.zeros((k, k))
        V_blocks = np.zeros((m, 6, 6))
        W_blocks = np.zeros((m, k, 6))
        b_theta = np.zeros(k)
        b_pose = np.zeros((m, 6))
        for i, img in enumerate(obs.images):
            U_i, V_i, W_i, A, B, C = _image_blocks(theta, poses[i], img,
                                                   target, weighted, image_index=i)
            proj = project_points(theta, poses[i], target.points[img.indices])
            e = img.xy - proj
            Ce = np.einsum("nij,nj->ni", C, e)
            U += U_i
            V_blocks[i] = V_i
            W_blocks[i] = W_i
            b_theta += np.einsum("nij,ni->j", A, Ce)
            b_pose[i] += np.einsum("nij,ni->j", B, Ce)

        if lam is None:
            diag_mean = (np.trace(U) + V_blocks.trace(axis1=1, axis2=2).sum()) / (k + 6 * m)
            lam = 1e-3 * max(diag_mean, 1e-30)

        accepted = False
        for _ in range(60):
            try:
                Vd_inv = np.linalg.inv(V_blocks + lam * np.eye(6))
            except np.linalg.LinAlgError:
                lam *= config.lambda_factor
                continue
            S = U + lam * np.eye(k) - np.einsum("mkj,mjl,mnl->kn",
                                                W_blocks, Vd_inv, W_blocks)
            rhs = b_theta - np.einsum("mkj,mjl,ml->k", W_blocks, Vd_inv, b_pose)
            try:
                d_theta = np.linalg.solve(S, rhs)
            except np.linalg.LinAlgError:
                lam *= config.lambda_factor
                continue
            d_pose = np.einsum("mjl,ml->mj", Vd_inv,
                               b_pose - np.einsum("mkj,k->mj", W_blocks, d_theta))
            try:
                new_theta = IntrinsicParams.from_vector(theta.model_kind,
                                                        theta.to_vector() + d_theta)
                new_poses = [Pose.from_vector(p.to_vector() + dp)
                             for p, dp in zip(poses, d_pose)]
                trial = CalibrationState(theta=new_theta, poses=new_poses)
                new_cost = _weighted_cost(trial, obs, target, weighted)
            except (PointBehindCamera, ValueError):
                lam *= config.lambda_factor
                continue
            if np.isfinite(new_cost) and new_cost <= cost:
                accepted = True
                break
            lam *= config.lambda_factor
        else:
            raise SingularNormalEquations("damping retries exhausted")

        if not accepted:
            break
        theta, poses = new_theta, new_poses
        decrease = (cost - new_cost) / max(cost, 1e-300)
        cost = new_cost
        cost_history.append(cost)
        lam /= config.lambda_factor
        if decrease < config.tol:
            converged = True
            break
    else:
        converged = False

    final = CalibrationState(theta=theta, poses=poses, converged=converged,
                             iterations=it, cost_history=cost_history)
    info = assemble_information(final, obs, target, weighted=weighted)
    final.per_image_info = [(info.U, info.V_blocks, info.W_blocks)]
    final.sigma, final.sigma_rank = intrinsic_covariance(info)
    final.rms = reprojection_rms(final, obs, target)
    return final


def calibrate(obs: ObservationSet, target: TargetSpec, model_kind: str,
              config: SolverConfig = SolverConfig(), weighted: bool = True,
              initial: CalibrationState | None = None) -> CalibrationState:
    """Initialize (or warm-start) and refine a calibration in one call."""
    state = initial if initial is not None else initialize_calibration(obs, target, model_kind)
    return optimize_bundle(state, obs, target, config, weighted=weighted)

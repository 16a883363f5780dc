"""Global search for the next acquisition pose.

The figure of merit for a candidate pose is the trace of the intrinsic
covariance that a capture from that pose would yield: the pose-independent
information of the already-acquired images is precomputed once, the
candidate's own Schur term is added, and the result is pseudo-inverted.
Candidates that push any target corner out of the image (or behind the
camera) score a large constant penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calibration import (CalibrationState, ObservationSet, psd_pinv,
                          schur_complement, assemble_information)
from .corners import CornerModel, predicted_grid_weights
from .errors import NoFeasiblePose, PointBehindCamera
from .geometry import (IntrinsicParams, Pose, TargetSpec,
                       jacobian_blocks_batch, project_points)

PENALTY = 1e12


@dataclass(frozen=True)
class PoseSearchSpace:
    """Axis-aligned box over (t1, t2, t3, alpha, beta, gamma) plus image size."""

    t_lower: np.ndarray
    t_upper: np.ndarray
    angle_lower: np.ndarray
    angle_upper: np.ndarray
    image_size: tuple[int, int]

    def __post_init__(self):
        for name in ("t_lower", "t_upper", "angle_lower", "angle_upper"):
            object.__setattr__(self, name, np.asarray(getattr(self, name),
                                                      dtype=float).reshape(3))
        if np.any(self.t_upper < self.t_lower) or np.any(self.angle_upper < self.angle_lower):
            raise ValueError("lower bound exceeds upper bound")
        if self.image_size[0] <= 0 or self.image_size[1] <= 0:
            raise ValueError("image size must be positive")

    @property
    def lower(self) -> np.ndarray:
        return np.concatenate([self.t_lower, self.angle_lower])

    @property
    def upper(self) -> np.ndarray:
        return np.concatenate([self.t_upper, self.angle_upper])


def default_search_space(theta: IntrinsicParams, target: TargetSpec,
                         image_size) -> PoseSearchSpace:
    """Working volume: depth 0.5-4 target diagonals, lateral offsets within
    0.8 * depth * tan(half-FOV), tilts up to 75 degrees."""
    diag = target.diagonal
    t3_lo, t3_hi = 0.5 * diag, 4.0 * diag
    half_fov = np.arctan(0.5 * image_size[0] / theta.f)
    lateral = 0.8 * t3_hi * np.tan(half_fov)
    ang = np.deg2rad(75.0)
    return PoseSearchSpace(
        t_lower=np.array([-lateral, -lateral, t3_lo]),
        t_upper=np.array([lateral, lateral, t3_hi]),
        angle_lower=np.array([-ang, -ang, -ang]),
        angle_upper=np.array([ang, ang, ang]),
        image_size=(int(image_size[0]), int(image_size[1])),
    )


@dataclass(frozen=True)
class PlannerConfig:
    method: str = "sa"              # "sa" or "es"
    budget: int = 3000
    seed: int = 0
    penalty: float = PENALTY
    use_corner_model: bool = False
    blur_sigma: float = 1.0
    contrast: float = 255.0

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.method not in ("sa", "es"):
            raise ValueError(f"unknown search method {self.method!r}")


@dataclass(frozen=True)
class BaseInformation:
    """Pose-independent part of the Schur complement: sum over acquired images."""

    A_pre: np.ndarray

    @property
    def k(self) -> int:
        return self.A_pre.shape[0]


def precompute_base(state: CalibrationState, obs: ObservationSet,
                    target: TargetSpec, weighted: bool = True) -> BaseInformation:
    """Sum of (U_i - W_i V_i^-1 W_i^T) over all acquired images."""
    if obs.m == 0:
        return BaseInformation(np.zeros((state.theta.k, state.theta.k)))
    info = assemble_information(state, obs, target, weighted=weighted)
    return BaseInformation(schur_complement(info))


def _candidate_term(theta, pose, target, weights):
    """Schur term U - W V^-1 W^T contributed by one hypothetical image."""
    A, B = jacobian_blocks_batch(theta, pose, target.points)
    if weights is None:
        CA, CB = A, B
    else:
        CA = weights @ A
        CB = weights @ B
    U1 = np.einsum("nij,nik->jk", A, CA)
    V1 = np.einsum("nij,nik->jk", B, CB)
    W1 = np.einsum("nij,nik->jk", A, CB)
    try:
        return U1 - W1 @ np.linalg.solve(V1, W1.T)
    except np.linalg.LinAlgError:
        Vp, _ = psd_pinv(V1)
        return U1 - W1 @ Vp @ W1.T


def evaluate_candidate(pose: Pose, base: BaseInformation, state: CalibrationState,
                       target: TargetSpec, space: PoseSearchSpace,
                       cfg: PlannerConfig, corner_model: CornerModel | None = None):
    """(objective value, infeasibility measure) for one candidate pose.

    Infeasibility is 0 for feasible poses; otherwise the summed pixel distance
    by which corners leave the image (behind-camera poses get a large value).
    """
    w, h = space.image_size
    try:
        proj = project_points(state.theta, pose, target.points)
    except PointBehindCamera:
        return cfg.penalty, 1e6
    over = (np.clip(-proj[:, 0], 0, None) + np.clip(proj[:, 0] - (w - 1e-9), 0, None)
            + np.clip(-proj[:, 1], 0, None) + np.clip(proj[:, 1] - (h - 1e-9), 0, None))
    infeas = float(over.sum())
    if infeas > 0:
        return cfg.penalty, infeas
    weights = None
    if cfg.use_corner_model and corner_model is not None:
        weights = predicted_grid_weights(proj, target.rows, target.cols,
                                         corner_model, cfg.blur_sigma, cfg.contrast)
    term = _candidate_term(state.theta, pose, target, weights)
    sigma, _ = psd_pinv(base.A_pre + term)
    return float(np.trace(sigma)), 0.0


def objective(pose: Pose, base: BaseInformation, state: CalibrationState,
              target: TargetSpec, space: PoseSearchSpace, cfg: PlannerConfig,
              corner_model: CornerModel | None = None) -> float:
    """Trace of the expected intrinsic covariance, or the penalty if infeasible."""
    return evaluate_candidate(pose, base, state, target, space, cfg, corner_model)[0]


@dataclass
class SearchResult:
    pose: Pose
    objective: float
    evaluations: int
    trace: list = field(default_factory=list)  # (evaluation index, best so far)

    def to_dict(self) -> dict:
        return {"pose": {"t": self.pose.t.tolist(),
                         "angles_deg": np.degrees(self.pose.angles).tolist()},
                "objective": self.objective,
                "evaluations": self.evaluations}


class _Tracker:
    """Budget accounting plus the non-increasing best-so-far trace."""

    def __init__(self, evaluate, budget):
        self.evaluate = evaluate
        self.budget = budget
        self.count = 0
        self.best_value = np.inf
        self.best_phi = np.inf
        self.best_pose = None
        self.trace = []

    @property
    def exhausted(self):
        return self.count >= self.budget

    def __call__(self, vec):
        pose = Pose.from_vector(vec)
        value, phi = self.evaluate(pose)
        self.count += 1
        if value < self.best_value or (value == self.best_value and phi < self.best_phi):
            self.best_value = value
            self.best_phi = phi
            self.best_pose = pose
        self.trace.append((self.count, self.best_value))
        return value, phi


def _search_sa(tracker, space, cfg, rng):
    lo, hi = space.lower, space.upper
    span = hi - lo
    # seed the chain and the temperature scale with uniform samples
    n_init = min(50, cfg.budget)
    init_vals = []
    cur_vec, cur_val = None, np.inf
    for _ in range(n_init):
        vec = rng.uniform(lo, hi)
        val, _ = tracker(vec)
        init_vals.append(val)
        if val < cur_val:
            cur_vec, cur_val = vec, val
    feas = [v for v in init_vals if v < cfg.penalty]
    T0 = float(np.std(feas)) if len(feas) >= 2 else 1.0
    if T0 <= 0:
        T0 = max(abs(cur_val), 1.0) * 1e-3
    if cur_vec is None:
        cur_vec, cur_val = rng.uniform(lo, hi), np.inf
    step = 0.1 * span
    k = 0
    while not tracker.exhausted:
        T = T0 * 0.95 ** k
        k += 1
        prop = np.clip(cur_vec + rng.normal(0.0, 1.0, 6) * step, lo, hi)
        val, _ = tracker(prop)
        delta = val - cur_val
        if delta <= 0 or (T > 0 and rng.random() < np.exp(-delta / T)):
            cur_vec, cur_val = prop, val


def _stochastic_rank(order, values, phis, rng, pf=0.45):
    """In-place stochastic ranking bubble sort over (objective, infeasibility)."""
    n = len(order)
    for _ in range(n):
        swapped = False
        for i in range(n - 1):
            a, b = order[i], order[i + 1]
            if (phis[a] == phis[b] == 0.0) or rng.random() < pf:
                worse = values[a] > values[b]
            else:
                worse = (phis[a], values[a]) > (phis[b], values[b])
            if worse:
                order[i], order[i + 1] = b, a
                swapped = True
        if not swapped:
            break


def _search_es(tracker, space, cfg, rng, mu=15, lam=105):
    lo, hi = space.lower, space.upper
    span = np.where(hi > lo, hi - lo, 1.0)
    tau = 1.0 / np.sqrt(2.0 * 6)
    tau_p = 1.0 / np.sqrt(2.0 * np.sqrt(6))
    pop = rng.uniform(lo, hi, size=(lam, 6))
    sig = np.full((lam, 6), 0.2) * span
    while not tracker.exhausted:
        values = np.empty(lam)
        phis = np.empty(lam)
        n_eval = min(lam, tracker.budget - tracker.count)
        for i in range(n_eval):
            values[i], phis[i] = tracker(pop[i])
        if n_eval < lam:
            break
        order = list(range(lam))
        _stochastic_rank(order, values, phis, rng)
        parents = pop[order[:mu]]
        parent_sig = sig[order[:mu]]
        idx_a = rng.integers(0, mu, lam)
        idx_b = rng.integers(0, mu, lam)
        child = 0.5 * (parents[idx_a] + parents[idx_b])
        child_sig = np.sqrt(parent_sig[idx_a] * parent_sig[idx_b])
        child_sig = child_sig * np.exp(tau_p * rng.normal(size=(lam, 1))
                                       + tau * rng.normal(size=(lam, 6)))
        child_sig = np.clip(child_sig, 1e-8 * span, span)
        pop = np.clip(child + child_sig * rng.normal(size=(lam, 6)), lo, hi)
        sig = child_sig


def search_next_pose(base: BaseInformation, state: CalibrationState,
                     target: TargetSpec, space: PoseSearchSpace,
                     cfg: PlannerConfig,
                     corner_model: CornerModel | None = None) -> SearchResult:
    """Global minimization of the expected-covariance trace over the pose box."""
    rng = np.random.default_rng(cfg.seed)

    def evaluate(pose):
        return evaluate_candidate(pose, base, state, target, space, cfg, corner_model)

    tracker = _Tracker(evaluate, cfg.budget)
    if cfg.method == "sa":
        _search_sa(tracker, space, cfg, rng)
    else:
        _search_es(tracker, space, cfg, rng)
    if tracker.best_pose is None or tracker.best_value >= cfg.penalty:
        raise NoFeasiblePose(
            f"all {tracker.count} evaluated candidates were infeasible")
    return SearchResult(pose=tracker.best_pose, objective=tracker.best_value,
                        evaluations=tracker.count, trace=tracker.trace)

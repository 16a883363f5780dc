"""Synthetic evaluation harness: random checkerboard poses, noisy corner
synthesis, scheme comparisons (random / wizard / wizard-auto) and the
path-interpolation variant where every intermediate frame is kept."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .calibration import (CalibrationState, ImageObservation, ObservationSet,
                          SolverConfig, calibrate, initialize_calibration,
                          optimize_bundle, pose_from_homography, homography_dlt)
from .corners import CornerModel, build_corner_model
from .errors import CalibwizError, PointBehindCamera, SamplingExhausted
from .geometry import (IntrinsicParams, Pose, TargetSpec, angles_from_rotation,
                       project_points, rotation_from_angles, wrap_angle)
from .planner import (PlannerConfig, default_search_space, precompute_base,
                      search_next_pose)

SCHEMES = ("random", "wizard", "wizard-auto", "random-path", "wizard-path")

# random-pose generator constants: lateral offset fraction of depth, and
# depth range in target diagonals
LATERAL_FRACTION = 0.4
DEPTH_RANGE = (1.2, 3.5)
PERTURB_DEG = 15.0
MAX_REJECTIONS = 1000
PATH_FRAMES = 25


@dataclass(frozen=True)
class ExperimentConfig:
    ground_truth: IntrinsicParams
    target: TargetSpec = TargetSpec(rows=6, cols=9, spacing=1.0)
    image_size: tuple[int, int] = (640, 480)
    noise_sigma: float = 0.5
    trials: int = 30
    scheme: str = "random"
    images_per_trial: int = 20
    seed: int = 0
    planner_budget: int = 800
    planner_method: str = "sa"
    blur_sigma: float = 1.0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")


def pose_feasible(theta: IntrinsicParams, pose: Pose, target: TargetSpec,
                  image_size) -> bool:
    """True when every target corner projects inside the image."""
    try:
        proj = project_points(theta, pose, target.points)
    except PointBehindCamera:
        return False
    w, h = image_size
    return bool(np.all((proj[:, 0] >= 0) & (proj[:, 0] < w)
                       & (proj[:, 1] >= 0) & (proj[:, 1] < h)))


def _aimed_pose(target: TargetSpec, depth: float, x: float, y: float,
                perturb_angles) -> Pose:
    """Camera placed at the given offset, aimed at the target center, then
    rotated about its local axes by the perturbation angles."""
    center = target.center
    cam = center + np.array([x, y, -depth])
    zc = center - cam
    zc = zc / np.linalg.norm(zc)
    up = np.array([0.0, 1.0, 0.0])
    xc = np.cross(up, zc)
    xc = xc / np.linalg.norm(xc)
    yc = np.cross(zc, xc)
    R = np.vstack([xc, yc, zc])
    R = rotation_from_angles(perturb_angles) @ R
    t = -R @ cam
    return Pose(t, angles_from_rotation(R))


def random_pose(ground_truth: IntrinsicParams, target: TargetSpec,
                image_size, rng: np.random.Generator) -> Pose:
    """Aim-at-center pose with random depth, lateral offset and +-15 degree
    local-axis perturbation, resampled until all corners are visible."""
    lim = np.deg2rad(PERTURB_DEG)
    for _ in range(MAX_REJECTIONS):
        depth = rng.uniform(*DEPTH_RANGE) * target.diagonal
        x, y = rng.uniform(-LATERAL_FRACTION, LATERAL_FRACTION, 2) * depth
        perturb = rng.uniform(-lim, lim, 3)
        pose = _aimed_pose(target, depth, x, y, perturb)
        if pose_feasible(ground_truth, pose, target, image_size):
            return pose
    raise SamplingExhausted(f"no feasible pose in {MAX_REJECTIONS} draws")


def synth_image(ground_truth: IntrinsicParams, pose: Pose, target: TargetSpec,
                noise_sigma: float, rng: np.random.Generator,
                pose_guess: Pose | None = None) -> ImageObservation:
    proj = project_points(ground_truth, pose, target.points)
    if noise_sigma > 0:
        proj = proj + rng.normal(0.0, noise_sigma, proj.shape)
    return ImageObservation(indices=np.arange(target.n_points), xy=proj,
                            pose_guess=pose_guess)


def generate_observations(ground_truth: IntrinsicParams, poses, target: TargetSpec,
                          noise_sigma: float, rng: np.random.Generator) -> ObservationSet:
    """Project the target under every pose and add i.i.d. Gaussian pixel noise."""
    return ObservationSet([synth_image(ground_truth, p, target, noise_sigma, rng)
                           for p in poses])


def interpolate_path(pose_a: Pose, pose_b: Pose, frames: int = PATH_FRAMES):
    """Linear pose interpolation (shortest angular path), endpoints exact."""
    if frames < 2:
        raise ValueError("need at least 2 frames")
    s = np.linspace(0.0, 1.0, frames)
    dt = pose_b.t - pose_a.t
    dang = wrap_angle(pose_b.angles - pose_a.angles)
    return [Pose(pose_a.t + si * dt, pose_a.angles + si * dang) for si in s]


def flag_infeasible_frames(theta: IntrinsicParams, path, target: TargetSpec,
                           image_size):
    """Boolean mask, True where the frame keeps the whole target in view."""
    return np.array([pose_feasible(theta, p, target, image_size) for p in path])


_corner_model_cache: dict = {}


def shared_corner_model(blur_levels=(0.0, 1.0, 2.0)) -> CornerModel:
    key = tuple(blur_levels)
    if key not in _corner_model_cache:
        _corner_model_cache[key] = build_corner_model(blur_levels)
    return _corner_model_cache[key]


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)


def _planner_seed(seed, trial, step) -> int:
    return int(np.random.SeedSequence((seed, trial, step)).generate_state(1)[0])


def _row(cfg, trial, step, state: CalibrationState) -> dict:
    vec = state.theta.to_vector()
    full = np.zeros(5)
    full[: len(vec)] = vec
    return {"trial": trial, "scheme": cfg.scheme, "image_count": step,
            "f": full[0], "u": full[1], "v": full[2],
            "k1": full[3], "k2": full[4],
            "trace_sigma": state.trace_sigma(), "rms": state.rms}


def _recalibrate(state, obs, target, model_kind):
    """Warm-start refinement; falls back to a fresh linear init if LM stalls."""
    try:
        return optimize_bundle(state, obs, target)
    except CalibwizError:
        return calibrate(obs, target, model_kind)


def _guess_pose(theta, img, target) -> Pose:
    H = homography_dlt(target.points[img.indices, :2], img.xy)
    return pose_from_homography(H, theta.f, theta.u, theta.v)


def _append_image(state, obs, img, target, model_kind):
    """Add one image, initialize its pose, and re-optimize the bundle."""
    obs.images.append(img)
    guess = img.pose_guess if img.pose_guess is not None else \
        _guess_pose(state.theta, img, target)
    warm = CalibrationState(theta=state.theta, poses=list(state.poses) + [guess])
    return _recalibrate(warm, obs, target, model_kind)


INIT_ATTEMPTS = 5


def _initial_calibration(cfg, rng, n_init=3):
    """Calibrate from freshly drawn images, redrawing on a degenerate draw."""
    gt, target = cfg.ground_truth, cfg.target
    last_exc = None
    for _ in range(INIT_ATTEMPTS):
        poses = [random_pose(gt, target, cfg.image_size, rng)
                 for _ in range(n_init)]
        obs = generate_observations(gt, poses, target, cfg.noise_sigma, rng)
        try:
            return obs, calibrate(obs, target, gt.model_kind)
        except CalibwizError as exc:
            last_exc = exc
    raise last_exc


def _run_trial_random(cfg, trial, rng):
    gt, target = cfg.ground_truth, cfg.target
    obs, state = _initial_calibration(cfg, rng)
    rows = [_row(cfg, trial, 3, state)]
    for count in range(4, cfg.images_per_trial + 1):
        pose = random_pose(gt, target, cfg.image_size, rng)
        img = synth_image(gt, pose, target, cfg.noise_sigma, rng)
        state = _append_image(state, obs, img, target, gt.model_kind)
        rows.append(_row(cfg, trial, count, state))
    return rows


def _run_trial_wizard(cfg, trial, rng, use_corner_model):
    gt, target = cfg.ground_truth, cfg.target
    obs, state = _initial_calibration(cfg, rng)
    rows = [_row(cfg, trial, 3, state)]
    model = shared_corner_model() if use_corner_model else None
    space = default_search_space(gt, target, cfg.image_size)
    for count in range(4, cfg.images_per_trial + 1):
        base = precompute_base(state, obs, target)
        pcfg = PlannerConfig(method=cfg.planner_method, budget=cfg.planner_budget,
                             seed=_planner_seed(cfg.seed, trial, count),
                             use_corner_model=use_corner_model,
                             blur_sigma=cfg.blur_sigma)
        result = search_next_pose(base, state, target, space, pcfg, model)
        img = synth_image(gt, result.pose, target, cfg.noise_sigma, rng,
                          pose_guess=result.pose)
        state = _append_image(state, obs, img, target, gt.model_kind)
        rows.append(_row(cfg, trial, count, state))
    return rows


def _feasible_path_images(cfg, path, rng):
    """Noisy observations for the feasible frames of a path."""
    gt, target = cfg.ground_truth, cfg.target
    mask = flag_infeasible_frames(gt, path, target, cfg.image_size)
    return [synth_image(gt, p, target, cfg.noise_sigma, rng, pose_guess=p)
            for p, ok in zip(path, mask) if ok]


def _run_trial_random_path(cfg, trial, rng):
    gt, target = cfg.ground_truth, cfg.target
    last_exc = None
    for _ in range(INIT_ATTEMPTS):
        waypoints = [random_pose(gt, target, cfg.image_size, rng)
                     for _ in range(4)]
        images = []
        for a, b in zip(waypoints[:-1], waypoints[1:]):
            images.extend(_feasible_path_images(cfg, interpolate_path(a, b), rng))
        obs = ObservationSet(images)
        try:
            state = calibrate(obs, target, gt.model_kind)
            return [_row(cfg, trial, obs.m, state)]
        except CalibwizError as exc:
            last_exc = exc
    raise last_exc


def _first_path_calibration(cfg, rng):
    """Initial 5-frame calibration from a single path, redrawn on failure."""
    gt, target = cfg.ground_truth, cfg.target
    last_exc = SamplingExhausted("first path has fewer than 5 feasible frames")
    for _ in range(INIT_ATTEMPTS):
        a = random_pose(gt, target, cfg.image_size, rng)
        b = random_pose(gt, target, cfg.image_size, rng)
        first_path = _feasible_path_images(cfg, interpolate_path(a, b), rng)
        if len(first_path) < 5:
            continue
        picks = rng.choice(len(first_path), size=5, replace=False)
        obs = ObservationSet([first_path[i] for i in sorted(picks)])
        try:
            return obs, calibrate(obs, target, gt.model_kind), b
        except CalibwizError as exc:
            last_exc = exc
    raise last_exc


def _run_trial_wizard_path(cfg, trial, rng):
    gt, target = cfg.ground_truth, cfg.target
    obs, state, b = _first_path_calibration(cfg, rng)
    rows = [_row(cfg, trial, obs.m, state)]
    space = default_search_space(gt, target, cfg.image_size)
    current = b
    for step in range(3):
        base = precompute_base(state, obs, target)
        pcfg = PlannerConfig(method=cfg.planner_method, budget=cfg.planner_budget,
                             seed=_planner_seed(cfg.seed, trial, step))
        result = search_next_pose(base, state, target, space, pcfg)
        for img in _feasible_path_images(cfg, interpolate_path(current, result.pose), rng):
            obs.images.append(img)
            state.poses.append(img.pose_guess)
        state = _recalibrate(state, obs, target, gt.model_kind)
        rows.append(_row(cfg, trial, obs.m, state))
        current = result.pose
    return rows


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Per-trial calibration traces for the configured scheme.

    Trial failures are recorded and skipped rather than aborting the run.
    """
    runners = {"random": _run_trial_random,
               "wizard": lambda c, t, r: _run_trial_wizard(c, t, r, False),
               "wizard-auto": lambda c, t, r: _run_trial_wizard(c, t, r, True),
               "random-path": _run_trial_random_path,
               "wizard-path": _run_trial_wizard_path}
    result = ExperimentResult()
    for trial in range(cfg.trials):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, trial)))
        try:
            result.rows.extend(runners[cfg.scheme](cfg, trial, rng))
        except CalibwizError as exc:
            result.failures.append({"trial": trial, "error": str(exc)})
    return result


PARAM_NAMES = ("f", "u", "v", "k1", "k2")


def summarize(rows, ground_truth: IntrinsicParams | None = None):
    """Mean / std / median per (scheme, image_count) for each parameter,
    plus the same statistics of |error| when ground truth is given."""
    if not rows:
        raise ValueError("empty trial table")
    truth = np.zeros(5)
    if ground_truth is not None:
        vec = ground_truth.to_vector()
        truth[: len(vec)] = vec
    groups: dict = {}
    for row in rows:
        groups.setdefault((row["scheme"], row["image_count"]), []).append(row)
    out = []
    for (scheme, count), grp in sorted(groups.items()):
        entry = {"scheme": scheme, "image_count": count, "trials": len(grp)}
        for idx, name in enumerate(PARAM_NAMES):
            vals = np.array([r[name] for r in grp])
            entry[f"{name}_mean"] = float(vals.mean())
            entry[f"{name}_std"] = float(vals.std())
            entry[f"{name}_median"] = float(np.median(vals))
            if ground_truth is not None:
                err = np.abs(vals - truth[idx])
                entry[f"{name}_abs_err_mean"] = float(err.mean())
                entry[f"{name}_abs_err_std"] = float(err.std())
                entry[f"{name}_abs_err_median"] = float(np.median(err))
        out.append(entry)
    return out

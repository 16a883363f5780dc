import numpy as np
import pytest

from calibwiz.errors import SamplingExhausted
from calibwiz.geometry import Pose, project_points
from calibwiz.synthetic import (ExperimentConfig, flag_infeasible_frames,
                                generate_observations, interpolate_path,
                                pose_feasible, random_pose, run_experiment,
                                summarize, synth_image)

from conftest import DEFAULT_TARGET, IMAGE_SIZE, ground_truth


GT = ground_truth("pinhole-k1k2")


def test_random_pose_always_feasible():
    rng = np.random.default_rng(70)
    for _ in range(50):
        pose = random_pose(GT, DEFAULT_TARGET, IMAGE_SIZE, rng)
        proj = project_points(GT, pose, DEFAULT_TARGET.points)
        assert np.all((proj[:, 0] >= 0) & (proj[:, 0] < 640))
        assert np.all((proj[:, 1] >= 0) & (proj[:, 1] < 480))


def test_random_pose_deterministic():
    a = random_pose(GT, DEFAULT_TARGET, IMAGE_SIZE, np.random.default_rng(71))
    b = random_pose(GT, DEFAULT_TARGET, IMAGE_SIZE, np.random.default_rng(71))
    assert np.array_equal(a.to_vector(), b.to_vector())


def test_aim_point_without_perturbation():
    # with the perturbation forced to zero the optical axis passes through
    # the target center
    from calibwiz.synthetic import _aimed_pose
    pose = _aimed_pose(DEFAULT_TARGET, depth=15.0, x=2.0, y=-1.0,
                       perturb_angles=np.zeros(3))
    center_px = project_points(GT, pose, DEFAULT_TARGET.center.reshape(1, 3))[0]
    assert np.hypot(center_px[0] - GT.u, center_px[1] - GT.v) < 1.0


def test_sampling_exhausted():
    tiny = ground_truth("pinhole3")
    rng = np.random.default_rng(72)
    with pytest.raises(SamplingExhausted):
        # a 2x2-pixel image cannot contain the whole target
        random_pose(tiny, DEFAULT_TARGET, (2, 2), rng)


def test_observations_noise_free_exact():
    rng = np.random.default_rng(73)
    poses = [random_pose(GT, DEFAULT_TARGET, IMAGE_SIZE, rng) for _ in range(3)]
    obs = generate_observations(GT, poses, DEFAULT_TARGET, 0.0, rng)
    for pose, img in zip(poses, obs.images):
        proj = project_points(GT, pose, DEFAULT_TARGET.points)
        assert np.array_equal(img.xy, proj)


def test_observation_noise_statistics():
    rng = np.random.default_rng(74)
    pose = random_pose(GT, DEFAULT_TARGET, IMAGE_SIZE, rng)
    clean = project_points(GT, pose, DEFAULT_TARGET.points)
    deltas = []
    while len(deltas) * DEFAULT_TARGET.n_points * 2 < 10_000:
        img = synth_image(GT, pose, DEFAULT_TARGET, 1.0, rng)
        deltas.append(img.xy - clean)
    std = np.concatenate(deltas).ravel().std()
    assert 0.97 < std < 1.03


# ---------------------------------------------------------------------------
# path interpolation
# ---------------------------------------------------------------------------

def test_interpolate_endpoints_and_midpoint():
    a = Pose(t=np.array([0.0, 1.0, 10.0]), angles=np.array([0.1, 0.0, -0.2]))
    b = Pose(t=np.array([2.0, -1.0, 14.0]), angles=np.array([-0.3, 0.2, 0.4]))
    path = interpolate_path(a, b, frames=2)
    assert np.array_equal(path[0].to_vector(), a.to_vector())
    assert np.array_equal(path[1].to_vector(), b.to_vector())
    path = interpolate_path(a, b, frames=3)
    assert np.allclose(path[1].t, (a.t + b.t) / 2)


def test_interpolate_shortest_angular_path():
    a = Pose(t=np.zeros(3) + [0, 0, 10], angles=np.array([3.0, 0.0, 0.0]))
    b = Pose(t=np.zeros(3) + [0, 0, 10], angles=np.array([-3.0, 0.0, 0.0]))
    mid = interpolate_path(a, b, frames=3)[1]
    # shortest path crosses pi, not zero
    assert abs(abs(mid.angles[0]) - np.pi) < 1e-9


def test_interpolate_frame_count_validation():
    a = Pose(t=np.array([0, 0, 10.0]), angles=np.zeros(3))
    with pytest.raises(ValueError):
        interpolate_path(a, a, frames=1)


def test_flag_infeasible_frames():
    rng = np.random.default_rng(75)
    a = random_pose(GT, DEFAULT_TARGET, IMAGE_SIZE, rng)
    off = Pose(t=np.array([60.0, 0.0, 10.0]), angles=np.zeros(3))
    path = interpolate_path(a, off, frames=25)
    mask = flag_infeasible_frames(GT, path, DEFAULT_TARGET, IMAGE_SIZE)
    assert mask[0] and not mask[-1]
    assert mask.shape == (25,)


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------

def small_config(scheme, **kw):
    defaults = dict(ground_truth=GT, scheme=scheme, trials=2,
                    images_per_trial=5, noise_sigma=0.5, seed=5,
                    planner_budget=120)
    defaults.update(kw)
    return ExperimentConfig(**defaults)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(ground_truth=GT, trials=0)
    with pytest.raises(ValueError):
        ExperimentConfig(ground_truth=GT, noise_sigma=-1)
    with pytest.raises(ValueError):
        ExperimentConfig(ground_truth=GT, scheme="bogus")


@pytest.mark.parametrize("scheme", ["random", "wizard"])
def test_run_experiment_deterministic(scheme):
    cfg = small_config(scheme)
    a = run_experiment(cfg)
    b = run_experiment(cfg)
    assert a.rows == b.rows
    assert a.failures == b.failures


def test_random_scheme_row_layout():
    cfg = small_config("random")
    result = run_experiment(cfg)
    assert not result.failures
    counts = [r["image_count"] for r in result.rows if r["trial"] == 0]
    assert counts == [3, 4, 5]
    assert all(r["scheme"] == "random" for r in result.rows)


def test_noise_free_recovery_all_schemes():
    for scheme in ("random", "wizard"):
        cfg = small_config(scheme, noise_sigma=0.0, trials=1)
        result = run_experiment(cfg)
        assert not result.failures
        last = result.rows[-1]
        assert abs(last["f"] - GT.f) < 1e-6 * GT.f
        assert abs(last["k1"] - GT.k1) < 1e-6
        assert abs(last["k2"] - GT.k2) < 1e-6


def test_wizard_auto_runs():
    cfg = small_config("wizard-auto", trials=1, images_per_trial=4)
    result = run_experiment(cfg)
    assert not result.failures
    assert result.rows[-1]["image_count"] == 4


def test_path_schemes_run():
    cfg = small_config("random-path", trials=1)
    result = run_experiment(cfg)
    assert not result.failures
    assert result.rows[-1]["image_count"] >= 5
    cfg = small_config("wizard-path", trials=1)
    result = run_experiment(cfg)
    assert not result.failures
    counts = [r["image_count"] for r in result.rows]
    assert counts[0] == 5 and counts == sorted(counts)


def test_summarize_basics():
    rows = [{"trial": 0, "scheme": "random", "image_count": 3,
             "f": 810.0, "u": 320.0, "v": 240.0, "k1": 0.0, "k2": 0.0,
             "trace_sigma": 1.0, "rms": 0.5},
            {"trial": 1, "scheme": "random", "image_count": 3,
             "f": 790.0, "u": 320.0, "v": 240.0, "k1": 0.0, "k2": 0.0,
             "trace_sigma": 1.0, "rms": 0.5}]
    out = summarize(rows, GT)
    assert len(out) == 1
    entry = out[0]
    assert entry["trials"] == 2
    assert entry["f_mean"] == 800.0
    assert entry["f_std"] == 10.0
    assert entry["u_std"] == 0.0
    assert entry["f_abs_err_mean"] == 10.0


def test_summarize_single_trial_zero_std():
    rows = [{"trial": 0, "scheme": "wizard", "image_count": 4,
             "f": 805.0, "u": 320.0, "v": 240.0, "k1": 0.01, "k2": 0.1,
             "trace_sigma": 1.0, "rms": 0.5}]
    out = summarize(rows)
    assert out[0]["f_std"] == 0.0
    assert out[0]["f_median"] == 805.0


def test_summarize_empty_raises():
    with pytest.raises(ValueError):
        summarize([])

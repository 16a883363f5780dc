import numpy as np
import pytest

from calibwiz.calibration import (CalibrationState, ImageObservation,
                                  ObservationSet, SolverConfig,
                                  assemble_information, calibrate,
                                  initialize_calibration, intrinsic_covariance,
                                  optimize_bundle, psd_pinv, reprojection_rms,
                                  schur_complement)
from calibwiz.errors import DegenerateConfiguration, EmptyObservations
from calibwiz.geometry import IntrinsicParams, Pose, TargetSpec, project_points

from conftest import (DEFAULT_TARGET, IMAGE_SIZE, ground_truth, make_scene)


def fronto_parallel_obs(theta, target, m=3, depth=10.0):
    poses = [Pose(t=np.array([-4.0, -2.5, depth + i]), angles=np.zeros(3))
             for i in range(m)]
    images = [ImageObservation(indices=np.arange(target.n_points),
                               xy=project_points(theta, p, target.points))
              for p in poses]
    return ObservationSet(images)


# ---------------------------------------------------------------------------
# linear initialization
# ---------------------------------------------------------------------------

def test_initialization_close_to_truth(target):
    gt, _, obs = make_scene("pinhole3", m=5, noise=0.0, seed=11)
    state = initialize_calibration(obs, target, "pinhole3")
    assert abs(state.theta.f - gt.f) < 0.01 * gt.f
    assert abs(state.theta.u - gt.u) < 0.01 * gt.f
    assert abs(state.theta.v - gt.v) < 0.01 * gt.f


def test_initialization_fronto_parallel_degenerate(target):
    gt = ground_truth("pinhole3")
    obs = fronto_parallel_obs(gt, target)
    with pytest.raises(DegenerateConfiguration):
        initialize_calibration(obs, target, "pinhole3")


def test_initialization_distortion_starts_zero(target):
    _, _, obs = make_scene("pinhole-k1k2", m=4, noise=0.0, seed=12)
    state = initialize_calibration(obs, target, "pinhole-k1k2")
    assert state.theta.k1 == 0.0 and state.theta.k2 == 0.0


def test_initialization_needs_three_images(target):
    _, _, obs = make_scene("pinhole3", m=2, noise=0.0, seed=13)
    with pytest.raises(DegenerateConfiguration):
        initialize_calibration(obs, target, "pinhole3")


# ---------------------------------------------------------------------------
# bundle adjustment
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("model_kind", ["pinhole3", "pinhole-k1", "pinhole-k1k2"])
def test_noise_free_recovery(model_kind, target):
    gt, _, obs = make_scene(model_kind, m=10, noise=0.0, seed=14)
    state = calibrate(obs, target, model_kind)
    rel = np.abs(state.theta.to_vector() - gt.to_vector()) / np.abs(gt.to_vector())
    assert rel.max() < 1e-6
    assert state.rms < 1e-8


def test_identity_weights_match_unweighted(target):
    gt, _, obs = make_scene("pinhole-k1k2", m=5, noise=0.5, seed=15)
    eye = np.broadcast_to(np.eye(2), (target.n_points, 2, 2)).copy()
    weighted_obs = ObservationSet([
        ImageObservation(indices=img.indices, xy=img.xy, weights=eye.copy())
        for img in obs.images])
    a = calibrate(obs, target, "pinhole-k1k2", weighted=False)
    b = calibrate(weighted_obs, target, "pinhole-k1k2", weighted=True)
    assert np.allclose(a.theta.to_vector(), b.theta.to_vector(), rtol=1e-9)
    assert np.allclose(a.cost_history, b.cost_history, rtol=1e-9)


def test_already_optimal_stops_immediately(target):
    gt, poses, obs = make_scene("pinhole-k1k2", m=5, noise=0.0, seed=16)
    state = CalibrationState(theta=gt, poses=list(poses))
    out = optimize_bundle(state, obs, target)
    assert out.iterations <= 1
    assert np.allclose(out.theta.to_vector(), gt.to_vector(), atol=1e-12)


def test_cost_history_non_increasing(target):
    _, _, obs = make_scene("pinhole-k1k2", m=6, noise=1.0, seed=17)
    state = calibrate(obs, target, "pinhole-k1k2")
    hist = np.array(state.cost_history)
    assert np.all(np.diff(hist) <= 0)


def test_noise_consistency(target):
    errors = []
    for sigma in (0.5, 0.1, 0.01):
        gt, _, obs = make_scene("pinhole-k1k2", m=10, noise=sigma, seed=18)
        state = calibrate(obs, target, "pinhole-k1k2")
        errors.append(abs(state.theta.f - gt.f))
    assert errors[0] > errors[1] > errors[2]


# ---------------------------------------------------------------------------
# information matrix and covariance
# ---------------------------------------------------------------------------

def test_dense_information_structure(target):
    gt, poses, obs = make_scene("pinhole-k1k2", m=2, noise=0.0, seed=19)
    state = CalibrationState(theta=gt, poses=list(poses))
    info = assemble_information(state, obs, target)
    H = info.dense()
    k = gt.k
    assert H.shape == (k + 12, k + 12)
    assert np.abs(H - H.T).max() < 1e-12
    # pose-pose cross blocks are exactly zero
    assert np.all(H[k:k + 6, k + 6:] == 0)
    w = np.linalg.eigvalsh(H)
    assert w.min() >= -1e-9 * np.abs(w).max()


def test_unweighted_equals_identity_weighted(target):
    gt, poses, obs = make_scene("pinhole-k1k2", m=3, noise=0.2, seed=20)
    eye = np.broadcast_to(np.eye(2), (target.n_points, 2, 2)).copy()
    wobs = ObservationSet([
        ImageObservation(indices=img.indices, xy=img.xy, weights=eye.copy())
        for img in obs.images])
    state = CalibrationState(theta=gt, poses=list(poses))
    a = assemble_information(state, obs, target, weighted=False)
    b = assemble_information(state, wobs, target, weighted=True)
    assert np.array_equal(a.U, b.U)
    assert np.array_equal(a.V_blocks, b.V_blocks)
    assert np.array_equal(a.W_blocks, b.W_blocks)


@pytest.mark.parametrize("seed", range(20))
def test_schur_matches_dense_pinv(seed, target):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(3, 6))
    gt, poses, obs = make_scene("pinhole-k1k2", m=m, noise=0.3, seed=100 + seed)
    state = CalibrationState(theta=gt, poses=list(poses))
    info = assemble_information(state, obs, target)
    sigma, _ = intrinsic_covariance(info)
    # diagonally equilibrated inverse: the raw SVD pseudo-inverse of H loses
    # digits at cond(H) ~ 1e9-1e12 and would be a weaker oracle than the
    # quantity under test
    H = info.dense()
    d = 1.0 / np.sqrt(np.diag(H))
    top = (np.linalg.inv(H * d[:, None] * d[None, :])
           * d[:, None] * d[None, :])[:gt.k, :gt.k]
    assert np.abs(sigma - top).max() < 1e-8 * max(np.abs(top).max(), 1e-300)
    assert abs(np.trace(sigma) - np.trace(top)) < 1e-8 * abs(np.trace(top))


def test_single_fronto_parallel_rank_deficient(target):
    gt = ground_truth("pinhole3")
    pose = Pose(t=np.array([-4.0, -2.5, 10.0]), angles=np.zeros(3))
    obs = ObservationSet([ImageObservation(
        indices=np.arange(target.n_points),
        xy=project_points(gt, pose, target.points))])
    state = CalibrationState(theta=gt, poses=[pose])
    info = assemble_information(state, obs, target)
    _, rank = intrinsic_covariance(info)
    assert rank < gt.k


def test_duplicate_image_loewner_order(target):
    gt, poses, obs = make_scene("pinhole-k1k2", m=4, noise=0.0, seed=21)
    state = CalibrationState(theta=gt, poses=list(poses))
    sigma_before, _ = intrinsic_covariance(
        assemble_information(state, obs, target))
    dup = ObservationSet(list(obs.images) + [obs.images[0]])
    dstate = CalibrationState(theta=gt, poses=list(poses) + [poses[0]])
    sigma_after, _ = intrinsic_covariance(
        assemble_information(dstate, dup, target))
    w = np.linalg.eigvalsh(sigma_before - sigma_after)
    assert w.min() >= -1e-9 * np.abs(sigma_before).max()


def test_scalar_weight_scaling_exact(target):
    gt, poses, obs = make_scene("pinhole-k1k2", m=3, noise=0.0, seed=22)
    c = 4.0
    wobs = ObservationSet([
        ImageObservation(indices=img.indices, xy=img.xy,
                         weights=np.broadcast_to(c * np.eye(2),
                                                 (img.n, 2, 2)).copy())
        for img in obs.images])
    state = CalibrationState(theta=gt, poses=list(poses))
    plain = assemble_information(state, obs, target, weighted=False)
    scaled = assemble_information(state, wobs, target, weighted=True)
    assert np.allclose(scaled.U, c * plain.U, rtol=1e-12)
    s_plain, _ = intrinsic_covariance(plain)
    s_scaled, _ = intrinsic_covariance(scaled)
    assert np.allclose(s_scaled, s_plain / c, rtol=1e-9)


# ---------------------------------------------------------------------------
# residual statistics
# ---------------------------------------------------------------------------

def test_rms_zero_at_truth(target):
    gt, poses, obs = make_scene("pinhole-k1k2", m=4, noise=0.0, seed=23)
    state = CalibrationState(theta=gt, poses=list(poses))
    assert reprojection_rms(state, obs, target) < 1e-9


def test_rms_single_residual_arithmetic():
    target = TargetSpec(rows=2, cols=2, spacing=1.0)
    gt = ground_truth("pinhole3")
    pose = Pose(t=np.array([0.0, 0.0, 5.0]), angles=np.zeros(3))
    xy = project_points(gt, pose, target.points[:1])
    xy[0] += [3.0, 4.0]
    obs = ObservationSet([ImageObservation(indices=np.array([0]), xy=xy)])
    state = CalibrationState(theta=gt, poses=[pose])
    assert np.isclose(reprojection_rms(state, obs, target),
                      np.sqrt((9 + 16) / 2))


def test_rms_noise_range(target):
    vals = []
    for seed in range(10):
        _, _, obs = make_scene("pinhole-k1k2", m=6, noise=0.5, seed=300 + seed)
        state = calibrate(obs, target, "pinhole-k1k2")
        vals.append(state.rms)
    assert 0.3 < np.mean(vals) < 0.7


def test_rms_empty_observations(target):
    gt = ground_truth("pinhole3")
    state = CalibrationState(theta=gt, poses=[])
    with pytest.raises(EmptyObservations):
        reprojection_rms(state, ObservationSet([]), target)


def test_psd_pinv_basics():
    M = np.diag([4.0, 1.0, 0.0])
    P, rank = psd_pinv(M)
    assert rank == 2
    assert np.allclose(P, np.diag([0.25, 1.0, 0.0]))

import numpy as np
import pytest

from calibwiz.calibration import CalibrationState, calibrate
from calibwiz.errors import UndistortDivergence
from calibwiz.geometry import IntrinsicParams, project_camera_points
from calibwiz.uncertainty import (SENTINEL, UncertaintyMap, backproject,
                                  from_sidecar, pointwise_covariance,
                                  render_map, to_pgm, to_sidecar)

from conftest import DEFAULT_TARGET, make_scene

PINHOLE = IntrinsicParams("pinhole3", 800.0, 320.0, 240.0)


def random_psd(k, seed, scale=1e-3):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(k, k)) * scale
    return M @ M.T


def calibrated_sigma(m=5, noise=0.5, seed=60):
    _, _, obs = make_scene("pinhole3", m=m, noise=noise, seed=seed)
    state = calibrate(obs, DEFAULT_TARGET, "pinhole3")
    return state.theta, state.sigma


# ---------------------------------------------------------------------------
# backprojection
# ---------------------------------------------------------------------------

def test_backproject_principal_point():
    assert np.allclose(backproject(320, 240, PINHOLE), [0, 0, 800])


def test_backproject_pinhole_roundtrip_exact():
    rng = np.random.default_rng(61)
    for _ in range(50):
        x, y = rng.uniform(0, 640), rng.uniform(0, 480)
        S = backproject(x, y, PINHOLE)
        p = project_camera_points(PINHOLE, S.reshape(1, 3))[0]
        assert np.allclose(p, [x, y], atol=1e-12)


def test_backproject_distortion_roundtrip():
    theta = IntrinsicParams("pinhole-k1k2", 800, 320, 240, 0.5, 1.0)
    rng = np.random.default_rng(62)
    for _ in range(100):
        x = rng.uniform(10, 630)
        y = rng.uniform(10, 470)
        S = backproject(x, y, theta)
        p = project_camera_points(theta, S.reshape(1, 3))[0]
        assert np.hypot(p[0] - x, p[1] - y) < 1e-6


def test_backproject_divergence_raises():
    # strongly negative k1 makes the distortion non-invertible away from center
    theta = IntrinsicParams("pinhole-k1", 100.0, 320, 240, -3.0)
    with pytest.raises(UndistortDivergence):
        backproject(639, 479, theta)


# ---------------------------------------------------------------------------
# pointwise covariance
# ---------------------------------------------------------------------------

def test_covariance_at_principal_point_is_uv_block():
    sigma = random_psd(3, 63)
    G = pointwise_covariance(320, 240, PINHOLE, sigma)
    assert np.allclose(G, sigma[1:, 1:], atol=1e-15)


def test_covariance_zero_sigma():
    G = pointwise_covariance(100, 200, PINHOLE, np.zeros((3, 3)))
    assert np.all(G == 0)


def test_covariance_psd_everywhere():
    sigma = random_psd(3, 64)
    rng = np.random.default_rng(65)
    for _ in range(50):
        G = pointwise_covariance(rng.uniform(0, 640), rng.uniform(0, 480),
                                 PINHOLE, sigma)
        assert np.array_equal(G, G.T)
        assert np.linalg.eigvalsh(G).min() >= -1e-18


def closed_form_trace(x, y, theta, s):
    """Quadratic closed form of trace(Gamma) for the plain pinhole model."""
    xn = (x - theta.u) / theta.f
    yn = (y - theta.v) / theta.f
    return (s[0, 0] * (xn * xn + yn * yn)
            + 2 * s[0, 1] * xn + 2 * s[0, 2] * yn + s[1, 1] + s[2, 2])


def test_trace_matches_quadratic_closed_form():
    sigma = random_psd(3, 66)
    rng = np.random.default_rng(67)
    for _ in range(1000):
        x, y = rng.uniform(0, 640), rng.uniform(0, 480)
        G = pointwise_covariance(x, y, PINHOLE, sigma)
        expected = closed_form_trace(x, y, PINHOLE, sigma)
        assert abs(np.trace(G) - expected) < 1e-10 * abs(expected)


def test_covariance_rejects_wrong_sigma_shape():
    with pytest.raises(ValueError):
        pointwise_covariance(0, 0, PINHOLE, np.zeros((5, 5)))


# ---------------------------------------------------------------------------
# map rendering
# ---------------------------------------------------------------------------

def test_map_matches_pointwise():
    theta, sigma = calibrated_sigma()
    umap = render_map(theta, sigma, (32, 24))
    for x, y in ((0, 0), (31, 23), (16, 12), (5, 20)):
        G = pointwise_covariance(x, y, theta, sigma)
        assert np.isclose(umap.values[y, x], np.trace(G), rtol=1e-12)


def test_map_quadratic_fit_residual():
    theta, sigma = calibrated_sigma()
    umap = render_map(theta, sigma, (64, 48))
    xs, ys = np.meshgrid(np.arange(64, dtype=float), np.arange(48, dtype=float))
    X = np.column_stack([np.ones(xs.size), xs.ravel(), ys.ravel(),
                         xs.ravel() ** 2 + ys.ravel() ** 2])
    coef, *_ = np.linalg.lstsq(X, umap.values.ravel(), rcond=None)
    fit = X @ coef
    rel = np.linalg.norm(fit - umap.values.ravel()) / np.linalg.norm(umap.values)
    assert rel < 1e-9


def test_map_minimum_location_and_value():
    theta, sigma = calibrated_sigma()
    umap = render_map(theta, sigma, (640, 480))
    x_min, y_min, val = umap.min_location()
    x_star = theta.u - theta.f * sigma[0, 1] / sigma[0, 0]
    y_star = theta.v - theta.f * sigma[0, 2] / sigma[0, 0]
    assert abs(x_min - x_star) <= 0.5
    assert abs(y_min - y_star) <= 0.5
    closed = (sigma[1, 1] + sigma[2, 2]
              - (sigma[0, 1] ** 2 + sigma[0, 2] ** 2) / sigma[0, 0])
    exact_at_star = closed_form_trace(x_star, y_star, theta, sigma)
    assert np.isclose(exact_at_star, closed, rtol=1e-10)
    assert abs(val - closed) < 1e-6 * closed + abs(
        closed_form_trace(x_min, y_min, theta, sigma) - closed) * (1 + 1e-9)


def test_map_minimum_at_principal_point_when_uncorrelated():
    sigma = np.diag([1e-4, 2e-3, 3e-3])
    umap = render_map(PINHOLE, sigma, (640, 480))
    x_min, y_min, _ = umap.min_location()
    assert abs(x_min - PINHOLE.u) <= 0.5
    assert abs(y_min - PINHOLE.v) <= 0.5


def test_map_constant_when_focal_variance_zero():
    sigma = np.diag([0.0, 2e-3, 3e-3])
    umap = render_map(PINHOLE, sigma, (64, 48))
    assert np.ptp(umap.values) < 1e-9 * umap.values.max()


def test_map_pointwise_non_increasing_with_more_images():
    gt, _, obs = make_scene("pinhole3", m=8, noise=0.3, seed=68)
    from calibwiz.calibration import (ObservationSet, assemble_information,
                                      intrinsic_covariance)
    from calibwiz.synthetic import generate_observations  # noqa: F401
    state = calibrate(obs, DEFAULT_TARGET, "pinhole3")
    few = ObservationSet(obs.images[:4])
    fstate = CalibrationState(theta=state.theta, poses=state.poses[:4])
    s_few, _ = intrinsic_covariance(
        assemble_information(fstate, few, DEFAULT_TARGET))
    s_all, _ = intrinsic_covariance(
        assemble_information(state, obs, DEFAULT_TARGET))
    m_few = render_map(state.theta, s_few, (64, 48))
    m_all = render_map(state.theta, s_all, (64, 48))
    assert np.all(m_all.values <= m_few.values * (1 + 1e-9))


def test_map_stat_kinds():
    theta, sigma = calibrated_sigma()
    tr = render_map(theta, sigma, (16, 12), "trace")
    det = render_map(theta, sigma, (16, 12), "determinant")
    mx = render_map(theta, sigma, (16, 12), "max_eigenvalue")
    for x, y in ((3, 4), (10, 7)):
        G = pointwise_covariance(x, y, theta, sigma)
        w = np.linalg.eigvalsh(G)
        assert np.isclose(tr.values[y, x], w.sum(), rtol=1e-9)
        assert np.isclose(det.values[y, x], np.prod(w), rtol=1e-6)
        assert np.isclose(mx.values[y, x], w.max(), rtol=1e-9)
    with pytest.raises(ValueError):
        render_map(theta, sigma, (16, 12), "median")


def test_map_sentinel_for_divergent_pixels():
    theta = IntrinsicParams("pinhole-k1", 100.0, 32, 24, -3.0)
    umap = render_map(theta, random_psd(4, 69), (64, 48))
    assert not umap.valid_mask.all()
    assert umap.valid_mask.any()
    assert np.all(umap.values[~umap.valid_mask] == SENTINEL)


# ---------------------------------------------------------------------------
# export formats
# ---------------------------------------------------------------------------

def test_sidecar_roundtrip():
    theta, sigma = calibrated_sigma()
    umap = render_map(theta, sigma, (32, 24), "determinant")
    back = from_sidecar(to_sidecar(umap))
    assert back.width == 32 and back.height == 24
    assert back.stat_kind == "determinant"
    assert np.allclose(back.values, umap.values.astype(np.float32), rtol=0)


def test_sidecar_rejects_bad_magic():
    with pytest.raises(ValueError):
        from_sidecar(b"XXXX" + b"\0" * 28)


def test_pgm_format():
    theta, sigma = calibrated_sigma()
    umap = render_map(theta, sigma, (8, 6))
    text = to_pgm(umap)
    lines = text.strip().split("\n")
    assert lines[0] == "P2"
    assert lines[1] == "8 6"
    assert lines[2] == "255"
    levels = np.array([[int(v) for v in row.split()] for row in lines[3:]])
    assert levels.shape == (6, 8)
    assert levels.min() == 0 and levels.max() == 255

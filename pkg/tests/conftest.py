"""Shared synthetic-scene builders and numeric oracles for the test suite."""

import numpy as np
import pytest

from calibwiz.calibration import ImageObservation, ObservationSet
from calibwiz.geometry import (IntrinsicParams, Pose, TargetSpec,
                               project_points)
from calibwiz.synthetic import random_pose, generate_observations

DEFAULT_TARGET = TargetSpec(rows=6, cols=9, spacing=1.0)
IMAGE_SIZE = (640, 480)


def ground_truth(model_kind="pinhole-k1k2", k1=0.01, k2=0.1):
    if model_kind == "pinhole3":
        return IntrinsicParams("pinhole3", 800.0, 320.0, 240.0)
    if model_kind == "pinhole-k1":
        return IntrinsicParams("pinhole-k1", 800.0, 320.0, 240.0, k1)
    return IntrinsicParams("pinhole-k1k2", 800.0, 320.0, 240.0, k1, k2)


def make_scene(model_kind="pinhole-k1k2", m=5, noise=0.0, seed=0,
               k1=0.01, k2=0.1, target=DEFAULT_TARGET):
    """(theta, poses, obs) for a synthetic scene with all corners visible."""
    gt = ground_truth(model_kind, k1, k2)
    rng = np.random.default_rng(seed)
    poses = [random_pose(gt, target, IMAGE_SIZE, rng) for _ in range(m)]
    obs = generate_observations(gt, poses, target, noise, rng)
    return gt, poses, obs


def fd_jacobian(fun, x0, rel_step=1e-6):
    """Central-difference Jacobian of fun: R^n -> R^k, step scaled per axis."""
    x0 = np.asarray(x0, dtype=float)
    f0 = np.asarray(fun(x0))
    J = np.zeros(f0.shape + (len(x0),))
    for i in range(len(x0)):
        h = rel_step * max(abs(x0[i]), 1.0)
        xp, xm = x0.copy(), x0.copy()
        xp[i] += h
        xm[i] -= h
        J[..., i] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2 * h)
    return J


def block_rel_error(analytic, fd):
    """Max entry deviation relative to the block's own scale."""
    scale = max(np.abs(fd).max(), 1.0)
    return np.abs(analytic - fd).max() / scale


@pytest.fixture
def target():
    return DEFAULT_TARGET

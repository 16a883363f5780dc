"""Per-pixel propagation of the intrinsic covariance and raster export.

Each pixel is back-projected to a viewing ray, the intrinsic-derivative
matrix of the local projection is evaluated there, and Sigma is sandwiched
through it to give a 2x2 covariance per pixel. Scalar maps (trace by
default) are exported as 8-bit PGM plus a raw float32 sidecar.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import UndistortDivergence
from .geometry import IntrinsicParams, intrinsic_derivatives

STAT_KINDS = ("trace", "max_eigenvalue", "determinant")
SENTINEL = -1.0  # marks pixels where undistortion failed
UNDISTORT_ITERS = 100
UNDISTORT_TOL = 1e-6


def _undistort_normalized(theta: IntrinsicParams, xd, yd):
    """Fixed-point inversion of the radial distortion on normalized coords."""
    xn, yn = np.array(xd, dtype=float), np.array(yd, dtype=float)
    for _ in range(UNDISTORT_ITERS):
        r2 = xn * xn + yn * yn
        d = 1.0 + theta.k1 * r2 + theta.k2 * r2 * r2
        err = np.hypot(d * xn - xd, d * yn - yd) * theta.f
        if np.all(err <= 0.01 * UNDISTORT_TOL):
            break
        xn = xd / d
        yn = yd / d
    r2 = xn * xn + yn * yn
    d = 1.0 + theta.k1 * r2 + theta.k2 * r2 * r2
    err = np.hypot(d * xn - xd, d * yn - yd) * theta.f
    return xn, yn, err


def backproject(x, y, theta: IntrinsicParams) -> np.ndarray:
    """3D point on the viewing ray of pixel (x, y), at depth f.

    Pinhole3 is the closed form (x-u, y-v, f); distortion models undo the
    radial factor by fixed-point iteration first.
    """
    if theta.k == 3:
        return np.array([x - theta.u, y - theta.v, theta.f])
    xd = (x - theta.u) / theta.f
    yd = (y - theta.v) / theta.f
    xn, yn, err = _undistort_normalized(theta, xd, yd)
    if err > UNDISTORT_TOL:
        raise UndistortDivergence(
            f"pixel ({x}, {y}): round-trip error {float(err):.3g} px")
    return np.array([xn * theta.f, yn * theta.f, theta.f])


def _backproject_grid(theta: IntrinsicParams, width, height):
    """Rays for every pixel: (h*w, 3) points plus a validity mask."""
    xs, ys = np.meshgrid(np.arange(width, dtype=float),
                         np.arange(height, dtype=float))
    if theta.k == 3:
        S = np.stack([xs - theta.u, ys - theta.v,
                      np.full_like(xs, theta.f)], axis=-1).reshape(-1, 3)
        return S, np.ones(len(S), dtype=bool)
    xd = (xs - theta.u) / theta.f
    yd = (ys - theta.v) / theta.f
    xn, yn, err = _undistort_normalized(theta, xd, yd)
    valid = (err <= UNDISTORT_TOL).reshape(-1)
    S = np.stack([xn * theta.f, yn * theta.f,
                  np.full_like(xn, theta.f)], axis=-1).reshape(-1, 3)
    return S, valid


def pointwise_covariance(x, y, theta: IntrinsicParams, sigma) -> np.ndarray:
    """2x2 covariance of the projection at pixel (x, y) induced by Sigma."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (theta.k, theta.k):
        raise ValueError(f"Sigma must be {theta.k}x{theta.k}")
    S = backproject(x, y, theta)
    D = intrinsic_derivatives(theta, S.reshape(1, 3))[0]
    G = D @ sigma @ D.T
    return 0.5 * (G + G.T)


@dataclass
class UncertaintyMap:
    width: int
    height: int
    values: np.ndarray      # (height, width), SENTINEL where invalid
    stat_kind: str = "trace"

    @property
    def valid_mask(self) -> np.ndarray:
        return self.values != SENTINEL

    def min_location(self):
        """(x, y, value) of the smallest valid entry."""
        vals = np.where(self.valid_mask, self.values, np.inf)
        idx = np.unravel_index(np.argmin(vals), vals.shape)
        return int(idx[1]), int(idx[0]), float(vals[idx])


def render_map(theta: IntrinsicParams, sigma, image_size,
               stat_kind: str = "trace") -> UncertaintyMap:
    """Evaluate the propagated covariance statistic on every pixel."""
    if stat_kind not in STAT_KINDS:
        raise ValueError(f"unknown stat kind {stat_kind!r}")
    width, height = int(image_size[0]), int(image_size[1])
    if width <= 0 or height <= 0:
        raise ValueError("image size must be positive")
    sigma = np.asarray(sigma, dtype=float)
    S, valid = _backproject_grid(theta, width, height)
    D = intrinsic_derivatives(theta, S)          # (n, 2, k)
    G = np.einsum("nik,kl,njl->nij", D, sigma, D)
    if stat_kind == "trace":
        vals = G[:, 0, 0] + G[:, 1, 1]
    elif stat_kind == "determinant":
        vals = G[:, 0, 0] * G[:, 1, 1] - G[:, 0, 1] * G[:, 1, 0]
    else:
        half_tr = 0.5 * (G[:, 0, 0] + G[:, 1, 1])
        disc = np.sqrt(np.maximum(half_tr ** 2 - (G[:, 0, 0] * G[:, 1, 1]
                                                  - G[:, 0, 1] * G[:, 1, 0]), 0.0))
        vals = half_tr + disc
    vals = np.where(valid, vals, SENTINEL)
    return UncertaintyMap(width, height, vals.reshape(height, width), stat_kind)


# ---------------------------------------------------------------------------
# export formats
# ---------------------------------------------------------------------------

def to_pgm(umap: UncertaintyMap) -> str:
    """8-bit PGM (P2), min-max normalized over valid pixels."""
    mask = umap.valid_mask
    vals = umap.values
    if mask.any():
        lo, hi = vals[mask].min(), vals[mask].max()
        scale = 255.0 / (hi - lo) if hi > lo else 0.0
        levels = np.where(mask, np.round((vals - lo) * scale), 0).astype(int)
    else:
        levels = np.zeros_like(vals, dtype=int)
    lines = [f"P2\n{umap.width} {umap.height}\n255"]
    lines.extend(" ".join(str(v) for v in row) for row in levels)
    return "\n".join(lines) + "\n"


def to_sidecar(umap: UncertaintyMap) -> bytes:
    """Raw float sidecar: 16-byte header (magic, width, height, stat id)
    followed by little-endian float32 values, row-major."""
    header = struct.pack("<4sIII", b"UMAP", umap.width, umap.height,
                         STAT_KINDS.index(umap.stat_kind))
    return header + umap.values.astype("<f4").tobytes()


def from_sidecar(blob: bytes) -> UncertaintyMap:
    magic, width, height, stat_id = struct.unpack_from("<4sIII", blob)
    if magic != b"UMAP":
        raise ValueError("bad sidecar magic")
    vals = np.frombuffer(blob, dtype="<f4", offset=16,
                         count=width * height).astype(float)
    return UncertaintyMap(width, height, vals.reshape(height, width),
                          STAT_KINDS[stat_id])

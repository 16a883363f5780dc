"""Synthetic corner patches, autocorrelation measurement and the fitted
opening-angle model used to predict per-corner weight matrices.

A checkerboard X-corner is two lines crossing at the patch center; the wedge
of opening angle alpha is bisected by the patch x-axis in the canonical
(beta = 0) frame. The autocorrelation (structure tensor) of such a patch
estimates the inverse covariance of the detected corner position.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import (AngleOutOfRange, DegeneratePatch, FitFailure,
                     InsufficientNeighbors, InvalidAngle, InvalidSize)

SUPERSAMPLE = 4
DEFAULT_PATCH_SIZE = 21
FIT_RANGE = (30.0, 150.0)
POLY_DEGREE = 6
CONTRAST_REF = 255.0


def render_corner_patch(alpha: float, beta: float, sigma: float,
                        size: int = DEFAULT_PATCH_SIZE) -> np.ndarray:
    """Anti-aliased X-corner patch, greylevels in [0, 255].

    alpha, beta in degrees; sigma is the Gaussian blur std in pixels
    (0 skips blurring). The corner edges lie at beta +- alpha/2 from the
    x-axis, so the alpha-wedge bisector sits on the x-axis when beta = 0.
    """
    if not 10.0 <= alpha <= 170.0:
        raise InvalidAngle(f"opening angle {alpha} outside [10, 170] degrees")
    if size < 5 or size % 2 == 0:
        raise InvalidSize(f"patch size must be odd and >= 5, got {size}")
    half = np.deg2rad(alpha) / 2.0
    b = np.deg2rad(beta)
    e1 = np.array([np.cos(b + half), np.sin(b + half)])
    e2 = np.array([np.cos(b - half), np.sin(b - half)])
    n = size * SUPERSAMPLE
    coords = (np.arange(n) + 0.5) / SUPERSAMPLE - size / 2.0
    x, y = np.meshgrid(coords, coords)  # rows = y, cols = x
    s1 = e1[0] * y - e1[1] * x
    s2 = e2[0] * y - e2[1] * x
    prod = s1 * s2
    # samples on an edge (to rounding) take the mid grey, keeping the patch's
    # rotation/inversion symmetries exact
    tol = 1e-9 * (1.0 + x * x + y * y)
    fine = np.where(prod > tol, 255.0, np.where(prod < -tol, 0.0, 127.5))
    patch = fine.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE).mean(axis=(1, 3))
    if sigma > 0:
        patch = gaussian_filter(patch, sigma, mode="nearest")
    return patch


def autocorrelation_of_patch(patch: np.ndarray) -> np.ndarray:
    """Structure tensor summed over the patch interior, 3x3 central differences."""
    patch = np.asarray(patch, dtype=float)
    if patch.shape[0] < 5 or patch.shape[1] < 5:
        raise InvalidSize("patch must be at least 5x5")
    ix = 0.5 * (patch[1:-1, 2:] - patch[1:-1, :-2])
    iy = 0.5 * (patch[2:, 1:-1] - patch[:-2, 1:-1])
    # inscribed-circle window: a square window would bias the tensor with
    # the corner's in-plane orientation (diagonal edges see a longer window)
    h, w = ix.shape
    yy, xx = np.mgrid[:h, :w]
    mask = ((yy - (h - 1) / 2) ** 2 + (xx - (w - 1) / 2) ** 2
            <= ((min(h, w) - 1) / 2) ** 2)
    ix = ix * mask
    iy = iy * mask
    C = np.array([[np.sum(ix * ix), np.sum(ix * iy)],
                  [np.sum(ix * iy), np.sum(iy * iy)]])
    if not C.any():
        # constant intensity: flag it but hand back the (zero) matrix
        warnings.warn(str(DegeneratePatch("patch has constant intensity")),
                      category=UserWarning, stacklevel=2)
    return C


@dataclass(frozen=True)
class CornerLevel:
    sigma: float
    coeffs: np.ndarray  # polynomial coefficients, lowest order first


@dataclass(frozen=True)
class CornerModel:
    """Fitted first-eigenvalue curves f(alpha), one per blur level."""

    patch_size: int
    levels: tuple[CornerLevel, ...]
    contrast_ref: float = CONTRAST_REF

    def level_for(self, sigma: float) -> CornerLevel:
        return min(self.levels, key=lambda lv: abs(lv.sigma - sigma))

    def evaluate(self, alpha, sigma: float):
        """f(alpha) at the nearest fitted blur level; alpha in degrees."""
        alpha = np.asarray(alpha, dtype=float)
        lo, hi = FIT_RANGE
        if np.any(alpha <= 0.0) or np.any(alpha >= 180.0):
            raise AngleOutOfRange("opening angle must lie in (0, 180) degrees")
        if np.any(alpha < lo) or np.any(alpha > hi):
            warnings.warn("opening angle outside fitted range, clamping",
                          category=UserWarning, stacklevel=2)
            alpha = np.clip(alpha, lo, hi)
        val = np.polynomial.polynomial.polyval(alpha, self.level_for(sigma).coeffs)
        return val if val.ndim else float(val)

    def to_dict(self) -> dict:
        return {"patch_size": self.patch_size,
                "levels": [{"sigma": lv.sigma, "coeffs": lv.coeffs.tolist()}
                           for lv in self.levels]}

    @classmethod
    def from_dict(cls, d: dict) -> "CornerModel":
        return cls(patch_size=int(d["patch_size"]),
                   levels=tuple(CornerLevel(float(lv["sigma"]),
                                            np.asarray(lv["coeffs"], dtype=float))
                                for lv in d["levels"]))


def first_eigenvalue(C: np.ndarray) -> float:
    """Eigenvalue whose eigenvector is nearest (0, 1)."""
    w, v = np.linalg.eigh(C)
    idx = int(np.argmax(np.abs(v[1, :])))
    return float(w[idx])


def measure_eigenvalue_curve(blur_sigma: float, alpha_samples,
                             patch_size: int = DEFAULT_PATCH_SIZE) -> np.ndarray:
    """First eigenvalue of the measured autocorrelation at each opening angle."""
    return np.array([first_eigenvalue(
        autocorrelation_of_patch(render_corner_patch(a, 0.0, blur_sigma, patch_size)))
        for a in alpha_samples])


def build_corner_model(blur_levels, alpha_samples=None,
                       patch_size: int = DEFAULT_PATCH_SIZE) -> CornerModel:
    """Fit a degree-6 polynomial to the measured f(alpha) per blur level."""
    if alpha_samples is None:
        alpha_samples = np.linspace(*FIT_RANGE, 25)
    alpha_samples = np.asarray(alpha_samples, dtype=float)
    if len(alpha_samples) < 8:
        raise ValueError("need at least 8 opening-angle samples")
    levels = []
    for sigma in blur_levels:
        vals = measure_eigenvalue_curve(sigma, alpha_samples, patch_size)
        coeffs = np.polynomial.polynomial.polyfit(alpha_samples, vals, POLY_DEGREE)
        fit = np.polynomial.polynomial.polyval(alpha_samples, coeffs)
        rng = vals.max() - vals.min()
        rms = np.sqrt(np.mean((fit - vals) ** 2))
        if rng <= 0 or rms > 0.02 * rng:
            raise FitFailure(
                f"sigma={sigma}: fit residual {rms:.3g} exceeds 2% of range {rng:.3g}")
        levels.append(CornerLevel(float(sigma), coeffs))
    return CornerModel(patch_size=patch_size, levels=tuple(levels))


def _rot2(beta_rad):
    c, s = np.cos(beta_rad), np.sin(beta_rad)
    return np.array([[c, -s], [s, c]])


def predict_autocorrelation(alpha: float, beta: float, sigma: float,
                            contrast: float, model: CornerModel) -> np.ndarray:
    """Expected 2x2 autocorrelation: rotated diag(f(alpha), f(180-alpha)),
    scaled by (contrast/255)^2."""
    f1 = model.evaluate(alpha, sigma)
    f2 = model.evaluate(180.0 - alpha, sigma)
    R = _rot2(np.deg2rad(beta))
    C = R @ np.diag([f1, f2]) @ R.T
    return C * (contrast / model.contrast_ref) ** 2


def corner_geometry_from_projection(points, rows: int, cols: int, j: int,
                                    visible=None):
    """(alpha, beta) in degrees for grid point j of a projected rows x cols grid.

    d1 points to the row neighbor (next column), d2 to the column neighbor
    (next row); boundary points reuse the opposite neighbor with flipped sign.
    beta is measured from the image x-axis to the corner's wedge-bisector
    frame (grid-diagonal bisector maps to the canonical 45 degrees).
    """
    points = np.asarray(points, dtype=float).reshape(rows * cols, 2)
    if visible is None:
        visible = np.ones(rows * cols, dtype=bool)
    r, c = divmod(j, cols)

    def _direction(step, limit_ok_fwd, limit_ok_bwd):
        if limit_ok_fwd and visible[j + step]:
            return points[j + step] - points[j]
        if limit_ok_bwd and visible[j - step]:
            return points[j] - points[j - step]
        raise InsufficientNeighbors(f"grid point {j} lacks a neighbor")

    d1 = _direction(1, c + 1 < cols, c > 0)
    d2 = _direction(cols, r + 1 < rows, r > 0)
    d1 = d1 / np.linalg.norm(d1)
    d2 = d2 / np.linalg.norm(d2)
    alpha = np.degrees(np.arccos(np.clip(d1 @ d2, -1.0, 1.0)))
    bis = d1 + d2
    beta = np.degrees(np.arctan2(bis[1], bis[0])) - 45.0
    return float(alpha), float(beta)


def grid_corner_geometry(points, rows: int, cols: int):
    """Vectorized (alpha, beta) arrays for every point of a projected grid."""
    pts = np.asarray(points, dtype=float).reshape(rows, cols, 2)
    d1 = np.empty_like(pts)
    d1[:, :-1] = pts[:, 1:] - pts[:, :-1]
    d1[:, -1] = pts[:, -1] - pts[:, -2]
    d2 = np.empty_like(pts)
    d2[:-1] = pts[1:] - pts[:-1]
    d2[-1] = pts[-1] - pts[-2]
    d1 /= np.linalg.norm(d1, axis=2, keepdims=True)
    d2 /= np.linalg.norm(d2, axis=2, keepdims=True)
    dot = np.clip(np.einsum("rci,rci->rc", d1, d2), -1.0, 1.0)
    alpha = np.degrees(np.arccos(dot))
    bis = d1 + d2
    beta = np.degrees(np.arctan2(bis[..., 1], bis[..., 0])) - 45.0
    return alpha.reshape(-1), beta.reshape(-1)


def predicted_grid_weights(points, rows: int, cols: int, model: CornerModel,
                           sigma: float, contrast: float = CONTRAST_REF) -> np.ndarray:
    """(n, 2, 2) predicted autocorrelation weights for a projected grid."""
    alpha, beta = grid_corner_geometry(points, rows, cols)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        f1 = model.evaluate(alpha, sigma)
        f2 = model.evaluate(180.0 - alpha, sigma)
    b = np.deg2rad(beta)
    c, s = np.cos(b), np.sin(b)
    scale = (contrast / model.contrast_ref) ** 2
    C = np.empty((len(alpha), 2, 2))
    C[:, 0, 0] = f1 * c * c + f2 * s * s
    C[:, 1, 1] = f1 * s * s + f2 * c * c
    C[:, 0, 1] = C[:, 1, 0] = (f1 - f2) * c * s
    return C * scale

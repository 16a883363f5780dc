"""JSON file formats: observation sets and calibration states."""

from __future__ import annotations

import json

import numpy as np

from .calibration import CalibrationState, ImageObservation, ObservationSet
from .geometry import IntrinsicParams, Pose, TargetSpec


def observations_to_dict(obs: ObservationSet, target: TargetSpec,
                         image_size) -> dict:
    images = []
    for img in obs.images:
        corners = []
        for idx in range(img.n):
            c = {"j": int(img.indices[idx]),
                 "x": float(img.xy[idx, 0]), "y": float(img.xy[idx, 1])}
            if img.weights is not None:
                w = img.weights[idx]
                c["w"] = [float(w[0, 0]), float(w[0, 1]), float(w[1, 1])]
            corners.append(c)
        images.append({"corners": corners})
    return {"image_size": [int(image_size[0]), int(image_size[1])],
            "target": target.to_dict(), "images": images}


def observations_from_dict(doc: dict):
    """Returns (ObservationSet, TargetSpec, image_size)."""
    target = TargetSpec.from_dict(doc["target"])
    image_size = tuple(doc["image_size"])
    images = []
    for entry in doc["images"]:
        corners = entry["corners"]
        indices = np.array([c["j"] for c in corners], dtype=int)
        xy = np.array([[c["x"], c["y"]] for c in corners], dtype=float)
        weights = None
        if corners and "w" in corners[0]:
            weights = np.array([[[c["w"][0], c["w"][1]],
                                 [c["w"][1], c["w"][2]]] for c in corners])
        images.append(ImageObservation(indices=indices, xy=xy, weights=weights))
    return ObservationSet(images), target, image_size


def load_observations(path):
    with open(path) as fh:
        return observations_from_dict(json.load(fh))


def save_observations(path, obs, target, image_size):
    with open(path, "w") as fh:
        json.dump(observations_to_dict(obs, target, image_size), fh, indent=1)


def state_to_dict(state: CalibrationState) -> dict:
    return {"theta": state.theta.to_dict(),
            "poses": [p.to_dict() for p in state.poses],
            "sigma": None if state.sigma is None else state.sigma.tolist(),
            "sigma_rank": state.sigma_rank,
            "rms": state.rms,
            "converged": state.converged,
            "iterations": state.iterations}


def state_from_dict(doc: dict) -> CalibrationState:
    return CalibrationState(
        theta=IntrinsicParams.from_dict(doc["theta"]),
        poses=[Pose.from_dict(p) for p in doc["poses"]],
        sigma=None if doc.get("sigma") is None else np.asarray(doc["sigma"]),
        sigma_rank=doc.get("sigma_rank"),
        rms=doc.get("rms"),
        converged=doc.get("converged", True),
        iterations=doc.get("iterations", 0))


def load_state(path) -> CalibrationState:
    with open(path) as fh:
        return state_from_dict(json.load(fh))


def save_state(path, state: CalibrationState):
    with open(path, "w") as fh:
        json.dump(state_to_dict(state), fh, indent=1)

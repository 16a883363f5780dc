"""Session-scoped HTTP facade for the interactive guidance loop.

Sessions live in process memory. Each session serializes its mutations with
a lock; the planner result is cached until the next observation arrives.
In virtual mode the service simulates a ground-truth camera so a UI can
steer a virtual pose and capture synthetic corner observations.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, Field

from .calibration import (CalibrationState, ImageObservation, ObservationSet,
                          calibrate, homography_dlt, optimize_bundle,
                          pose_from_homography)
from .errors import CalibwizError, DegenerateConfiguration, NoFeasiblePose
from .geometry import IntrinsicParams, Pose, TargetSpec, project_points
from .planner import (PlannerConfig, default_search_space, precompute_base,
                      search_next_pose)
from .synthetic import pose_feasible, shared_corner_model
from .uncertainty import render_map, to_sidecar

DEFAULT_PROXIMITY_THRESHOLD = 15.0  # mean corner distance in pixels
MIN_IMAGES_FOR_CALIBRATION = 3


class TargetModel(BaseModel):
    rows: int
    cols: int
    spacing: float = 1.0


class IntrinsicsModel(BaseModel):
    model_kind: str
    f: float
    u: float
    v: float
    k1: float = 0.0
    k2: float = 0.0


class PlannerModel(BaseModel):
    method: str = "sa"
    budget: int = 800
    seed: int = 0


class SessionConfigModel(BaseModel):
    model_kind: str = "pinhole-k1k2"
    target: TargetModel
    image_size: tuple[int, int] = (640, 480)
    blur_sigma: float = 1.0
    noise_sigma: float = 0.0
    planner: PlannerModel = Field(default_factory=PlannerModel)
    ground_truth: IntrinsicsModel | None = None
    proximity_threshold: float = DEFAULT_PROXIMITY_THRESHOLD


class CornerModelIn(BaseModel):
    j: int
    x: float
    y: float
    w: list[float] | None = None  # [c11, c12, c22]


class ObservationIn(BaseModel):
    corners: list[CornerModelIn]


class PoseModel(BaseModel):
    t: list[float]
    angles_deg: list[float]

    def to_pose(self) -> Pose:
        return Pose(np.asarray(self.t), np.deg2rad(self.angles_deg))

    @classmethod
    def from_pose(cls, pose: Pose) -> "PoseModel":
        return cls(t=pose.t.tolist(), angles_deg=np.degrees(pose.angles).tolist())


@dataclass
class Session:
    id: str
    config: SessionConfigModel
    target: TargetSpec
    ground_truth: IntrinsicParams | None
    observations: ObservationSet = field(default_factory=ObservationSet)
    state: CalibrationState | None = None
    suggestion: dict | None = None   # {"key": (count, weighted), "result": ...}
    history: list[float] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _calibration_summary(session: Session) -> dict:
    if session.state is None:
        return {"status": "collecting", "image_count": session.observations.m,
                "history": list(session.history)}
    st = session.state
    return {"status": "calibrated", "image_count": session.observations.m,
            "theta": st.theta.to_dict(), "rms": st.rms,
            "trace_sigma": st.trace_sigma(), "sigma_rank": st.sigma_rank,
            "history": list(session.history)}


def create_app() -> FastAPI:
    app = FastAPI(title="calibwiz")
    sessions: dict[str, Session] = {}

    def get_session(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(404, f"session {session_id} not found")
        return session

    @app.post("/sessions")
    def create_session(config: SessionConfigModel):
        try:
            target = TargetSpec(config.target.rows, config.target.cols,
                                config.target.spacing)
            gt = None
            if config.ground_truth is not None:
                gt = IntrinsicParams(**config.ground_truth.model_dump())
        except ValueError as exc:
            raise HTTPException(400, f"invalid config: {exc}")
        if config.model_kind not in ("pinhole3", "pinhole-k1", "pinhole-k1k2"):
            raise HTTPException(400, f"invalid model kind {config.model_kind!r}")
        session = Session(id=uuid.uuid4().hex, config=config, target=target,
                          ground_truth=gt)
        sessions[session.id] = session
        return {"id": session.id}

    @app.post("/sessions/{session_id}/observations")
    def submit_observation(session_id: str, payload: ObservationIn):
        session = get_session(session_id)
        with session.lock:
            corners = payload.corners
            if not corners:
                raise HTTPException(400, "empty corner list")
            indices = np.array([c.j for c in corners], dtype=int)
            if indices.min() < 0 or indices.max() >= session.target.n_points:
                raise HTTPException(400, "corner index out of target range")
            xy = np.array([[c.x, c.y] for c in corners])
            weights = None
            if all(c.w is not None for c in corners):
                weights = np.array([[[c.w[0], c.w[1]], [c.w[1], c.w[2]]]
                                    for c in corners])
            try:
                img = ImageObservation(indices=indices, xy=xy, weights=weights)
            except ValueError as exc:
                raise HTTPException(400, str(exc))
            guess = _warm_start_guess(session, img)
            session.observations.images.append(img)
            session.suggestion = None  # new data supersedes any cached plan
            if session.observations.m >= MIN_IMAGES_FOR_CALIBRATION:
                try:
                    _recalibrate(session, guess)
                except DegenerateConfiguration as exc:
                    session.observations.images.pop()
                    raise HTTPException(
                        409, f"degenerate configuration: {exc}. Vary the "
                             "target orientation between images and retry.")
            return _calibration_summary(session)

    def _warm_start_guess(session: Session, img: ImageObservation) -> Pose | None:
        if session.suggestion is None or session.state is None:
            return None
        pose = session.suggestion["result"].pose
        try:
            proj = project_points(session.state.theta, pose,
                                  session.target.points[img.indices])
        except CalibwizError:
            return None
        dist = float(np.linalg.norm(img.xy - proj, axis=1).mean())
        return pose if dist < session.config.proximity_threshold else None

    def _recalibrate(session: Session, guess: Pose | None):
        obs = session.observations
        if session.state is None:
            session.state = calibrate(obs, session.target,
                                      session.config.model_kind)
        else:
            if guess is None:
                img = obs.images[-1]
                H = homography_dlt(session.target.points[img.indices, :2], img.xy)
                guess = pose_from_homography(H, session.state.theta.f,
                                             session.state.theta.u,
                                             session.state.theta.v)
            warm = CalibrationState(theta=session.state.theta,
                                    poses=list(session.state.poses) + [guess])
            session.state = optimize_bundle(warm, obs, session.target)
        session.history.append(session.state.trace_sigma())

    @app.get("/sessions/{session_id}/calibration")
    def get_calibration(session_id: str):
        return _calibration_summary(get_session(session_id))

    @app.get("/sessions/{session_id}/next-pose")
    def get_next_pose(session_id: str, weighted: bool = False):
        session = get_session(session_id)
        with session.lock:
            if session.state is None:
                raise HTTPException(409, "not calibrated yet")
            key = (session.observations.m, weighted)
            if session.suggestion is not None and session.suggestion["key"] == key:
                result = session.suggestion["result"]
            else:
                base = precompute_base(session.state, session.observations,
                                       session.target)
                space = default_search_space(session.state.theta, session.target,
                                             session.config.image_size)
                pcfg = PlannerConfig(method=session.config.planner.method,
                                     budget=session.config.planner.budget,
                                     seed=session.config.planner.seed
                                     + session.observations.m,
                                     use_corner_model=weighted,
                                     blur_sigma=session.config.blur_sigma)
                model = shared_corner_model() if weighted else None
                try:
                    result = search_next_pose(base, session.state, session.target,
                                              space, pcfg, model)
                except NoFeasiblePose as exc:
                    raise HTTPException(409, str(exc))
                session.suggestion = {"key": key, "result": result}
            doc = result.to_dict()
            doc["suggested_corners"] = project_points(
                session.state.theta, result.pose,
                session.target.points).tolist()
            return doc

    @app.post("/sessions/{session_id}/virtual-capture")
    def virtual_capture(session_id: str, pose_in: PoseModel):
        session = get_session(session_id)
        with session.lock:
            if session.ground_truth is None:
                raise HTTPException(409, "session is not in virtual mode")
            pose = pose_in.to_pose()
            if not pose_feasible(session.ground_truth, pose, session.target,
                                 session.config.image_size):
                raise HTTPException(400, "pose infeasible: target leaves the image")
            proj = project_points(session.ground_truth, pose,
                                  session.target.points)
            noisy = proj.copy()
            if session.config.noise_sigma > 0:
                rng = np.random.default_rng()
                noisy = proj + rng.normal(0.0, session.config.noise_sigma,
                                          proj.shape)
            corners = [{"j": int(j), "x": float(p[0]), "y": float(p[1])}
                       for j, p in enumerate(noisy)]
            proximity = None
            if session.suggestion is not None and session.state is not None:
                spose = session.suggestion["result"].pose
                theta = session.state.theta
                ref = project_points(theta, spose, session.target.points)
                cur = project_points(theta, pose, session.target.points)
                dist = float(np.linalg.norm(cur - ref, axis=1).mean())
                proximity = {"mean_corner_distance": dist,
                             "within_threshold":
                                 dist < session.config.proximity_threshold}
            return {"corners": corners, "proximity": proximity}

    @app.get("/sessions/{session_id}/uncertainty-map")
    def get_uncertainty_map(session_id: str, stat: str = "trace"):
        session = get_session(session_id)
        with session.lock:
            if session.state is None or session.state.sigma is None:
                raise HTTPException(409, "not calibrated yet")
            try:
                umap = render_map(session.state.theta, session.state.sigma,
                                  session.config.image_size, stat)
            except ValueError as exc:
                raise HTTPException(400, str(exc))
            return Response(content=to_sidecar(umap),
                            media_type="application/octet-stream")

    return app

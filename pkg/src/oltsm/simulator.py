"""Deterministic synthetic worlds and multi-session detection streams.

Worlds place static object landmarks in simple indoor templates
(corridor, hospital loop, random box).  Sessions drive a robot pose
along a template trajectory at a fixed rate and emit, per frame, the
landmarks inside a planar sensing frustum as camera-frame detections,
optionally perturbed by dropout, class confusion, center/yaw noise,
viewpoint offsets and transient dynamic distractors.  Every emitted
observation is recorded in a ground-truth correspondence table so that
localization results can be scored offline.

Everything is a pure function of (spec, seed): identical inputs yield
byte-identical streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import canon
from .geometry import Extrinsics, Point3, magnetic_to_body, normalize_yaw_deg
from .mapping import DetectionFrame, ObjectObservation, StreamHeader, write_stream

GT_FORMAT = "oltsm-gt/1"

STATIC_CLASSES = ("door", "sign", "pillar", "fire_hydrant", "billboard", "table")
DYNAMIC_CLASSES = ("person", "cart")
CLASS_TABLE = STATIC_CLASSES + DYNAMIC_CLASSES
STATIC_CLASS_IDS = frozenset(range(len(STATIC_CLASSES)))

COLORS = ("red", "green", "blue", "white", "gray", "brown")

SENSOR_RANGE_M = 8.0
SENSOR_FOV_DEG = 90.0

#: Default camera mount: axes aligned with the body, 20 cm ahead, 50 cm up.
DEFAULT_EXTRINSICS = Extrinsics(np.eye(3), Point3(0.2, 0.0, 0.5))


@dataclass(frozen=True)
class WorldSpec:
    template: str = "corridor"
    length: float = 70.0
    width: float = 8.0
    n_landmarks: int = 100
    class_probs: tuple[float, ...] | None = None
    min_separation: float = 1.2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.template not in ("corridor", "hospital", "random"):
            raise ValueError(f"unknown template {self.template!r}")
        if self.n_landmarks < 1:
            raise ValueError("n_landmarks must be >= 1")
        if self.length <= 0 or self.width <= 0:
            raise ValueError("extent must be positive")
        if self.class_probs is not None:
            if len(self.class_probs) != len(STATIC_CLASSES):
                raise ValueError(f"class_probs must have {len(STATIC_CLASSES)} entries")
            if abs(sum(self.class_probs) - 1.0) > 1e-9 or any(p < 0 for p in self.class_probs):
                raise ValueError("class_probs must be a probability distribution")


@dataclass(frozen=True)
class Landmark:
    id: int
    class_id: int
    pos: np.ndarray
    color: str


@dataclass(frozen=True)
class World:
    spec: WorldSpec
    landmarks: tuple[Landmark, ...]
    bounds: tuple[float, float, float, float]  # x0, x1, y0, y1


@dataclass(frozen=True)
class TrajectorySpec:
    speed: float = 0.5
    rate_hz: float = 10.0
    lateral_offset: float = 0.0
    heading_offset_deg: float = 0.0

    def __post_init__(self) -> None:
        if self.speed <= 0 or self.rate_hz <= 0:
            raise ValueError("speed and rate_hz must be positive")


@dataclass(frozen=True)
class PerturbationSpec:
    p_drop: float = 0.0
    p_confuse: float = 0.0
    sigma_center: float = 0.0
    sigma_yaw: float = 0.0
    n_dynamic: int = 0

    def __post_init__(self) -> None:
        for name in ("p_drop", "p_confuse"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.sigma_center < 0 or self.sigma_yaw < 0 or self.n_dynamic < 0:
            raise ValueError("noise magnitudes must be non-negative")


@dataclass(frozen=True)
class Pose:
    pos: np.ndarray
    yaw_deg: float


@dataclass(frozen=True)
class FrameTruth:
    t: float
    pose: Pose


@dataclass
class GroundTruth:
    """Evaluation oracle: who was where, and which obs saw what."""

    session: str
    landmarks: tuple[Landmark, ...]
    frames: list[FrameTruth] = field(default_factory=list)
    # (frame_idx, obs_idx, landmark_id | None); None marks distractors.
    correspondences: list[tuple[int, int, int | None]] = field(default_factory=list)
    n_emitted: int = 0
    n_dropped: int = 0
    n_out_of_frustum: int = 0

    def obs_landmark(self) -> dict[tuple[int, int], int | None]:
        return {(f, o): lm for f, o, lm in self.correspondences}

    def payload(self) -> dict:
        return {
            "format": GT_FORMAT,
            "session": self.session,
            "landmarks": [
                {"id": lm.id, "cls": lm.class_id, "pos": [float(v) for v in lm.pos]}
                for lm in self.landmarks
            ],
            "frames": [
                {
                    "t": fr.t,
                    "pose": {"pos": [float(v) for v in fr.pose.pos], "yaw_deg": fr.pose.yaw_deg},
                }
                for fr in self.frames
            ],
            "correspondences": [
                {"frame_idx": f, "obs_idx": o, "landmark_id": lm}
                for f, o, lm in self.correspondences
            ],
            "totals": {
                "emitted": self.n_emitted,
                "dropped": self.n_dropped,
                "out_of_frustum": self.n_out_of_frustum,
            },
        }

    def save(self, path) -> None:
        Path(path).write_text(canon.dumps(self.payload(), digits=None) + "\n", encoding="utf-8")


def load_ground_truth(path) -> GroundTruth:
    payload = canon.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != GT_FORMAT:
        raise canon.DataFormatError(f"expected format {GT_FORMAT!r}")
    landmarks = tuple(
        Landmark(lm["id"], lm["cls"], np.asarray(lm["pos"], dtype=np.float64), "")
        for lm in payload["landmarks"]
    )
    gt = GroundTruth(session=payload["session"], landmarks=landmarks)
    gt.frames = [
        FrameTruth(
            float(fr["t"]),
            Pose(np.asarray(fr["pose"]["pos"], dtype=np.float64), float(fr["pose"]["yaw_deg"])),
        )
        for fr in payload["frames"]
    ]
    gt.correspondences = [
        (c["frame_idx"], c["obs_idx"], c["landmark_id"]) for c in payload["correspondences"]
    ]
    totals = payload.get("totals", {})
    gt.n_emitted = totals.get("emitted", 0)
    gt.n_dropped = totals.get("dropped", 0)
    gt.n_out_of_frustum = totals.get("out_of_frustum", 0)
    return gt


# --- world generation --------------------------------------------------------


def generate_world(spec: WorldSpec) -> World:
    """Place landmarks for the chosen template, deterministically."""
    rng = np.random.default_rng(spec.seed)
    probs = spec.class_probs or tuple(1.0 / len(STATIC_CLASSES) for _ in STATIC_CLASSES)
    positions: list[np.ndarray] = []
    attempts = 0
    while len(positions) < spec.n_landmarks:
        attempts += 1
        if attempts > 200 * spec.n_landmarks:
            raise ValueError("could not satisfy min_separation; world too dense")
        pos = _sample_position(spec, rng)
        if all(float(np.linalg.norm(pos - p)) >= spec.min_separation for p in positions):
            positions.append(pos)
    positions.sort(key=lambda p: (p[0], p[1], p[2]))
    landmarks = []
    for i, pos in enumerate(positions):
        cls = int(rng.choice(len(STATIC_CLASSES), p=probs))
        color = COLORS[int(rng.integers(len(COLORS)))]
        landmarks.append(Landmark(i, cls, pos, color))
    half = spec.width / 2.0
    return World(spec=spec, landmarks=tuple(landmarks), bounds=(0.0, spec.length, -half, half))


def _sample_position(spec: WorldSpec, rng: np.random.Generator) -> np.ndarray:
    half = spec.width / 2.0
    if spec.template == "corridor":
        x = rng.uniform(0.0, spec.length)
        side = 1.0 if rng.random() < 0.5 else -1.0
        y = side * rng.uniform(0.35 * half, 0.9 * half)
        z = rng.uniform(0.3, 2.2)
    elif spec.template == "hospital":
        # Landmarks along the walls of a rectangular loop.
        perim = 2.0 * (spec.length + spec.width)
        s = rng.uniform(0.0, perim)
        x, y = _perimeter_point(s, spec.length, spec.width)
        x += rng.uniform(-0.4, 0.4)
        y += rng.uniform(-0.4, 0.4)
        z = rng.uniform(0.3, 2.2)
    else:
        x = rng.uniform(0.0, spec.length)
        y = rng.uniform(-half, half)
        z = rng.uniform(0.3, 2.2)
    return np.array([x, y, z])


def _perimeter_point(s: float, length: float, width: float) -> tuple[float, float]:
    half = width / 2.0
    if s < length:
        return s, -half
    s -= length
    if s < width:
        return length, -half + s
    s -= width
    if s < length:
        return length - s, half
    s -= length
    return 0.0, half - s


def trajectory_poses(world: World, traj: TrajectorySpec) -> list[Pose]:
    """Per-frame robot poses for the template's reference path."""
    spec = world.spec
    if spec.template in ("corridor", "random"):
        waypoints = [
            np.array([0.0, traj.lateral_offset, 0.0]),
            np.array([spec.length, traj.lateral_offset, 0.0]),
        ]
    else:
        m = 2.0  # stay m meters inside the loop walls
        half = spec.width / 2.0 - m
        waypoints = [
            np.array([m, -half, 0.0]),
            np.array([spec.length - m, -half, 0.0]),
            np.array([spec.length - m, half, 0.0]),
            np.array([m, half, 0.0]),
            np.array([m, -half, 0.0]),
        ]
        if traj.lateral_offset:
            waypoints = [w + np.array([0.0, traj.lateral_offset, 0.0]) for w in waypoints]
    x0, x1, y0, y1 = world.bounds
    for w in waypoints:
        if not (x0 - 1e-9 <= w[0] <= x1 + 1e-9 and y0 - 1e-9 <= w[1] <= y1 + 1e-9):
            raise ValueError(f"trajectory waypoint {w[:2]} leaves world bounds {world.bounds}")
    dt = 1.0 / traj.rate_hz
    poses: list[Pose] = []
    seg_idx = 0
    seg_travel = 0.0
    while seg_idx < len(waypoints) - 1:
        a, b = waypoints[seg_idx], waypoints[seg_idx + 1]
        seg_len = float(np.linalg.norm(b - a))
        if seg_travel >= seg_len:
            seg_idx += 1
            seg_travel -= seg_len
            continue
        frac = seg_travel / seg_len
        pos = a + frac * (b - a)
        heading = _heading_of(b - a) + traj.heading_offset_deg
        poses.append(Pose(pos, normalize_yaw_deg(heading)))
        seg_travel += traj.speed * dt
    return poses


def _heading_of(d: np.ndarray) -> float:
    return normalize_yaw_deg(math.degrees(math.atan2(-d[1], d[0])))


# --- session generation --------------------------------------------------------


@dataclass(frozen=True)
class Distractor:
    id: int
    class_id: int
    pos: np.ndarray
    t_start: float
    t_end: float
    color: str


@dataclass
class Session:
    header: StreamHeader
    frames: list[DetectionFrame]
    ground_truth: GroundTruth

    def save(self, stream_path, gt_path=None) -> None:
        write_stream(stream_path, self.header, self.frames)
        if gt_path is not None:
            self.ground_truth.save(gt_path)


def generate_session(
    world: World,
    traj: TrajectorySpec,
    pert: PerturbationSpec,
    seed: int,
    session: str = "session",
    extrinsics: Extrinsics | None = None,
) -> Session:
    """Simulate one drive-through and emit its detection stream."""
    ext = extrinsics or DEFAULT_EXTRINSICS
    rng = np.random.default_rng(seed)
    poses = trajectory_poses(world, traj)
    if not poses:
        raise ValueError("trajectory produced no frames; extend the world or slow down")
    t0 = 0.0
    dt = 1.0 / traj.rate_hz
    distractors = _spawn_distractors(world, poses, pert, rng, dt)
    gt = GroundTruth(session=session, landmarks=world.landmarks)
    frames: list[DetectionFrame] = []
    fov = math.radians(SENSOR_FOV_DEG / 2.0)

    for f_idx, pose in enumerate(poses):
        t = t0 + f_idx * dt
        gt.frames.append(FrameTruth(t, pose))
        yaw_reported = pose.yaw_deg
        if pert.sigma_yaw > 0:
            yaw_reported = normalize_yaw_deg(pose.yaw_deg + rng.normal(0.0, pert.sigma_yaw))
        obs: list[ObjectObservation] = []
        obs_idx = 0
        for lm in world.landmarks:
            body = _world_to_body(lm.pos, pose)
            if not _in_frustum(body, fov):
                gt.n_out_of_frustum += 1
                continue
            if pert.p_drop > 0 and rng.random() < pert.p_drop:
                gt.n_dropped += 1
                continue
            cls = lm.class_id
            if pert.p_confuse > 0 and rng.random() < pert.p_confuse:
                others = [c for c in range(len(STATIC_CLASSES)) if c != cls]
                cls = others[int(rng.integers(len(others)))]
            cam = ext.inverse_apply(Point3.from_array(body))
            center = cam.as_array()
            if pert.sigma_center > 0:
                center = center + rng.normal(0.0, pert.sigma_center, size=3)
            conf = float(rng.uniform(0.6, 1.0))
            obs.append(
                ObjectObservation(cls, conf, Point3.from_array(center), color=lm.color)
            )
            gt.correspondences.append((f_idx, obs_idx, lm.id))
            gt.n_emitted += 1
            obs_idx += 1
        for d in distractors:
            if not (d.t_start <= t <= d.t_end):
                continue
            body = _world_to_body(d.pos, pose)
            if not _in_frustum(body, fov):
                continue
            cam = ext.inverse_apply(Point3.from_array(body))
            center = cam.as_array()
            if pert.sigma_center > 0:
                center = center + rng.normal(0.0, pert.sigma_center, size=3)
            conf = float(rng.uniform(0.5, 0.9))
            obs.append(ObjectObservation(d.class_id, conf, Point3.from_array(center), color=d.color))
            gt.correspondences.append((f_idx, obs_idx, None))
            obs_idx += 1
        frames.append(DetectionFrame(t=t, yaw_deg=yaw_reported, observations=tuple(obs)))

    header = StreamHeader(session=session, extrinsics=ext, classes=CLASS_TABLE)
    return Session(header=header, frames=frames, ground_truth=gt)


def _world_to_body(pos: np.ndarray, pose: Pose) -> np.ndarray:
    mag = Point3.from_array(pos - pose.pos)
    return magnetic_to_body(mag, pose.yaw_deg).as_array()


def _in_frustum(body: np.ndarray, half_fov_rad: float) -> bool:
    planar = math.hypot(body[0], body[1])
    if planar > SENSOR_RANGE_M or body[0] <= 0.0:
        return False
    return abs(math.atan2(body[1], body[0])) <= half_fov_rad


def _spawn_distractors(
    world: World,
    poses: list[Pose],
    pert: PerturbationSpec,
    rng: np.random.Generator,
    dt: float,
) -> list[Distractor]:
    """Transient objects near the path; half carry in-allowlist classes."""
    out: list[Distractor] = []
    duration = len(poses) * dt
    for k in range(pert.n_dynamic):
        t_start = float(rng.uniform(0.0, max(duration - 2.0, dt)))
        t_end = t_start + float(rng.uniform(2.0, 6.0))
        anchor = poses[min(int(t_start / dt), len(poses) - 1)]
        rang = float(rng.uniform(2.0, 7.0))
        bearing = math.radians(anchor.yaw_deg + float(rng.uniform(-40.0, 40.0)))
        pos = anchor.pos + np.array(
            [rang * math.cos(bearing), -rang * math.sin(bearing), float(rng.uniform(0.3, 1.9))]
        )
        if k % 2 == 0:
            cls = len(STATIC_CLASSES) + int(rng.integers(len(DYNAMIC_CLASSES)))
        else:
            cls = int(rng.integers(len(STATIC_CLASSES)))
        out.append(Distractor(k, cls, pos, t_start, t_end, "gray"))
    return out


def session_pair(
    world: World,
    traj_map: TrajectorySpec,
    pert_map: PerturbationSpec,
    traj_query: TrajectorySpec,
    pert_query: PerturbationSpec,
    seed_map: int,
    seed_query: int,
) -> tuple[Session, Session]:
    """Two sessions over one world; world landmark ids are the shared oracle."""
    a = generate_session(world, traj_map, pert_map, seed_map, session="map")
    b = generate_session(world, traj_query, pert_query, seed_query, session="query")
    return a, b


def with_viewpoint_offset(traj: TrajectorySpec, lateral_m: float, heading_deg: float) -> TrajectorySpec:
    """Shifted copy of a trajectory (the viewpoint-change surrogate)."""
    return replace(
        traj,
        lateral_offset=traj.lateral_offset + lateral_m,
        heading_offset_deg=traj.heading_offset_deg + heading_deg,
    )

"""Deterministic synthetic multi-person sequences with ground truth.

Persons are articulated 15-joint skeleton templates moving along configurable
paths; degradations (occlusion windows, score drops, coordinate jitter, false
positives, joint truncation) model the classic failure modes of per-frame
pose estimation. The same seed always produces byte-identical output, so
every tracking claim can be verified at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .metrics import GroundTruth, GtInstance
from .propagation import box_from_visible_keypoints
from .types import FrameDetections, Pose, PoseSource

__all__ = [
    "ScenarioConfig",
    "OcclusionWindow",
    "ScoreDropWindow",
    "TruncationWindow",
    "generate",
    "preset",
    "PRESET_NAMES",
    "load_scenario",
    "save_scenario",
    "texture_image",
    "shift_image",
]

JOINT_NAMES = (
    "head_top", "neck",
    "right_shoulder", "right_elbow", "right_wrist",
    "left_shoulder", "left_elbow", "left_wrist",
    "right_hip", "right_knee", "right_ankle",
    "left_hip", "left_knee", "left_ankle",
    "pelvis",
)

# Canonical template, person height 1.0, origin at body centre, y down.
_TEMPLATE = np.array([
    (0.00, -0.50), (0.00, -0.30),
    (-0.11, -0.28), (-0.14, -0.10), (-0.15, 0.08),
    (0.11, -0.28), (0.14, -0.10), (0.15, 0.08),
    (-0.07, 0.05), (-0.08, 0.28), (-0.08, 0.50),
    (0.07, 0.05), (0.08, 0.28), (0.08, 0.50),
    (0.00, 0.05),
])

SKELETON_EDGES = (
    (0, 1), (1, 2), (1, 5), (2, 3), (3, 4), (5, 6), (6, 7),
    (1, 14), (14, 8), (14, 11), (8, 9), (9, 10), (11, 12), (12, 13),
)

HEAD_TOP, NECK = 0, 1
LEG_JOINTS = (8, 9, 10, 11, 12, 13)
ARM_JOINTS = (2, 3, 4, 5, 6, 7)


@dataclass(frozen=True)
class OcclusionWindow:
    person: int
    start: int  # inclusive
    end: int  # exclusive


@dataclass(frozen=True)
class ScoreDropWindow:
    person: int
    start: int
    end: int
    factor: float = 0.3


@dataclass(frozen=True)
class TruncationWindow:
    person: int
    start: int
    end: int
    joints: tuple[int, ...] = LEG_JOINTS


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    persons: int = 2
    frames: int = 30
    joint_count: int = 15
    image_size: tuple[int, int] = (640, 480)
    motion: str = "linear"  # linear | sinusoidal | random_walk
    paths: str = "random"  # random | crossing
    speed_range: tuple[float, float] = (1.0, 3.0)
    person_height_range: tuple[float, float] = (150.0, 250.0)
    articulation_amplitude: float = 0.02  # fraction of person height
    jitter_sigma: float = 0.0
    false_positive_rate: float = 0.0  # expected count per frame
    fp_near_person_prob: float = 0.5
    occlusions: tuple[OcclusionWindow, ...] = ()
    score_drops: tuple[ScoreDropWindow, ...] = ()
    truncations: tuple[TruncationWindow, ...] = ()

    def __post_init__(self):
        if self.joint_count != len(JOINT_NAMES):
            raise ValueError(
                f"generator produces {len(JOINT_NAMES)}-joint skeletons"
            )
        if self.motion not in ("linear", "sinusoidal", "random_walk"):
            raise ValueError(f"unknown motion model {self.motion!r}")
        if self.paths not in ("random", "crossing"):
            raise ValueError(f"unknown path mode {self.paths!r}")
        if not 0 <= self.fp_near_person_prob <= 1:
            raise ValueError("fp_near_person_prob must lie in [0, 1]")
        if self.false_positive_rate < 0 or self.jitter_sigma < 0:
            raise ValueError("rates and sigmas must be nonnegative")


class _PersonModel:
    def __init__(self, rng: np.random.Generator, cfg: ScenarioConfig, index: int):
        w, h = cfg.image_size
        self.height = rng.uniform(*cfg.person_height_range)
        margin = 0.45 * self.height
        if cfg.paths == "crossing":
            # opposite sides, converging: paths meet mid-sequence
            y = h / 2 + (index - (cfg.persons - 1) / 2) * 0.22 * self.height
            if index % 2 == 0:
                self.pos = np.array([margin, y])
                direction = 0.0
            else:
                self.pos = np.array([w - margin, y])
                direction = math.pi
            self.vel = rng.uniform(*cfg.speed_range) * np.array(
                [math.cos(direction), math.sin(direction)]
            )
        else:
            self.pos = np.array([
                rng.uniform(margin, w - margin),
                rng.uniform(margin, h - margin),
            ])
            direction = rng.uniform(0, 2 * math.pi)
            self.vel = rng.uniform(*cfg.speed_range) * np.array(
                [math.cos(direction), math.sin(direction)]
            )
        n = cfg.joint_count
        self.amp = cfg.articulation_amplitude * self.height * rng.uniform(0.5, 1.5, (n, 2))
        self.freq = rng.uniform(0.1, 0.5, (n, 2))
        self.phase = rng.uniform(0, 2 * math.pi, (n, 2))
        self.sin_amp = 0.3 * self.height
        self.sin_freq = rng.uniform(0.05, 0.15)
        self.sin_phase = rng.uniform(0, 2 * math.pi)

    def step(self, rng: np.random.Generator, cfg: ScenarioConfig):
        if cfg.motion == "random_walk":
            self.vel = self.vel + rng.normal(0.0, 0.3, 2)
            speed = float(np.linalg.norm(self.vel))
            lo, hi = cfg.speed_range
            if speed > hi:
                self.vel *= hi / speed
            elif speed > 0 and speed < lo:
                self.vel *= lo / speed
        self.pos = self.pos + self.vel
        w, h = cfg.image_size
        margin = 0.45 * self.height
        for axis, bound in ((0, w), (1, h)):
            if self.pos[axis] < margin:
                self.pos[axis] = 2 * margin - self.pos[axis]
                self.vel[axis] = abs(self.vel[axis])
            elif self.pos[axis] > bound - margin:
                self.pos[axis] = 2 * (bound - margin) - self.pos[axis]
                self.vel[axis] = -abs(self.vel[axis])

    def pose_xy(self, t: int, cfg: ScenarioConfig) -> np.ndarray:
        centre = self.pos.copy()
        if cfg.motion == "sinusoidal":
            centre[1] += self.sin_amp * math.sin(self.sin_freq * t + self.sin_phase)
        sway = self.amp * np.sin(self.freq * t + self.phase)
        return centre + self.height * _TEMPLATE + sway


def _make_pose(frame: int, xy: np.ndarray, scores: np.ndarray, visible: np.ndarray,
               box_score: float, source=PoseSource.DETECTED) -> Pose:
    return Pose(
        frame_index=frame,
        xy=xy,
        scores=np.where(visible, scores, 0.0),
        visible=visible,
        box=box_from_visible_keypoints(xy, visible, 0.20),
        box_score=box_score,
        source=source,
    )


def generate(cfg: ScenarioConfig) -> tuple[list[FrameDetections], GroundTruth]:
    """Produce degraded detections plus pristine ground truth.

    Occlusion windows delete detections, score drops scale confidences,
    jitter perturbs coordinates, truncation hides joint subsets, and false
    positives inject low-to-mid-score poses (near-duplicates of a real person
    with probability ``fp_near_person_prob``, free-standing otherwise).
    """
    if cfg.persons * cfg.frames == 0:
        raise ValueError("persons x frames must be positive")
    rng = np.random.default_rng(cfg.seed)
    persons = [_PersonModel(rng, cfg, i) for i in range(cfg.persons)]
    n = cfg.joint_count

    detections: list[FrameDetections] = []
    gt_frames: dict[int, tuple[GtInstance, ...]] = {}
    for t in range(cfg.frames):
        instances = []
        det_poses = []
        for pid, person in enumerate(persons):
            if t > 0:
                person.step(rng, cfg)
            xy = person.pose_xy(t, cfg)
            visible = np.ones(n, dtype=bool)
            gt_pose = _make_pose(t, xy, np.ones(n), visible, 1.0)
            scale = float(np.linalg.norm(xy[HEAD_TOP] - xy[NECK]))
            instances.append(GtInstance(identity=pid, pose=gt_pose, scale=scale))

            if any(o.person == pid and o.start <= t < o.end for o in cfg.occlusions):
                continue
            det_xy = xy
            det_scores = np.ones(n)
            det_visible = visible.copy()
            det_box_score = 1.0
            for w in cfg.truncations:
                if w.person == pid and w.start <= t < w.end:
                    det_visible[list(w.joints)] = False
            if not det_visible.any():
                continue
            for w in cfg.score_drops:
                if w.person == pid and w.start <= t < w.end:
                    det_scores = det_scores * w.factor
                    det_box_score *= w.factor
            if cfg.jitter_sigma > 0:
                det_xy = det_xy + rng.normal(0.0, cfg.jitter_sigma, (n, 2))
            det_poses.append(
                _make_pose(t, det_xy, det_scores, det_visible, det_box_score)
            )

        if cfg.false_positive_rate > 0:
            for _ in range(int(rng.poisson(cfg.false_positive_rate))):
                score = rng.uniform(0.2, 0.6)
                if persons and rng.uniform() < cfg.fp_near_person_prob:
                    src = persons[int(rng.integers(len(persons)))]
                    xy = src.pose_xy(t, cfg) + rng.normal(
                        0.0, 0.02 * src.height, (n, 2)
                    )
                else:
                    ghost = _PersonModel(rng, cfg, 0)
                    xy = ghost.pose_xy(t, cfg)
                det_poses.append(
                    _make_pose(t, xy, np.full(n, score), np.ones(n, dtype=bool), score)
                )

        gt_frames[t] = tuple(instances)
        detections.append(
            FrameDetections(frame_index=t, poses=tuple(det_poses),
                            image_size=cfg.image_size)
        )
    return detections, GroundTruth(frames=gt_frames, joint_count=n)


# ---------------------------------------------------------------------------
# Preset scenario library: one named scenario per classic failure mode.

def preset(name: str, seed: int = 0) -> ScenarioConfig:
    base = ScenarioConfig(seed=seed, persons=2, frames=30, speed_range=(1.0, 2.5))
    if name == "perfect":
        return base
    if name == "ambiguous":
        return replace(base, paths="crossing", persons=2, speed_range=(2.0, 3.0))
    if name == "missing":
        return replace(
            base,
            occlusions=(OcclusionWindow(0, 10, 12), OcclusionWindow(1, 18, 20)),
        )
    if name == "truncation":
        return replace(
            base,
            truncations=(
                TruncationWindow(0, 8, 16, LEG_JOINTS),
                TruncationWindow(1, 14, 22, ARM_JOINTS),
            ),
        )
    if name == "occlusion":
        # one person vanishes for three consecutive frames mid-sequence
        return replace(base, occlusions=(OcclusionWindow(0, 12, 15),))
    raise ValueError(f"unknown preset {name!r}; have {PRESET_NAMES}")


PRESET_NAMES = ("perfect", "ambiguous", "missing", "truncation", "occlusion")


# ---------------------------------------------------------------------------
# Declarative scenario files (YAML key-value format).

def save_scenario(cfg: ScenarioConfig, path: str | Path) -> None:
    data = asdict(cfg)
    data["occlusions"] = [asdict(w) for w in cfg.occlusions]
    data["score_drops"] = [asdict(w) for w in cfg.score_drops]
    data["truncations"] = [
        {**asdict(w), "joints": list(w.joints)} for w in cfg.truncations
    ]
    data["image_size"] = list(cfg.image_size)
    data["speed_range"] = list(cfg.speed_range)
    data["person_height_range"] = list(cfg.person_height_range)
    Path(path).write_text(yaml.safe_dump(data, sort_keys=True))


def load_scenario(path: str | Path) -> ScenarioConfig:
    data = yaml.safe_load(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError(f"scenario file {path} must contain a mapping")
    kwargs = dict(data)
    for key in ("image_size", "speed_range", "person_height_range"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    kwargs["occlusions"] = tuple(
        OcclusionWindow(**w) for w in kwargs.get("occlusions", ())
    )
    kwargs["score_drops"] = tuple(
        ScoreDropWindow(**w) for w in kwargs.get("score_drops", ())
    )
    kwargs["truncations"] = tuple(
        TruncationWindow(**{**w, "joints": tuple(w.get("joints", LEG_JOINTS))})
        for w in kwargs.get("truncations", ())
    )
    return ScenarioConfig(**kwargs)


# ---------------------------------------------------------------------------
# Flat textured rasters for exercising the patch matcher.

def texture_image(rng: np.random.Generator, size: tuple[int, int] = (96, 128),
                  passes: int = 2) -> np.ndarray:
    """Band-limited random texture (values in [0, 255]) with enough local
    structure for windowed correlation to lock on."""
    h, w = size
    img = rng.uniform(0.0, 255.0, (h, w))
    for _ in range(passes):
        img = (
            img
            + np.roll(img, 1, 0) + np.roll(img, -1, 0)
            + np.roll(img, 1, 1) + np.roll(img, -1, 1)
        ) / 5.0
    return img


def shift_image(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Pure integer translation with wrap-around padding."""
    return np.roll(np.roll(img, dy, axis=0), dx, axis=1)

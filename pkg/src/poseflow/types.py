"""Core data model shared by every tracking stage.

All types are immutable value objects: numpy arrays are frozen with
``writeable = False`` after construction so instances can be shared freely
across threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Keypoint",
    "Pose",
    "PoseFlow",
    "PoseSource",
    "FrameDetections",
    "pose_score",
]


class PoseSource(enum.Enum):
    """Provenance of a pose: raw detection, motion-propagated, or NMS-merged."""

    DETECTED = "detected"
    PROPAGATED = "propagated"
    MERGED = "merged"


@dataclass(frozen=True)
class Keypoint:
    """A single 2D joint in pixel coordinates.

    An invisible keypoint (absent from the input) carries score exactly 0.
    """

    x: float
    y: float
    score: float
    visible: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ValueError("keypoint position must be finite")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"keypoint score {self.score} outside [0, 1]")
        if not self.visible and self.score != 0.0:
            raise ValueError("invisible keypoint must have score 0")


def _frozen_array(values, shape, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    if arr.shape != shape:
        raise ValueError(f"expected array of shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Pose:
    """One person's keypoint set in a single frame.

    Keypoints are stored as parallel arrays (positions ``xy`` of shape (N, 2),
    ``scores`` (N,), ``visible`` (N,)) so the hot kernels can consume them
    directly; :attr:`keypoints` materialises :class:`Keypoint` views on demand.
    The box is axis-aligned ``[x, y, w, h]`` in pixels.
    """

    frame_index: int
    xy: np.ndarray
    scores: np.ndarray
    visible: np.ndarray
    box: np.ndarray
    box_score: float
    source: PoseSource = PoseSource.DETECTED

    def __post_init__(self):
        n = len(self.scores)
        object.__setattr__(self, "xy", _frozen_array(self.xy, (n, 2)))
        object.__setattr__(self, "scores", _frozen_array(self.scores, (n,)))
        object.__setattr__(
            self, "visible", _frozen_array(self.visible, (n,), dtype=bool)
        )
        object.__setattr__(self, "box", _frozen_array(self.box, (4,)))
        if self.frame_index < 0:
            raise ValueError("frame_index must be >= 0")
        if not np.all(np.isfinite(self.xy)):
            raise ValueError("keypoint positions must be finite")
        if self.box[2] <= 0 or self.box[3] <= 0:
            raise ValueError("box must have strictly positive width and height")
        if not 0.0 <= self.box_score <= 1.0:
            raise ValueError(f"box_score {self.box_score} outside [0, 1]")
        if np.any(self.scores < 0) or np.any(self.scores > 1):
            raise ValueError("keypoint scores must lie in [0, 1]")
        if np.any(self.scores[~self.visible] != 0.0):
            raise ValueError("invisible keypoints must have score 0")
        if not np.any(self.visible):
            raise ValueError("pose must have at least one visible keypoint")

    @classmethod
    def from_keypoints(
        cls,
        frame_index: int,
        keypoints: Sequence[Keypoint],
        box,
        box_score: float,
        source: PoseSource = PoseSource.DETECTED,
    ) -> "Pose":
        xy = [(k.x, k.y) for k in keypoints]
        return cls(
            frame_index=frame_index,
            xy=np.asarray(xy, dtype=np.float64),
            scores=np.asarray([k.score for k in keypoints], dtype=np.float64),
            visible=np.asarray([k.visible for k in keypoints], dtype=bool),
            box=np.asarray(box, dtype=np.float64),
            box_score=box_score,
            source=source,
        )

    @property
    def keypoints(self) -> tuple[Keypoint, ...]:
        return tuple(
            Keypoint(float(x), float(y), float(s), bool(v))
            for (x, y), s, v in zip(self.xy, self.scores, self.visible)
        )

    @property
    def joint_count(self) -> int:
        return len(self.scores)

    def with_frame(self, frame_index: int, source: PoseSource | None = None) -> "Pose":
        return replace(
            self, frame_index=frame_index, source=source if source else self.source
        )


def pose_score(pose: Pose) -> float:
    """Confidence of a pose: box score + mean + max of visible keypoint scores.

    Mean and max range over visible keypoints only; absent joints would
    otherwise drag the mean toward zero. Raises ``ValueError`` when no
    keypoint is visible (malformed input, the Pose constructor rejects it
    too).
    """
    vis = pose.scores[pose.visible]
    if vis.size == 0:
        raise ValueError("pose has no visible keypoints")
    return float(pose.box_score + vis.mean() + vis.max())


@dataclass(frozen=True)
class PoseFlow:
    """An ordered cross-frame sequence of poses sharing one identity.

    Frame indices strictly increase. The builder emits gap-free flows; gaps
    may appear only after NMS merging. ``unified_score`` is the mean per-pose
    confidence fixed at confidence unification; ``cumulative_score`` is the
    final value of the running objective.
    """

    flow_id: int
    poses: tuple[Pose, ...]
    unified_score: float = 0.0
    cumulative_score: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        if not self.poses:
            raise ValueError("a pose flow must contain at least one pose")
        frames = [p.frame_index for p in self.poses]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError("pose frame indices must strictly increase")

    @property
    def start_frame(self) -> int:
        return self.poses[0].frame_index

    @property
    def end_frame(self) -> int:
        return self.poses[-1].frame_index

    @property
    def frame_span(self) -> range:
        return range(self.start_frame, self.end_frame + 1)

    def pose_at(self, frame_index: int) -> Pose | None:
        for p in self.poses:
            if p.frame_index == frame_index:
                return p
            if p.frame_index > frame_index:
                return None
        return None

    def overlap_frames(self, other: "PoseFlow") -> list[int]:
        mine = {p.frame_index for p in self.poses}
        return sorted(mine & {p.frame_index for p in other.poses})


@dataclass(frozen=True)
class FrameDetections:
    """All detected poses of one frame."""

    frame_index: int
    poses: tuple[Pose, ...] = field(default_factory=tuple)
    image_size: tuple[int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        for p in self.poses:
            if p.frame_index != self.frame_index:
                raise ValueError(
                    f"pose frame {p.frame_index} != container frame {self.frame_index}"
                )

    def __len__(self) -> int:
        return len(self.poses)


def joint_count_of(frames: Iterable[FrameDetections]) -> int | None:
    """Joint count N shared by all poses in a sequence, None if empty."""
    for frame in frames:
        for pose in frame.poses:
            return pose.joint_count
    return None

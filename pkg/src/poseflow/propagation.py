"""Motion-guided pose propagation.

Missing detections (motion blur, occlusion) fragment flows and inflate
identity switches. Before association, every pose of the two neighbouring
frames is displaced into the current frame along its estimated patch motion;
propagated poses that duplicate an existing detection are dropped, the rest
enter the frame with decayed scores so originals always win claiming ties.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .correspondence import CorrespondenceProvider
from .types import FrameDetections, Pose, PoseSource

__all__ = [
    "PropagationConfig",
    "propagate_frame",
    "displace_pose",
    "box_from_visible_keypoints",
    "box_iou",
]


@dataclass(frozen=True)
class PropagationConfig:
    enabled: bool = True
    score_decay: float = 0.8  # per propagated hop
    box_expand_ratio: float = 0.20
    dedup_iou: float = 0.7

    def __post_init__(self):
        if not 0 < self.score_decay <= 1:
            raise ValueError("score_decay must lie in (0, 1]")
        if not 0 < self.dedup_iou < 1:
            raise ValueError("dedup_iou must lie in (0, 1)")
        if self.box_expand_ratio < 0:
            raise ValueError("box_expand_ratio must be >= 0")


def box_from_visible_keypoints(
    pose_xy: np.ndarray, visible: np.ndarray, expand_ratio: float = 0.20
) -> np.ndarray:
    """Tight box around visible keypoints, expanded per side; [x, y, w, h].

    Degenerate extents are floored at one pixel so the box stays valid.
    """
    pts = pose_xy[visible]
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    w = max(x1 - x0, 1.0)
    h = max(y1 - y0, 1.0)
    return np.array(
        [x0 - expand_ratio * w, y0 - expand_ratio * h,
         w * (1 + 2 * expand_ratio), h * (1 + 2 * expand_ratio)]
    )


def box_iou(a: np.ndarray, b: np.ndarray) -> float:
    """IoU of two [x, y, w, h] boxes."""
    ix = min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0])
    iy = min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a[2] * a[3] + b[2] * b[3] - inter
    return float(inter / union) if union > 0 else 0.0


def displace_pose(
    pose: Pose,
    to_frame: int,
    provider: CorrespondenceProvider,
    score_decay: float = 0.8,
) -> Pose:
    """Copy of ``pose`` displaced into ``to_frame`` by the provider's motion
    estimate, with decayed scores and Propagated provenance."""
    d = np.asarray(provider.displacement(pose, to_frame), dtype=np.float64)
    box = pose.box.copy()
    box[0] += d[0]
    box[1] += d[1]
    return replace(
        pose,
        frame_index=to_frame,
        xy=pose.xy + d,
        scores=pose.scores * score_decay,
        box=box,
        box_score=pose.box_score * score_decay,
        source=PoseSource.PROPAGATED,
    )


def propagate_frame(
    prev_frame: FrameDetections | None,
    frame: FrameDetections,
    next_frame: FrameDetections | None,
    provider: CorrespondenceProvider,
    cfg: PropagationConfig,
) -> FrameDetections:
    """Augment ``frame`` with motion-propagated copies of its neighbours' poses.

    Propagated candidates whose keypoint-derived boxes overlap an existing
    detection (or an already accepted propagated pose) at IoU >= ``dedup_iou``
    are dropped. Original detections are never removed; missing neighbours at
    sequence boundaries simply shrink the candidate set.
    """
    if not cfg.enabled:
        return frame
    candidates: list[Pose] = []
    for neighbour in (prev_frame, next_frame):
        if neighbour is None:
            continue
        for pose in neighbour.poses:
            candidates.append(
                displace_pose(pose, frame.frame_index, provider, cfg.score_decay)
            )
    if not candidates:
        return frame

    kept_boxes = [
        box_from_visible_keypoints(p.xy, p.visible, cfg.box_expand_ratio)
        for p in frame.poses
    ]
    survivors: list[Pose] = []
    for cand in candidates:
        cand_box = box_from_visible_keypoints(cand.xy, cand.visible, cfg.box_expand_ratio)
        if any(box_iou(cand_box, kb) >= cfg.dedup_iou for kb in kept_boxes):
            continue
        survivors.append(cand)
        kept_boxes.append(cand_box)
    if not survivors:
        return frame
    return FrameDetections(
        frame_index=frame.frame_index,
        poses=frame.poses + tuple(survivors),
        image_size=frame.image_size,
    )

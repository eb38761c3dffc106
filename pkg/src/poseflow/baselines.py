"""Reference trackers used as ablation baselines."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .propagation import box_iou
from .types import FrameDetections, PoseFlow, pose_score

__all__ = ["iou_tracker"]


def iou_tracker(
    frames: Iterable[FrameDetections], iou_threshold: float = 0.3
) -> list[PoseFlow]:
    """Greedy box-IoU matching tracker.

    Consecutive frames are linked by matching detections to the previous
    frame's tracks in descending box IoU; matches below the threshold are
    rejected, leftovers start new tracks and unmatched tracks terminate
    immediately. This is the naive association scheme flow building is
    measured against.
    """
    active: list[list] = []  # [flow_id, poses]
    finished: list[PoseFlow] = []
    next_id = 0

    def close(track):
        poses = tuple(track[1])
        scores = [pose_score(p) for p in poses]
        finished.append(
            PoseFlow(
                flow_id=track[0],
                poses=poses,
                unified_score=float(np.mean(scores)),
                cumulative_score=float(np.sum(scores)),
            )
        )

    for frame in frames:
        pairs = []
        for ti, track in enumerate(active):
            last = track[1][-1]
            if last.frame_index != frame.frame_index - 1:
                continue
            for di, det in enumerate(frame.poses):
                iou = box_iou(last.box, det.box)
                if iou >= iou_threshold:
                    pairs.append((iou, ti, di))
        pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
        used_t: set[int] = set()
        used_d: set[int] = set()
        for iou, ti, di in pairs:
            if ti in used_t or di in used_d:
                continue
            used_t.add(ti)
            used_d.add(di)
            active[ti][1].append(frame.poses[di])

        still_active = []
        for ti, track in enumerate(active):
            if ti in used_t:
                still_active.append(track)
            else:
                close(track)
        active = still_active
        for di, det in enumerate(frame.poses):
            if di not in used_d:
                active.append([next_id, [det]])
                next_id += 1

    for track in active:
        close(track)
    finished.sort(key=lambda f: f.flow_id)
    return finished

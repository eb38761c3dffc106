"""Raster overlays of tracked skeletons, colored by flow identity."""

from __future__ import annotations

import colorsys
from pathlib import Path
from typing import Sequence

from PIL import Image, ImageDraw

from .correspondence import ImageDirectory
from .synth import JOINT_NAMES, SKELETON_EDGES
from .types import Pose, PoseFlow

__all__ = ["flow_color", "dump_overlays"]

_GOLDEN_RATIO = 0.61803398875


def flow_color(flow_id: int) -> tuple[int, int, int]:
    """Stable, well-separated RGB color for a flow id (golden-ratio hue walk)."""
    hue = (flow_id * _GOLDEN_RATIO) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.9, 1.0)
    return int(r * 255), int(g * 255), int(b * 255)


def _draw_pose(draw: ImageDraw.ImageDraw, pose: Pose, color, joint_count: int):
    if joint_count == len(SKELETON_EDGES) + 1:
        edges = SKELETON_EDGES
    else:
        edges = ()
    for a, b in edges:
        if a < joint_count and b < joint_count and pose.visible[a] and pose.visible[b]:
            draw.line(
                [tuple(pose.xy[a]), tuple(pose.xy[b])], fill=color, width=2
            )
    for (x, y), v in zip(pose.xy, pose.visible):
        if v:
            draw.ellipse([x - 2, y - 2, x + 2, y + 2], fill=color)


def dump_overlays(
    flows: Sequence[PoseFlow],
    image_dir: str | Path,
    out_dir: str | Path,
) -> int:
    """Write one annotated PNG per frame that has both an image and poses.

    Returns the number of overlays written. Raises FileNotFoundError when the
    image directory holds no frames at all.
    """
    images = ImageDirectory(image_dir)
    if len(images) == 0:
        raise FileNotFoundError(f"no frame images found under {image_dir}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    by_frame: dict[int, list[tuple[int, Pose]]] = {}
    for flow in flows:
        for pose in flow.poses:
            by_frame.setdefault(pose.frame_index, []).append((flow.flow_id, pose))

    written = 0
    for t in sorted(by_frame):
        arr = images.get(t)
        if arr is None:
            continue
        img = Image.fromarray(arr.astype("uint8"), mode="L").convert("RGB")
        draw = ImageDraw.Draw(img)
        for flow_id, pose in by_frame[t]:
            joint_count = pose.joint_count
            _draw_pose(draw, pose, flow_color(flow_id), joint_count)
        img.save(out / f"{t:06d}.png")
        written += 1
    return written

"""Detection, track and ground-truth file parsing and serialization.

All files are JSON with a top-level ``format_version``; the full schema is
documented in ``docs/schema.md``. Numbers round-trip at full precision.
Malformed input raises :class:`DataError` carrying the frame / record context;
the parsers never raise anything else, no matter the bytes fed to them.
Keypoint confidences outside [0, 1] are clamped on read and counted on the
returned object.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .metrics import GroundTruth, GtInstance
from .types import FrameDetections, Pose, PoseFlow, PoseSource

__all__ = [
    "DataError",
    "SequenceMeta",
    "DetectionSet",
    "read_detections",
    "write_detections",
    "read_tracks",
    "write_tracks",
    "read_ground_truth",
    "write_ground_truth",
    "FORMAT_VERSION",
]

FORMAT_VERSION = 1

_SOURCE_NAMES = {s.value: s for s in PoseSource}


class DataError(Exception):
    """Malformed input data; message carries file and record context."""


@dataclass(frozen=True)
class SequenceMeta:
    name: str = "sequence"
    joint_count: int = 15
    image_dir: str | None = None
    image_size: tuple[int, int] | None = None
    frame_count: int | None = None


@dataclass
class DetectionSet:
    """Parsed detection file: metadata, gap-filled frames, clamp statistics."""

    meta: SequenceMeta
    frames: list[FrameDetections]
    clamped_count: int = 0

    def __iter__(self):
        return iter(self.frames)


def _fail(ctx: str, msg: str):
    raise DataError(f"{ctx}: {msg}")


def _expect_dict(obj, ctx):
    if not isinstance(obj, dict):
        _fail(ctx, f"expected an object, got {type(obj).__name__}")
    return obj


def _expect_list(obj, ctx):
    if not isinstance(obj, list):
        _fail(ctx, f"expected an array, got {type(obj).__name__}")
    return obj


def _expect_int(obj, ctx, minimum=None):
    if isinstance(obj, bool) or not isinstance(obj, int):
        _fail(ctx, f"expected an integer, got {obj!r}")
    if minimum is not None and obj < minimum:
        _fail(ctx, f"value {obj} below minimum {minimum}")
    return obj


def _expect_number(obj, ctx):
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        _fail(ctx, f"expected a number, got {obj!r}")
    if not math.isfinite(obj):
        _fail(ctx, f"non-finite number {obj!r}")
    return float(obj)


def _load_json(path: str | Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot read file ({exc})") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8 ({exc})") from exc
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, RecursionError, ValueError) as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    doc = _expect_dict(doc, str(path))
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        _fail(str(path), f"unsupported format_version {version!r}")
    return doc


def _parse_meta(doc: dict, ctx: str) -> SequenceMeta:
    seq = _expect_dict(doc.get("sequence", {}), f"{ctx}: sequence")
    name = seq.get("name", "sequence")
    if not isinstance(name, str):
        _fail(ctx, "sequence.name must be a string")
    joints = _expect_int(seq.get("joint_count", 15), f"{ctx}: joint_count", 1)
    image_dir = seq.get("image_dir")
    if image_dir is not None and not isinstance(image_dir, str):
        _fail(ctx, "sequence.image_dir must be a string or null")
    image_size = seq.get("image_size")
    if image_size is not None:
        image_size = _expect_list(image_size, f"{ctx}: image_size")
        if len(image_size) != 2:
            _fail(ctx, "image_size must be [width, height]")
        image_size = (
            _expect_int(image_size[0], f"{ctx}: image width", 1),
            _expect_int(image_size[1], f"{ctx}: image height", 1),
        )
    frame_count = seq.get("frame_count")
    if frame_count is not None:
        frame_count = _expect_int(frame_count, f"{ctx}: frame_count", 0)
    return SequenceMeta(name, joints, image_dir, image_size, frame_count)


class _Clamp:
    def __init__(self):
        self.count = 0


def _parse_pose(
    rec, frame_index: int, joint_count: int, ctx: str, clamp: _Clamp,
    default_source=PoseSource.DETECTED,
) -> Pose:
    rec = _expect_dict(rec, ctx)
    box = _expect_list(rec.get("box"), f"{ctx}: box")
    if len(box) != 4:
        _fail(ctx, "box must be [x, y, w, h]")
    box = [_expect_number(v, f"{ctx}: box") for v in box]
    if box[2] <= 0 or box[3] <= 0:
        _fail(ctx, "box must have positive width and height")
    box_score = _expect_number(rec.get("box_score", 1.0), f"{ctx}: box_score")
    if not 0.0 <= box_score <= 1.0:
        box_score = min(max(box_score, 0.0), 1.0)
        clamp.count += 1

    kp = _expect_list(rec.get("keypoints"), f"{ctx}: keypoints")
    if len(kp) != 3 * joint_count:
        _fail(ctx, f"keypoints must hold {3 * joint_count} numbers, got {len(kp)}")
    kp = [_expect_number(v, f"{ctx}: keypoints") for v in kp]
    xy = np.asarray(kp, dtype=np.float64).reshape(joint_count, 3)[:, :2]
    scores = np.asarray(kp[2::3], dtype=np.float64)
    clipped = np.clip(scores, 0.0, 1.0)
    clamp.count += int(np.sum(clipped != scores))
    scores = clipped

    vis_field = rec.get("visibility")
    if vis_field is not None:
        vis_list = _expect_list(vis_field, f"{ctx}: visibility")
        if len(vis_list) != joint_count:
            _fail(ctx, f"visibility must hold {joint_count} flags")
        for v in vis_list:
            if v not in (0, 1, True, False):
                _fail(ctx, f"visibility flags must be 0/1, got {v!r}")
        visible = np.asarray(vis_list, dtype=bool)
        # explicit visibility is authoritative: zero out contradictory scores
        bad = (~visible) & (scores != 0)
        clamp.count += int(bad.sum())
        scores = np.where(visible, scores, 0.0)
    else:
        visible = scores > 0

    source = rec.get("source", default_source.value)
    if source not in _SOURCE_NAMES:
        _fail(ctx, f"unknown source flag {source!r}")
    try:
        return Pose(
            frame_index=frame_index,
            xy=xy,
            scores=scores,
            visible=visible,
            box=np.asarray(box),
            box_score=box_score,
            source=_SOURCE_NAMES[source],
        )
    except ValueError as exc:
        _fail(ctx, str(exc))


def _pose_record(pose: Pose, with_frame: bool = False, extra: dict | None = None) -> dict:
    kp = []
    for (x, y), s in zip(pose.xy, pose.scores):
        kp.extend((float(x), float(y), float(s)))
    rec = {
        "box": [float(v) for v in pose.box],
        "box_score": float(pose.box_score),
        "keypoints": kp,
        "visibility": [int(v) for v in pose.visible],
        "source": pose.source.value,
    }
    if with_frame:
        rec["frame_index"] = pose.frame_index
    if extra:
        rec.update(extra)
    return rec


# ---------------------------------------------------------------------------
# Detections

def read_detections(path: str | Path) -> DetectionSet:
    """Parse a detection file; frames come back gap-filled in ascending order."""
    doc = _load_json(path)
    ctx = str(path)
    meta = _parse_meta(doc, ctx)
    clamp = _Clamp()
    frames_in = _expect_list(doc.get("frames", []), f"{ctx}: frames")
    parsed: dict[int, FrameDetections] = {}
    last = None
    for i, frec in enumerate(frames_in):
        fctx = f"{ctx}: frames[{i}]"
        frec = _expect_dict(frec, fctx)
        t = _expect_int(frec.get("frame_index"), f"{fctx}: frame_index", 0)
        if last is not None and t <= last:
            _fail(fctx, f"non-monotone frame index {t} after {last}")
        last = t
        poses = []
        for j, prec in enumerate(_expect_list(frec.get("poses", []), f"{fctx}: poses")):
            poses.append(
                _parse_pose(prec, t, meta.joint_count, f"{fctx}: poses[{j}]", clamp)
            )
        parsed[t] = FrameDetections(
            frame_index=t, poses=tuple(poses), image_size=meta.image_size
        )
    if meta.frame_count is not None:
        span = range(meta.frame_count)
        for t in parsed:
            if t >= meta.frame_count:
                _fail(ctx, f"frame index {t} beyond declared frame_count")
    elif parsed:
        span = range(min(parsed), max(parsed) + 1)
    else:
        span = range(0)
    frames = [
        parsed.get(t, FrameDetections(frame_index=t, image_size=meta.image_size))
        for t in span
    ]
    return DetectionSet(meta=meta, frames=frames, clamped_count=clamp.count)


def write_detections(
    frames: Sequence[FrameDetections], path: str | Path, meta: SequenceMeta | None = None
) -> None:
    meta = meta or SequenceMeta(
        joint_count=next(
            (p.joint_count for f in frames for p in f.poses), 15
        ),
        frame_count=len(frames),
    )
    doc = {
        "format_version": FORMAT_VERSION,
        "sequence": _meta_record(meta),
        "frames": [
            {
                "frame_index": f.frame_index,
                "poses": [_pose_record(p) for p in f.poses],
            }
            for f in frames
        ],
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def _meta_record(meta: SequenceMeta) -> dict:
    return {
        "name": meta.name,
        "joint_count": meta.joint_count,
        "image_dir": meta.image_dir,
        "image_size": list(meta.image_size) if meta.image_size else None,
        "frame_count": meta.frame_count,
    }


# ---------------------------------------------------------------------------
# Tracks

def write_tracks(
    flows: Sequence[PoseFlow], path: str | Path, meta: SequenceMeta | None = None
) -> None:
    """Serialize tracking output losslessly (scores, provenance, ids)."""
    meta = meta or SequenceMeta(
        joint_count=next((p.joint_count for f in flows for p in f.poses), 15)
    )
    doc = {
        "format_version": FORMAT_VERSION,
        "sequence": _meta_record(meta),
        "flows": [
            {
                "flow_id": f.flow_id,
                "unified_score": float(f.unified_score),
                "cumulative_score": float(f.cumulative_score),
                "poses": [_pose_record(p, with_frame=True) for p in f.poses],
            }
            for f in flows
        ],
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def read_tracks(path: str | Path) -> tuple[SequenceMeta, list[PoseFlow]]:
    doc = _load_json(path)
    ctx = str(path)
    meta = _parse_meta(doc, ctx)
    clamp = _Clamp()
    flows = []
    seen_pairs: set[tuple[int, int]] = set()
    for i, frec in enumerate(_expect_list(doc.get("flows", []), f"{ctx}: flows")):
        fctx = f"{ctx}: flows[{i}]"
        frec = _expect_dict(frec, fctx)
        flow_id = _expect_int(frec.get("flow_id"), f"{fctx}: flow_id", 0)
        unified = _expect_number(frec.get("unified_score", 0.0), f"{fctx}: unified_score")
        cumulative = _expect_number(
            frec.get("cumulative_score", 0.0), f"{fctx}: cumulative_score"
        )
        poses = []
        for j, prec in enumerate(_expect_list(frec.get("poses"), f"{fctx}: poses")):
            pctx = f"{fctx}: poses[{j}]"
            prec = _expect_dict(prec, pctx)
            t = _expect_int(prec.get("frame_index"), f"{pctx}: frame_index", 0)
            if (t, flow_id) in seen_pairs:
                _fail(pctx, f"duplicate (frame {t}, flow {flow_id}) pair")
            seen_pairs.add((t, flow_id))
            poses.append(_parse_pose(prec, t, meta.joint_count, pctx, clamp))
        try:
            flows.append(
                PoseFlow(
                    flow_id=flow_id,
                    poses=tuple(poses),
                    unified_score=unified,
                    cumulative_score=cumulative,
                )
            )
        except ValueError as exc:
            _fail(fctx, str(exc))
    return meta, flows


# ---------------------------------------------------------------------------
# Ground truth

def write_ground_truth(
    gt: GroundTruth, path: str | Path, meta: SequenceMeta | None = None
) -> None:
    meta = meta or SequenceMeta(joint_count=gt.joint_count)
    by_identity: dict[int, list[GtInstance]] = {}
    for t in sorted(gt.frames):
        for inst in gt.frames[t]:
            by_identity.setdefault(inst.identity, []).append(inst)
    doc = {
        "format_version": FORMAT_VERSION,
        "sequence": _meta_record(meta),
        "annotations": [
            {
                "identity": identity,
                "poses": [
                    _pose_record(
                        inst.pose,
                        with_frame=True,
                        extra={"scale": inst.scale} if inst.scale is not None else None,
                    )
                    for inst in instances
                ],
            }
            for identity, instances in sorted(by_identity.items())
        ],
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def read_ground_truth(path: str | Path) -> GroundTruth:
    doc = _load_json(path)
    ctx = str(path)
    meta = _parse_meta(doc, ctx)
    clamp = _Clamp()
    frames: dict[int, list[GtInstance]] = {}
    for i, arec in enumerate(_expect_list(doc.get("annotations", []), f"{ctx}: annotations")):
        actx = f"{ctx}: annotations[{i}]"
        arec = _expect_dict(arec, actx)
        identity = _expect_int(arec.get("identity"), f"{actx}: identity", 0)
        for j, prec in enumerate(_expect_list(arec.get("poses"), f"{actx}: poses")):
            pctx = f"{actx}: poses[{j}]"
            prec = _expect_dict(prec, pctx)
            t = _expect_int(prec.get("frame_index"), f"{pctx}: frame_index", 0)
            scale = prec.get("scale")
            if scale is not None:
                scale = _expect_number(scale, f"{pctx}: scale")
                if scale <= 0:
                    _fail(pctx, "scale must be positive")
            pose = _parse_pose(prec, t, meta.joint_count, pctx, clamp)
            frames.setdefault(t, []).append(
                GtInstance(identity=identity, pose=pose, scale=scale)
            )
    try:
        return GroundTruth(
            frames={t: tuple(v) for t, v in frames.items()},
            joint_count=meta.joint_count,
        )
    except ValueError as exc:
        _fail(ctx, str(exc))

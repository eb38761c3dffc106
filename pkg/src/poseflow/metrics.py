"""CLEAR-MOT tracking metrics and per-joint average precision.

Bookkeeping is per joint by default: each joint index is treated as an object
class of its own, matched frame by frame under a PCK gate (0.5 x the
instance scale) with identity correspondences carried across frames. A
per-person mode is available for comparison. MOTP here is the mean matched
distance normalized by scale, so 0 is perfect.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .types import Pose, PoseFlow

__all__ = [
    "GtInstance",
    "GroundTruth",
    "MotReport",
    "match_keypoints",
    "evaluate",
    "average_precision",
    "calibrate_flow_distance_threshold",
]

PCK_THRESHOLD = 0.5


@dataclass(frozen=True)
class GtInstance:
    """One annotated person in one frame; scale is the PCK reference length
    (head-segment length when annotated, else 10% of the box diagonal)."""

    identity: int
    pose: Pose
    scale: float | None = None

    def effective_scale(self) -> float:
        if self.scale is not None:
            if self.scale <= 0:
                raise ValueError("scale must be positive")
            return self.scale
        w, h = float(self.pose.box[2]), float(self.pose.box[3])
        return 0.1 * math.hypot(w, h)


@dataclass(frozen=True)
class GroundTruth:
    """Ground-truth trajectories: per frame, identity-unique annotated poses."""

    frames: dict[int, tuple[GtInstance, ...]]
    joint_count: int

    def __post_init__(self):
        for t, instances in self.frames.items():
            ids = [inst.identity for inst in instances]
            if len(ids) != len(set(ids)):
                raise ValueError(f"duplicate ground-truth identities in frame {t}")

    def frame_range(self) -> range:
        if not self.frames:
            return range(0)
        return range(min(self.frames), max(self.frames) + 1)


@dataclass
class MotReport:
    mota: float
    motp: float
    prcn: float
    rcll: float
    ids: int
    fm: int
    mt: int
    ml: int
    tp: int = 0
    fp: int = 0
    fn: int = 0
    gt_count: int = 0
    per_joint: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "Rcll": self.rcll,
            "Prcn": self.prcn,
            "MT": self.mt,
            "ML": self.ml,
            "IDs": self.ids,
            "FM": self.fm,
            "MOTA": self.mota,
            "MOTP": self.motp,
            "TP": self.tp,
            "FP": self.fp,
            "FN": self.fn,
            "GT": self.gt_count,
            "per_joint_mota": {str(k): v for k, v in sorted(self.per_joint.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        head = f"{'Rcll':>7} {'Prcn':>7} {'MT':>5} {'ML':>5} {'IDs':>5} {'FM':>5} {'MOTA':>7} {'MOTP':>7}"
        row = (
            f"{self.rcll:7.3f} {self.prcn:7.3f} {self.mt:5d} {self.ml:5d} "
            f"{self.ids:5d} {self.fm:5d} {self.mota:7.3f} {self.motp:7.3f}"
        )
        return head + "\n" + row


def match_keypoints(pred: Pose, gt: Pose, scale: float) -> np.ndarray:
    """Per-joint PCK verdicts: matched when both joints are visible and the
    distance is at most 0.5 x scale."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    if pred.joint_count != gt.joint_count:
        raise ValueError("joint count mismatch")
    d = np.linalg.norm(pred.xy - gt.xy, axis=1)
    return (d <= PCK_THRESHOLD * scale) & pred.visible & gt.visible


def _flows_by_frame(flows: Sequence[PoseFlow]) -> dict[int, list[tuple[int, Pose]]]:
    frames: dict[int, list[tuple[int, Pose]]] = {}
    for flow in flows:
        for pose in flow.poses:
            frames.setdefault(pose.frame_index, []).append((flow.flow_id, pose))
    for t, entries in frames.items():
        ids = [fid for fid, _ in entries]
        if len(ids) != len(set(ids)):
            raise ValueError(
                f"overlapping prediction identities in frame {t}: upstream bug"
            )
    return frames


class _TrajectoryLedger:
    """Per ground-truth trajectory coverage and fragmentation bookkeeping."""

    def __init__(self):
        self.total = 0
        self.matched = 0
        self.ever_matched = False
        self.in_gap = False
        self.fragments = 0

    def observe(self, matched: bool):
        self.total += 1
        if matched:
            self.matched += 1
            if self.ever_matched and self.in_gap:
                self.fragments += 1
            self.ever_matched = True
            self.in_gap = False
        else:
            if self.ever_matched:
                self.in_gap = True


def _greedy_frame_match(
    entries: list[tuple[int, np.ndarray]],
    gts: list[tuple[int, np.ndarray, float]],
    prev: dict[int, int],
):
    """One frame of gated matching: carry over surviving correspondences, then
    greedily match the rest by ascending distance. Returns matches plus the
    leftover prediction and ground-truth ids."""
    matches: list[tuple[int, int, float]] = []  # (gt_id, pred_id, dist/scale)
    free_preds = dict(entries)
    free_gts = {gid: (xy, scale) for gid, xy, scale in gts}

    for gid, (gxy, scale) in list(free_gts.items()):
        pid = prev.get(gid)
        if pid is None or pid not in free_preds:
            continue
        d = float(np.linalg.norm(free_preds[pid] - gxy))
        if d <= PCK_THRESHOLD * scale:
            matches.append((gid, pid, d / scale))
            del free_preds[pid]
            del free_gts[gid]

    candidates = []
    for gid, (gxy, scale) in free_gts.items():
        for pid, pxy in free_preds.items():
            d = float(np.linalg.norm(pxy - gxy))
            if d <= PCK_THRESHOLD * scale:
                candidates.append((d, pid, gid, d / scale))
    candidates.sort(key=lambda c: (c[0], c[1], c[2]))
    for d, pid, gid, nd in candidates:
        if pid in free_preds and gid in free_gts:
            matches.append((gid, pid, nd))
            del free_preds[pid]
            del free_gts[gid]
    return matches, list(free_preds), list(free_gts)


def evaluate(
    predictions: Sequence[PoseFlow],
    gt: GroundTruth,
    mode: str = "joint",
) -> MotReport:
    """CLEAR-MOT metrics of predicted flows against ground truth.

    mode "joint" (default) books every joint index separately, matching the
    per-joint column convention; mode "person" matches whole poses by mean
    normalized joint distance and counts switches at person level.
    """
    if mode not in ("joint", "person"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    pred_frames = _flows_by_frame(predictions)
    all_frames = sorted(set(gt.frames) | set(pred_frames))

    tp = fp = fn = ids = 0
    motp_sum = 0.0
    ledgers: dict = {}
    per_joint_counts: dict[int, list] = {
        n: [0, 0, 0, 0, 0] for n in range(gt.joint_count)
    }  # gt, fn, fp, ids, tp

    if mode == "joint":
        correspondences: dict[int, dict[int, int]] = {n: {} for n in range(gt.joint_count)}
        for t in all_frames:
            gts_here = gt.frames.get(t, ())
            preds_here = pred_frames.get(t, [])
            for n in range(gt.joint_count):
                gt_joints = [
                    (inst.identity, inst.pose.xy[n], inst.effective_scale())
                    for inst in gts_here
                    if inst.pose.visible[n]
                ]
                pred_joints = [
                    (fid, pose.xy[n]) for fid, pose in preds_here if pose.visible[n]
                ]
                prev = correspondences[n]
                matches, free_preds, free_gts = _greedy_frame_match(
                    pred_joints, gt_joints, prev
                )
                stats = per_joint_counts[n]
                stats[0] += len(gt_joints)
                for gid, pid, nd in matches:
                    if gid in prev and prev[gid] != pid:
                        ids += 1
                        stats[3] += 1
                    prev[gid] = pid
                    tp += 1
                    stats[4] += 1
                    motp_sum += nd
                fp += len(free_preds)
                stats[2] += len(free_preds)
                fn += len(free_gts)
                stats[1] += len(free_gts)
                matched_gids = {gid for gid, _, _ in matches}
                for gid, _, _ in gt_joints:
                    key = (gid, n)
                    ledgers.setdefault(key, _TrajectoryLedger()).observe(
                        gid in matched_gids
                    )
    else:
        prev_person: dict[int, int] = {}
        for t in all_frames:
            gts_here = gt.frames.get(t, ())
            preds_here = pred_frames.get(t, [])
            matches, free_preds, free_gts = _person_frame_match(
                preds_here, gts_here, prev_person
            )
            for gid, pid, nd in matches:
                if gid in prev_person and prev_person[gid] != pid:
                    ids += 1
                prev_person[gid] = pid
                tp += 1
                motp_sum += nd
            fp += len(free_preds)
            fn += len(free_gts)
            matched_gids = {gid for gid, _, _ in matches}
            for inst in gts_here:
                ledgers.setdefault(inst.identity, _TrajectoryLedger()).observe(
                    inst.identity in matched_gids
                )

    gt_count = sum(
        int(inst.pose.visible.sum()) if mode == "joint" else 1
        for insts in gt.frames.values()
        for inst in insts
    )
    fm = sum(l.fragments for l in ledgers.values())
    mt = sum(1 for l in ledgers.values() if l.total and l.matched / l.total >= 0.8)
    ml = sum(1 for l in ledgers.values() if l.total and l.matched / l.total <= 0.2)
    mota = 1.0 - (fn + fp + ids) / gt_count if gt_count else 1.0
    motp = motp_sum / tp if tp else 0.0
    prcn = tp / (tp + fp) if tp + fp else 1.0
    rcll = tp / (tp + fn) if tp + fn else 1.0
    per_joint = {}
    for n, (g, f_n, f_p, sw, _tp) in per_joint_counts.items():
        per_joint[n] = 1.0 - (f_n + f_p + sw) / g if g else 1.0
    return MotReport(
        mota=mota, motp=motp, prcn=prcn, rcll=rcll, ids=ids, fm=fm, mt=mt, ml=ml,
        tp=tp, fp=fp, fn=fn, gt_count=gt_count,
        per_joint=per_joint if mode == "joint" else {},
    )


def _person_frame_match(
    preds_here: list[tuple[int, Pose]],
    gts_here: tuple[GtInstance, ...],
    prev: dict[int, int],
):
    """Person-level gated matching: cost is the mean normalized distance over
    joints visible in both; a pair is matchable when at least half of those
    joints pass the PCK gate."""

    def cost(pose: Pose, inst: GtInstance):
        scale = inst.effective_scale()
        both = pose.visible & inst.pose.visible
        if not both.any():
            return None
        d = np.linalg.norm(pose.xy[both] - inst.pose.xy[both], axis=1)
        if (d <= PCK_THRESHOLD * scale).mean() < 0.5:
            return None
        return float(d.mean() / scale)

    poses = dict(preds_here)
    gts = {inst.identity: inst for inst in gts_here}
    matches = []
    for gid, inst in list(gts.items()):
        pid = prev.get(gid)
        if pid is None or pid not in poses:
            continue
        c = cost(poses[pid], inst)
        if c is not None:
            matches.append((gid, pid, c))
            del poses[pid]
            del gts[gid]
    candidates = []
    for gid, inst in gts.items():
        for pid, pose in poses.items():
            c = cost(pose, inst)
            if c is not None:
                candidates.append((c, pid, gid))
    candidates.sort(key=lambda c: (c[0], c[1], c[2]))
    for c, pid, gid in candidates:
        if pid in poses and gid in gts:
            matches.append((gid, pid, c))
            del poses[pid]
            del gts[gid]
    return matches, list(poses), list(gts)


def average_precision(
    predictions: Sequence[PoseFlow], gt: GroundTruth
) -> tuple[dict[int, float], float]:
    """Score-ranked PCK-gated AP per joint and the joint mean.

    Detections are ranked by keypoint score; each can claim at most one
    ground-truth joint per frame (nearest gated one). AP integrates the
    interpolated precision envelope over recall. Joints absent from the
    ground truth are skipped in the mean.
    """
    pred_frames = _flows_by_frame(predictions)
    aps: dict[int, float] = {}
    for n in range(gt.joint_count):
        npos = sum(
            1 for insts in gt.frames.values() for inst in insts if inst.pose.visible[n]
        )
        entries = []  # (-score, frame, flow_id, xy)
        for t, preds in pred_frames.items():
            for fid, pose in preds:
                if pose.visible[n]:
                    entries.append((-float(pose.scores[n]), t, fid, pose.xy[n]))
        entries.sort(key=lambda e: (e[0], e[1], e[2]))
        if npos == 0:
            continue
        matched: set[tuple[int, int]] = set()
        tps = []
        for negscore, t, fid, xy in entries:
            best = None
            for inst in gt.frames.get(t, ()):
                if not inst.pose.visible[n] or (t, inst.identity) in matched:
                    continue
                d = float(np.linalg.norm(inst.pose.xy[n] - xy))
                if d <= PCK_THRESHOLD * inst.effective_scale():
                    if best is None or d < best[0]:
                        best = (d, inst.identity)
            if best is None:
                tps.append(0)
            else:
                matched.add((t, best[1]))
                tps.append(1)
        tps_arr = np.asarray(tps, dtype=np.float64)
        if tps_arr.size == 0:
            aps[n] = 0.0
            continue
        cum_tp = np.cumsum(tps_arr)
        recall = cum_tp / npos
        precision = cum_tp / np.arange(1, tps_arr.size + 1)
        # monotone precision envelope, integrated over recall steps
        env = np.maximum.accumulate(precision[::-1])[::-1]
        prev_r = 0.0
        ap = 0.0
        for r, p in zip(recall, env):
            ap += (r - prev_r) * p
            prev_r = r
        aps[n] = float(ap)
    mean_ap = float(np.mean(list(aps.values()))) if aps else 0.0
    return aps, mean_ap


def calibrate_flow_distance_threshold(
    seeds: Iterable[int] = range(8),
    jitter_sigma: float = 3.0,
    percentile: float = 95.0,
) -> float:
    """Re-derive the flow-NMS grouping cutoff from synthetic data.

    Builds pairs of independently jittered copies of the same ground-truth
    trajectory (the redundant-flow situation NMS must collapse) and returns
    the given percentile of their flow distances.
    """
    from dataclasses import replace as dc_replace

    from . import synth
    from .distance import DistanceParams
    from .flow_nms import flow_distance

    params = DistanceParams()
    distances = []
    for seed in seeds:
        cfg = synth.ScenarioConfig(seed=seed, persons=2, frames=20)
        _, truth = synth.generate(cfg)
        rng = np.random.default_rng(seed + 99991)

        def jittered_flow(identity: int, flow_id: int) -> PoseFlow | None:
            poses = []
            for t in sorted(truth.frames):
                for inst in truth.frames[t]:
                    if inst.identity == identity:
                        noise = rng.normal(0.0, jitter_sigma, inst.pose.xy.shape)
                        poses.append(dc_replace(inst.pose, xy=inst.pose.xy + noise))
            return PoseFlow(flow_id=flow_id, poses=tuple(poses), unified_score=1.0) if poses else None

        identities = sorted(
            {inst.identity for insts in truth.frames.values() for inst in insts}
        )
        for identity in identities:
            a = jittered_flow(identity, 2 * identity)
            b = jittered_flow(identity, 2 * identity + 1)
            if a is None or b is None:
                continue
            d = flow_distance(a, b, params, 2)
            if d is not None and math.isfinite(d):
                distances.append(d)
    if not distances:
        raise RuntimeError("calibration produced no finite distances")
    return float(np.percentile(distances, percentile))

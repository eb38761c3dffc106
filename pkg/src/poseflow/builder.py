"""Online pose-flow construction.

Flows are grown frame by frame: every pose of the incoming frame is claimed
by the best-scoring eligible flow (descending cumulative-score-plus-pose-score
priority, one pose per flow and one flow per pose), leftovers seed new flows.
A flow whose cumulative score stalls for a look-back window is closed, its
stagnant tail trimmed, and its confidence unified, at which point it is
emitted downstream. Everything is deterministic for a fixed input stream and
config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

import numpy as np

from .correspondence import CorrespondenceProvider
from .types import FrameDetections, Pose, PoseFlow, pose_score

__all__ = [
    "BuilderConfig",
    "DpState",
    "TraceStep",
    "candidate_set",
    "advance",
    "check_stop",
    "unify_confidence",
    "build_flows",
]


@dataclass(frozen=True)
class BuilderConfig:
    """Association knobs.

    ``epsilon`` gates candidates on the normalized cross-frame match fraction
    (rule "normalized": score/N >= epsilon). Rule "literal" treats the raw
    match score as a distance and keeps poses with score <= epsilon instead;
    it exists for comparison only.

    ``gamma = None`` selects the relative stop threshold: 0.3 x the running
    mean of the flow's per-extension score gains, clamped to [0.5, 2.0], which
    transfers across detector calibrations. Set a float for fixed-gamma mode.
    """

    epsilon: float = 1.0 / 25.0
    r: int = 3
    gamma: float | None = None
    gamma_fraction: float = 0.3
    gamma_clamp: tuple[float, float] = (0.5, 2.0)
    max_candidates: int = 8
    candidate_rule: str = "normalized"
    unify_keypoint_scores: bool = True

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if self.r < 1:
            raise ValueError("r must be >= 1")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.max_candidates < 1:
            raise ValueError("max_candidates must be >= 1")
        if self.candidate_rule not in ("normalized", "literal"):
            raise ValueError(f"unknown candidate_rule {self.candidate_rule!r}")


@dataclass
class _ActiveFlow:
    flow_id: int
    poses: list[Pose]
    cumulative: float
    cumulatives: list[float]  # running F after each pose
    gain_history: list[float]  # one entry per frame processed after seeding
    claim_gains: list[float]  # seed score + every extension gain

    @property
    def frontier(self) -> Pose:
        return self.poses[-1]

    def gamma(self, cfg: BuilderConfig) -> float:
        if cfg.gamma is not None:
            return cfg.gamma
        lo, hi = cfg.gamma_clamp
        mean_gain = sum(self.claim_gains) / len(self.claim_gains)
        return min(max(cfg.gamma_fraction * mean_gain, lo), hi)


@dataclass(frozen=True)
class TraceStep:
    """One extension event: F(t, T) = F(t, T-1) + s(Q_T)."""

    flow_id: int
    frame_index: int
    score_before: float
    pose_score: float
    score_after: float


@dataclass
class DpState:
    """Single-writer builder state for one sequence."""

    provider: CorrespondenceProvider
    cfg: BuilderConfig = field(default_factory=BuilderConfig)
    record_trace: bool = False
    frontier_frame: int | None = None
    next_flow_id: int = 0
    active: dict[int, _ActiveFlow] = field(default_factory=dict)
    closed_pending: list[PoseFlow] = field(default_factory=list)
    trace: list[TraceStep] = field(default_factory=list)

    def active_count(self) -> int:
        return len(self.active)

    def take_closed(self) -> list[PoseFlow]:
        out = self.closed_pending
        self.closed_pending = []
        return out


def _candidate_indices(
    pose: Pose,
    next_frame: FrameDetections,
    provider: CorrespondenceProvider,
    cfg: BuilderConfig,
) -> list[tuple[int, float]]:
    if next_frame.frame_index != pose.frame_index + 1:
        raise ValueError(
            f"candidate frame {next_frame.frame_index} does not follow "
            f"pose frame {pose.frame_index}"
        )
    scored = []
    for idx, q in enumerate(next_frame.poses):
        score = provider.field(pose, q).match_score()
        normalized = score / pose.joint_count
        if cfg.candidate_rule == "normalized":
            keep = normalized >= cfg.epsilon
        else:
            keep = score <= cfg.epsilon
        if keep:
            scored.append((idx, normalized))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[: cfg.max_candidates]


def candidate_set(
    pose: Pose,
    next_frame: FrameDetections,
    provider: CorrespondenceProvider,
    cfg: BuilderConfig,
) -> list[tuple[Pose, float]]:
    """Next-frame poses eligible to extend a flow ending at ``pose``.

    Returns (pose, normalized similarity) pairs in descending similarity,
    truncated to ``max_candidates``. Empty is a valid result (it feeds the
    stop criterion).
    """
    return [
        (next_frame.poses[i], sim)
        for i, sim in _candidate_indices(pose, next_frame, provider, cfg)
    ]


def _close_flow(state: DpState, flow: _ActiveFlow, trim_after: int | None) -> None:
    """Close a flow, trimming poses past ``trim_after`` (a frame index)."""
    poses = flow.poses
    cumulative = flow.cumulative
    if trim_after is not None:
        kept = [p for p in poses if p.frame_index <= trim_after]
        if len(kept) != len(poses):
            poses = kept
            cumulative = flow.cumulatives[len(kept) - 1]
    closed = PoseFlow(
        flow_id=flow.flow_id,
        poses=tuple(poses),
        cumulative_score=cumulative,
    )
    state.closed_pending.append(
        unify_confidence(closed, rewrite_keypoint_scores=state.cfg.unify_keypoint_scores)
    )
    del state.active[flow.flow_id]


def check_stop(state: DpState, flow_id: int, cfg: BuilderConfig | None = None) -> bool:
    """True when the flow gained less than gamma over the last r frames."""
    cfg = cfg or state.cfg
    flow = state.active[flow_id]
    if len(flow.gain_history) < cfg.r:
        return False
    window = flow.gain_history[-cfg.r :]
    return sum(window) < flow.gamma(cfg)


def advance(
    state: DpState,
    next_frame: FrameDetections,
    provider: CorrespondenceProvider | None = None,
    cfg: BuilderConfig | None = None,
) -> DpState:
    """Consume one frame: claim poses, seed leftovers, close stalled flows.

    Claiming is resolved globally per frame: all (flow, candidate pose) pairs
    are honoured in descending F + s(Q) order, each flow and each pose at most
    once; ties break toward the lower flow id, then the earlier pose in input
    order. Frames must arrive consecutively.
    """
    provider = provider or state.provider
    cfg = cfg or state.cfg
    t = next_frame.frame_index
    if state.frontier_frame is not None and t != state.frontier_frame + 1:
        raise ValueError(
            f"frame {t} does not follow frontier {state.frontier_frame}; "
            "feed consecutive frames"
        )
    scores = [pose_score(q) for q in next_frame.poses]
    pre_existing = list(state.active.values())

    # (priority, flow_id, pose input order) for every candidate pair.
    pairs: list[tuple[float, int, int]] = []
    for flow in pre_existing:
        if flow.frontier.frame_index != t - 1:
            continue  # stale frontier: a flow never skips a frame
        for i, _sim in _candidate_indices(flow.frontier, next_frame, provider, cfg):
            pairs.append((flow.cumulative + scores[i], flow.flow_id, i))
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))

    claimed_flows: set[int] = set()
    claimed_poses: set[int] = set()
    for priority, flow_id, i in pairs:
        if flow_id in claimed_flows or i in claimed_poses:
            continue
        claimed_flows.add(flow_id)
        claimed_poses.add(i)
        flow = state.active[flow_id]
        gain = scores[i]
        before = flow.cumulative
        flow.poses.append(next_frame.poses[i])
        flow.cumulative = before + gain
        flow.cumulatives.append(flow.cumulative)
        flow.gain_history.append(gain)
        flow.claim_gains.append(gain)
        if state.record_trace:
            state.trace.append(TraceStep(flow_id, t, before, gain, flow.cumulative))

    for flow in pre_existing:
        if flow.flow_id not in claimed_flows:
            flow.gain_history.append(0.0)

    # Stop checks cover only flows that saw this frame, in id order.
    for flow in pre_existing:
        if check_stop(state, flow.flow_id, cfg):
            _close_flow(state, flow, trim_after=t - cfg.r)

    for i, q in enumerate(next_frame.poses):
        if i in claimed_poses:
            continue
        fid = state.next_flow_id
        state.next_flow_id += 1
        state.active[fid] = _ActiveFlow(
            flow_id=fid,
            poses=[q],
            cumulative=scores[i],
            cumulatives=[scores[i]],
            gain_history=[],
            claim_gains=[scores[i]],
        )
        if state.record_trace:
            state.trace.append(TraceStep(fid, t, 0.0, scores[i], scores[i]))

    state.frontier_frame = t
    return state


def finish(state: DpState) -> None:
    """Close every remaining flow at end of stream (no trimming)."""
    for flow_id in sorted(state.active):
        _close_flow(state, state.active[flow_id], trim_after=None)


def unify_confidence(flow: PoseFlow, rewrite_keypoint_scores: bool = True) -> PoseFlow:
    """Fix the flow-level confidence and optionally temporal-average keypoint scores.

    The unified score is the mean per-pose confidence at close time. With
    ``rewrite_keypoint_scores`` every keypoint score is replaced by the mean
    of that keypoint's scores across the flow's poses, visible occurrences
    only, so the flow acts as one scored unit.
    """
    per_pose = [pose_score(p) for p in flow.poses]
    unified = float(np.mean(per_pose))
    poses = flow.poses
    if rewrite_keypoint_scores and len(poses) > 1:
        vis = np.stack([p.visible for p in poses])
        sc = np.stack([p.scores for p in poses])
        counts = vis.sum(axis=0)
        sums = (sc * vis).sum(axis=0)
        joint_means = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
        new_poses = []
        for p in poses:
            new_scores = np.where(p.visible, joint_means, 0.0)
            new_poses.append(replace(p, scores=new_scores))
        poses = tuple(new_poses)
    return PoseFlow(
        flow_id=flow.flow_id,
        poses=tuple(poses),
        unified_score=unified,
        cumulative_score=flow.cumulative_score,
    )


def build_flows(
    frames: Iterable[FrameDetections],
    provider: CorrespondenceProvider,
    cfg: BuilderConfig | None = None,
    record_trace: bool = False,
    state_out: list | None = None,
) -> Iterator[PoseFlow]:
    """Stream frames through the builder, yielding flows as they close.

    Flows are emitted after confidence unification, in closure order. Memory
    stays bounded by the active flows plus the r-frame stop look-back. Pass a
    list as ``state_out`` to receive the DpState (for trace inspection).
    """
    state = DpState(provider=provider, cfg=cfg or BuilderConfig(), record_trace=record_trace)
    if state_out is not None:
        state_out.append(state)
    last = None
    for frame in frames:
        if last is not None and frame.frame_index <= last:
            raise ValueError(
                f"frames out of order: {frame.frame_index} after {last}"
            )
        if last is not None and frame.frame_index != last + 1:
            raise ValueError(
                f"frame gap: {last} -> {frame.frame_index}; fill missing frames "
                "with empty detections"
            )
        advance(state, frame)
        last = frame.frame_index
        yield from state.take_closed()
    finish(state)
    yield from state.take_closed()

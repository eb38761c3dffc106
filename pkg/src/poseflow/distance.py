"""Pose-to-pose distances.

Two notions live here: the intra-frame distance combining score soft-matching
with a spatial Gaussian kernel (used by flow NMS), and the inter-frame
similarity built from patch correspondence counts (used by the builder's
candidate sets). The inter-frame value is a similarity: larger means more
alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .types import Pose

__all__ = [
    "DistanceParams",
    "CorrespondenceField",
    "INFINITE_DISTANCE",
    "soft_match",
    "spatial_sim",
    "intra_frame_distance",
    "inter_frame_distance",
    "keypoint_box_halves",
]

# Sentinel for degenerate similarity (division by zero in the combined
# distance). float inf orders consistently above every finite distance.
INFINITE_DISTANCE = math.inf


@dataclass(frozen=True)
class DistanceParams:
    """Parameter bundle for the combined intra-frame distance.

    ``sigma2 = None`` selects the scale-adaptive default, the squared 10% box
    diagonal of the first pose, which keeps the spatial kernel invariant to
    person size. ``keypoint_box_ratio`` fixes keypoint-box side at that
    fraction of the person box (the PCK convention).
    """

    sigma1: float = 0.3
    sigma2: float | None = None
    lam: float = 1.0
    keypoint_box_ratio: float = 0.10

    def __post_init__(self):
        if self.sigma1 <= 0:
            raise ValueError("sigma1 must be strictly positive")
        if self.sigma2 is not None and self.sigma2 <= 0:
            raise ValueError("sigma2 must be strictly positive")
        if not math.isfinite(self.lam) or self.lam < 0:
            raise ValueError("lam must be finite and nonnegative")
        if not 0 < self.keypoint_box_ratio <= 1:
            raise ValueError("keypoint_box_ratio must lie in (0, 1]")

    def effective_sigma2(self, reference: Pose) -> float:
        if self.sigma2 is not None:
            return self.sigma2
        diag = math.hypot(float(reference.box[2]), float(reference.box[3]))
        return (0.1 * diag) ** 2


@dataclass(frozen=True)
class CorrespondenceField:
    """Per-keypoint patch match counts between two adjacent-frame poses.

    ``source_counts[n]`` is the number of match points sampled in the source
    keypoint patch, ``matched_counts[n]`` how many found a counterpart;
    0 <= matched <= source always.
    """

    source_counts: np.ndarray
    matched_counts: np.ndarray

    def __post_init__(self):
        f1 = np.asarray(self.source_counts, dtype=np.int64)
        f2 = np.asarray(self.matched_counts, dtype=np.int64)
        if f1.shape != f2.shape or f1.ndim != 1:
            raise ValueError("count arrays must be 1-D and of equal length")
        if np.any(f1 < 0) or np.any(f2 < 0) or np.any(f2 > f1):
            raise ValueError("counts must satisfy 0 <= matched <= source")
        f1.setflags(write=False)
        f2.setflags(write=False)
        object.__setattr__(self, "source_counts", f1)
        object.__setattr__(self, "matched_counts", f2)

    def match_score(self) -> float:
        """Sum of per-keypoint match fractions; terms with no source points are 0."""
        f1 = self.source_counts
        f2 = self.matched_counts
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(f1 > 0, f2 / np.where(f1 > 0, f1, 1), 0.0)
        return float(ratios.sum())


def keypoint_box_halves(pose: Pose, ratio: float) -> tuple[float, float]:
    """Half-extents of the keypoint box: ratio x person-box dimensions."""
    return 0.5 * ratio * float(pose.box[2]), 0.5 * ratio * float(pose.box[3])


def _check_pair(p1: Pose, p2: Pose) -> None:
    if p1.joint_count != p2.joint_count:
        raise ValueError(
            f"keypoint count mismatch: {p1.joint_count} vs {p2.joint_count}"
        )


def soft_match(p1: Pose, p2: Pose, params: DistanceParams) -> float:
    """Score soft-matching K_Sim: tanh-damped score products of keypoint pairs
    where p2's joint falls inside the keypoint box around p1's joint."""
    _check_pair(p1, p2)
    hw, hh = keypoint_box_halves(p1, params.keypoint_box_ratio)
    ksim, _ = kernels.pair_similarity(
        p1.xy, p1.scores, p1.visible, hw, hh,
        p2.xy, p2.scores, p2.visible,
        params.sigma1, params.effective_sigma2(p1),
    )
    return ksim


def spatial_sim(p1: Pose, p2: Pose, params: DistanceParams) -> float:
    """Spatial kernel H_Sim: sum of exp(-||d||^2 / sigma2) over joints visible
    in both poses."""
    _check_pair(p1, p2)
    hw, hh = keypoint_box_halves(p1, params.keypoint_box_ratio)
    _, hsim = kernels.pair_similarity(
        p1.xy, p1.scores, p1.visible, hw, hh,
        p2.xy, p2.scores, p2.visible,
        params.sigma1, params.effective_sigma2(p1),
    )
    return hsim


def intra_frame_distance(p1: Pose, p2: Pose, params: DistanceParams) -> float:
    """Combined distance K_Sim^-1 + lam * H_Sim^-1 for two same-frame poses.

    Degenerate similarity (either term zero) yields INFINITE_DISTANCE rather
    than an error so ordering comparisons stay total. Not symmetric: the box
    test is anchored on p1.
    """
    _check_pair(p1, p2)
    hw, hh = keypoint_box_halves(p1, params.keypoint_box_ratio)
    ksim, hsim = kernels.pair_similarity(
        p1.xy, p1.scores, p1.visible, hw, hh,
        p2.xy, p2.scores, p2.visible,
        params.sigma1, params.effective_sigma2(p1),
    )
    if ksim <= 0.0 or hsim <= 0.0:
        return INFINITE_DISTANCE
    return 1.0 / ksim + params.lam / hsim


def inter_frame_distance(p1: Pose, p2: Pose, field: CorrespondenceField) -> float:
    """Cross-frame matching score for p2 one frame after p1 (a similarity).

    Sums the per-keypoint match fractions of ``field``; range [0, N].
    """
    if p2.frame_index != p1.frame_index + 1:
        raise ValueError(
            f"poses must be in adjacent frames, got {p1.frame_index} -> {p2.frame_index}"
        )
    return field.match_score()

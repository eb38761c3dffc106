"""Pluggable cross-frame correspondence providers.

The builder and the propagation stage only ever see the provider interface:
per-keypoint match counts for a pose pair in adjacent frames, plus a motion
estimate for displacing a pose into a neighbouring frame. Two built-ins ship:

* :class:`PatchMatcher` - samples a grid of points per keypoint patch and
  matches each by windowed normalized cross-correlation into the next frame.
  Needs image access.
* :class:`GeometricFallback` - image-free: a keypoint "matches" when its
  keypoint boxes in the two frames overlap. Selected automatically when no
  image directory is configured.

Any object with the same two methods (a learned matcher, precomputed flow)
can be plugged in instead.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from . import kernels
from .distance import CorrespondenceField, keypoint_box_halves
from .types import Pose

log = logging.getLogger(__name__)

__all__ = [
    "CorrespondenceProvider",
    "CorrespondenceConfig",
    "GeometricFallback",
    "PatchMatcher",
    "ImageDirectory",
    "ArrayImageStore",
    "MissingImagesError",
    "build_provider",
]

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".pgm", ".tif", ".tiff")


class MissingImagesError(RuntimeError):
    """Raised when the patch matcher cannot read frame images."""


@runtime_checkable
class CorrespondenceProvider(Protocol):
    def field(self, p1: Pose, p2: Pose) -> CorrespondenceField:
        """Match counts for p2 exactly one frame after p1."""
        ...

    def displacement(self, pose: Pose, to_frame: int) -> np.ndarray:
        """Estimated (dx, dy) motion of the pose between its frame and ``to_frame``."""
        ...


@dataclass(frozen=True)
class CorrespondenceConfig:
    """Provider selection and matcher knobs.

    mode "auto" picks the patch matcher when an image directory is available
    and falls back to the geometric provider otherwise.
    """

    mode: str = "auto"  # auto | geometric | patch
    iou_threshold: float = 0.1
    grid_points: int = 5
    window_half: int = 3  # 7x7 px correlation window
    search_factor: float = 2.0  # search radius = factor x patch side
    ncc_threshold: float = 0.7

    def __post_init__(self):
        if self.mode not in ("auto", "geometric", "patch"):
            raise ValueError(f"unknown correspondence mode {self.mode!r}")
        if not 0 < self.iou_threshold < 1:
            raise ValueError("iou_threshold must lie in (0, 1)")
        if self.grid_points < 1 or self.window_half < 1:
            raise ValueError("grid_points and window_half must be >= 1")
        if self.search_factor <= 0 or not -1 <= self.ncc_threshold <= 1:
            raise ValueError("bad search_factor / ncc_threshold")


class GeometricFallback:
    """Image-free correspondence: keypoint-box IoU decides a match.

    Every visible source keypoint contributes one sample point; it counts as
    matched when the keypoint boxes around the two joints overlap with IoU at
    or above the threshold. Motion cannot be estimated without pixels, so the
    displacement estimate is zero.
    """

    def __init__(self, iou_threshold: float = 0.1, keypoint_box_ratio: float = 0.10):
        self.iou_threshold = iou_threshold
        self.keypoint_box_ratio = keypoint_box_ratio

    def field(self, p1: Pose, p2: Pose) -> CorrespondenceField:
        hw1, hh1 = keypoint_box_halves(p1, self.keypoint_box_ratio)
        hw2, hh2 = keypoint_box_halves(p2, self.keypoint_box_ratio)
        f1, f2 = kernels.geometric_counts(
            p1.xy, p1.visible, hw1, hh1, p2.xy, p2.visible, hw2, hh2,
            self.iou_threshold,
        )
        return CorrespondenceField(f1, f2)

    def displacement(self, pose: Pose, to_frame: int) -> np.ndarray:
        return np.zeros(2)


class ArrayImageStore:
    """In-memory frame store: mapping of frame index to 2-D grayscale array."""

    def __init__(self, frames: dict[int, np.ndarray]):
        self._frames = {int(k): np.asarray(v, dtype=np.float64) for k, v in frames.items()}

    def get(self, frame_index: int) -> np.ndarray | None:
        return self._frames.get(frame_index)


class ImageDirectory:
    """Frame images on disk, named by zero-padded frame index.

    Any common raster format is accepted; the stem must parse as an integer.
    A small cache keeps the most recently used frames decoded.
    """

    def __init__(self, path: str | Path, cache_size: int = 8):
        self.path = Path(path)
        self._index: dict[int, Path] = {}
        self._cache: dict[int, np.ndarray] = {}
        self._cache_size = cache_size
        if self.path.is_dir():
            for f in sorted(self.path.iterdir()):
                if f.suffix.lower() in IMAGE_SUFFIXES:
                    try:
                        self._index[int(f.stem)] = f
                    except ValueError:
                        continue

    def __len__(self) -> int:
        return len(self._index)

    def get(self, frame_index: int) -> np.ndarray | None:
        if frame_index in self._cache:
            return self._cache[frame_index]
        path = self._index.get(frame_index)
        if path is None:
            return None
        from PIL import Image

        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"), dtype=np.float64)
        if len(self._cache) >= self._cache_size:
            self._cache.pop(next(iter(self._cache)))
        self._cache[frame_index] = arr
        return arr


class PatchMatcher:
    """NCC block matching of keypoint patches between adjacent frames.

    For each visible source keypoint a ``grid_points x grid_points`` lattice
    of sample points is laid over its keypoint patch. Each point's correlation
    window is matched into a search region of the next frame; a sample counts
    as matched when the best correlation clears the threshold and, for pair
    fields, the matched location falls inside the target pose's keypoint
    patch.
    """

    def __init__(
        self,
        images,
        cfg: CorrespondenceConfig | None = None,
        keypoint_box_ratio: float = 0.10,
    ):
        self.images = images
        self.cfg = cfg or CorrespondenceConfig()
        self.keypoint_box_ratio = keypoint_box_ratio

    def _image(self, frame_index: int) -> np.ndarray:
        img = self.images.get(frame_index)
        if img is None:
            raise MissingImagesError(
                f"no image for frame {frame_index}; configure an image directory "
                "or select the geometric fallback provider"
            )
        return img

    def _grid(self, center: np.ndarray, hw: float, hh: float) -> np.ndarray:
        g = self.cfg.grid_points
        if g == 1:
            off = np.zeros((1, 2))
        else:
            ox = np.linspace(-hw, hw, g)
            oy = np.linspace(-hh, hh, g)
            off = np.stack(np.meshgrid(ox, oy), axis=-1).reshape(-1, 2)
        return np.rint(center + off).astype(np.int64)

    def _matches(self, pose: Pose, img1: np.ndarray, img2: np.ndarray):
        """Yields (joint, sample point, matched point or None) per grid sample."""
        hw, hh = keypoint_box_halves(pose, self.keypoint_box_ratio)
        side = max(2.0 * hw, 2.0 * hh)
        radius = int(math.ceil(self.cfg.search_factor * side))
        half = self.cfg.window_half
        for n in range(pose.joint_count):
            if not pose.visible[n]:
                continue
            for px, py in self._grid(pose.xy[n], hw, hh):
                corr, by, bx = kernels.ncc_best_match(
                    img1, img2, int(py), int(px), half,
                    int(py) - radius, int(py) + radius + 1,
                    int(px) - radius, int(px) + radius + 1,
                )
                if corr <= -2.0:
                    continue  # window off-image: not a usable sample
                if corr >= self.cfg.ncc_threshold:
                    yield n, (px, py), (bx, by)
                else:
                    yield n, (px, py), None

    def field(self, p1: Pose, p2: Pose) -> CorrespondenceField:
        img1 = self._image(p1.frame_index)
        img2 = self._image(p2.frame_index)
        hw2, hh2 = keypoint_box_halves(p2, self.keypoint_box_ratio)
        f1 = np.zeros(p1.joint_count, dtype=np.int64)
        f2 = np.zeros(p1.joint_count, dtype=np.int64)
        for n, _, matched in self._matches(p1, img1, img2):
            f1[n] += 1
            if matched is None or not p2.visible[n]:
                continue
            bx, by = matched
            if (
                abs(bx - p2.xy[n, 0]) <= hw2
                and abs(by - p2.xy[n, 1]) <= hh2
            ):
                f2[n] += 1
        return CorrespondenceField(f1, f2)

    def displacement(self, pose: Pose, to_frame: int) -> np.ndarray:
        img1 = self._image(pose.frame_index)
        img2 = self._image(to_frame)
        moves = [
            (bx - px, by - py)
            for _, (px, py), matched in self._matches(pose, img1, img2)
            if matched is not None
            for bx, by in [matched]
        ]
        if not moves:
            return np.zeros(2)
        return np.median(np.asarray(moves, dtype=np.float64), axis=0)


def build_provider(
    cfg: CorrespondenceConfig,
    image_dir: str | Path | None,
    keypoint_box_ratio: float = 0.10,
) -> CorrespondenceProvider:
    """Select a provider per config, falling back to geometric without images."""
    images = ImageDirectory(image_dir) if image_dir else None
    have_images = images is not None and len(images) > 0
    if cfg.mode == "patch" or (cfg.mode == "auto" and have_images):
        if not have_images:
            raise MissingImagesError(
                "patch matcher requested but no frame images found; pass an image "
                "directory or use the geometric provider"
            )
        return PatchMatcher(images, cfg, keypoint_box_ratio)
    if cfg.mode == "auto":
        log.info("no frame images available; using geometric fallback provider")
    return GeometricFallback(cfg.iou_threshold, keypoint_box_ratio)

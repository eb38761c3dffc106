"""Pure-numpy reference implementations of the hot kernels.

Selected when numba is unavailable or ``POSEFLOW_NUMBA=0``. Semantics match
:mod:`poseflow._kernels_numba` exactly (same tie-breaking, same gating); only
the execution strategy differs.
"""

from __future__ import annotations

import numpy as np


def pair_similarity(xy1, sc1, vis1, half_w, half_h, xy2, sc2, vis2, sigma1, sigma2):
    """Soft-matching and spatial-kernel similarity of two same-length poses.

    Returns ``(ksim, hsim)``. A keypoint pair contributes to ksim only when
    both joints are visible and joint 2 falls inside the box of half-extents
    ``(half_w, half_h)`` centred on joint 1; it contributes to hsim whenever
    both joints are visible.
    """
    both = vis1 & vis2
    d = xy2 - xy1
    inside = both & (np.abs(d[:, 0]) <= half_w) & (np.abs(d[:, 1]) <= half_h)
    t1 = np.tanh(sc1 / sigma1)
    t2 = np.tanh(sc2 / sigma1)
    ksim = float(np.sum(t1[inside] * t2[inside]))
    sq = d[:, 0] ** 2 + d[:, 1] ** 2
    hsim = float(np.sum(np.exp(-sq[both] / sigma2)))
    return ksim, hsim


def geometric_counts(xy1, vis1, hw1, hh1, xy2, vis2, hw2, hh2, iou_thr):
    """Keypoint-box overlap correspondence counts for the image-free fallback.

    f1[n] = 1 for every visible source joint; f2[n] = 1 when both joints are
    visible and their keypoint boxes overlap with IoU >= ``iou_thr``.
    """
    n = xy1.shape[0]
    f1 = vis1.astype(np.int64)
    f2 = np.zeros(n, dtype=np.int64)
    both = vis1 & vis2
    if np.any(both):
        ix = np.minimum(xy1[:, 0] + hw1, xy2[:, 0] + hw2) - np.maximum(
            xy1[:, 0] - hw1, xy2[:, 0] - hw2
        )
        iy = np.minimum(xy1[:, 1] + hh1, xy2[:, 1] + hh2) - np.maximum(
            xy1[:, 1] - hh1, xy2[:, 1] - hh2
        )
        inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
        union = (2 * hw1) * (2 * hh1) + (2 * hw2) * (2 * hh2) - inter
        iou = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
        f2[both & (iou >= iou_thr)] = 1
    return f1, f2


def ncc_best_match(img1, img2, py, px, half, sy0, sy1, sx0, sx1):
    """Best normalized cross-correlation match of one window into a region.

    The window of side ``2*half+1`` centred at ``(py, px)`` in ``img1`` is
    compared against every center ``(cy, cx)`` with ``sy0 <= cy < sy1`` and
    ``sx0 <= cx < sx1`` in ``img2``. Returns ``(best_corr, best_cy, best_cx)``;
    ties resolve to the first candidate in row-major scan order. Returns
    ``(-2.0, -1, -1)`` when no candidate window fits inside ``img2`` or the
    source window is degenerate.
    """
    h1, w1 = img1.shape
    h2, w2 = img2.shape
    if py - half < 0 or py + half >= h1 or px - half < 0 or px + half >= w1:
        return -2.0, -1, -1
    tmpl = img1[py - half : py + half + 1, px - half : px + half + 1].astype(
        np.float64
    )
    tmpl = tmpl - tmpl.mean()
    tnorm = np.sqrt(np.sum(tmpl * tmpl))
    if tnorm <= 0.0:
        return -2.0, -1, -1

    best = -2.0
    best_cy = -1
    best_cx = -1
    cy0 = max(sy0, half)
    cy1 = min(sy1, h2 - half)
    cx0 = max(sx0, half)
    cx1 = min(sx1, w2 - half)
    for cy in range(cy0, cy1):
        for cx in range(cx0, cx1):
            win = img2[cy - half : cy + half + 1, cx - half : cx + half + 1].astype(
                np.float64
            )
            win = win - win.mean()
            wnorm = np.sqrt(np.sum(win * win))
            if wnorm <= 0.0:
                continue
            corr = float(np.sum(tmpl * win) / (tnorm * wnorm))
            if corr > best:
                best = corr
                best_cy = cy
                best_cx = cx
    return best, best_cy, best_cx


def pck_distance_matrix(xy_pred, vis_pred, xy_gt, vis_gt):
    """Pairwise joint distances, inf where either joint is invisible.

    Shapes: predictions (P, 2), ground truth (G, 2) for one joint index;
    result (P, G).
    """
    d = np.linalg.norm(xy_pred[:, None, :] - xy_gt[None, :, :], axis=2)
    mask = vis_pred[:, None] & vis_gt[None, :]
    return np.where(mask, d, np.inf)

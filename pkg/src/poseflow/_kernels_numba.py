"""Numba-compiled hot kernels. Loop bodies mirror the numpy backend."""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def pair_similarity(xy1, sc1, vis1, half_w, half_h, xy2, sc2, vis2, sigma1, sigma2):
    n = xy1.shape[0]
    ksim = 0.0
    hsim = 0.0
    for i in range(n):
        if not (vis1[i] and vis2[i]):
            continue
        dx = xy2[i, 0] - xy1[i, 0]
        dy = xy2[i, 1] - xy1[i, 1]
        if abs(dx) <= half_w and abs(dy) <= half_h:
            ksim += math.tanh(sc1[i] / sigma1) * math.tanh(sc2[i] / sigma1)
        hsim += math.exp(-(dx * dx + dy * dy) / sigma2)
    return ksim, hsim


@njit(cache=True)
def geometric_counts(xy1, vis1, hw1, hh1, xy2, vis2, hw2, hh2, iou_thr):
    n = xy1.shape[0]
    f1 = np.zeros(n, dtype=np.int64)
    f2 = np.zeros(n, dtype=np.int64)
    area1 = (2.0 * hw1) * (2.0 * hh1)
    area2 = (2.0 * hw2) * (2.0 * hh2)
    for i in range(n):
        if not vis1[i]:
            continue
        f1[i] = 1
        if not vis2[i]:
            continue
        ix = min(xy1[i, 0] + hw1, xy2[i, 0] + hw2) - max(
            xy1[i, 0] - hw1, xy2[i, 0] - hw2
        )
        iy = min(xy1[i, 1] + hh1, xy2[i, 1] + hh2) - max(
            xy1[i, 1] - hh1, xy2[i, 1] - hh2
        )
        if ix <= 0.0 or iy <= 0.0:
            continue
        inter = ix * iy
        union = area1 + area2 - inter
        if union > 0.0 and inter / union >= iou_thr:
            f2[i] = 1
    return f1, f2


@njit(cache=True)
def ncc_best_match(img1, img2, py, px, half, sy0, sy1, sx0, sx1):
    h1, w1 = img1.shape
    h2, w2 = img2.shape
    if py - half < 0 or py + half >= h1 or px - half < 0 or px + half >= w1:
        return -2.0, -1, -1
    side = 2 * half + 1
    tmpl = np.empty((side, side), dtype=np.float64)
    tsum = 0.0
    for a in range(side):
        for b in range(side):
            v = img1[py - half + a, px - half + b]
            tmpl[a, b] = v
            tsum += v
    tmean = tsum / (side * side)
    tnorm2 = 0.0
    for a in range(side):
        for b in range(side):
            tmpl[a, b] -= tmean
            tnorm2 += tmpl[a, b] * tmpl[a, b]
    if tnorm2 <= 0.0:
        return -2.0, -1, -1
    tnorm = math.sqrt(tnorm2)

    best = -2.0
    best_cy = -1
    best_cx = -1
    cy0 = max(sy0, half)
    cy1 = min(sy1, h2 - half)
    cx0 = max(sx0, half)
    cx1 = min(sx1, w2 - half)
    for cy in range(cy0, cy1):
        for cx in range(cx0, cx1):
            wsum = 0.0
            for a in range(side):
                for b in range(side):
                    wsum += img2[cy - half + a, cx - half + b]
            wmean = wsum / (side * side)
            wnorm2 = 0.0
            dot = 0.0
            for a in range(side):
                for b in range(side):
                    wv = img2[cy - half + a, cx - half + b] - wmean
                    wnorm2 += wv * wv
                    dot += tmpl[a, b] * wv
            if wnorm2 <= 0.0:
                continue
            corr = dot / (tnorm * math.sqrt(wnorm2))
            if corr > best:
                best = corr
                best_cy = cy
                best_cx = cx
    return best, best_cy, best_cx


@njit(cache=True)
def pck_distance_matrix(xy_pred, vis_pred, xy_gt, vis_gt):
    p = xy_pred.shape[0]
    g = xy_gt.shape[0]
    out = np.empty((p, g), dtype=np.float64)
    for i in range(p):
        for j in range(g):
            if vis_pred[i] and vis_gt[j]:
                dx = xy_pred[i, 0] - xy_gt[j, 0]
                dy = xy_pred[i, 1] - xy_gt[j, 1]
                out[i, j] = math.sqrt(dx * dx + dy * dy)
            else:
                out[i, j] = np.inf
    return out

"""Backend dispatch for the numeric hot kernels.

Two interchangeable backends exist: numba-compiled loops (default when numba
imports cleanly) and pure numpy. Set ``POSEFLOW_NUMBA=0`` in the environment
to force the numpy path, or call :func:`use_backend` at runtime. ``poseflow
bench --compare-kernels`` times one against the other.
"""

from __future__ import annotations

import logging
import os

from . import _kernels_numpy

log = logging.getLogger(__name__)

_BACKENDS = {"numpy": _kernels_numpy}

try:
    from . import _kernels_numba

    _BACKENDS["numba"] = _kernels_numba
except ImportError as exc:  # pragma: no cover - depends on environment
    log.warning("numba backend unavailable (%s); using numpy kernels", exc)

_ENV_FLAG = os.environ.get("POSEFLOW_NUMBA", "1").strip().lower()
if _ENV_FLAG in ("0", "false", "off", "no"):
    _active_name = "numpy"
else:
    _active_name = "numba" if "numba" in _BACKENDS else "numpy"
_active = _BACKENDS[_active_name]


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def active_backend() -> str:
    return _active_name


def use_backend(name: str) -> None:
    """Switch kernel backend ("numba" or "numpy") for the whole process."""
    global _active, _active_name
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; have {available_backends()}")
    _active = _BACKENDS[name]
    _active_name = name


def pair_similarity(xy1, sc1, vis1, half_w, half_h, xy2, sc2, vis2, sigma1, sigma2):
    return _active.pair_similarity(
        xy1, sc1, vis1, half_w, half_h, xy2, sc2, vis2, sigma1, sigma2
    )


def geometric_counts(xy1, vis1, hw1, hh1, xy2, vis2, hw2, hh2, iou_thr):
    return _active.geometric_counts(xy1, vis1, hw1, hh1, xy2, vis2, hw2, hh2, iou_thr)


def ncc_best_match(img1, img2, py, px, half, sy0, sy1, sx0, sx1):
    return _active.ncc_best_match(img1, img2, py, px, half, sy0, sy1, sx0, sx1)


def pck_distance_matrix(xy_pred, vis_pred, xy_gt, vis_gt):
    return _active.pck_distance_matrix(xy_pred, vis_pred, xy_gt, vis_gt)


def warmup() -> None:
    """Trigger JIT compilation so timing runs exclude compile latency."""
    import numpy as np

    xy = np.zeros((2, 2))
    sc = np.ones(2)
    vis = np.ones(2, dtype=bool)
    pair_similarity(xy, sc, vis, 1.0, 1.0, xy, sc, vis, 0.3, 1.0)
    geometric_counts(xy, vis, 1.0, 1.0, xy, vis, 1.0, 1.0, 0.1)
    img = np.zeros((12, 12))
    img[4:8, 4:8] = 1.0
    ncc_best_match(img, img, 6, 6, 3, 3, 9, 3, 9)
    pck_distance_matrix(xy, vis, xy, vis)

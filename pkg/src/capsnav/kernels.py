"""Hot numeric kernels with a compiled (Cython) core and a numpy fallback.

The two backends implement the same arithmetic in the same operation
order, so their outputs are bit-identical; set CAPSNAV_PURE_PYTHON=1 to
force the numpy path.
"""

import os

import numpy as np

try:
    from capsnav import _speedups as _ext
except ImportError:
    _ext = None

HAVE_EXT = _ext is not None
_FORCE_PY = bool(os.environ.get("CAPSNAV_PURE_PYTHON"))


def active_backend():
    return "cython" if (HAVE_EXT and not _FORCE_PY) else "python"


def _raycast_py(px, py, dirx, diry, cx, cy, cr, cls, max_range):
    relx = cx - px
    rely = cy - py
    # t: projection of each circle center onto each ray; (M, W)
    t = relx[:, None] * dirx[None, :] + rely[:, None] * diry[None, :]
    d2 = (relx * relx + rely * rely)[:, None]
    disc = cr[:, None] * cr[:, None] - (d2 - t * t)
    hit = (disc >= 0.0) & (t > 0.0)
    thit = np.where(hit, t - np.sqrt(np.where(hit, disc, 0.0)), np.inf)
    thit = np.where(thit < 0.0, 0.0, thit)
    thit = np.where(thit < max_range, thit, np.inf)
    idx = np.argmin(thit, axis=0)
    cols = np.arange(dirx.shape[0])
    best = thit[idx, cols]
    dist = np.where(np.isfinite(best), best, max_range)
    hit_cls = np.where(np.isfinite(best), cls[idx], 0)
    return dist, hit_cls.astype(np.int64)


def raycast(px, py, angles, cx, cy, cr, cls, max_range):
    """Cast one ray per angle against a set of circles.

    Returns (dist, hit_cls): per-ray distance to the nearest hit
    (max_range if none) and the class id of the hit circle (0 = no hit).
    Ties go to the lowest circle index.
    """
    angles = np.ascontiguousarray(angles, dtype=np.float64)
    dirx = np.cos(angles)
    diry = np.sin(angles)
    cx = np.ascontiguousarray(cx, dtype=np.float64)
    cy = np.ascontiguousarray(cy, dtype=np.float64)
    cr = np.ascontiguousarray(cr, dtype=np.float64)
    cls = np.ascontiguousarray(cls, dtype=np.int64)
    if cx.size == 0:
        return (np.full(angles.shape, float(max_range)),
                np.zeros(angles.shape, dtype=np.int64))
    if HAVE_EXT and not _FORCE_PY:
        dist = np.empty(angles.shape, dtype=np.float64)
        hit_cls = np.empty(angles.shape, dtype=np.int64)
        _ext.raycast(float(px), float(py), dirx, diry, cx, cy, cr, cls,
                     float(max_range), dist, hit_cls)
        return dist, hit_cls
    return _raycast_py(float(px), float(py), dirx, diry, cx, cy, cr, cls,
                       float(max_range))

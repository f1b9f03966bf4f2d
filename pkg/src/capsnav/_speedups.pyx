# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled raycast kernel. Mirrors kernels.raycast_py arithmetic exactly."""

from libc.math cimport sqrt


def raycast(double px, double py,
            double[::1] dirx, double[::1] diry,
            double[::1] cx, double[::1] cy, double[::1] cr,
            long[::1] cls,
            double max_range,
            double[::1] out_dist, long[::1] out_cls):
    cdef Py_ssize_t w = dirx.shape[0]
    cdef Py_ssize_t m = cx.shape[0]
    cdef Py_ssize_t j, k
    cdef double dx, dy, relx, rely, t, d2, disc, thit, best
    cdef long best_cls
    for j in range(w):
        dx = dirx[j]
        dy = diry[j]
        best = max_range
        best_cls = 0
        for k in range(m):
            relx = cx[k] - px
            rely = cy[k] - py
            t = relx * dx + rely * dy
            d2 = relx * relx + rely * rely
            disc = cr[k] * cr[k] - (d2 - t * t)
            if disc >= 0.0 and t > 0.0:
                thit = t - sqrt(disc)
                if thit < 0.0:
                    thit = 0.0
                if thit < max_range and thit < best:
                    best = thit
                    best_cls = cls[k]
        out_dist[j] = best
        out_cls[j] = best_cls

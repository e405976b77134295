# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-slot hot kernels (SINR, per-slice rate sums, leakage).

Semantics and accumulation order are identical to fedslice._kernels_py;
the two are tested for bit equality. Keep them in lockstep.
"""

import numpy as np

BACKEND = "compiled"


def sinr_all(double[:, ::1] h2, double[::1] tx_power,
             long[::1] ue_cell, double noise_power):
    cdef Py_ssize_t n_cells = h2.shape[0]
    cdef Py_ssize_t n_ues = h2.shape[1]
    out_arr = np.empty(n_ues)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t u, m, c
    cdef double acc
    for u in range(n_ues):
        c = ue_cell[u]
        acc = 0.0
        for m in range(n_cells):
            if m != c:
                acc = acc + tx_power[m] * h2[m, u]
        out[u] = (tx_power[c] * h2[c, u]) / (noise_power + acc)
    return out_arr


def slice_se_sums(double[::1] se, long[::1] ue_cell, long[::1] ue_slice,
                  Py_ssize_t n_cells, Py_ssize_t n_slices):
    out_arr = np.zeros((n_cells, n_slices))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t u
    for u in range(se.shape[0]):
        out[ue_cell[u], ue_slice[u]] += se[u]
    return out_arr


def band_overlap(double[:, ::1] actions):
    cdef Py_ssize_t n_cells = actions.shape[0]
    cdef Py_ssize_t n_slices = actions.shape[1]
    lo_arr = np.empty((n_cells, n_slices))
    hi_arr = np.empty((n_cells, n_slices))
    cdef double[:, ::1] lo = lo_arr
    cdef double[:, ::1] hi = hi_arr
    cdef Py_ssize_t n, m, s
    cdef double acc, a, b, inter, width
    for n in range(n_cells):
        acc = 0.0
        for s in range(n_slices):
            acc = acc + actions[n, s]
            hi[n, s] = acc
            lo[n, s] = acc - actions[n, s]
    out_arr = np.zeros((n_cells, n_cells, n_slices))
    cdef double[:, :, ::1] out = out_arr
    for n in range(n_cells):
        for m in range(n_cells):
            for s in range(n_slices):
                width = hi[m, s] - lo[m, s]
                if width > 0.0:
                    a = hi[n, s] if hi[n, s] < hi[m, s] else hi[m, s]
                    b = lo[n, s] if lo[n, s] > lo[m, s] else lo[m, s]
                    inter = a - b
                    if inter < 0.0:
                        inter = 0.0
                    out[n, m, s] = inter / width
    return out_arr


def leakage_all(double[:, ::1] h2, double[::1] tx_power,
                long[::1] ue_cell, long[::1] ue_slice,
                double[:, :, ::1] overlap):
    cdef Py_ssize_t n_cells = h2.shape[0]
    cdef Py_ssize_t n_ues = h2.shape[1]
    out_arr = np.empty(n_cells)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t n, u, m
    cdef double acc
    for n in range(n_cells):
        acc = 0.0
        for u in range(n_ues):
            m = ue_cell[u]
            if m != n:
                acc = acc + tx_power[n] * h2[n, u] * overlap[n, m, ue_slice[u]]
            else:
                acc = acc + 0.0
        out[n] = acc
    return out_arr

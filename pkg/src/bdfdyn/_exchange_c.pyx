# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-diagonal exchange accumulation.

Same contract as ``_exchange_py.accumulate_diagonals``.  Real and imaginary
planes are accumulated separately; the sum over the contracted pair index
runs in ascending order, so results are bit-reproducible for a given build.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

DEF NCOL = 16


def accumulate_diagonals(G, const double[::1] weights,
                         const cnp.int64_t[::1] offsets, const cnp.int64_t[::1] woffsets):
    if G.shape[1] != NCOL:
        raise ValueError("expected 16 entries per 4x4 block")
    cdef double[:, ::1] gr = np.ascontiguousarray(G.real)
    cdef double[:, ::1] gi = np.ascontiguousarray(G.imag)
    out_r = np.empty((G.shape[0], NCOL))
    out_i = np.empty((G.shape[0], NCOL))
    cdef double[:, ::1] orr = out_r
    cdef double[:, ::1] oii = out_i
    cdef Py_ssize_t ngroups = offsets.shape[0] - 1
    cdef Py_ssize_t g, a, b, c, base, n, row
    cdef double w
    cdef double accr[NCOL]
    cdef double acci[NCOL]
    cdef const double* wrow
    with nogil:
        for g in range(ngroups):
            base = offsets[g]
            n = offsets[g + 1] - base
            for a in range(n):
                for c in range(NCOL):
                    accr[c] = 0.0
                    acci[c] = 0.0
                wrow = &weights[woffsets[g] + a * n]
                for b in range(n):
                    w = wrow[b]
                    if w == 0.0:
                        continue
                    row = base + b
                    for c in range(NCOL):
                        accr[c] += w * gr[row, c]
                        acci[c] += w * gi[row, c]
                for c in range(NCOL):
                    orr[base + a, c] = accr[c]
                    oii[base + a, c] = acci[c]
    return out_r + 1j * out_i

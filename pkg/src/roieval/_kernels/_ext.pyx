# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; behaviour must match ``_fallback.py`` bit for bit."""

from libc.math cimport INFINITY
from libc.stdint cimport uint64_t
from libc.stdlib cimport malloc, free

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef uint64_t FNV64_OFFSET = 0xCBF29CE484222325ULL
cdef uint64_t FNV64_PRIME = 0x100000001B3ULL


def solve_min_cost(cost):
    cdef double[:, ::1] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0]
    if n == 0:
        return [], [], []
    if c.shape[1] != n:
        raise ValueError("cost matrix must be square")
    cdef double* u = <double*> malloc((n + 1) * sizeof(double))
    cdef double* v = <double*> malloc((n + 1) * sizeof(double))
    cdef double* minv = <double*> malloc((n + 1) * sizeof(double))
    cdef Py_ssize_t* p = <Py_ssize_t*> malloc((n + 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t* way = <Py_ssize_t*> malloc((n + 1) * sizeof(Py_ssize_t))
    cdef char* used = <char*> malloc((n + 1) * sizeof(char))
    cdef Py_ssize_t i, j, i0, j0, j1
    cdef double delta, cur, ui0
    if not (u and v and minv and p and way and used):
        free(u); free(v); free(minv); free(p); free(way); free(used)
        raise MemoryError()
    try:
        for j in range(n + 1):
            u[j] = 0.0
            v[j] = 0.0
            p[j] = 0
            way[j] = 0
        for i in range(1, n + 1):
            p[0] = i
            j0 = 0
            for j in range(n + 1):
                minv[j] = INFINITY
                used[j] = 0
            while True:
                used[j0] = 1
                i0 = p[j0]
                ui0 = u[i0]
                delta = INFINITY
                j1 = 0
                for j in range(1, n + 1):
                    if not used[j]:
                        cur = c[i0 - 1, j - 1] - ui0 - v[j]
                        if cur < minv[j]:
                            minv[j] = cur
                            way[j] = j0
                        if minv[j] < delta:
                            delta = minv[j]
                            j1 = j
                for j in range(n + 1):
                    if used[j]:
                        u[p[j]] += delta
                        v[j] -= delta
                    else:
                        minv[j] -= delta
                j0 = j1
                if p[j0] == 0:
                    break
            while True:
                j1 = way[j0]
                p[j0] = p[j1]
                j0 = j1
                if j0 == 0:
                    break
        assignment = [-1] * n
        for j in range(1, n + 1):
            assignment[p[j] - 1] = j - 1
        return assignment, [u[j] for j in range(1, n + 1)], [v[j] for j in range(1, n + 1)]
    finally:
        free(u); free(v); free(minv); free(p); free(way); free(used)


def lcs_length(a, b):
    if len(a) == 0 or len(b) == 0:
        return 0
    if len(b) > len(a):
        a, b = b, a
    cdef long[::1] xa = np.ascontiguousarray(a, dtype=np.int_)
    cdef long[::1] xb = np.ascontiguousarray(b, dtype=np.int_)
    cdef Py_ssize_t m = xb.shape[0]
    cdef Py_ssize_t i, j
    cdef long* prev = <long*> malloc((m + 1) * sizeof(long))
    cdef long* cur = <long*> malloc((m + 1) * sizeof(long))
    cdef long* tmp
    if not (prev and cur):
        free(prev); free(cur)
        raise MemoryError()
    try:
        for j in range(m + 1):
            prev[j] = 0
        cur[0] = 0
        for i in range(xa.shape[0]):
            for j in range(1, m + 1):
                if xa[i] == xb[j - 1]:
                    cur[j] = prev[j - 1] + 1
                elif cur[j - 1] > prev[j]:
                    cur[j] = cur[j - 1]
                else:
                    cur[j] = prev[j]
            tmp = prev
            prev = cur
            cur = tmp
        return int(prev[m])
    finally:
        free(prev); free(cur)


def fnv1a64(bytes data):
    cdef uint64_t h = FNV64_OFFSET
    cdef const unsigned char* buf = data
    cdef Py_ssize_t k
    for k in range(len(data)):
        h ^= buf[k]
        h *= FNV64_PRIME
    return h

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled level-crossing walk; mirrors ``_adm_py.adm_walk`` operation for operation."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor
from libc.stdint cimport int64_t
from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memcpy

cnp.import_array()


cdef int _grow(int64_t** tbuf, signed char** pbuf, Py_ssize_t* cap) noexcept nogil:
    cdef Py_ssize_t new_cap = cap[0] * 2
    cdef int64_t* t2 = <int64_t*> realloc(tbuf[0], new_cap * sizeof(int64_t))
    if t2 == NULL:
        return -1
    tbuf[0] = t2
    cdef signed char* p2 = <signed char*> realloc(pbuf[0], new_cap * sizeof(signed char))
    if p2 == NULL:
        return -1
    pbuf[0] = p2
    cap[0] = new_cap
    return 0


def adm_walk(const double[::1] x, const double[::1] delta, double t0, double dt,
             long long i0, double gain, double dead_time, double v_track,
             double t_resume, long long last_ns):
    cdef Py_ssize_t n = delta.shape[0]
    cdef long long gap_ns = <long long> floor(dead_time * 1e9 + 0.5)
    if gap_ns < 1:
        gap_ns = 1
    cdef Py_ssize_t cap = 1024
    cdef Py_ssize_t count = 0
    cdef int64_t* tbuf = <int64_t*> malloc(cap * sizeof(int64_t))
    cdef signed char* pbuf = <signed char*> malloc(cap * sizeof(signed char))
    if tbuf == NULL or pbuf == NULL:
        free(tbuf)
        free(pbuf)
        raise MemoryError()

    cdef Py_ssize_t i
    cdef double ta, tb, xa, xb, slope, step, ts, xs, up, lo, tc
    cdef int pol
    cdef long long ns
    cdef int failed = 0

    with nogil:
        for i in range(n):
            ta = t0 + (i0 + i) * dt
            tb = t0 + (i0 + i + 1) * dt
            if t_resume >= tb:
                continue
            xa = x[i]
            xb = x[i + 1]
            slope = (xb - xa) / dt
            step = delta[i] / gain
            ts = ta if t_resume <= ta else t_resume
            while True:
                xs = xa + slope * (ts - ta)
                up = v_track + step
                lo = v_track - step
                if xs > up:
                    tc = ts
                    pol = 1
                elif xs < lo:
                    tc = ts
                    pol = -1
                elif slope > 0.0 and xb > up:
                    tc = ta + (up - xa) / slope
                    pol = 1
                elif slope < 0.0 and xb < lo:
                    tc = ta + (lo - xa) / slope
                    pol = -1
                else:
                    break
                if tc < ts:
                    tc = ts
                elif tc > tb:
                    tc = tb
                ns = <long long> floor(tc * 1e9 + 0.5)
                if ns < last_ns + gap_ns:
                    ns = last_ns + gap_ns
                last_ns = ns
                if count == cap:
                    if _grow(&tbuf, &pbuf, &cap) != 0:
                        failed = 1
                        break
                tbuf[count] = ns
                pbuf[count] = <signed char> pol
                count += 1
                v_track = v_track + pol * step
                ts = tc + dead_time
                t_resume = ts
                if ts >= tb:
                    break
            if failed:
                break

    if failed:
        free(tbuf)
        free(pbuf)
        raise MemoryError()

    t_out = np.empty(count, dtype=np.int64)
    p_out = np.empty(count, dtype=np.int8)
    cdef int64_t[::1] t_view = t_out
    cdef signed char[::1] p_view = p_out
    if count:
        memcpy(&t_view[0], tbuf, count * sizeof(int64_t))
        memcpy(&p_view[0], pbuf, count * sizeof(signed char))
    free(tbuf)
    free(pbuf)
    return t_out, p_out, v_track, t_resume, last_ns

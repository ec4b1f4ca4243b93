# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled round kernel; see ``_kernel_py.simulate_batch`` for the contract."""
import numpy as np

cdef double ZERO_BRANCH = 1e-14


cdef inline double snap(double p) nogil:
    if p > 1.0 - ZERO_BRANCH:
        return 1.0
    if p < ZERO_BRANCH:
        return 0.0
    return p


# all matrices are 4x4 row-major blocks inside contiguous buffers

cdef inline double trace_prod(const double complex* x, const double complex* y) nogil:
    cdef double acc = 0.0
    cdef int i, j
    for i in range(4):
        for j in range(4):
            acc += (x[4 * i + j] * y[4 * j + i]).real
    return acc


cdef inline void sandwich(const double complex* left, const double complex* mid,
                          double complex* tmp, double complex* out,
                          bint dagger_right, double scale) nogil:
    # out = left @ mid @ R / scale with R = left (projector) or left^dagger (unitary)
    cdef int i, j, k
    cdef double complex acc
    for i in range(4):
        for j in range(4):
            acc = 0
            for k in range(4):
                acc = acc + left[4 * i + k] * mid[4 * k + j]
            tmp[4 * i + j] = acc
    for i in range(4):
        for j in range(4):
            acc = 0
            if dagger_right:
                for k in range(4):
                    acc = acc + tmp[4 * i + k] * left[4 * j + k].conjugate()
            else:
                for k in range(4):
                    acc = acc + tmp[4 * i + k] * left[4 * k + j]
            out[4 * i + j] = acc / scale


def simulate_batch(const double complex[:, :, ::1] states,
                   const int[::1] state_idx,
                   const signed char[::1] alice_obs,
                   const signed char[::1] bob_unitary,
                   const signed char[::1] bob_obs,
                   const double[::1] u_alice,
                   const double[::1] u_bob,
                   const double complex[:, :, :, ::1] alice_proj,
                   const double complex[:, :, ::1] bob_proj,
                   const double complex[:, :, ::1] unitaries):
    cdef Py_ssize_t n = state_idx.shape[0]
    a_arr = np.empty(n, dtype=np.int8)
    b_arr = np.empty(n, dtype=np.int8)
    if n == 0:
        return a_arr, b_arr, 0
    cdef signed char[::1] a_out = a_arr
    cdef signed char[::1] b_out = b_arr
    cdef double complex tmp[16]
    cdef double complex m[16]
    cdef double complex m2[16]
    cdef const double complex* st = &states[0, 0, 0]
    cdef const double complex* ap = &alice_proj[0, 0, 0, 0]
    cdef const double complex* bp = &bob_proj[0, 0, 0]
    cdef const double complex* un = &unitaries[0, 0, 0]
    cdef const double complex* rho
    cdef Py_ssize_t j
    cdef int obs, out_idx
    cdef double p, pa, qb, pb
    cdef Py_ssize_t status = 0
    with nogil:
        for j in range(n):
            rho = st + 16 * state_idx[j]
            obs = alice_obs[j]
            p = snap(trace_prod(ap + 32 * obs, rho))
            if u_alice[j] < p:
                a_out[j] = 1
                out_idx = 0
                pa = p
            else:
                a_out[j] = -1
                out_idx = 1
                pa = 1.0 - p
            if pa < ZERO_BRANCH:
                status = j + 1
                break
            sandwich(ap + 32 * obs + 16 * out_idx, rho, tmp, m, False, pa)
            sandwich(un + 16 * bob_unitary[j], m, tmp, m2, True, 1.0)
            qb = snap(trace_prod(bp + 16 * bob_obs[j], m2))
            if u_bob[j] < qb:
                b_out[j] = 1
                pb = qb
            else:
                b_out[j] = -1
                pb = 1.0 - qb
            if pb < ZERO_BRANCH:
                status = j + 1
                break
    return a_arr, b_arr, status

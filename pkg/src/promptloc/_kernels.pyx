# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: image-source RIR accumulation and the selective scan.

Both kernels mirror the numpy implementations in ``_kernels_py`` exactly; the
backend selector in ``_backend`` picks one at import time.
"""

import numpy as np

from libc.math cimport sqrt, sin, cos, exp, floor, fabs, M_PI


ctypedef fused real_t:
    float
    double


cdef extern from "_scan_step.h":
    void scan_forward_f(Py_ssize_t S, Py_ssize_t n, Py_ssize_t d, Py_ssize_t N, const float *u,
                        const float *delta, const float *A, const float *iA, const float *Bm,
                        const float *Cm, float *y, float *h) nogil
    void scan_forward_d(Py_ssize_t S, Py_ssize_t n, Py_ssize_t d, Py_ssize_t N, const double *u,
                        const double *delta, const double *A, const double *iA, const double *Bm,
                        const double *Cm, double *y, double *h) nogil
    void scan_backward_f(Py_ssize_t S, Py_ssize_t n, Py_ssize_t d, Py_ssize_t N, const float *u,
                         const float *delta, const float *A, const float *iA, const float *Bm,
                         const float *Cm, const float *dy, float *du, float *ddelta, float *dA,
                         float *dB, float *dC, float *hs, float *as_, float *g) nogil
    void scan_backward_d(Py_ssize_t S, Py_ssize_t n, Py_ssize_t d, Py_ssize_t N, const double *u,
                         const double *delta, const double *A, const double *iA,
                         const double *Bm, const double *Cm, const double *dy, double *du,
                         double *ddelta, double *dA, double *dB, double *dC, double *hs,
                         double *as_, double *g) nogil


def image_source_rir(double[::1] src, double[:, ::1] mics, double[::1] room,
                     double beta, double fs, double c, double max_dist,
                     int max_order, int half_width, Py_ssize_t length):
    """Sum windowed-sinc impulses of every image source within ``max_dist``."""
    cdef Py_ssize_t n_mics = mics.shape[0]
    out_arr = np.zeros((n_mics, length), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef int nx_max = <int>(max_dist / (2.0 * room[0])) + 1
    cdef int ny_max = <int>(max_dist / (2.0 * room[1])) + 1
    cdef int nz_max = <int>(max_dist / (2.0 * room[2])) + 1
    cdef double win_half = half_width + 1.0
    cdef Py_ssize_t m, tap, lo, hi
    cdef int nx, ny, nz, qx, qy, qz, order
    cdef double dx, dy, dz, dist, tau, amp, x, w, s

    for m in range(n_mics):
        for nx in range(-nx_max, nx_max + 1):
            for qx in range(2):
                dx = (1 - 2 * qx) * src[0] + 2 * nx * room[0] - mics[m, 0]
                for ny in range(-ny_max, ny_max + 1):
                    for qy in range(2):
                        dy = (1 - 2 * qy) * src[1] + 2 * ny * room[1] - mics[m, 1]
                        for nz in range(-nz_max, nz_max + 1):
                            for qz in range(2):
                                order = (abs(nx - qx) + abs(nx) + abs(ny - qy) + abs(ny)
                                         + abs(nz - qz) + abs(nz))
                                if max_order >= 0 and order > max_order:
                                    continue
                                dz = (1 - 2 * qz) * src[2] + 2 * nz * room[2] - mics[m, 2]
                                dist = sqrt(dx * dx + dy * dy + dz * dz)
                                if dist > max_dist:
                                    continue
                                tau = dist / c * fs
                                amp = beta ** order / dist
                                lo = <Py_ssize_t>floor(tau + 0.5) - half_width
                                hi = <Py_ssize_t>floor(tau + 0.5) + half_width
                                if lo < 0:
                                    lo = 0
                                if hi > length - 1:
                                    hi = length - 1
                                for tap in range(lo, hi + 1):
                                    x = tap - tau
                                    if fabs(x) >= win_half:
                                        continue
                                    w = 0.5 * (1.0 + cos(M_PI * x / win_half))
                                    if fabs(x) < 1e-12:
                                        s = 1.0
                                    else:
                                        s = sin(M_PI * x) / (M_PI * x)
                                    out[m, tap] += amp * w * s
    return out_arr


def scan_forward(real_t[:, :, ::1] u, real_t[:, :, ::1] delta, real_t[:, ::1] A,
                 real_t[:, :, ::1] Bm, real_t[:, :, ::1] Cm):
    """Run the zero-order-hold diagonal recurrence for every sequence.

    Shapes: u, delta [S, n, d]; A [d, N]; Bm, Cm [S, n, N]. Returns y [S, n, d].
    """
    cdef Py_ssize_t S = u.shape[0], n = u.shape[1], d = u.shape[2], N = A.shape[1]
    dtype = np.float32 if real_t is float else np.float64
    y_arr = np.zeros((S, n, d), dtype=dtype)
    if S == 0 or n == 0:
        return y_arr
    cdef real_t[:, :, ::1] y = y_arr
    cdef real_t[:, ::1] iA = 1 / np.asarray(A)
    cdef real_t[::1] h = np.zeros(d * N, dtype=dtype)
    if real_t is float:
        with nogil:
            scan_forward_f(S, n, d, N, &u[0, 0, 0], &delta[0, 0, 0], &A[0, 0], &iA[0, 0],
                           &Bm[0, 0, 0], &Cm[0, 0, 0], &y[0, 0, 0], &h[0])
    else:
        with nogil:
            scan_forward_d(S, n, d, N, &u[0, 0, 0], &delta[0, 0, 0], &A[0, 0], &iA[0, 0],
                           &Bm[0, 0, 0], &Cm[0, 0, 0], &y[0, 0, 0], &h[0])
    return y_arr


def scan_backward(real_t[:, :, ::1] u, real_t[:, :, ::1] delta, real_t[:, ::1] A,
                  real_t[:, :, ::1] Bm, real_t[:, :, ::1] Cm, real_t[:, :, ::1] dy):
    """Adjoint of :func:`scan_forward`; states are recomputed per sequence."""
    cdef Py_ssize_t S = u.shape[0], n = u.shape[1], d = u.shape[2], N = A.shape[1]
    dtype = np.float32 if real_t is float else np.float64
    du_arr = np.zeros((S, n, d), dtype=dtype)
    ddelta_arr = np.zeros((S, n, d), dtype=dtype)
    dA_arr = np.zeros((d, N), dtype=dtype)
    dB_arr = np.zeros((S, n, N), dtype=dtype)
    dC_arr = np.zeros((S, n, N), dtype=dtype)
    if S == 0 or n == 0:
        return du_arr, ddelta_arr, dA_arr, dB_arr, dC_arr
    cdef real_t[:, :, ::1] du = du_arr
    cdef real_t[:, :, ::1] ddelta = ddelta_arr
    cdef real_t[:, ::1] dA = dA_arr
    cdef real_t[:, :, ::1] dB = dB_arr
    cdef real_t[:, :, ::1] dC = dC_arr
    cdef real_t[:, ::1] iA = 1 / np.asarray(A)
    cdef real_t[::1] hs = np.zeros((n + 1) * d * N, dtype=dtype)
    cdef real_t[::1] as_ = np.zeros(n * d * N, dtype=dtype)
    cdef real_t[::1] g = np.zeros(d * N, dtype=dtype)
    if real_t is float:
        with nogil:
            scan_backward_f(S, n, d, N, &u[0, 0, 0], &delta[0, 0, 0], &A[0, 0], &iA[0, 0],
                            &Bm[0, 0, 0], &Cm[0, 0, 0], &dy[0, 0, 0], &du[0, 0, 0],
                            &ddelta[0, 0, 0], &dA[0, 0], &dB[0, 0, 0], &dC[0, 0, 0],
                            &hs[0], &as_[0], &g[0])
    else:
        with nogil:
            scan_backward_d(S, n, d, N, &u[0, 0, 0], &delta[0, 0, 0], &A[0, 0], &iA[0, 0],
                            &Bm[0, 0, 0], &Cm[0, 0, 0], &dy[0, 0, 0], &du[0, 0, 0],
                            &ddelta[0, 0, 0], &dA[0, 0], &dB[0, 0, 0], &dC[0, 0, 0],
                            &hs[0], &as_[0], &g[0])
    return du_arr, ddelta_arr, dA_arr, dB_arr, dC_arr

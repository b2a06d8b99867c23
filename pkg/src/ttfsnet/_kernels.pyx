# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled layer kernels; same contracts as ``ttfsnet._fallback``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, exp, expm1, log1p

cnp.import_array()

cdef inline double _phi(double x) noexcept nogil:
    if x < 1e-4:
        return 1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0
    return -expm1(-x) / x


cdef inline double _dphi(double x) noexcept nogil:
    if x < 1e-4:
        return -0.5 + x / 3.0 - x * x / 8.0 + x * x * x / 30.0
    return (exp(-x) - _phi(x)) / x


cdef inline double _pulse(double w, double v_pos, double v_neg) noexcept nogil:
    return 1.0 / v_pos if w >= 0.0 else 1.0 / v_neg


cdef inline double _arrival(const double[::1] t_in, const double[:, ::1] D, bint has_delay,
                            Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    if has_delay:
        return t_in[j] + D[i, j]
    return t_in[j]


cdef const double[:, ::1] _delay_view(delays):
    if delays is None:
        return np.zeros((1, 1))
    return np.ascontiguousarray(delays, dtype=np.float64)


def linear_forward(const double[::1] t_in, const double[:, ::1] W, const double[::1] vth,
                   delays, const cnp.int64_t[:, ::1] order):
    cdef Py_ssize_t n_out = W.shape[0], F = order.shape[1]
    cdef bint shared = order.shape[0] == 1
    cdef bint has_delay = delays is not None
    cdef const double[:, ::1] D = _delay_view(delays)
    t_out_arr = np.full(n_out, np.inf)
    counts_arr = np.zeros(n_out, dtype=np.int64)
    cdef double[::1] t_out = t_out_arr
    cdef cnp.int64_t[::1] counts = counts_arr
    cdef Py_ssize_t i, p, row, j
    cdef double slope, wtime, t, t_next, w, cand
    with nogil:
        for i in range(n_out):
            row = 0 if shared else i
            slope = 0.0
            wtime = 0.0
            if F == 0:
                continue
            t_next = _arrival(t_in, D, has_delay, i, order[row, 0])
            for p in range(F):
                j = order[row, p]
                t = t_next
                t_next = _arrival(t_in, D, has_delay, i, order[row, p + 1]) if p + 1 < F else INFINITY
                w = W[i, j]
                slope = slope + w
                wtime = wtime + w * t
                if slope > 0.0:
                    cand = (vth[i] + wtime) / slope
                    if cand >= t and cand < t_next:
                        t_out[i] = cand
                        counts[i] = p + 1
                        break
    return t_out_arr, counts_arr


def linear_backward(const double[::1] t_in, const double[:, ::1] W, delays,
                    const cnp.int64_t[:, ::1] order, const double[::1] t_out,
                    const cnp.int64_t[::1] counts, const double[::1] delta_out, double epsilon,
                    double[:, ::1] grad_W, double scale):
    cdef Py_ssize_t n_out = W.shape[0], n_in = W.shape[1]
    cdef bint shared = order.shape[0] == 1
    cdef bint has_delay = delays is not None
    cdef const double[:, ::1] D = _delay_view(delays)
    delta_in_arr = np.zeros(n_in)
    cdef double[::1] delta_in = delta_in_arr
    cdef Py_ssize_t i, p, row, j, G
    cdef double denom, g
    with nogil:
        for i in range(n_out):
            G = counts[i]
            if G == 0:
                continue
            row = 0 if shared else i
            denom = epsilon
            for p in range(G):
                denom = denom + W[i, order[row, p]]
            g = delta_out[i] / denom
            for p in range(G):
                j = order[row, p]
                grad_W[i, j] += scale * (-g * (t_out[i] - _arrival(t_in, D, has_delay, i, j)))
                delta_in[j] += g * W[i, j]
    return delta_in_arr


def circuit_forward(const double[::1] t_in, const double[:, ::1] W, const double[::1] vth,
                    delays, const cnp.int64_t[:, ::1] order, double v_pos, double v_neg,
                    double b_tol=1e-12):
    cdef Py_ssize_t n_out = W.shape[0], F = order.shape[1]
    cdef bint shared = order.shape[0] == 1
    cdef bint has_delay = delays is not None
    cdef const double[:, ::1] D = _delay_view(delays)
    t_out_arr = np.full(n_out, np.inf)
    counts_arr = np.zeros(n_out, dtype=np.int64)
    cdef double[::1] t_out = t_out_arr
    cdef cnp.int64_t[::1] counts = counts_arr
    cdef Py_ssize_t i, p, row
    cdef double A, B, v, t, t_next, w, width, drive, d, x
    with nogil:
        for i in range(n_out):
            if F == 0:
                continue
            row = 0 if shared else i
            A = 0.0
            B = 0.0
            v = 0.0
            t_next = _arrival(t_in, D, has_delay, i, order[row, 0])
            for p in range(F):
                t = t_next
                t_next = _arrival(t_in, D, has_delay, i, order[row, p + 1]) if p + 1 < F else INFINITY
                w = W[i, order[row, p]]
                A = A + w
                B = B + w * _pulse(w, v_pos, v_neg)
                width = t_next - t
                drive = A - B * vth[i]
                if drive > 0.0:
                    if B <= b_tol:
                        d = (vth[i] - v) / A
                    else:
                        d = log1p(B * (vth[i] - v) / drive) / B
                    if d < 0.0:
                        d = 0.0
                    if d < width:
                        t_out[i] = t + d
                        counts[i] = p + 1
                        break
                if p + 1 < F:
                    if B <= b_tol:
                        v = v + A * width
                    else:
                        x = B * width
                        v = v * exp(-x) + A * width * _phi(x)
    return t_out_arr, counts_arr


def circuit_backward(const double[::1] t_in, const double[:, ::1] W, delays,
                     const cnp.int64_t[:, ::1] order, const double[::1] t_out,
                     const cnp.int64_t[::1] counts, const double[::1] delta_out,
                     const double[::1] vth, double v_pos, double v_neg, double epsilon,
                     double[:, ::1] grad_W, double scale, double b_tol=1e-12):
    cdef Py_ssize_t n_out = W.shape[0], n_in = W.shape[1], F = order.shape[1]
    cdef bint shared = order.shape[0] == 1
    cdef bint has_delay = delays is not None
    cdef const double[:, ::1] D = _delay_view(delays)
    delta_in_arr = np.zeros(n_in)
    cdef double[::1] delta_in = delta_in_arr
    work = np.empty((6, max(F, 1)))
    cdef double[:, ::1] buf = work
    # buf rows: 0 exp factor, 1 d/dA, 2 d/dB, 3 d/dwidth, 4 pulse factor, 5 suffix product
    cdef Py_ssize_t i, k, row, G, j
    cdef double A, B, v, width, x, e, t_k, t_next, w, g, sa, sb, d
    with nogil:
        for i in range(n_out):
            G = counts[i]
            if G == 0:
                continue
            row = 0 if shared else i
            A = 0.0
            B = 0.0
            v = 0.0
            t_next = _arrival(t_in, D, has_delay, i, order[row, 0])
            for k in range(G):
                t_k = t_next
                t_next = _arrival(t_in, D, has_delay, i, order[row, k + 1]) if k + 1 < G else t_out[i]
                w = W[i, order[row, k]]
                buf[4, k] = _pulse(w, v_pos, v_neg)
                A = A + w
                B = B + w * buf[4, k]
                width = t_next - t_k
                x = B * width if B > b_tol else 0.0
                e = exp(-x)
                buf[0, k] = e
                buf[1, k] = width * _phi(x)
                buf[2, k] = A * width * width * _dphi(x) - v * width * e
                buf[3, k] = (A - B * v) * e
                v = v * e + A * buf[1, k]
            g = delta_out[i] * (-1.0 / (epsilon + A - B * vth[i]))
            buf[5, G - 1] = 1.0
            for k in range(G - 2, -1, -1):
                buf[5, k] = buf[5, k + 1] * buf[0, k + 1]
            sa = 0.0
            sb = 0.0
            for k in range(G - 1, -1, -1):
                j = order[row, k]
                sa = sa + buf[5, k] * buf[1, k]
                sb = sb + buf[5, k] * buf[2, k]
                grad_W[i, j] += scale * g * (sa + buf[4, k] * sb)
                d = -buf[5, k] * buf[3, k]
                if k > 0:
                    d = d + buf[5, k - 1] * buf[3, k - 1]
                delta_in[j] += g * d
    return delta_in_arr

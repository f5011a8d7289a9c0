# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled sequence-model kernels; same contracts as kernels.pure."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, tanh

cnp.import_array()


cdef inline double _sig(double v) nogil:
    return 1.0 / (1.0 + exp(-v))


cdef void _matvec(double[:, ::1] m, double[::1] v, double[::1] out,
                  bint accumulate) nogil:
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(m.shape[0]):
        acc = out[i] if accumulate else 0.0
        for j in range(m.shape[1]):
            acc += m[i, j] * v[j]
        out[i] = acc


cdef void _matvec_t(double[:, ::1] m, double[::1] v, double[::1] out,
                    bint accumulate) nogil:
    # out = m.T @ v, optionally accumulating
    cdef Py_ssize_t i, j
    if not accumulate:
        for j in range(m.shape[1]):
            out[j] = 0.0
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            out[j] += m[i, j] * v[i]


cdef inline double[:, ::1] _c2d(object a):
    return np.ascontiguousarray(a, dtype=np.float64)


cdef inline double[::1] _c1d(object a):
    return np.ascontiguousarray(a, dtype=np.float64)


def gru_forward(object x_in, object w_update, object u_update, object b_update,
                object w_reset, object u_reset, object b_reset,
                object w_cand, object u_cand, object b_cand):
    cdef double[:, ::1] x = _c2d(x_in)
    cdef double[:, ::1] wz = _c2d(w_update), uz = _c2d(u_update)
    cdef double[:, ::1] wr = _c2d(w_reset), ur = _c2d(u_reset)
    cdef double[:, ::1] wc = _c2d(w_cand), uc = _c2d(u_cand)
    cdef double[::1] bz = _c1d(b_update), br = _c1d(b_reset), bc = _c1d(b_cand)
    cdef Py_ssize_t steps = x.shape[0], size = bz.shape[0]
    hidden_arr = np.empty((steps, size))
    update_arr = np.empty((steps, size))
    reset_arr = np.empty((steps, size))
    cand_arr = np.empty((steps, size))
    cdef double[:, ::1] hidden = hidden_arr, update = update_arr
    cdef double[:, ::1] reset = reset_arr, cand = cand_arr
    scratch = np.zeros((5, size))
    cdef double[:, ::1] s = scratch
    cdef double[::1] h_prev = s[0], az = s[1], ar = s[2], ac = s[3], rh = s[4]
    cdef Py_ssize_t t, i
    cdef double z, r, c
    with nogil:
        for t in range(steps):
            _matvec(wz, x[t], az, False)
            _matvec(uz, h_prev, az, True)
            _matvec(wr, x[t], ar, False)
            _matvec(ur, h_prev, ar, True)
            for i in range(size):
                az[i] = _sig(az[i] + bz[i])
                ar[i] = _sig(ar[i] + br[i])
                rh[i] = ar[i] * h_prev[i]
            _matvec(wc, x[t], ac, False)
            _matvec(uc, rh, ac, True)
            for i in range(size):
                z = az[i]
                r = ar[i]
                c = tanh(ac[i] + bc[i])
                h_prev[i] = z * h_prev[i] + (1.0 - z) * c
                update[t, i] = z
                reset[t, i] = r
                cand[t, i] = c
                hidden[t, i] = h_prev[i]
    return hidden_arr, update_arr, reset_arr, cand_arr


def gru_backward(object x_in, object hidden_in, object update_in, object reset_in,
                 object cand_in, object d_hidden_in,
                 object w_update, object u_update, object w_reset, object u_reset,
                 object w_cand, object u_cand):
    cdef double[:, ::1] x = _c2d(x_in), hidden = _c2d(hidden_in)
    cdef double[:, ::1] update = _c2d(update_in), reset = _c2d(reset_in)
    cdef double[:, ::1] cand = _c2d(cand_in), d_hidden = _c2d(d_hidden_in)
    cdef double[:, ::1] uz = _c2d(u_update), ur = _c2d(u_reset), uc = _c2d(u_cand)
    cdef Py_ssize_t steps = hidden.shape[0], size = hidden.shape[1]
    cdef Py_ssize_t in_dim = x.shape[1]
    d_w_update_arr = np.zeros((size, in_dim))
    d_u_update_arr = np.zeros((size, size))
    d_b_update_arr = np.zeros(size)
    d_w_reset_arr = np.zeros((size, in_dim))
    d_u_reset_arr = np.zeros((size, size))
    d_b_reset_arr = np.zeros(size)
    d_w_cand_arr = np.zeros((size, in_dim))
    d_u_cand_arr = np.zeros((size, size))
    d_b_cand_arr = np.zeros(size)
    cdef double[:, ::1] d_wz = d_w_update_arr, d_uz = d_u_update_arr
    cdef double[:, ::1] d_wr = d_w_reset_arr, d_ur = d_u_reset_arr
    cdef double[:, ::1] d_wc = d_w_cand_arr, d_uc = d_u_cand_arr
    cdef double[::1] d_bz = d_b_update_arr, d_br = d_b_reset_arr, d_bc = d_b_cand_arr
    scratch = np.zeros((7, size))
    cdef double[:, ::1] s = scratch
    cdef double[::1] carry = s[0], g = s[1], da_z = s[2], da_r = s[3]
    cdef double[::1] da_c = s[4], d_rh = s[5], h_prev = s[6]
    cdef Py_ssize_t t, i, j
    cdef double z, r, c, dz, dc, dr
    with nogil:
        for t in range(steps - 1, -1, -1):
            for i in range(size):
                g[i] = d_hidden[t, i] + carry[i]
                h_prev[i] = hidden[t - 1, i] if t > 0 else 0.0
            for i in range(size):
                z = update[t, i]
                r = reset[t, i]
                c = cand[t, i]
                dz = g[i] * (h_prev[i] - c)
                dc = g[i] * (1.0 - z)
                carry[i] = g[i] * z
                da_c[i] = dc * (1.0 - c * c)
                da_z[i] = dz * z * (1.0 - z)
            for i in range(size):
                for j in range(in_dim):
                    d_wc[i, j] += da_c[i] * x[t, j]
                for j in range(size):
                    d_uc[i, j] += da_c[i] * reset[t, j] * h_prev[j]
                d_bc[i] += da_c[i]
            _matvec_t(uc, da_c, d_rh, False)
            for i in range(size):
                dr = d_rh[i] * h_prev[i]
                carry[i] += d_rh[i] * reset[t, i]
                da_r[i] = dr * reset[t, i] * (1.0 - reset[t, i])
            for i in range(size):
                for j in range(in_dim):
                    d_wz[i, j] += da_z[i] * x[t, j]
                    d_wr[i, j] += da_r[i] * x[t, j]
                for j in range(size):
                    d_uz[i, j] += da_z[i] * h_prev[j]
                    d_ur[i, j] += da_r[i] * h_prev[j]
                d_bz[i] += da_z[i]
                d_br[i] += da_r[i]
            _matvec_t(uz, da_z, carry, True)
            _matvec_t(ur, da_r, carry, True)
    return (d_w_update_arr, d_u_update_arr, d_b_update_arr,
            d_w_reset_arr, d_u_reset_arr, d_b_reset_arr,
            d_w_cand_arr, d_u_cand_arr, d_b_cand_arr)


cdef double _lse(double[::1] v) nogil:
    cdef Py_ssize_t i
    cdef double peak = v[0], acc = 0.0
    for i in range(1, v.shape[0]):
        if v[i] > peak:
            peak = v[i]
    for i in range(v.shape[0]):
        acc += exp(v[i] - peak)
    return log(acc) + peak


def crf_forward(object emissions_in, object transitions_in, object start_in,
                object end_in):
    cdef double[:, ::1] em = _c2d(emissions_in), trans = _c2d(transitions_in)
    cdef double[::1] start = _c1d(start_in), end = _c1d(end_in)
    cdef Py_ssize_t steps = em.shape[0], n_tags = em.shape[1]
    buf = np.empty((3, n_tags))
    cdef double[:, ::1] b = buf
    cdef double[::1] alpha = b[0], nxt = b[1], col = b[2]
    cdef Py_ssize_t t, i, j
    cdef double out
    with nogil:
        for j in range(n_tags):
            alpha[j] = start[j] + em[0, j]
        for t in range(1, steps):
            for j in range(n_tags):
                for i in range(n_tags):
                    col[i] = alpha[i] + trans[i, j]
                nxt[j] = _lse(col) + em[t, j]
            for j in range(n_tags):
                alpha[j] = nxt[j]
        for j in range(n_tags):
            alpha[j] = alpha[j] + end[j]
        out = _lse(alpha)
    return out


def crf_viterbi(object emissions_in, object transitions_in, object start_in,
                object end_in):
    cdef double[:, ::1] em = _c2d(emissions_in), trans = _c2d(transitions_in)
    cdef double[::1] start = _c1d(start_in), end = _c1d(end_in)
    cdef Py_ssize_t steps = em.shape[0], n_tags = em.shape[1]
    back_arr = np.empty((steps, n_tags), dtype=np.int64)
    path_arr = np.empty(steps, dtype=np.int64)
    cdef long long[:, ::1] back = back_arr
    cdef long long[::1] path = path_arr
    buf = np.empty((2, n_tags))
    cdef double[:, ::1] b = buf
    cdef double[::1] score = b[0], nxt = b[1]
    cdef Py_ssize_t t, i, j, arg, last
    cdef double best, v, out
    with nogil:
        for j in range(n_tags):
            score[j] = start[j] + em[0, j]
        for t in range(1, steps):
            for j in range(n_tags):
                best = score[0] + trans[0, j]
                arg = 0
                for i in range(1, n_tags):
                    v = score[i] + trans[i, j]
                    if v > best:
                        best = v
                        arg = i
                nxt[j] = best + em[t, j]
                back[t, j] = arg
            for j in range(n_tags):
                score[j] = nxt[j]
        for j in range(n_tags):
            score[j] = score[j] + end[j]
        last = 0
        best = score[0]
        for j in range(1, n_tags):
            if score[j] > best:
                best = score[j]
                last = j
        out = score[last]
        path[steps - 1] = last
        for t in range(steps - 1, 0, -1):
            last = back[t, last]
            path[t - 1] = last
    return path_arr, out


def crf_marginals(object emissions_in, object transitions_in, object start_in,
                  object end_in):
    cdef double[:, ::1] em = _c2d(emissions_in), trans = _c2d(transitions_in)
    cdef double[::1] start = _c1d(start_in), end = _c1d(end_in)
    cdef Py_ssize_t steps = em.shape[0], n_tags = em.shape[1]
    alpha_arr = np.empty((steps, n_tags))
    beta_arr = np.empty((steps, n_tags))
    unary_arr = np.empty((steps, n_tags))
    pairwise_arr = np.empty((steps - 1 if steps > 1 else 0, n_tags, n_tags))
    cdef double[:, ::1] alpha = alpha_arr, beta = beta_arr, unary = unary_arr
    cdef double[:, :, ::1] pairwise = pairwise_arr
    col_arr = np.empty(n_tags)
    cdef double[::1] col = col_arr
    cdef Py_ssize_t t, i, j
    cdef double log_z
    with nogil:
        for j in range(n_tags):
            alpha[0, j] = start[j] + em[0, j]
        for t in range(1, steps):
            for j in range(n_tags):
                for i in range(n_tags):
                    col[i] = alpha[t - 1, i] + trans[i, j]
                alpha[t, j] = _lse(col) + em[t, j]
        for j in range(n_tags):
            col[j] = alpha[steps - 1, j] + end[j]
        log_z = _lse(col)
        for j in range(n_tags):
            beta[steps - 1, j] = end[j]
        for t in range(steps - 2, -1, -1):
            for i in range(n_tags):
                for j in range(n_tags):
                    col[j] = trans[i, j] + em[t + 1, j] + beta[t + 1, j]
                beta[t, i] = _lse(col)
        for t in range(steps):
            for j in range(n_tags):
                unary[t, j] = exp(alpha[t, j] + beta[t, j] - log_z)
        for t in range(steps - 1):
            for i in range(n_tags):
                for j in range(n_tags):
                    pairwise[t, i, j] = exp(
                        alpha[t, i] + trans[i, j] + em[t + 1, j]
                        + beta[t + 1, j] - log_z
                    )
    return unary_arr, pairwise_arr, log_z

"""Reference numpy implementations of the sequence-model kernels.

These are the fallback when the compiled extension is unavailable. Both
backends implement the same contracts:

- ``gru_forward`` runs a single-direction GRU over a (T, k) input from a zero
  initial state, returning per-step hidden states and gate activations.
- ``gru_backward`` accumulates parameter gradients through time given the
  upstream gradient on every hidden state.
- ``crf_forward`` / ``crf_viterbi`` / ``crf_marginals`` are the linear-chain
  dynamic programs in log space. Viterbi ties break toward the lowest tag
  index.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_forward(x, w_update, u_update, b_update, w_reset, u_reset, b_reset,
                w_cand, u_cand, b_cand):
    """One GRU direction over x (T, k). Returns (hidden, update, reset, cand).

    Cell equations (update gate carries the previous state):
        z_t = sigmoid(Wz x_t + Uz h_{t-1} + bz)
        r_t = sigmoid(Wr x_t + Ur h_{t-1} + br)
        c_t = tanh(Wc x_t + Uc (r_t * h_{t-1}) + bc)
        h_t = z_t * h_{t-1} + (1 - z_t) * c_t
    """
    steps = x.shape[0]
    size = b_update.shape[0]
    hidden = np.empty((steps, size))
    update = np.empty((steps, size))
    reset = np.empty((steps, size))
    cand = np.empty((steps, size))
    h_prev = np.zeros(size)
    for t in range(steps):
        z = _sigmoid(w_update @ x[t] + u_update @ h_prev + b_update)
        r = _sigmoid(w_reset @ x[t] + u_reset @ h_prev + b_reset)
        c = np.tanh(w_cand @ x[t] + u_cand @ (r * h_prev) + b_cand)
        h_prev = z * h_prev + (1.0 - z) * c
        update[t] = z
        reset[t] = r
        cand[t] = c
        hidden[t] = h_prev
    return hidden, update, reset, cand


def gru_backward(x, hidden, update, reset, cand, d_hidden,
                 w_update, u_update, w_reset, u_reset, w_cand, u_cand):
    """Backpropagation through time for one GRU direction.

    ``d_hidden`` is the (T, h) upstream gradient on each hidden state.
    Returns gradients in forward-argument order:
    (dWz, dUz, dbz, dWr, dUr, dbr, dWc, dUc, dbc).
    """
    steps, size = hidden.shape
    d_w_update = np.zeros_like(w_update)
    d_u_update = np.zeros_like(u_update)
    d_b_update = np.zeros(size)
    d_w_reset = np.zeros_like(w_reset)
    d_u_reset = np.zeros_like(u_reset)
    d_b_reset = np.zeros(size)
    d_w_cand = np.zeros_like(w_cand)
    d_u_cand = np.zeros_like(u_cand)
    d_b_cand = np.zeros(size)
    carry = np.zeros(size)
    for t in range(steps - 1, -1, -1):
        g = d_hidden[t] + carry
        h_prev = hidden[t - 1] if t > 0 else np.zeros(size)
        z, r, c = update[t], reset[t], cand[t]
        dz = g * (h_prev - c)
        dc = g * (1.0 - z)
        carry = g * z
        da_c = dc * (1.0 - c * c)
        d_w_cand += np.outer(da_c, x[t])
        d_u_cand += np.outer(da_c, r * h_prev)
        d_b_cand += da_c
        d_rh = u_cand.T @ da_c
        dr = d_rh * h_prev
        carry = carry + d_rh * r
        da_z = dz * z * (1.0 - z)
        d_w_update += np.outer(da_z, x[t])
        d_u_update += np.outer(da_z, h_prev)
        d_b_update += da_z
        carry = carry + u_update.T @ da_z
        da_r = dr * r * (1.0 - r)
        d_w_reset += np.outer(da_r, x[t])
        d_u_reset += np.outer(da_r, h_prev)
        d_b_reset += da_r
        carry = carry + u_reset.T @ da_r
    return (d_w_update, d_u_update, d_b_update,
            d_w_reset, d_u_reset, d_b_reset,
            d_w_cand, d_u_cand, d_b_cand)


def _logsumexp(a, axis=None):
    peak = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - peak), axis=axis, keepdims=True)) + peak
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def crf_forward(emissions, transitions, start, end):
    """Log partition of a linear-chain CRF via the forward recursion."""
    steps = emissions.shape[0]
    alpha = start + emissions[0]
    for t in range(1, steps):
        alpha = _logsumexp(alpha[:, None] + transitions, axis=0) + emissions[t]
    return float(_logsumexp(alpha + end))


def crf_viterbi(emissions, transitions, start, end):
    """Best tag path and its score; ties resolve to the lowest tag index."""
    steps, n_tags = emissions.shape
    score = start + emissions[0]
    back = np.empty((steps, n_tags), dtype=np.int64)
    for t in range(1, steps):
        cand = score[:, None] + transitions
        best_prev = np.argmax(cand, axis=0)  # first max wins ties
        score = cand[best_prev, np.arange(n_tags)] + emissions[t]
        back[t] = best_prev
    score = score + end
    last = int(np.argmax(score))
    path = np.empty(steps, dtype=np.int64)
    path[steps - 1] = last
    for t in range(steps - 1, 0, -1):
        last = int(back[t, last])
        path[t - 1] = last
    return path, float(score[path[steps - 1]])


def crf_marginals(emissions, transitions, start, end):
    """Posterior tag marginals by forward-backward.

    Returns (unary (T, K), pairwise (T-1, K, K), logZ) where
    unary[t, i] = P(y_t = i) and pairwise[t, i, j] = P(y_t = i, y_{t+1} = j).
    """
    steps, n_tags = emissions.shape
    alpha = np.empty((steps, n_tags))
    alpha[0] = start + emissions[0]
    for t in range(1, steps):
        alpha[t] = _logsumexp(alpha[t - 1][:, None] + transitions, axis=0) + emissions[t]
    log_z = float(_logsumexp(alpha[steps - 1] + end))
    beta = np.empty((steps, n_tags))
    beta[steps - 1] = end
    for t in range(steps - 2, -1, -1):
        beta[t] = _logsumexp(transitions + emissions[t + 1] + beta[t + 1], axis=1)
    unary = np.exp(alpha + beta - log_z)
    pairwise = np.empty((max(steps - 1, 0), n_tags, n_tags))
    for t in range(steps - 1):
        pairwise[t] = np.exp(
            alpha[t][:, None] + transitions + emissions[t + 1] + beta[t + 1] - log_z
        )
    return unary, pairwise, log_z

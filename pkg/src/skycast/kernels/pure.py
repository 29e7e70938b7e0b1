"""Reference recurrent-scan kernels in plain numpy.

The recurrence over time steps is the only sequential loop in the model,
so these two functions dominate training time. A compiled backend in
``_fast.pyx`` implements the identical contract; the package selects one
at import time and tests hold the two to near bit-level agreement.

Shape conventions, shared by both backends:

* ``x``      (B, T, C)   input sequences
* ``W``      (C, 4H)     input-to-gate weights
* ``R``      (H, 4H)     hidden-to-gate weights
* ``b``      (4H,)       gate bias
* gate blocks are ordered [input, forget, cell, output] along the 4H axis
* returned ``gates`` hold post-activation values, needed by the backward
  pass so nothing is recomputed from pre-activations
"""

from __future__ import annotations

import numpy as np

__all__ = ["lstm_forward", "lstm_backward"]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Split on sign so exp never overflows for large |z|.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_forward(
    x: np.ndarray, W: np.ndarray, R: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Single-layer scan from zero initial state.

    Returns ``(h_seq, c_seq, gates)`` of shapes (B, T, H), (B, T, H)
    and (B, T, 4H). The input projection is hoisted into one matmul;
    only the hidden recurrence runs step by step.
    """
    B, T, C = x.shape
    H = R.shape[0]
    xw = (x.reshape(B * T, C) @ W).reshape(B, T, 4 * H)
    h_seq = np.empty((B, T, H))
    c_seq = np.empty((B, T, H))
    gates = np.empty((B, T, 4 * H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        a = xw[:, t, :] + h @ R + b
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H : 2 * H])
        g = np.tanh(a[:, 2 * H : 3 * H])
        o = _sigmoid(a[:, 3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[:, t, :H] = i
        gates[:, t, H : 2 * H] = f
        gates[:, t, 2 * H : 3 * H] = g
        gates[:, t, 3 * H :] = o
        c_seq[:, t] = c
        h_seq[:, t] = h
    return h_seq, c_seq, gates


def lstm_backward(
    x: np.ndarray,
    W: np.ndarray,
    R: np.ndarray,
    gates: np.ndarray,
    c_seq: np.ndarray,
    h_seq: np.ndarray,
    dh_last: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Gradient of the scan when the loss depends on the final hidden state.

    ``dh_last`` is dL/dh at the last step, shape (B, H). Returns
    ``(dx, dW, dR, db)``. Per-step pre-activation gradients are collected
    and the weight gradients finished with three large matmuls.
    """
    B, T, C = x.shape
    H = R.shape[0]
    RT = R.T
    da_seq = np.empty((B, T, 4 * H))
    dh = np.array(dh_last, dtype=np.float64)
    dc = np.zeros((B, H))
    zeros_c = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        i = gates[:, t, :H]
        f = gates[:, t, H : 2 * H]
        g = gates[:, t, 2 * H : 3 * H]
        o = gates[:, t, 3 * H :]
        c_prev = c_seq[:, t - 1] if t > 0 else zeros_c
        tc = np.tanh(c_seq[:, t])
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        da = da_seq[:, t]
        da[:, :H] = (dc * g) * i * (1.0 - i)
        da[:, H : 2 * H] = (dc * c_prev) * f * (1.0 - f)
        da[:, 2 * H : 3 * H] = (dc * i) * (1.0 - g * g)
        da[:, 3 * H :] = do * o * (1.0 - o)
        dh = da @ RT
        dc = dc * f
    da_flat = da_seq.reshape(B * T, 4 * H)
    dx = (da_flat @ W.T).reshape(B, T, C)
    dW = x.reshape(B * T, C).T @ da_flat
    h_prev = np.concatenate([np.zeros((B, 1, H)), h_seq[:, :-1]], axis=1)
    dR = h_prev.reshape(B * T, H).T @ da_flat
    db = da_flat.sum(axis=0)
    return dx, dW, dR, db

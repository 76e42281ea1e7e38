"""Recurrent and linear layers on top of the autodiff tensor.

The LSTM recurrence is a single fused graph op: the forward loop caches
gate activations and the backward closure runs the full
backpropagation-through-time sweep in vectorized numpy. Gate blocks are
ordered [input, forget, output, candidate].
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from . import tensor as T
from .tensor import Tensor


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_sequence(x: Tensor, wx: Tensor, wh: Tensor, b: Tensor, reverse: bool = False) -> Tensor:
    """Run an LSTM over a (T, B, F_in) sequence; returns hidden states (T, B, H).

    ``reverse=True`` scans right-to-left with outputs aligned to input time.
    """
    if x.data.ndim != 3:
        raise ShapeMismatch("lstm input must be (T, B, F_in)")
    n_steps, batch, f_in = x.data.shape
    hidden = wh.data.shape[0]
    if wx.data.shape != (f_in, 4 * hidden) or wh.data.shape != (hidden, 4 * hidden):
        raise ShapeMismatch("lstm weight shapes do not match the input")

    xd = x.data[::-1] if reverse else x.data
    gates_x = xd.reshape(n_steps * batch, f_in) @ wx.data + b.data
    gates_x = gates_x.reshape(n_steps, batch, 4 * hidden)

    ifog = np.empty((n_steps, batch, 4 * hidden))
    c_seq = np.empty((n_steps, batch, hidden))
    tc_seq = np.empty((n_steps, batch, hidden))
    h_seq = np.empty((n_steps, batch, hidden))
    h = np.zeros((batch, hidden))
    c = np.zeros((batch, hidden))
    wh_d = wh.data
    for t in range(n_steps):
        a = gates_x[t] + h @ wh_d
        gi = _sigmoid(a[:, : 3 * hidden])
        gg = np.tanh(a[:, 3 * hidden :])
        i, f, o = gi[:, :hidden], gi[:, hidden : 2 * hidden], gi[:, 2 * hidden :]
        c = f * c + i * gg
        tc = np.tanh(c)
        h = o * tc
        ifog[t, :, : 3 * hidden] = gi
        ifog[t, :, 3 * hidden :] = gg
        c_seq[t] = c
        tc_seq[t] = tc
        h_seq[t] = h
    out = h_seq[::-1].copy() if reverse else h_seq

    def grad_fn(g_out):
        g = g_out[::-1] if reverse else g_out
        d_a = np.empty((n_steps, batch, 4 * hidden))
        d_wh = np.zeros_like(wh.data)
        dh_next = np.zeros((batch, hidden))
        dc_next = np.zeros((batch, hidden))
        for t in range(n_steps - 1, -1, -1):
            i = ifog[t, :, :hidden]
            f = ifog[t, :, hidden : 2 * hidden]
            o = ifog[t, :, 2 * hidden : 3 * hidden]
            gg = ifog[t, :, 3 * hidden :]
            tc = tc_seq[t]
            c_prev = c_seq[t - 1] if t > 0 else 0.0
            h_prev = h_seq[t - 1] if t > 0 else None

            dh = g[t] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            d_a[t, :, :hidden] = dc * gg * i * (1.0 - i)
            d_a[t, :, hidden : 2 * hidden] = dc * c_prev * f * (1.0 - f)
            d_a[t, :, 2 * hidden : 3 * hidden] = do * o * (1.0 - o)
            d_a[t, :, 3 * hidden :] = dc * i * (1.0 - gg * gg)
            dc_next = dc * f
            if h_prev is not None:
                d_wh += h_prev.T @ d_a[t]
            dh_next = d_a[t] @ wh_d.T

        d_a_flat = d_a.reshape(n_steps * batch, 4 * hidden)
        if wh.requires_grad:
            wh._accumulate(d_wh)
        if b.requires_grad:
            b._accumulate(d_a_flat.sum(axis=0))
        if wx.requires_grad:
            wx._accumulate(xd.reshape(n_steps * batch, f_in).T @ d_a_flat)
        if x.requires_grad:
            dx = (d_a_flat @ wx.data.T).reshape(n_steps, batch, f_in)
            x._accumulate(dx[::-1] if reverse else dx)

    return Tensor._from_op(out, (x, wx, wh, b), grad_fn, "lstm")


class BiLstm:
    """Bidirectional LSTM layer; output concatenates [forward, backward]."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator, name: str):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.name = name
        self.params: dict[str, Tensor] = {}
        for direction in ("fwd", "bwd"):
            bias = np.zeros(4 * hidden_size)
            bias[hidden_size : 2 * hidden_size] = 1.0  # forget gate starts open
            self.params[f"{name}.{direction}.wx"] = Tensor(
                uniform_init(rng, input_size, (input_size, 4 * hidden_size)), requires_grad=True
            )
            self.params[f"{name}.{direction}.wh"] = Tensor(
                uniform_init(rng, hidden_size, (hidden_size, 4 * hidden_size)), requires_grad=True
            )
            self.params[f"{name}.{direction}.b"] = Tensor(bias, requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        p = self.params
        fwd = lstm_sequence(x, p[f"{self.name}.fwd.wx"], p[f"{self.name}.fwd.wh"], p[f"{self.name}.fwd.b"])
        bwd = lstm_sequence(
            x, p[f"{self.name}.bwd.wx"], p[f"{self.name}.bwd.wh"], p[f"{self.name}.bwd.b"], reverse=True
        )
        return T.concat([fwd, bwd], axis=2)


class Linear:
    """Affine map applied to the last axis."""

    def __init__(self, input_size: int, output_size: int, rng: np.random.Generator, name: str):
        self.input_size = input_size
        self.output_size = output_size
        self.name = name
        self.params = {
            f"{name}.w": Tensor(uniform_init(rng, input_size, (input_size, output_size)), requires_grad=True),
            f"{name}.b": Tensor(uniform_init(rng, input_size, (output_size,)), requires_grad=True),
        }

    def forward(self, x: Tensor) -> Tensor:
        lead = x.data.shape[:-1]
        flat = T.reshape(x, (-1, self.input_size))
        out = T.matmul(flat, self.params[f"{self.name}.w"]) + self.params[f"{self.name}.b"]
        return T.reshape(out, lead + (self.output_size,))

"""Gated recurrent unit: single cell, masked sequence runner, bidirectional.

Gate equations (single bias per gate, reset applied inside the candidate's
recurrent term):

    z = sigmoid(x Wz + h_prev Uz + bz)          update gate
    r = sigmoid(x Wr + h_prev Ur + br)          reset gate
    c = tanh(x Wh + (r * h_prev) Uh + bh)       candidate state
    h = (1 - z) * h_prev + z * c

Masked positions neither update the hidden state nor emit output, so the
recurrence runs over unmasked positions only.
"""

from __future__ import annotations

import numpy as np

from conseq.errors import ShapeError
from conseq.nn.ops import sigmoid
from conseq.nn.params import Parameter, glorot_uniform


class GRUCell:
    """One recurrence step; step/backward_step work on explicit caches."""

    GATES = ("update", "reset", "candidate")

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator, name: str,
                 dtype=np.float64):
        self.n_in = n_in
        self.n_hidden = n_hidden
        self.w = {}
        self.u = {}
        self.b = {}
        for gate in self.GATES:
            self.w[gate] = Parameter(
                f"{name}.{gate}.w", glorot_uniform(rng, n_in, n_hidden, (n_in, n_hidden), dtype)
            )
            self.u[gate] = Parameter(
                f"{name}.{gate}.u", glorot_uniform(rng, n_hidden, n_hidden, (n_hidden, n_hidden), dtype)
            )
            self.b[gate] = Parameter(f"{name}.{gate}.b", np.zeros(n_hidden, dtype=dtype))

    def parameters(self):
        params = []
        for gate in self.GATES:
            params.extend([self.w[gate], self.u[gate], self.b[gate]])
        return params

    def step(self, x, h_prev):
        """Advance one time step; returns (h, cache)."""
        if x.shape[-1] != self.n_in or h_prev.shape[-1] != self.n_hidden:
            raise ShapeError(
                f"gru step got x {x.shape}, h {h_prev.shape}; expected "
                f"(., {self.n_in}) and (., {self.n_hidden})"
            )
        z = sigmoid(x @ self.w["update"].value + h_prev @ self.u["update"].value + self.b["update"].value)
        r = sigmoid(x @ self.w["reset"].value + h_prev @ self.u["reset"].value + self.b["reset"].value)
        rh = r * h_prev
        c = np.tanh(x @ self.w["candidate"].value + rh @ self.u["candidate"].value + self.b["candidate"].value)
        h = (1.0 - z) * h_prev + z * c
        return h, (x, h_prev, z, r, rh, c)

    def backward_step(self, cache, dh):
        """Backprop one step; returns (dx, dh_prev)."""
        x, h_prev, z, r, rh, c = cache
        dc = dh * z
        dz = dh * (c - h_prev)
        dh_prev = dh * (1.0 - z)

        da_c = dc * (1.0 - c**2)
        self.w["candidate"].grad += x.reshape(-1, self.n_in).T @ da_c.reshape(-1, self.n_hidden)
        self.u["candidate"].grad += rh.reshape(-1, self.n_hidden).T @ da_c.reshape(-1, self.n_hidden)
        self.b["candidate"].grad += da_c.reshape(-1, self.n_hidden).sum(axis=0)
        drh = da_c @ self.u["candidate"].value.T
        dr = drh * h_prev
        dh_prev = dh_prev + drh * r
        dx = da_c @ self.w["candidate"].value.T

        da_z = dz * z * (1.0 - z)
        self.w["update"].grad += x.reshape(-1, self.n_in).T @ da_z.reshape(-1, self.n_hidden)
        self.u["update"].grad += h_prev.reshape(-1, self.n_hidden).T @ da_z.reshape(-1, self.n_hidden)
        self.b["update"].grad += da_z.reshape(-1, self.n_hidden).sum(axis=0)
        dx += da_z @ self.w["update"].value.T
        dh_prev = dh_prev + da_z @ self.u["update"].value.T

        da_r = dr * r * (1.0 - r)
        self.w["reset"].grad += x.reshape(-1, self.n_in).T @ da_r.reshape(-1, self.n_hidden)
        self.u["reset"].grad += h_prev.reshape(-1, self.n_hidden).T @ da_r.reshape(-1, self.n_hidden)
        self.b["reset"].grad += da_r.reshape(-1, self.n_hidden).sum(axis=0)
        dx += da_r @ self.w["reset"].value.T
        dh_prev = dh_prev + da_r @ self.u["reset"].value.T

        return dx, dh_prev


class MaskedGRU:
    """Runs a GRUCell along a padded sequence in a fixed direction.

    Masked positions carry the hidden state through unchanged and emit zeros,
    which makes the recurrence identical to running over the unmasked
    positions alone.
    """

    def __init__(self, cell: GRUCell, reverse: bool = False):
        self.cell = cell
        self.reverse = reverse
        self._caches = None
        self._mask = None

    def parameters(self):
        return self.cell.parameters()

    def forward(self, x, mask):
        """x: (N, L, D); mask: (N, L) of 0/1.  Returns (N, L, H)."""
        n, length, _ = x.shape
        h = np.zeros((n, self.cell.n_hidden), dtype=x.dtype)
        outputs = np.zeros((n, length, self.cell.n_hidden), dtype=x.dtype)
        steps = range(length - 1, -1, -1) if self.reverse else range(length)
        caches = {}
        for t in steps:
            m = mask[:, t][:, None]
            h_new, cache = self.cell.step(x[:, t], h)
            h = m * h_new + (1.0 - m) * h
            outputs[:, t] = m * h
            caches[t] = cache
        self._caches = caches
        self._mask = mask
        return outputs

    def backward(self, doutputs):
        """doutputs: (N, L, H).  Returns dx of shape (N, L, D)."""
        mask = self._mask
        n, length, _ = doutputs.shape
        dx = np.zeros((n, length, self.cell.n_in), dtype=doutputs.dtype)
        dh_carry = np.zeros((n, self.cell.n_hidden), dtype=doutputs.dtype)
        steps = range(length) if self.reverse else range(length - 1, -1, -1)
        for t in steps:
            m = mask[:, t][:, None]
            dh_total = doutputs[:, t] * m + dh_carry
            dh_new = dh_total * m
            dx_t, dh_prev = self.cell.backward_step(self._caches[t], dh_new)
            dx[:, t] = dx_t
            dh_carry = dh_total * (1.0 - m) + dh_prev
        return dx


class BiGRU:
    """Bidirectional GRU with per-position concatenated states (N, L, 2H)."""

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator, name: str,
                 dtype=np.float64):
        self.n_hidden = n_hidden
        self.fwd = MaskedGRU(GRUCell(n_in, n_hidden, rng, f"{name}.fwd", dtype))
        self.bwd = MaskedGRU(GRUCell(n_in, n_hidden, rng, f"{name}.bwd", dtype), reverse=True)

    def parameters(self):
        return self.fwd.parameters() + self.bwd.parameters()

    def forward(self, x, mask):
        out_f = self.fwd.forward(x, mask)
        out_b = self.bwd.forward(x, mask)
        return np.concatenate([out_f, out_b], axis=-1)

    def backward(self, dout):
        h = self.n_hidden
        dx_f = self.fwd.backward(dout[..., :h])
        dx_b = self.bwd.backward(dout[..., h:])
        return dx_f + dx_b

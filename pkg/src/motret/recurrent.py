"""Mask-aware gated recurrent stacks (GRU and LSTM cells, float64).

Cells are unrolled explicitly so that padded time steps provably never touch
the hidden state: at a masked step the state is carried through unchanged,
which makes padding invariance exact rather than approximate.
"""
from __future__ import annotations

import math

import torch
from torch import nn


def _init_gate_params(d_in: int, hidden: int, gates: int) -> tuple[nn.Parameter, ...]:
    k = 1.0 / math.sqrt(hidden)
    w_ih = nn.Parameter(torch.empty(gates * hidden, d_in, dtype=torch.float64).uniform_(-k, k))
    w_hh = nn.Parameter(torch.empty(gates * hidden, hidden, dtype=torch.float64).uniform_(-k, k))
    b_ih = nn.Parameter(torch.empty(gates * hidden, dtype=torch.float64).uniform_(-k, k))
    b_hh = nn.Parameter(torch.empty(gates * hidden, dtype=torch.float64).uniform_(-k, k))
    return w_ih, w_hh, b_ih, b_hh


class GruStack(nn.Module):
    """Multi-layer unidirectional GRU returning the top layer's final state."""

    def __init__(self, d_in: int, hidden: int, layers: int = 1):
        super().__init__()
        if hidden < 1 or layers < 1:
            raise ValueError("hidden and layers must be >= 1")
        self.d_in = d_in
        self.hidden = hidden
        self.layers = layers
        self.w_ih = nn.ParameterList()
        self.w_hh = nn.ParameterList()
        self.b_ih = nn.ParameterList()
        self.b_hh = nn.ParameterList()
        for layer in range(layers):
            w_ih, w_hh, b_ih, b_hh = _init_gate_params(d_in if layer == 0 else hidden, hidden, 3)
            self.w_ih.append(w_ih)
            self.w_hh.append(w_hh)
            self.b_ih.append(b_ih)
            self.b_hh.append(b_hh)

    def _cell(self, layer: int, x_t: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        gi = x_t @ self.w_ih[layer].T + self.b_ih[layer]
        gh = h @ self.w_hh[layer].T + self.b_hh[layer]
        i_r, i_z, i_n = gi.chunk(3, dim=1)
        h_r, h_z, h_n = gh.chunk(3, dim=1)
        r = torch.sigmoid(i_r + h_r)
        z = torch.sigmoid(i_z + h_z)
        n = torch.tanh(i_n + r * h_n)
        return (1.0 - z) * n + z * h

    def forward(self, x: torch.Tensor, mask: torch.Tensor, reverse: bool = False) -> torch.Tensor:
        """x: B x T x d_in, mask: B x T (True = real frame). Returns B x hidden."""
        if x.shape[-1] != self.d_in:
            raise ValueError(f"expected input dim {self.d_in}, got {x.shape[-1]}")
        if x.shape[:2] != mask.shape:
            raise ValueError("input and mask disagree on batch/time shape")
        b, t = mask.shape
        order = range(t - 1, -1, -1) if reverse else range(t)
        seq = x
        for layer in range(self.layers):
            h = x.new_zeros((b, self.hidden))
            outputs = [None] * t
            for step in order:
                h_new = self._cell(layer, seq[:, step], h)
                h = torch.where(mask[:, step].unsqueeze(1), h_new, h)
                outputs[step] = h
            seq = torch.stack(outputs, dim=1)
        return h


class LstmStack(nn.Module):
    """Multi-layer unidirectional LSTM returning the top layer's final hidden state."""

    def __init__(self, d_in: int, hidden: int, layers: int = 2):
        super().__init__()
        if hidden < 1 or layers < 1:
            raise ValueError("hidden and layers must be >= 1")
        self.d_in = d_in
        self.hidden = hidden
        self.layers = layers
        self.w_ih = nn.ParameterList()
        self.w_hh = nn.ParameterList()
        self.b_ih = nn.ParameterList()
        self.b_hh = nn.ParameterList()
        for layer in range(layers):
            w_ih, w_hh, b_ih, b_hh = _init_gate_params(d_in if layer == 0 else hidden, hidden, 4)
            self.w_ih.append(w_ih)
            self.w_hh.append(w_hh)
            self.b_ih.append(b_ih)
            self.b_hh.append(b_hh)

    def _cell(
        self, layer: int, x_t: torch.Tensor, h: torch.Tensor, c: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        gates = x_t @ self.w_ih[layer].T + self.b_ih[layer] + h @ self.w_hh[layer].T + self.b_hh[layer]
        i, f, g, o = gates.chunk(4, dim=1)
        i = torch.sigmoid(i)
        f = torch.sigmoid(f)
        g = torch.tanh(g)
        o = torch.sigmoid(o)
        c_new = f * c + i * g
        h_new = o * torch.tanh(c_new)
        return h_new, c_new

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """x: B x T x d_in, mask: B x T. Returns the final hidden state, B x hidden."""
        if x.shape[-1] != self.d_in:
            raise ValueError(f"expected input dim {self.d_in}, got {x.shape[-1]}")
        if x.shape[:2] != mask.shape:
            raise ValueError("input and mask disagree on batch/time shape")
        b, t = mask.shape
        seq = x
        for layer in range(self.layers):
            h = x.new_zeros((b, self.hidden))
            c = x.new_zeros((b, self.hidden))
            outputs = []
            for step in range(t):
                h_new, c_new = self._cell(layer, seq[:, step], h, c)
                keep = mask[:, step].unsqueeze(1)
                h = torch.where(keep, h_new, h)
                c = torch.where(keep, c_new, c)
                outputs.append(h)
            seq = torch.stack(outputs, dim=1)
        return h

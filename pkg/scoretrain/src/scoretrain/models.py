"""Toy score networks.

Two families, both operating on complex (B, N, M) batches in float64:

* level-wise models with one free coefficient per noise level (the linear
  first-order score c_i * H~ and a constant second-order diagonal d_i), used
  for closed-form recovery checks;
* a small convolutional pair (~1e5 parameters) conditioned on log-tau through
  feature-wise scale/shift, with the real and imaginary parts stacked as two
  feature channels.

forward(h, tau, level) takes the batch, per-sample noise variances, and
per-sample grid indices; level-wise models key on the index, convolutional
ones on tau itself.
"""

import torch
from torch import nn


class LevelwiseLinearScore(nn.Module):
    """First-order score c_i * H~ with one coefficient per noise level."""

    def __init__(self, n_levels: int):
        super().__init__()
        self.c = nn.Parameter(torch.full((n_levels,), -0.5, dtype=torch.float64))

    def forward(self, h, tau, level):
        return self.c[level].view(-1, 1, 1) * h


class LevelwiseConstSecond(nn.Module):
    """Second-order diagonal d_i, constant across entries, per noise level."""

    def __init__(self, n_levels: int):
        super().__init__()
        self.d = nn.Parameter(torch.full((n_levels,), -0.5, dtype=torch.float64))

    def forward(self, h, tau, level):
        return self.d[level].view(-1, 1, 1).expand(h.shape[0], h.shape[1], h.shape[2])


class _Film(nn.Module):
    # feature-wise linear modulation from a log-tau embedding
    def __init__(self, emb_dim, channels):
        super().__init__()
        self.scale = nn.Linear(emb_dim, channels)
        self.shift = nn.Linear(emb_dim, channels)

    def forward(self, x, emb):
        return (x * (1.0 + self.scale(emb)[:, :, None, None])
                + self.shift(emb)[:, :, None, None])


class ConvScore(nn.Module):
    """Small conv net over stacked (re, im) planes; order 1 outputs a complex
    score, order 2 the real second-order diagonal."""

    def __init__(self, order: int = 1, hidden: int = 48, emb_dim: int = 32):
        super().__init__()
        self.order = order
        out_ch = 2 if order == 1 else 1
        self.embed = nn.Sequential(nn.Linear(1, emb_dim), nn.SiLU(),
                                   nn.Linear(emb_dim, emb_dim), nn.SiLU())
        self.conv_in = nn.Conv2d(2, hidden, 3, padding=1)
        self.film_in = _Film(emb_dim, hidden)
        self.conv_mid1 = nn.Conv2d(hidden, hidden, 3, padding=1)
        self.film_mid1 = _Film(emb_dim, hidden)
        self.conv_mid2 = nn.Conv2d(hidden, hidden, 3, padding=1)
        self.film_mid2 = _Film(emb_dim, hidden)
        self.conv_out = nn.Conv2d(hidden, out_ch, 3, padding=1)
        self.act = nn.SiLU()
        self.double()

    def forward(self, h, tau, level):
        x = torch.stack([h.real, h.imag], dim=1)
        emb = self.embed(torch.log10(tau).view(-1, 1))
        x = self.act(self.film_in(self.conv_in(x), emb))
        x = self.act(self.film_mid1(self.conv_mid1(x), emb))
        x = self.act(self.film_mid2(self.conv_mid2(x), emb))
        out = self.conv_out(x)
        if self.order == 1:
            return torch.complex(out[:, 0], out[:, 1])
        return out[:, 0]


def make_models(kind: str, n_levels: int):
    if kind == "linear":
        return LevelwiseLinearScore(n_levels), LevelwiseConstSecond(n_levels)
    if kind == "conv":
        return ConvScore(order=1), ConvScore(order=2)
    raise ValueError(f"unknown model kind {kind!r}")

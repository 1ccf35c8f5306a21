"""Squeeze-and-excitation attention over agent channels.

Each of the N agent channels is pooled to one number (squeeze), gated through
a two-layer bottleneck with ReLU then sigmoid (excite), and the resulting
per-channel weight rescales the channel (scale). Sigmoid output is strictly
inside (0, 1), so the block can only attenuate channels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError


def bottleneck_width(n_channels, reduction_ratio):
    return max(1, n_channels // reduction_ratio)


@dataclass
class SEWeights:
    w1: Tensor  # N x (N // r)
    w2: Tensor  # (N // r) x N
    reduction_ratio: int = 2


def squeeze(e):
    """Global average pool per channel: N x T x d -> N-vector."""
    if e.ndim != 3:
        raise ShapeError(f"squeeze expects N x T x d input, got {e.shape}")
    return ad.mean(e, axis=(1, 2))


def excite(z, weights):
    """sigmoid(w2 relu(w1 z)); every output lies strictly in (0, 1)."""
    row = ad.reshape(z, (1, z.shape[0]))
    hidden = ad.relu(ad.matmul(row, weights.w1))
    s = ad.sigmoid(ad.matmul(hidden, weights.w2))
    return ad.reshape(s, (z.shape[0],))


def scale(e, s):
    """Multiply channel c of e by s[c]."""
    return ad.scale_channels(e, s)


def se_pass(e, weights, channel_mask=None):
    """Full squeeze -> excite -> scale pass, shape preserving.

    Padded (absent-agent) channels contribute zero to the squeeze so that
    values inside them can never influence real channels; the weights they
    receive are inert because their outputs are masked downstream.
    """
    z = squeeze(e)
    if channel_mask is not None:
        z = ad.mul(z, Tensor(np.asarray(channel_mask, dtype=z.dtype)))
    return scale(e, excite(z, weights))

"""Building blocks shared by HQ-Net and GViT.

Every module takes ``training`` as an explicit forward argument instead of
relying on ``nn.Module.train()`` state.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ._validation import InvalidArgument
from .pixelgraph import dropout


class ConvNormSELU(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1)
        self.norm = nn.BatchNorm2d(c_out)

    def forward(self, x, training: bool = False):
        x = self.conv(x)
        n = self.norm
        x = F.batch_norm(x, n.running_mean, n.running_var, n.weight, n.bias,
                         training=training, momentum=n.momentum, eps=n.eps)
        return F.selu(x)


class MultiHeadSelfAttention(nn.Module):
    """Scaled dot-product self-attention with separate Q/K/V/output projections."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise InvalidArgument(f"token dim {dim} is not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.query = nn.Linear(dim, dim)
        self.key = nn.Linear(dim, dim)
        self.value = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x, return_weights: bool = False):
        if x.shape[-1] != self.dim:
            raise InvalidArgument(f"expected token dim {self.dim}, got {x.shape[-1]}")
        B, T, D = x.shape
        dh = D // self.heads

        def split(t):
            return t.reshape(B, T, self.heads, dh).transpose(1, 2)

        q, k, v = split(self.query(x)), split(self.key(x)), split(self.value(x))
        weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dh), dim=-1)
        ctx = (weights @ v).transpose(1, 2).reshape(B, T, D)
        out = self.out(ctx)
        return (out, weights) if return_weights else out


def self_attention(x: torch.Tensor, module: MultiHeadSelfAttention, return_weights: bool = False):
    """Apply ``module`` to tokens ``x`` of shape ``(T, D)`` or ``(B, T, D)``."""
    squeeze = x.dim() == 2
    if squeeze:
        x = x[None]
    res = module(x, return_weights=return_weights)
    if squeeze:
        res = tuple(r[0] for r in res) if return_weights else res[0]
    return res


class TransformerBlock(nn.Module):
    """Pre-norm encoder block: attention and MLP, each with a residual."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float = 2.0):
        super().__init__()
        hidden = int(round(dim * mlp_ratio))
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x, training=False, rate=0.0, generator=None, weights_out=None):
        a, w = self.attn(self.norm1(x), return_weights=True)
        if weights_out is not None:
            weights_out.append(w)
        x = x + a
        h = F.gelu(self.fc1(self.norm2(x)))
        if training and rate:
            h = dropout(h, rate, generator)
        return x + self.fc2(h)


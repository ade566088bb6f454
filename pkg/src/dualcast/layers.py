"""Attention primitives shared by the text and temporal branches."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with separate query and key/value widths.

    ``mask`` marks valid key positions (True = attend); masked keys get
    ``-inf`` before the softmax. Returns the projected output and the
    per-head attention weights of shape (B, heads, Lq, Lk).
    """

    def __init__(self, d_model: int, heads: int, d_kv: int | None = None):
        super().__init__()
        if d_model % heads:
            raise ValueError(f"d_model {d_model} not divisible by heads {heads}")
        d_kv = d_model if d_kv is None else d_kv
        self.heads = heads
        self.d_head = d_model // heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_kv, d_model)
        self.v_proj = nn.Linear(d_kv, d_model)
        self.out_proj = nn.Linear(d_model, d_model)

    def forward(self, query, key, mask=None):
        B, Lq, D = query.shape
        Lk = key.shape[1]
        H, dh = self.heads, self.d_head
        q = self.q_proj(query).view(B, Lq, H, dh).transpose(1, 2)
        k = self.k_proj(key).view(B, Lk, H, dh).transpose(1, 2)
        v = self.v_proj(key).view(B, Lk, H, dh).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        if mask is not None:
            scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(B, Lq, D)
        return self.out_proj(out), weights


class FeedForward(nn.Module):
    def __init__(self, d_model: int, expansion: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(d_model, expansion * d_model)
        self.fc2 = nn.Linear(expansion * d_model, d_model)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


def _norm(d: int, placement: str) -> nn.Module:
    return nn.LayerNorm(d) if placement == "pre" else nn.Identity()


class SelfAttentionBlock(nn.Module):
    """x + MHSA(norm(x)), optionally followed by x + FFN(norm(x))."""

    def __init__(self, d_model: int, heads: int, norm: str = "pre", ffn: bool = False):
        super().__init__()
        self.norm = _norm(d_model, norm)
        self.attn = MultiHeadAttention(d_model, heads)
        self.ffn = FeedForward(d_model) if ffn else None
        self.ffn_norm = _norm(d_model, norm) if ffn else None

    def forward(self, x, mask=None):
        h = self.norm(x)
        a, w = self.attn(h, h, mask)
        x = x + a
        if self.ffn is not None:
            x = x + self.ffn(self.ffn_norm(x))
        return x, w


def zero_output_projections(module: nn.Module) -> None:
    """Zero the weight and bias of every attention output projection below ``module``."""
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, MultiHeadAttention):
                m.out_proj.weight.zero_()
                m.out_proj.bias.zero_()

"""Temporal branch, history/future interaction stages and the Student's-T head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import Ablation, ModelConfig
from .data import STD_FLOOR, MultimodalWindow, StudentTParams
from .layers import FeedForward, MultiHeadAttention, SelfAttentionBlock, _norm
from .text import PooledText, TextBranch

SCALE_FLOOR = 1e-4
DOF_FLOOR = 2.0
DOF_MARGIN = 1e-6  # keeps dof strictly above 2 when softplus underflows


def instance_normalize(history: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Per-row zero mean / unit population std, std floored; returns (x, mean, std)."""
    mean = history.mean(dim=-1, keepdim=True)
    std = history.var(dim=-1, keepdim=True, unbiased=False).sqrt().clamp_min(STD_FLOOR)
    return (history - mean) / std, mean, std


class PatchEmbedding(nn.Module):
    """Non-overlapping patches through one shared affine map; a learned CLS token is appended last."""

    def __init__(self, patch_len: int, d_model: int):
        super().__init__()
        self.patch_len = patch_len
        self.proj = nn.Linear(patch_len, d_model)
        nn.init.zeros_(self.proj.bias)
        self.cls = nn.Parameter(torch.randn(d_model) * 0.02)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, L = x.shape
        patches = self.proj(x.reshape(B, L // self.patch_len, self.patch_len))
        cls = self.cls.expand(B, 1, -1)
        return torch.cat([patches, cls], dim=1)


class UnimodalEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.layers = nn.ModuleList(
            SelfAttentionBlock(cfg.d_model, cfg.heads, cfg.norm_placement, cfg.include_ffn)
            for _ in range(cfg.n_uni)
        )

    def forward(self, tokens):
        weights = []
        for layer in self.layers:
            tokens, w = layer(tokens)
            weights.append(w)
        return tokens, weights


class HistoryInteractionLayer(nn.Module):
    """MHCA(MHSA(x) + x, text) + x: the cross-attention residual returns to the layer input."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d, p = cfg.d_model, cfg.norm_placement
        self.self_norm = _norm(d, p)
        self.self_attn = MultiHeadAttention(d, cfg.heads)
        self.cross_norm = _norm(d, p)
        self.text_norm = _norm(d, p)
        self.cross_attn = MultiHeadAttention(d, cfg.heads)
        self.ffn = FeedForward(d) if cfg.include_ffn else None
        self.ffn_norm = _norm(d, p) if cfg.include_ffn else None

    def forward(self, x, text):
        h = self.self_norm(x)
        y = x + self.self_attn(h, h)[0]
        c, w = self.cross_attn(self.cross_norm(y), self.text_norm(text))
        z = x + c
        if self.ffn is not None:
            z = z + self.ffn(self.ffn_norm(z))
        return z, w


class HistoryInteraction(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.layers = nn.ModuleList(HistoryInteractionLayer(cfg) for _ in range(cfg.n_mul))

    def forward(self, x, text):
        weights = []
        for layer in self.layers:
            x, w = layer(x, text)
            weights.append(w)
        return x, weights


class FutureInteraction(nn.Module):
    """One cross-attention from patch embeddings to future-text tokens, plus residual."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d, p = cfg.d_model, cfg.norm_placement
        self.query_norm = _norm(d, p)
        self.text_norm = _norm(d, p)
        self.cross_attn = MultiHeadAttention(d, cfg.heads)

    def forward(self, x, text):
        c, w = self.cross_attn(self.query_norm(x), self.text_norm(text))
        return x + c, w


class StudentTHead(nn.Module):
    """Affine map from one token to 3h raw values laid out [loc | scale | dof]."""

    def __init__(self, d_model: int, horizon: int):
        super().__init__()
        self.horizon = horizon
        self.proj = nn.Linear(d_model, 3 * horizon)
        nn.init.normal_(self.proj.weight, std=0.02)
        nn.init.zeros_(self.proj.bias)

    @staticmethod
    def activate(raw: torch.Tensor, horizon: int) -> StudentTParams:
        loc = raw[..., :horizon]
        scale = F.softplus(raw[..., horizon : 2 * horizon]) + SCALE_FLOOR
        dof = DOF_FLOOR + F.softplus(raw[..., 2 * horizon :]) + DOF_MARGIN
        return StudentTParams(loc, scale, dof)

    def forward(self, token: torch.Tensor) -> StudentTParams:
        return self.activate(self.proj(token), self.horizon)


@dataclass
class ForwardOutput:
    params_norm: StudentTParams  # normalized space
    params: StudentTParams  # original scale
    mean: torch.Tensor  # (B, 1)
    std: torch.Tensor  # (B, 1)
    ts_cls: torch.Tensor  # (B, d_m)
    text_cls: torch.Tensor | None  # (B, d_m), history text
    patches: torch.Tensor  # X~_P
    aligned: torch.Tensor  # X-_align
    final: torch.Tensor  # X-_final
    history_text: PooledText | None = None
    future_text: PooledText | None = None
    future_attention: torch.Tensor | None = None  # (B, heads, P, q)
    encoder_attention: list | None = None


class DualForecaster(nn.Module):
    """Text-conditioned patch forecaster with a Student's-T output distribution.

    Modules disabled by the ablation are not constructed, so ablated models
    carry fewer parameters.
    """

    def __init__(self, config: ModelConfig, ablation: Ablation | str = Ablation()):
        super().__init__()
        self.config = config.validate()
        self.ablation = Ablation.parse(ablation)
        cfg = self.config
        self.patch = PatchEmbedding(cfg.patch_len, cfg.d_model)
        self.encoder = UnimodalEncoder(cfg)
        self.text = TextBranch(cfg) if self.ablation.uses_text else None
        self.history_interact = HistoryInteraction(cfg) if self.ablation.has_history_interact else None
        self.future_interact = FutureInteraction(cfg) if self.ablation.has_future_interact else None
        self.final_norm = _norm(cfg.d_model, cfg.norm_placement)
        self.head = StudentTHead(cfg.d_model, cfg.horizon)

    @property
    def dtype(self) -> torch.dtype:
        return self.head.proj.weight.dtype

    def _texts(self, texts: Sequence[str] | None, n: int, enabled: bool) -> list[str]:
        if texts is None or not enabled:
            return [""] * n
        return list(texts)

    def forward(
        self,
        history: torch.Tensor,
        history_texts: Sequence[str] | None = None,
        future_texts: Sequence[str] | None = None,
        series_ids: Sequence[str] | None = None,
    ) -> ForwardOutput:
        ab = self.ablation
        history = history.to(self.dtype)
        B = history.shape[0]
        x, mean, std = instance_normalize(history)
        tokens, enc_w = self.encoder(self.patch(x))
        patches, ts_cls = tokens[:, :-1], tokens[:, -1]

        hist_pool = fut_pool = None
        text_cls = None
        aligned = patches
        if self.text is not None and (self.history_interact is not None or ab.uses_contrastive):
            hist_pool = self.text.pool_history(self._texts(history_texts, B, ab.uses_history_text), series_ids)
            text_cls = hist_pool.cls
        if self.history_interact is not None:
            aligned, _ = self.history_interact(patches, hist_pool.content)

        final = aligned
        fut_w = None
        if self.future_interact is not None:
            fut_pool = self.text.pool_future(self._texts(future_texts, B, ab.uses_future_text), series_ids)
            final, fut_w = self.future_interact(aligned, fut_pool.content)

        params_norm = self.head(self.final_norm(final)[:, -1])
        params = StudentTParams(
            location=params_norm.location * std + mean,
            scale=params_norm.scale * std,
            dof=params_norm.dof,
        )
        return ForwardOutput(
            params_norm=params_norm,
            params=params,
            mean=mean,
            std=std,
            ts_cls=ts_cls,
            text_cls=text_cls,
            patches=patches,
            aligned=aligned,
            final=final,
            history_text=hist_pool,
            future_text=fut_pool,
            future_attention=fut_w,
            encoder_attention=enc_w,
        )

    def forward_windows(self, windows: Sequence[MultimodalWindow]) -> ForwardOutput:
        history = torch.tensor(np.array([w.history for w in windows]), dtype=self.dtype)
        return self(
            history,
            [w.history_text for w in windows],
            [w.future_text for w in windows],
            [w.series_id for w in windows],
        )


def count_parameters(model: nn.Module) -> dict[str, dict[str, int]]:
    """Trainable/frozen parameter counts per top-level submodule, plus a total."""
    out: dict[str, dict[str, int]] = {}
    total = {"trainable": 0, "frozen": 0}
    for name, p in model.named_parameters():
        group = name.split(".")[0]
        if group == "text":
            group = ".".join(name.split(".")[:2])
        key = "trainable" if p.requires_grad else "frozen"
        out.setdefault(group, {"trainable": 0, "frozen": 0})[key] += p.numel()
        total[key] += p.numel()
    out["total"] = total
    return out

"""Text branch: tokenizer, small trainable encoder or external embeddings, attentional pooler."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn as nn

from .config import ModelConfig, TextEncoderConfig
from .layers import MultiHeadAttention, SelfAttentionBlock

PAD, UNK, BLANK = "[PAD]", "[UNK]", "[BLANK]"
SPECIALS = (PAD, UNK, BLANK)
_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def build_vocab(texts: Iterable[str]) -> list[str]:
    counts = Counter(tok for t in texts for tok in tokenize(t))
    return list(SPECIALS) + sorted(counts)


class Tokenizer:
    """Maps text to ids; empty text becomes a single BLANK token, long text is truncated."""

    def __init__(self, vocab: Sequence[str], max_tokens: int):
        vocab = list(vocab) or list(SPECIALS)
        if tuple(vocab[:3]) != SPECIALS:
            raise ValueError(f"vocabulary must start with {SPECIALS}")
        self.vocab = vocab
        self.index = {tok: i for i, tok in enumerate(vocab)}
        self.max_tokens = max_tokens
        self.stats = Counter()
        self._cache: dict[str, tuple[int, ...]] = {}

    def encode(self, text: str) -> tuple[int, ...]:
        ids = self._cache.get(text)
        if ids is not None:
            return ids
        toks = tokenize(text)
        if not toks:
            ids = (self.index[BLANK],)
        else:
            if len(toks) > self.max_tokens:
                self.stats["truncated"] += 1
                toks = toks[: self.max_tokens]
            unk = self.index[UNK]
            ids = tuple(self.index.get(t, unk) for t in toks)
        if len(self._cache) < 100_000:
            self._cache[text] = ids
        return ids

    def batch(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        seqs = [self.encode(t) for t in texts]
        width = max(len(s) for s in seqs)
        ids = torch.zeros(len(seqs), width, dtype=torch.long)
        mask = torch.zeros(len(seqs), width, dtype=torch.bool)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = torch.tensor(s, dtype=torch.long)
            mask[i, : len(s)] = True
        return ids, mask


class SmallTextEncoder(nn.Module):
    """Learned embedding table plus a short residual self-attention stack."""

    def __init__(self, cfg: TextEncoderConfig):
        super().__init__()
        self.tokenizer = Tokenizer(cfg.vocab, cfg.max_tokens)
        self.embed = nn.Embedding(len(self.tokenizer.vocab), cfg.d)
        self.pos = nn.Parameter(torch.randn(cfg.max_tokens, cfg.d) * 0.02)
        self.layers = nn.ModuleList(
            SelfAttentionBlock(cfg.d, cfg.heads, norm="pre", ffn=True) for _ in range(cfg.layers)
        )
        self.final_norm = nn.LayerNorm(cfg.d)

    def forward(self, texts: Sequence[str], series_ids: Sequence[str] | None = None, role: str = "history"):
        ids, mask = self.tokenizer.batch(texts)
        x = self.embed(ids) + self.pos[: ids.shape[1]]
        for layer in self.layers:
            x, _ = layer(x, mask)
        return self.final_norm(x), mask


# -- external embedding sidecar -----------------------------------------------
#
# <name>.f32   little-endian float32, C order, shape [n_samples][2][G][d];
#              index 0 along the second axis is the history text, 1 the future text.
# <name>.json  {"shape": [n_samples, 2, G, d],
#               "rows": {series_id: row},
#               "lengths": {series_id: [g_history, g_future]}}   (optional)
# Without "lengths", trailing all-zero token rows are treated as padding.

ROLE_AXIS = {"history": 0, "future": 1}


def write_embedding_sidecar(
    path: str | Path,
    series_ids: Sequence[str],
    embeddings: np.ndarray,
    lengths: Sequence[tuple[int, int]] | None = None,
) -> tuple[Path, Path]:
    arr = np.ascontiguousarray(embeddings, dtype="<f4")
    if arr.ndim != 4 or arr.shape[1] != 2 or arr.shape[0] != len(series_ids):
        raise ValueError("embeddings must have shape [n_samples, 2, G, d] matching series_ids")
    path = Path(path)
    bin_path = path.with_suffix(".f32")
    idx_path = path.with_suffix(".json")
    bin_path.write_bytes(arr.tobytes(order="C"))
    index = {"shape": list(arr.shape), "rows": {sid: i for i, sid in enumerate(series_ids)}}
    if lengths is not None:
        index["lengths"] = {sid: [int(a), int(b)] for sid, (a, b) in zip(series_ids, lengths)}
    idx_path.write_text(json.dumps(index, indent=1, sort_keys=True), encoding="utf-8")
    return bin_path, idx_path


def read_embedding_sidecar(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    index = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    shape = tuple(index["shape"])
    arr = np.frombuffer(path.with_suffix(".f32").read_bytes(), dtype="<f4")
    if arr.size != int(np.prod(shape)):
        raise ValueError(f"sidecar holds {arr.size} floats, index declares shape {shape}")
    return arr.reshape(shape).astype(np.float32), index


class ExternalEmbeddings(nn.Module):
    """Frozen per-sample token embeddings looked up by series id."""

    def __init__(self, cfg: TextEncoderConfig):
        super().__init__()
        arr, index = read_embedding_sidecar(cfg.embeddings_path)
        if arr.shape[3] != cfg.d:
            raise ValueError(f"sidecar width {arr.shape[3]} != configured d {cfg.d}")
        self.register_buffer("table", torch.from_numpy(arr[:, :, : cfg.max_tokens]), persistent=False)
        self.rows = index["rows"]
        lengths = index.get("lengths")
        if lengths is None:
            nonzero = np.abs(arr).sum(axis=3) > 0  # [n, 2, G]
            last = np.where(nonzero.any(axis=2), nonzero.shape[2] - np.argmax(nonzero[:, :, ::-1], axis=2), 0)
            lengths = {sid: [int(last[r, 0]), int(last[r, 1])] for sid, r in self.rows.items()}
        self.lengths = {sid: [min(int(g), cfg.max_tokens) for g in v] for sid, v in lengths.items()}

    def forward(self, texts: Sequence[str], series_ids: Sequence[str] | None = None, role: str = "history"):
        if series_ids is None:
            raise KeyError("external embeddings need series ids")
        axis = ROLE_AXIS[role]
        G = self.table.shape[2]
        out = torch.zeros(len(texts), G, self.table.shape[3], dtype=self.table.dtype)
        mask = torch.zeros(len(texts), G, dtype=torch.bool)
        for i, (text, sid) in enumerate(zip(texts, series_ids)):
            if text == "":
                mask[i, 0] = True  # BLANK: one zero token
                continue
            if sid not in self.rows:
                raise KeyError(f"series id {sid!r} missing from the embedding sidecar")
            g = max(1, self.lengths[sid][axis])
            out[i] = self.table[self.rows[sid], axis]
            mask[i, :g] = True
        width = int(mask.sum(dim=1).max())
        return out[:, :width], mask[:, :width]


# -- pooling ------------------------------------------------------------------


@dataclass
class PooledText:
    content: torch.Tensor  # (B, q, d_m)
    cls: torch.Tensor  # (B, d_m)
    weights: torch.Tensor  # (B, heads, q+1, G')


class AttentionalPooler(nn.Module):
    """Learnable (q+1) queries cross-attend over text tokens; the last row is the CLS."""

    def __init__(self, d_text: int, d_model: int, n_queries: int, heads: int):
        super().__init__()
        self.input_proj = nn.Linear(d_text, d_model) if d_text != d_model else nn.Identity()
        self.queries = nn.Parameter(torch.randn(n_queries + 1, d_model) * 0.02)
        self.attn = MultiHeadAttention(d_model, heads)

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor, queries: torch.Tensor | None = None) -> PooledText:
        kv = self.input_proj(tokens)
        q = self.queries if queries is None else queries
        out, w = self.attn(q.unsqueeze(0).expand(kv.shape[0], -1, -1), kv, mask)
        return PooledText(content=out[:, :-1], cls=out[:, -1], weights=w)


class TextBranch(nn.Module):
    """Encoder plus pooler; history and future share query parameters unless configured apart."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        tcfg = cfg.text
        if tcfg.kind == "trainable_small":
            self.encoder = SmallTextEncoder(tcfg)
        else:
            self.encoder = ExternalEmbeddings(tcfg)
        self.pooler = AttentionalPooler(tcfg.d, cfg.d_model, cfg.n_queries, cfg.heads)
        self.future_queries = None
        if not cfg.share_text_queries:
            self.future_queries = nn.Parameter(self.pooler.queries.detach().clone())
        if tcfg.frozen:
            for p in self.encoder.parameters():
                p.requires_grad_(False)

    def encode(self, texts, series_ids=None, role="history"):
        return self.encoder(texts, series_ids, role)

    def pool(self, texts: Sequence[str], series_ids: Sequence[str] | None = None, role: str = "history") -> PooledText:
        tokens, mask = self.encode(texts, series_ids, role)
        tokens = tokens.to(self.pooler.queries.dtype)
        queries = self.future_queries if role == "future" and self.future_queries is not None else None
        return self.pooler(tokens, mask, queries)

    def pool_history(self, texts, series_ids=None) -> PooledText:
        return self.pool(texts, series_ids, "history")

    def pool_future(self, texts, series_ids=None) -> PooledText:
        return self.pool(texts, series_ids, "future")

"""Condition decoding and prototype retrieval.

The condition decoder replicates the last fused token F times, runs a causal
self-attention stack, then refines against the full fused sequence with
rotary-encoded cross-attention. The prototype bank holds learnable waveforms
initialized from trigonometric/exponential/logarithmic/polynomial bases; the
retriever produces a softmax mixture over bank rows per future token.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn

from .encoder import (FeedForward, NEG_INF, merge_heads, sinusoidal_positions,
                      split_heads)

PROTOTYPE_FAMILIES = ("trig", "exp", "log", "poly")


def rotate_pairs(x: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
    """Rotary position encoding on the last dim (must be even): the two
    halves of each head vector form rotation pairs. Norm-preserving."""
    d = x.shape[-1]
    if d % 2:
        raise ValueError("rotary encoding needs an even head dimension")
    half = d // 2
    inv_freq = 1.0 / (10000.0 ** (torch.arange(half, dtype=x.dtype, device=x.device) / half))
    theta = positions.to(x.dtype)[:, None] * inv_freq[None, :]  # (n, half)
    cos, sin = torch.cos(theta), torch.sin(theta)
    x1, x2 = x[..., :half], x[..., half:]
    return torch.cat([x1 * cos - x2 * sin, x2 * cos + x1 * sin], dim=-1)


class CausalBlock(nn.Module):
    """Pre-norm self-attention where position i attends to positions <= i."""

    def __init__(self, d: int, heads: int, ffn_dim: int):
        super().__init__()
        self.heads = heads
        self.wq = nn.Linear(d, d)
        self.wk = nn.Linear(d, d)
        self.wv = nn.Linear(d, d)
        self.wo = nn.Linear(d, d)
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)
        self.ffn = FeedForward(d, ffn_dim)

    def forward(self, x):
        h = self.norm1(x)
        q = split_heads(self.wq(h), self.heads)
        k = split_heads(self.wk(h), self.heads)
        v = split_heads(self.wv(h), self.heads)
        scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
        n = x.shape[1]
        future = torch.triu(torch.ones(n, n, dtype=torch.bool, device=x.device), 1)
        scores = scores.masked_fill(future, NEG_INF)
        x = x + self.wo(merge_heads(torch.softmax(scores, dim=-1) @ v))
        x = x + self.ffn(self.norm2(x))
        return x


class RotaryCrossBlock(nn.Module):
    """Pre-norm cross-attention with rotary encoding applied to the query and
    key streams at their respective sequence positions."""

    def __init__(self, d: int, heads: int, ffn_dim: int):
        super().__init__()
        self.heads = heads
        self.wq = nn.Linear(d, d)
        self.wk = nn.Linear(d, d)
        self.wv = nn.Linear(d, d)
        self.wo = nn.Linear(d, d)
        self.norm_q = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)
        self.ffn = FeedForward(d, ffn_dim)

    def forward(self, x, memory, q_positions, k_positions):
        q = split_heads(self.wq(self.norm_q(x)), self.heads)
        k = split_heads(self.wk(memory), self.heads)
        v = split_heads(self.wv(memory), self.heads)
        q = rotate_pairs(q, q_positions)
        k = rotate_pairs(k, k_positions)
        scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
        x = x + self.wo(merge_heads(torch.softmax(scores, dim=-1) @ v))
        x = x + self.ffn(self.norm2(x))
        return x


class ConditionDecoder(nn.Module):
    def __init__(self, d: int, heads: int, ffn_dim: int, n_future: int,
                 causal_layers: int = 2, cross_layers: int = 1):
        super().__init__()
        self.n_future = n_future
        self.causal = nn.ModuleList(
            CausalBlock(d, heads, ffn_dim) for _ in range(causal_layers))
        self.cross = nn.ModuleList(
            RotaryCrossBlock(d, heads, ffn_dim) for _ in range(cross_layers))

    def causal_stack(self, x):
        for blk in self.causal:
            x = blk(x)
        return x

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        """fused (B, n_time, d) -> conditions (B, F, d)."""
        if fused.shape[1] == 0:
            raise ValueError("cannot decode conditions from an empty fused sequence")
        b, n, d = fused.shape
        x = fused[:, -1:, :].expand(b, self.n_future, d)
        x = self.causal_stack(x)
        # future tokens continue the fused timeline
        q_pos = torch.arange(n, n + self.n_future, device=fused.device)
        k_pos = torch.arange(n, device=fused.device)
        for blk in self.cross:
            x = blk(x, fused, q_pos, k_pos)
        return x


def decode_conditions(decoder: ConditionDecoder, fused: torch.Tensor) -> torch.Tensor:
    return decoder(fused)


def init_prototype_bank(n_prototypes: int, p_time: int,
                        seed: int = 0) -> tuple[np.ndarray, list[str]]:
    """Bank rows split as evenly as possible across the four families,
    each row an exact basis evaluation on the grid u = k/p_time, scaled to
    max-abs 1. Deterministic under seed."""
    if n_prototypes < 4:
        raise ValueError("need at least 4 prototypes, one per family")
    rng = np.random.default_rng(seed)
    u = np.arange(p_time, dtype=np.float64) / p_time
    base, rem = divmod(n_prototypes, 4)
    counts = [base + (1 if i < rem else 0) for i in range(4)]
    rows, labels = [], []
    for j in range(counts[0]):  # trig: alternating sin/cos, integer cycles
        cycles = 1 + j // 2
        phase = rng.uniform(0.0, 2.0 * math.pi)
        fn = np.sin if j % 2 == 0 else np.cos
        rows.append(fn(2.0 * math.pi * cycles * u + phase))
        labels.append("trig")
    for _ in range(counts[1]):
        lam = rng.uniform(1.0, 8.0)
        rows.append(np.exp(-lam * u))
        labels.append("exp")
    for _ in range(counts[2]):
        lam = rng.uniform(1.0, 8.0)
        rows.append(np.log1p(lam * u))
        labels.append("log")
    for j in range(counts[3]):
        k = 1 + j % 3
        rows.append(u ** k)
        labels.append("poly")
    bank = np.stack(rows)
    peak = np.max(np.abs(bank), axis=1, keepdims=True)
    peak[peak == 0.0] = 1.0  # constant rows (log/poly at p_time=1 edge) stay as-is
    return (bank / peak).astype(np.float64), labels


class PrototypeBank(nn.Module):
    """Learnable waveform matrix plus per-row family labels (stored as codes
    so they round-trip through checkpoints)."""

    def __init__(self, n_prototypes: int, p_time: int, seed: int = 0):
        super().__init__()
        bank, labels = init_prototype_bank(n_prototypes, p_time, seed)
        self.bank = nn.Parameter(torch.tensor(bank, dtype=torch.float32))
        codes = torch.tensor([PROTOTYPE_FAMILIES.index(l) for l in labels],
                             dtype=torch.int64)
        self.register_buffer("family_labels", codes)

    @property
    def labels(self) -> list[str]:
        return [PROTOTYPE_FAMILIES[int(c)] for c in self.family_labels]


class PrototypeRetriever(nn.Module):
    """Transformer over [text ctx; image ctx; F sinusoidal future-position
    queries] with a linear head to bank logits read at the query positions.
    Output weights are softmax rows."""

    def __init__(self, d: int, heads: int, ffn_dim: int, n_future: int,
                 n_prototypes: int, layers: int = 1):
        super().__init__()
        from .encoder import TransformerEncoder
        self.n_future = n_future
        self.type_embed = nn.Parameter(torch.randn(3, d) * 0.02)
        self.register_buffer(
            "future_queries", sinusoidal_positions(n_future, d), persistent=False)
        self.encoder = TransformerEncoder(d, heads, ffn_dim, layers)
        self.head = nn.Linear(d, n_prototypes)

    def forward(self, text_ctx: torch.Tensor, image_ctx: torch.Tensor) -> torch.Tensor:
        b = text_ctx.shape[0]
        queries = self.future_queries.unsqueeze(0).expand(b, -1, -1)
        seq = torch.cat([
            text_ctx + self.type_embed[0],
            image_ctx + self.type_embed[1],
            queries + self.type_embed[2],
        ], dim=1)
        hidden = self.encoder(seq)
        logits = self.head(hidden[:, -self.n_future:, :])
        return torch.softmax(logits, dim=-1)  # (B, F, M)


def retrieve_prototypes(retriever: PrototypeRetriever, text_ctx, image_ctx,
                        bank: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Returns (weights (B, F, M), mixed prototypes (B, F, p_time))."""
    weights = retriever(text_ctx, image_ctx)
    return weights, weights @ bank

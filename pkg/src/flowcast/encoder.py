"""Cross-modality encoder: per-modality transformer stacks, token distillation
down to fixed-size sets, a cross-modal guidance matrix that biases temporal
self-attention, and additive fusion of all three modalities."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

NEG_INF = -1e9  # additive mask value; exp underflows to exactly 0 after softmax


def sinusoidal_positions(n: int, d: int, offset: int = 0,
                         dtype=torch.float32) -> torch.Tensor:
    """Standard fixed sine/cosine position table, (n, d)."""
    pos = torch.arange(offset, offset + n, dtype=torch.float64).unsqueeze(1)
    half = d // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    ang = pos * freqs.unsqueeze(0)
    table = torch.zeros(n, d, dtype=torch.float64)
    table[:, 0::2] = torch.sin(ang)
    table[:, 1::2] = torch.cos(ang[:, : d - half])
    return table.to(dtype)


def split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(1, 2)  # (b, h, n, dh)


def merge_heads(x: torch.Tensor) -> torch.Tensor:
    b, h, n, dh = x.shape
    return x.transpose(1, 2).reshape(b, n, h * dh)


class FeedForward(nn.Module):
    def __init__(self, d: int, ffn_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(d, ffn_dim)
        self.fc2 = nn.Linear(ffn_dim, d)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class EncoderBlock(nn.Module):
    """Pre-norm self-attention block used by the image/text stand-in encoders."""

    def __init__(self, d: int, heads: int, ffn_dim: int):
        super().__init__()
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.heads = heads
        self.wq = nn.Linear(d, d)
        self.wk = nn.Linear(d, d)
        self.wv = nn.Linear(d, d)
        self.wo = nn.Linear(d, d)
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)
        self.ffn = FeedForward(d, ffn_dim)

    def forward(self, x, valid_mask=None):
        h = self.norm1(x)
        q = split_heads(self.wq(h), self.heads)
        k = split_heads(self.wk(h), self.heads)
        v = split_heads(self.wv(h), self.heads)
        scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
        if valid_mask is not None:
            scores = scores.masked_fill(~valid_mask[:, None, None, :], NEG_INF)
        x = x + self.wo(merge_heads(torch.softmax(scores, dim=-1) @ v))
        x = x + self.ffn(self.norm2(x))
        return x


class TransformerEncoder(nn.Module):
    """Shape-preserving stack; zero layers is the identity."""

    def __init__(self, d: int, heads: int, ffn_dim: int, layers: int):
        super().__init__()
        self.blocks = nn.ModuleList(
            EncoderBlock(d, heads, ffn_dim) for _ in range(layers))

    def forward(self, x, valid_mask=None):
        for blk in self.blocks:
            x = blk(x, valid_mask)
        return x


class TokenDistiller(nn.Module):
    """Multi-head cross-attention from K learnable query vectors onto the
    modality's hidden tokens, compressing n tokens to K. Keys carry no
    positions, so the output is equivariant under key permutation."""

    def __init__(self, k_tokens: int, d: int, heads: int = 1):
        super().__init__()
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.heads = heads
        self.queries = nn.Parameter(torch.randn(k_tokens, d) * 0.02)
        self.wq = nn.Linear(d, d)
        self.wk = nn.Linear(d, d)
        self.wv = nn.Linear(d, d)
        self.wo = nn.Linear(d, d)

    def forward(self, hidden: torch.Tensor, valid_mask=None) -> torch.Tensor:
        if hidden.shape[1] == 0:
            raise ValueError("cannot distill an empty token set")
        b = hidden.shape[0]
        q = split_heads(self.wq(self.queries).expand(b, -1, -1), self.heads)
        k = split_heads(self.wk(hidden), self.heads)
        v = split_heads(self.wv(hidden), self.heads)
        scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
        if valid_mask is not None:
            scores = scores.masked_fill(~valid_mask[:, None, None, :], NEG_INF)
        return self.wo(merge_heads(torch.softmax(scores, dim=-1) @ v))


class ModalityGuidance(nn.Module):
    """Unnormalized cross-attention scores from time tokens to the distilled
    image and text sets, bridged by a learnable metric into an n_time x n_time
    bias matrix for temporal self-attention. Single-head by design."""

    def __init__(self, d_time: int, d_image: int, d_text: int,
                 k_image: int, k_text: int):
        super().__init__()
        self.wq_img = nn.Linear(d_time, d_time, bias=False)
        self.wk_img = nn.Linear(d_image, d_time, bias=False)
        self.wq_txt = nn.Linear(d_time, d_time, bias=False)
        self.wk_txt = nn.Linear(d_text, d_time, bias=False)
        self.metric = nn.Parameter(torch.randn(k_image, k_text) * 0.2)

    def forward(self, x_time, image_dist, text_dist) -> torch.Tensor:
        scale = math.sqrt(x_time.shape[-1])
        v_attn = self.wq_img(x_time) @ self.wk_img(image_dist).transpose(-1, -2) / scale
        t_attn = self.wq_txt(x_time) @ self.wk_txt(text_dist).transpose(-1, -2) / scale
        return v_attn @ self.metric @ t_attn.transpose(-1, -2)


def compute_guidance_corr(guidance: ModalityGuidance, x_time, image_dist,
                          text_dist) -> torch.Tensor:
    return guidance(x_time, image_dist, text_dist)


class GuidedBlock(nn.Module):
    """Temporal self-attention with the guidance matrix added to the raw
    query-key scores before the 1/sqrt(d_time) scaling, identically in every
    head. Post-norm residual order: LayerNorm(x + attn) then
    LayerNorm(ffn + .). With corr=None this is a vanilla block."""

    def __init__(self, d: int, heads: int, ffn_dim: int):
        super().__init__()
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.wq = nn.Linear(d, d, bias=False)
        self.wk = nn.Linear(d, d, bias=False)
        self.wv = nn.Linear(d, d, bias=False)
        self.wo = nn.Linear(d, d)
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)
        self.ffn = FeedForward(d, ffn_dim)

    def attention_weights(self, x, corr=None) -> torch.Tensor:
        q = split_heads(self.wq(x), self.heads)
        k = split_heads(self.wk(x), self.heads)
        scores = q @ k.transpose(-1, -2)
        if corr is not None:
            scores = scores + corr[:, None, :, :]
        # scaled by the full model width, shared across heads
        return torch.softmax(scores / math.sqrt(self.d), dim=-1)

    def forward(self, x, corr=None):
        v = split_heads(self.wv(x), self.heads)
        attn = self.attention_weights(x, corr)
        o = self.wo(merge_heads(attn @ v))
        x = self.norm1(x + o)
        x = self.norm2(x + self.ffn(x))
        return x


def guided_self_attention_block(block: GuidedBlock, x_time,
                                corr) -> torch.Tensor:
    return block(x_time, corr)


class CrossAttention(nn.Module):
    """Multi-head cross-attention projecting keys/values from another
    modality's width into the query width."""

    def __init__(self, d_q: int, d_kv: int, heads: int):
        super().__init__()
        if d_q % heads:
            raise ValueError(f"width {d_q} not divisible by {heads} heads")
        self.heads = heads
        self.wq = nn.Linear(d_q, d_q)
        self.wk = nn.Linear(d_kv, d_q)
        self.wv = nn.Linear(d_kv, d_q)
        self.wo = nn.Linear(d_q, d_q)

    def forward(self, queries, keys_values, valid_mask=None):
        q = split_heads(self.wq(queries), self.heads)
        k = split_heads(self.wk(keys_values), self.heads)
        v = split_heads(self.wv(keys_values), self.heads)
        scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
        if valid_mask is not None:
            scores = scores.masked_fill(~valid_mask[:, None, None, :], NEG_INF)
        return self.wo(merge_heads(torch.softmax(scores, dim=-1) @ v))


class ModalityFusion(nn.Module):
    """Two cross-attention maps (time queries against the distilled image and
    text sets) summed onto the temporal representations."""

    def __init__(self, d_time: int, d_image: int, d_text: int, heads: int):
        super().__init__()
        self.image_attn = CrossAttention(d_time, d_image, heads)
        self.text_attn = CrossAttention(d_time, d_text, heads)

    def forward(self, x_time, image_dist, text_dist):
        image_ctx = self.image_attn(x_time, image_dist)
        text_ctx = self.text_attn(x_time, text_dist)
        return x_time + image_ctx + text_ctx, image_ctx, text_ctx


def fuse_modalities(fusion: ModalityFusion, x_time, image_dist, text_dist):
    return fusion(x_time, image_dist, text_dist)

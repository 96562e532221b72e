"""Tokenizers for the three modalities: time-series patches, the endogenous
image rendered from the dominant period, and whitespace/punctuation text
tokens over a fixed template vocabulary."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .corpus import DOMAIN_NAMES, TREND_FAMILIES, WindowMeta, render_text_description

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
MASK_TOKEN = "<mask>"

_WORD_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class TimeTokenConfig:
    p_time: int = 16
    d_time: int = 32

    def validate(self) -> None:
        if self.p_time < 1 or self.d_time < 1:
            raise ValueError("p_time and d_time must be >= 1")


@dataclass(frozen=True)
class ImageRenderConfig:
    w: int = 32
    h: int = 32
    p_image: int = 8
    d_image: int = 32

    def validate(self) -> None:
        if self.w % self.p_image or self.h % self.p_image:
            raise ValueError("p_image must divide both w and h")

    @property
    def n_image(self) -> int:
        return (self.w // self.p_image) * (self.h // self.p_image)

    @property
    def flat_patch(self) -> int:
        return 3 * self.p_image * self.p_image


def patch_time_series(x: np.ndarray, cfg: TimeTokenConfig) -> np.ndarray:
    """Left-pad to the next multiple of p_time by replicating the first value,
    then cut into contiguous non-overlapping patches (ceil(T/p) of them)."""
    x = np.asarray(x)
    if x.size == 0:
        raise ValueError("cannot patch an empty series")
    p = cfg.p_time
    n = math.ceil(len(x) / p)
    pad = n * p - len(x)
    if pad:
        x = np.concatenate([np.full(pad, x[0], dtype=x.dtype), x])
    return x.reshape(n, p)


def embed_time_patches(patches: torch.Tensor, weight: torch.Tensor,
                       bias: torch.Tensor) -> torch.Tensor:
    """Row-wise affine map, weight (p_time, d_time), bias (d_time,)."""
    if patches.shape[-1] != weight.shape[0]:
        raise ValueError(f"patch width {patches.shape[-1]} != weight rows {weight.shape[0]}")
    return patches @ weight + bias


def detect_dominant_period(x: np.ndarray) -> int:
    """Dominant period from the real-FFT amplitude spectrum. The DC bin is
    excluded, ties break toward the lowest frequency bin, and the result is
    clamped to [2, T]."""
    x = np.asarray(x, dtype=np.float64)
    T = len(x)
    if T < 4:
        raise ValueError("need at least 4 samples to detect a period")
    amp = np.abs(np.fft.rfft(x))
    hi = T // 2
    f_dom = 1 + int(np.argmax(amp[1:hi + 1]))
    period = math.ceil(T / f_dom)
    return int(min(max(period, 2), T))


def fold_to_grid(x: np.ndarray, period: int) -> np.ndarray:
    """Left-pad with the first value to a multiple of `period`, reshape
    row-major to (ceil(T/period), period), and min-max scale to [0, 1]
    (constant grids map to 0.5)."""
    x = np.asarray(x, dtype=np.float64)
    T = len(x)
    if not 2 <= period <= T:
        raise ValueError(f"period {period} outside [2, {T}]")
    m = math.ceil(T / period)
    pad = m * period - T
    if pad:
        x = np.concatenate([np.full(pad, x[0]), x])
    grid = x.reshape(m, period)
    lo, hi = grid.min(), grid.max()
    if hi > lo:
        return (grid - lo) / (hi - lo)
    return np.full_like(grid, 0.5)


def render_endogenous_image(x: np.ndarray, period: int,
                            cfg: ImageRenderConfig) -> torch.Tensor:
    """Fold the series into period-aligned rows, min-max scale the grid to
    [0, 1], repeat to 3 channels, and resize to (h, w) with bilinear
    interpolation (align_corners=False)."""
    grid = fold_to_grid(x, period)
    g = torch.from_numpy(grid.astype(np.float32))
    img = g.unsqueeze(0).repeat(3, 1, 1)  # (3, m, period)
    img = F.interpolate(img.unsqueeze(0), size=(cfg.h, cfg.w),
                        mode="bilinear", align_corners=False)
    return img.squeeze(0)


def image_patchify(image: torch.Tensor, cfg: ImageRenderConfig) -> torch.Tensor:
    """Cut (3, h, w) into an (h/p x w/p) grid of 3*p*p blocks, each flattened
    in (channel, row, col) order. Returns (n_image, 3*p*p)."""
    c, h, w = image.shape
    p = cfg.p_image
    if c != 3 or h % p or w % p:
        raise ValueError(f"image {tuple(image.shape)} not divisible by patch {p}")
    blocks = image.reshape(3, h // p, p, w // p, p)
    blocks = blocks.permute(1, 3, 0, 2, 4)  # (gh, gw, 3, p, p)
    return blocks.reshape((h // p) * (w // p), 3 * p * p)


def embed_image_patches(flat: torch.Tensor, weight: torch.Tensor,
                        bias: torch.Tensor) -> torch.Tensor:
    if flat.shape[-1] != weight.shape[0]:
        raise ValueError(f"flat patch {flat.shape[-1]} != weight rows {weight.shape[0]}")
    return flat @ weight + bias


class TextVocab:
    """Fixed vocabulary: specials first, then corpus template tokens, one per
    line in the file form (line number = id)."""

    def __init__(self, tokens: list[str]):
        specials = [PAD_TOKEN, UNK_TOKEN, MASK_TOKEN]
        if tokens[:3] != specials:
            tokens = specials + [t for t in tokens if t not in specials]
        self.id_to_token = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(tokens)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")
        self.pad_id = self.token_to_id[PAD_TOKEN]
        self.unk_id = self.token_to_id[UNK_TOKEN]
        self.mask_id = self.token_to_id[MASK_TOKEN]

    def __len__(self) -> int:
        return len(self.id_to_token)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.id_to_token) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TextVocab":
        return cls(Path(path).read_text().splitlines())


def split_words(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def build_default_vocab() -> TextVocab:
    """Vocabulary over every template realization (all domains x families x
    informative flags). Deterministic."""
    seen: dict[str, None] = {}
    for domain in DOMAIN_NAMES:
        for family in TREND_FAMILIES:
            meta = WindowMeta(domain=domain, trend_family=family, period=8)
            for informative in (True, False):
                for tok in split_words(render_text_description(meta, informative)):
                    seen.setdefault(tok, None)
    return TextVocab([PAD_TOKEN, UNK_TOKEN, MASK_TOKEN] + sorted(seen))


def tokenize_text(text: str, vocab: TextVocab,
                  n_text_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Lowercased word split; unknown words map to unk; truncated or padded
    to n_text_max with a validity mask."""
    words = split_words(text)[:n_text_max]
    ids = np.full(n_text_max, vocab.pad_id, dtype=np.int64)
    mask = np.zeros(n_text_max, dtype=bool)
    for i, w in enumerate(words):
        ids[i] = vocab.token_to_id.get(w, vocab.unk_id)
        mask[i] = True
    return ids, mask

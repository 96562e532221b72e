"""Full forecaster: tokenization front-end, cross-modality encoder, condition
decoder, prototype retrieval, and the flow-matching head.

Ablation switches:
    use_guidance=False        temporal attention runs without the cross-modal
                              bias (plain multi-head self-attention)
    use_prototype_start=False flow matching starts from pure Gaussian noise
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .config import TrainConfig
from .corpus import MultimodalSample, NormStats
from .decoder import ConditionDecoder, PrototypeBank, PrototypeRetriever, retrieve_prototypes
from .encoder import (GuidedBlock, ModalityFusion, ModalityGuidance,
                      TokenDistiller, TransformerEncoder, sinusoidal_positions)
from .flowmatch import (ForecastDistribution, VelocityNet, flow_matching_loss,
                        sample_forecast)
from .tokenization import (ImageRenderConfig, TextVocab, TimeTokenConfig,
                           detect_dominant_period, embed_image_patches,
                           embed_time_patches, image_patchify,
                           patch_time_series, render_endogenous_image,
                           tokenize_text)


@dataclass
class PreparedSample:
    time_patches: np.ndarray   # (n_time, p_time) float32
    image_flat: np.ndarray     # (n_image, 3*p^2) float32
    text_ids: np.ndarray       # (n_text_max,) int64
    text_mask: np.ndarray      # (n_text_max,) bool
    target: np.ndarray         # (F, p_time) float32, normalized horizon
    norm_stats: NormStats


def prepare_sample(sample: MultimodalSample, cfg: TrainConfig,
                   vocab: TextVocab) -> PreparedSample:
    """Parameter-independent tokenization of one sample; safe to cache."""
    time_cfg = TimeTokenConfig(p_time=cfg.p_time, d_time=cfg.d_time)
    img_cfg = ImageRenderConfig(w=cfg.image_size, h=cfg.image_size,
                                p_image=cfg.image_patch, d_image=cfg.d_image)
    ctx = np.asarray(sample.context, dtype=np.float64)
    patches = patch_time_series(ctx, time_cfg).astype(np.float32)
    period = detect_dominant_period(ctx)
    image = render_endogenous_image(ctx, period, img_cfg)
    flat = image_patchify(image, img_cfg).numpy()
    ids, mask = tokenize_text(sample.text, vocab, cfg.n_text_max)
    horizon = np.asarray(sample.horizon, dtype=np.float32)
    if horizon.size != cfg.horizon_length:
        raise ValueError(
            f"horizon length {horizon.size} != n_future*p_time = {cfg.horizon_length}")
    target = horizon.reshape(cfg.n_future, cfg.p_time)
    return PreparedSample(patches, flat, ids, mask, target, sample.norm_stats)


def collate(prepared: list[PreparedSample]) -> dict[str, torch.Tensor]:
    return {
        "time_patches": torch.tensor(np.stack([p.time_patches for p in prepared])),
        "image_flat": torch.tensor(np.stack([p.image_flat for p in prepared])),
        "text_ids": torch.tensor(np.stack([p.text_ids for p in prepared])),
        "text_mask": torch.tensor(np.stack([p.text_mask for p in prepared])),
        "target": torch.tensor(np.stack([p.target for p in prepared])),
    }


class MultimodalForecaster(nn.Module):
    def __init__(self, cfg: TrainConfig, vocab_size: int,
                 use_guidance: bool = True, use_prototype_start: bool = True):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.use_guidance = use_guidance
        self.use_prototype_start = use_prototype_start
        img_cfg = ImageRenderConfig(w=cfg.image_size, h=cfg.image_size,
                                    p_image=cfg.image_patch, d_image=cfg.d_image)

        self.time_weight = nn.Parameter(
            torch.randn(cfg.p_time, cfg.d_time) * cfg.p_time ** -0.5)
        self.time_bias = nn.Parameter(torch.zeros(cfg.d_time))

        self.image_weight = nn.Parameter(
            torch.randn(img_cfg.flat_patch, cfg.d_image) * img_cfg.flat_patch ** -0.5)
        self.image_bias = nn.Parameter(torch.zeros(cfg.d_image))
        self.register_buffer("image_positions",
                             sinusoidal_positions(img_cfg.n_image, cfg.d_image),
                             persistent=False)
        self.image_encoder = TransformerEncoder(cfg.d_image, cfg.heads,
                                                cfg.ffn_dim, cfg.modality_layers)
        self.image_distiller = TokenDistiller(cfg.k_image, cfg.d_image, cfg.heads)

        self.text_embed = nn.Embedding(vocab_size, cfg.d_text)
        self.register_buffer("text_positions",
                             sinusoidal_positions(cfg.n_text_max, cfg.d_text),
                             persistent=False)
        self.text_encoder = TransformerEncoder(cfg.d_text, cfg.heads,
                                               cfg.ffn_dim, cfg.modality_layers)
        self.text_distiller = TokenDistiller(cfg.k_text, cfg.d_text, cfg.heads)
        self.null_text = nn.Parameter(torch.randn(cfg.k_text, cfg.d_text) * 0.02)

        self.guidance = ModalityGuidance(cfg.d_time, cfg.d_image, cfg.d_text,
                                         cfg.k_image, cfg.k_text)
        self.guided_blocks = nn.ModuleList(
            GuidedBlock(cfg.d_time, cfg.heads, cfg.ffn_dim)
            for _ in range(cfg.encoder_layers))
        self.fusion = ModalityFusion(cfg.d_time, cfg.d_image, cfg.d_text, cfg.heads)

        self.cond_decoder = ConditionDecoder(cfg.d_time, cfg.heads, cfg.ffn_dim,
                                             cfg.n_future, cfg.causal_layers,
                                             cfg.cross_layers)
        self.prototype = PrototypeBank(cfg.n_prototypes, cfg.p_time, seed=cfg.seed)
        self.retriever = PrototypeRetriever(cfg.d_time, cfg.heads, cfg.ffn_dim,
                                            cfg.n_future, cfg.n_prototypes,
                                            cfg.retriever_layers)
        self.velocity = VelocityNet(cfg.p_time, cfg.d_time,
                                    hidden=cfg.flow_hidden, layers=cfg.flow_layers)

    # -- encoding -----------------------------------------------------------

    def distill_text(self, text_ids, text_mask, text_present: bool):
        b = text_ids.shape[0]
        null = self.null_text.unsqueeze(0).expand(b, -1, -1)
        if not text_present:
            return null
        n = text_ids.shape[1]
        emb = self.text_embed(text_ids) + self.text_positions[:n]
        hidden = self.text_encoder(emb, text_mask)
        dist = self.text_distiller(hidden, text_mask)
        # samples with no valid token (empty text) fall back to the null set
        has_text = text_mask.any(dim=-1)[:, None, None]
        return torch.where(has_text, dist, null)

    def encode(self, batch: dict, text_present: bool = True,
               corr_override: torch.Tensor | None = None) -> dict:
        x_time = embed_time_patches(batch["time_patches"], self.time_weight,
                                    self.time_bias)
        img = embed_image_patches(batch["image_flat"], self.image_weight,
                                  self.image_bias)
        n_img = img.shape[1]
        img = self.image_encoder(img + self.image_positions[:n_img])
        img_dist = self.image_distiller(img)
        txt_dist = self.distill_text(batch["text_ids"], batch["text_mask"],
                                     text_present)
        if corr_override is not None:
            corr = corr_override
        elif self.use_guidance:
            corr = self.guidance(x_time, img_dist, txt_dist)
        else:
            corr = None
        for blk in self.guided_blocks:
            x_time = blk(x_time, corr)
        fused, image_ctx, text_ctx = self.fusion(x_time, img_dist, txt_dist)
        return {"fused": fused, "image_ctx": image_ctx, "text_ctx": text_ctx}

    def conditions_and_prototypes(self, enc: dict):
        conditions = self.cond_decoder(enc["fused"])
        weights, protos = retrieve_prototypes(
            self.retriever, enc["text_ctx"], enc["image_ctx"], self.prototype.bank)
        if not self.use_prototype_start:
            protos = torch.zeros_like(protos)
        return conditions, weights, protos

    # -- training -----------------------------------------------------------

    def training_loss(self, batch: dict, text_present: bool,
                      t: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
        """Flow-matching loss, plain mean over the F future tokens and the
        batch. t: (B,) one draw per sample; eps: (B, F, p_time)."""
        enc = self.encode(batch, text_present)
        conditions, _, protos = self.conditions_and_prototypes(enc)
        y1 = batch["target"]
        y0 = protos + eps
        b, f, p = y1.shape
        t_flat = t[:, None].expand(b, f).reshape(-1)
        per_token = flow_matching_loss(
            self.velocity, y0.reshape(-1, p), y1.reshape(-1, p),
            conditions.reshape(-1, conditions.shape[-1]), t_flat)
        return per_token.mean()

    # -- inference ----------------------------------------------------------

    def forecast_prepared(self, batch: dict, stats: list[NormStats],
                          n_samples: int, n_steps: int,
                          window_seeds: list[int],
                          text_present: bool = True) -> list[ForecastDistribution]:
        with torch.no_grad():
            enc = self.encode(batch, text_present)
            conditions, _, protos = self.conditions_and_prototypes(enc)
        out = []
        for b in range(conditions.shape[0]):
            out.append(sample_forecast(
                conditions[b], protos[b], n_steps, n_samples,
                velocity_fn=self.velocity, seed=window_seeds[b],
                norm_stats=stats[b]))
        return out

    # -- checkpoint ---------------------------------------------------------

    def to_tensors(self) -> dict[str, np.ndarray]:
        return {name: t.detach().cpu().numpy()
                for name, t in self.state_dict().items()}

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        state = self.state_dict()
        if set(tensors) != set(state):
            missing = set(state) - set(tensors)
            extra = set(tensors) - set(state)
            raise ValueError(f"checkpoint/architecture mismatch: "
                             f"missing={sorted(missing)} extra={sorted(extra)}")
        for name, arr in tensors.items():
            if tuple(arr.shape) != tuple(state[name].shape):
                raise ValueError(f"checkpoint/architecture mismatch at {name}: "
                                 f"{arr.shape} vs {tuple(state[name].shape)}")
        self.load_state_dict({k: torch.tensor(v) for k, v in tensors.items()})


def window_seed(base_seed: int, window_index: int) -> int:
    """Per-window sampling seed derived from the run seed."""
    return int(np.random.SeedSequence([base_seed, window_index]).generate_state(1)[0])

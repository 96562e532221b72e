"""Conditional flow matching with prototype starting points.

The velocity network is an MLP conditioned through adaptive layer norm:
each hidden layer is normalized, then modulated as (1 + scale(h)) * x +
shift(h) where (scale, shift) are affine in the condition vector. Time enters
only through a sinusoidal embedding concatenated to the state. Sampling is
plain Euler integration from prototype + Gaussian noise, with the velocity
evaluated at the left endpoint t = j/J of each step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
import torch.nn as nn

from .corpus import NormStats, denormalize

VelocityFn = Callable[[torch.Tensor, float, torch.Tensor], torch.Tensor]


def time_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of t in [0, 1]; frequencies geometric in
    [1, 1000]. t: (B,) -> (B, dim)."""
    half = dim // 2
    freqs = torch.exp(torch.linspace(0.0, math.log(1000.0), half,
                                     dtype=t.dtype, device=t.device))
    ang = t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


class VelocityNet(nn.Module):
    def __init__(self, p_time: int, d_cond: int, hidden: int = 64,
                 layers: int = 2, t_embed_dim: int = 16):
        super().__init__()
        self.t_embed_dim = t_embed_dim
        self.inp = nn.Linear(p_time + t_embed_dim, hidden)
        self.hidden = nn.ModuleList(
            nn.Linear(hidden, hidden) for _ in range(layers - 1))
        self.norms = nn.ModuleList(
            nn.LayerNorm(hidden, elementwise_affine=False) for _ in range(layers))
        self.mods = nn.ModuleList(
            nn.Linear(d_cond, 2 * hidden) for _ in range(layers))
        for m in self.mods:
            nn.init.zeros_(m.weight)
            nn.init.zeros_(m.bias)
        self.out = nn.Linear(hidden, p_time)
        self.act = nn.SiLU()

    def forward(self, y: torch.Tensor, t: torch.Tensor,
                h: torch.Tensor) -> torch.Tensor:
        """y (B, p), t (B,) in [0, 1], h (B, d_cond) -> velocity (B, p)."""
        if not torch.isfinite(y).all():
            raise ValueError("non-finite state passed to the velocity net")
        x = self.inp(torch.cat([y, time_embedding(t, self.t_embed_dim)], dim=-1))
        for i, norm in enumerate(self.norms):
            if i > 0:
                x = self.hidden[i - 1](x)
            scale, shift = self.mods[i](h).chunk(2, dim=-1)
            x = self.act(norm(x) * (1.0 + scale) + shift)
        return self.out(x)


def velocity_forward(net: VelocityNet, y: torch.Tensor, t: torch.Tensor,
                     h: torch.Tensor) -> torch.Tensor:
    return net(y, t, h)


def flow_matching_loss(net: VelocityNet, y0: torch.Tensor, y1: torch.Tensor,
                       h: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    """Squared error between the predicted velocity at the interpolated
    position y_t = t*y1 + (1-t)*y0 and the fixed displacement y1 - y0,
    summed over vector components. Scalar for single vectors, (B,) batched."""
    single = y0.dim() == 1
    if single:
        y0, y1, h = y0[None], y1[None], h[None]
        t = t.reshape(1) if torch.is_tensor(t) else torch.tensor([float(t)], dtype=y0.dtype)
    yt = t[:, None] * y1 + (1.0 - t[:, None]) * y0
    err = net(yt, t, h) - (y1 - y0)
    loss = (err ** 2).sum(dim=-1)
    return loss[0] if single else loss


def noise_for(seed: int, token_index: int, sample_index: int,
              p_time: int) -> np.ndarray:
    """Standard normal draw from the stream keyed by (seed, token, sample);
    reproducible independently of batching or processing order."""
    return np.random.default_rng([seed, token_index, sample_index]).standard_normal(p_time)


@dataclass
class ForecastDistribution:
    """samples: (S, F, p_time) in normalized units."""

    samples: np.ndarray
    norm_stats: NormStats

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 3 or self.samples.shape[0] < 1:
            raise ValueError("samples must be (S, F, p_time) with S >= 1")
        if not np.isfinite(self.samples).all():
            raise ValueError("forecast samples contain non-finite values")


def sample_forecast(conditions: torch.Tensor, prototypes: torch.Tensor,
                    n_steps: int, n_samples: int, velocity_fn: VelocityFn,
                    seed: int, norm_stats: NormStats | None = None) -> ForecastDistribution:
    """Euler sampler: per (token i, sample s), start at prototype_i plus the
    (seed, i, s)-keyed Gaussian draw and take n_steps left-endpoint Euler
    steps of size 1/n_steps. Tokens are processed independently, so token
    order cannot change the result."""
    if n_steps < 1:
        raise ValueError("need at least one Euler step")
    if n_samples < 1:
        raise ValueError("need at least one sample")
    n_future, p_time = prototypes.shape
    dt = 1.0 / n_steps
    dtype = prototypes.dtype
    out = torch.empty(n_samples, n_future, p_time, dtype=dtype)
    with torch.no_grad():
        for i in range(n_future):
            eps = np.stack([noise_for(seed, i, s, p_time) for s in range(n_samples)])
            y = prototypes[i][None, :] + torch.tensor(eps, dtype=dtype)
            h = conditions[i][None, :].expand(n_samples, -1)
            for j in range(n_steps):
                t = torch.full((n_samples,), j * dt, dtype=dtype)
                y = y + velocity_fn(y, t, h) * dt
            out[:, i, :] = y
    stats = norm_stats if norm_stats is not None else NormStats(mu=0.0, sigma=1.0)
    return ForecastDistribution(samples=out.cpu().numpy(), norm_stats=stats)


def point_forecast(dist: ForecastDistribution, mode: str = "mean") -> np.ndarray:
    """Per-element statistic over the S samples, denormalized. (F, p_time)."""
    if mode == "mean":
        stat = dist.samples.mean(axis=0)
    elif mode == "median":
        stat = np.median(dist.samples, axis=0)
    else:
        raise ValueError(f"unknown point mode: {mode!r}")
    return denormalize(stat, dist.norm_stats)

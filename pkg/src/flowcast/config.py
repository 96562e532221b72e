"""Training/model configuration: a flat key=value text format with strict
key checking, plus the desk-scale and paper-scale presets."""

from __future__ import annotations

from dataclasses import dataclass, asdict, fields
from pathlib import Path


@dataclass
class TrainConfig:
    # optimization
    learning_rate: float = 1e-3
    lr_step_epochs: int = 8000      # StepLR period, in optimizer steps
    lr_decay: float = 0.5
    batch_size: int = 64
    max_steps: int = 20000
    text_mask_prob: float = 0.3
    grad_clip: float = 1.0
    checkpoint_interval: int = 2000
    seed: int = 0
    # model dims
    d_time: int = 32
    d_image: int = 32
    d_text: int = 32
    ffn_dim: int = 64
    heads: int = 2
    encoder_layers: int = 2         # guided temporal blocks
    modality_layers: int = 2        # image/text stand-in encoder depth
    causal_layers: int = 2
    cross_layers: int = 1
    retriever_layers: int = 1
    flow_layers: int = 2
    flow_hidden: int = 64
    k_image: int = 4
    k_text: int = 4
    n_prototypes: int = 64
    p_time: int = 16
    n_future: int = 4
    image_size: int = 32
    image_patch: int = 8
    n_text_max: int = 16

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.text_mask_prob <= 1.0:
            raise ValueError("text_mask_prob must lie in [0, 1]")
        for name in ("d_time", "d_image", "d_text"):
            if getattr(self, name) % self.heads:
                raise ValueError(f"{name} must be divisible by heads")
        if self.image_size % self.image_patch:
            raise ValueError("image_patch must divide image_size")

    @property
    def horizon_length(self) -> int:
        return self.n_future * self.p_time


_INT_FIELDS = {f.name for f in fields(TrainConfig) if f.type == "int"}
_FLOAT_FIELDS = {f.name for f in fields(TrainConfig) if f.type == "float"}


def parse_config_text(text: str) -> TrainConfig:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key in _INT_FIELDS:
            values[key] = int(val)
        elif key in _FLOAT_FIELDS:
            values[key] = float(val)
        else:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
    cfg = TrainConfig(**values)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> TrainConfig:
    return parse_config_text(Path(path).read_text())


def save_config(cfg: TrainConfig, path: str | Path) -> None:
    lines = [f"{k} = {v}" for k, v in asdict(cfg).items()]
    Path(path).write_text("\n".join(lines) + "\n")


def desk_config(**overrides) -> TrainConfig:
    cfg = TrainConfig(**overrides)
    cfg.validate()
    return cfg


def paper_scale_config() -> TrainConfig:
    """Published-scale constants: 3 encoder / 9 decoder layers, model dim 256,
    FFN 512, bank 1000, patch 48, 11 history + 4 prediction tokens, batch
    8192, AdamW at 5e-5. Documented for completeness; not CPU-trainable."""
    return TrainConfig(
        learning_rate=5e-5, batch_size=8192,
        d_time=256, d_image=256, d_text=256, ffn_dim=512,
        heads=8, encoder_layers=3, modality_layers=3,
        causal_layers=6, cross_layers=3, flow_layers=3, flow_hidden=512,
        n_prototypes=1000, p_time=48, n_future=4,
    )

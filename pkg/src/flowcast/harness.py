"""Training loop, evaluation driver, ablation runner, and the inference
scaling study. All randomness flows from the run seed through named
sub-streams, so every entry point is reproducible end to end."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from . import metrics as M
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .corpus import Corpus, MultimodalSample, NormStats, instance_normalize
from .flowmatch import point_forecast
from .model import (MultimodalForecaster, PreparedSample, collate,
                    prepare_sample, window_seed)
from .tokenization import TextVocab, build_default_vocab

_STREAMS = {"init": 0, "data": 1, "mask": 2, "flow-noise": 3, "sample": 4}

ABLATION_VARIANTS = ("full", "variant1_no_guided_attention",
                     "variant2_gaussian_start", "variant3_both")


def stream_seed(seed: int, name: str) -> int:
    return int(np.random.SeedSequence([seed, _STREAMS[name]]).generate_state(1)[0])


def build_model(cfg: TrainConfig, vocab: TextVocab | None = None,
                use_guidance: bool = True,
                use_prototype_start: bool = True) -> MultimodalForecaster:
    vocab = vocab or build_default_vocab()
    torch.manual_seed(stream_seed(cfg.seed, "init"))
    return MultimodalForecaster(cfg, len(vocab), use_guidance=use_guidance,
                                use_prototype_start=use_prototype_start)


def variant_flags(variant: str) -> tuple[bool, bool]:
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown ablation variant: {variant!r}")
    guidance = variant in ("full", "variant2_gaussian_start")
    prototype = variant in ("full", "variant1_no_guided_attention")
    return guidance, prototype


def prepare_split(corpus: Corpus, cfg: TrainConfig, vocab: TextVocab,
                  split: str) -> list[PreparedSample]:
    return [prepare_sample(s, cfg, vocab) for s in corpus.samples(split)]


def _model_meta(cfg: TrainConfig, variant: str = "full") -> dict:
    return {"config": asdict(cfg), "variant": variant}


def model_from_checkpoint(path: str | Path,
                          vocab: TextVocab | None = None) -> tuple[MultimodalForecaster, TrainConfig]:
    tensors, meta = load_checkpoint(path)
    cfg = TrainConfig(**meta["config"])
    guidance, prototype = variant_flags(meta.get("variant", "full"))
    model = build_model(cfg, vocab, guidance, prototype)
    model.load_tensors(tensors)
    model.eval()
    return model, cfg


def train(cfg: TrainConfig, corpus: Corpus, out_dir: str | Path,
          variant: str = "full", vocab: TextVocab | None = None,
          log_name: str = "loss_log.csv") -> Path:
    """Optimize the flow-matching objective end to end; returns the final
    checkpoint path. Writes the checkpoint atomically every
    checkpoint_interval steps and appends one loss-log row per step."""
    cfg.validate()
    if cfg.horizon_length != corpus.spec.horizon_length:
        raise ValueError(
            f"config horizon {cfg.horizon_length} != corpus horizon "
            f"{corpus.spec.horizon_length}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = vocab or build_default_vocab()
    use_guidance, use_prototype = variant_flags(variant)
    model = build_model(cfg, vocab, use_guidance, use_prototype)
    model.train()

    prepared = prepare_split(corpus, cfg, vocab, "train")
    if not prepared:
        raise ValueError("training split is empty")
    stats = [p.norm_stats for p in prepared]
    del stats  # stats are not needed during training; targets are normalized

    opt = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=cfg.lr_step_epochs,
                                            gamma=cfg.lr_decay)
    data_rng = np.random.default_rng(stream_seed(cfg.seed, "data"))
    mask_rng = np.random.default_rng(stream_seed(cfg.seed, "mask"))
    noise_rng = np.random.default_rng(stream_seed(cfg.seed, "flow-noise"))

    ckpt_path = out / "checkpoint.bin"
    log_path = out / log_name
    meta = _model_meta(cfg, variant)
    n = len(prepared)
    order: list[int] = []

    with log_path.open("w", newline="") as log:
        writer = csv.writer(log)
        writer.writerow(["step", "lr", "loss"])
        for step in range(cfg.max_steps):
            if len(order) < cfg.batch_size:
                epoch = list(data_rng.permutation(n))
                order.extend(epoch)
            idx, order = order[:cfg.batch_size], order[cfg.batch_size:]
            batch = collate([prepared[i] for i in idx])
            text_present = bool(mask_rng.random() >= cfg.text_mask_prob)
            t = torch.tensor(noise_rng.random(len(idx)), dtype=torch.float32)
            eps = torch.tensor(
                noise_rng.standard_normal((len(idx), cfg.n_future, cfg.p_time)),
                dtype=torch.float32)
            loss = model.training_loss(batch, text_present, t, eps)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss at step {step}: {loss.item()}")
            lr_used = opt.param_groups[0]["lr"]
            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            sched.step()
            writer.writerow([step, f"{lr_used:.10g}", f"{loss.item():.10g}"])
            if cfg.checkpoint_interval > 0 and (step + 1) % cfg.checkpoint_interval == 0:
                save_checkpoint(ckpt_path, model.to_tensors(), meta)
    save_checkpoint(ckpt_path, model.to_tensors(), meta)
    return ckpt_path


def _forecast_split(model: MultimodalForecaster, cfg: TrainConfig,
                    prepared: list[PreparedSample], n_samples: int,
                    n_steps: int, seed: int, batch_size: int = 64):
    """Per-window forecast distributions for a prepared split."""
    dists = []
    for lo in range(0, len(prepared), batch_size):
        chunk = prepared[lo: lo + batch_size]
        batch = collate(chunk)
        seeds = [window_seed(seed, lo + i) for i in range(len(chunk))]
        dists.extend(model.forecast_prepared(
            batch, [p.norm_stats for p in chunk], n_samples, n_steps, seeds))
    return dists


def evaluate_model(model: MultimodalForecaster, cfg: TrainConfig,
                   corpus: Corpus, split: str, n_samples: int = 100,
                   n_steps: int = 16, seed: int = 0,
                   point_mode: str = "mean",
                   vocab: TextVocab | None = None) -> dict:
    """Full-pipeline evaluation: denormalized point and sample metrics pooled
    over every window of the split (windows act as variates)."""
    vocab = vocab or build_default_vocab()
    prepared = prepare_split(corpus, cfg, vocab, split)
    if not prepared:
        raise ValueError(f"split {split!r} is empty")
    dists = _forecast_split(model, cfg, prepared, n_samples, n_steps, seed)

    horizon = cfg.horizon_length
    truth = np.stack([
        (p.target.reshape(horizon).astype(np.float64) * p.norm_stats.sigma
         + p.norm_stats.mu) for p in prepared])
    point = np.stack([point_forecast(d, point_mode).reshape(horizon)
                      for d in dists])
    samples = np.stack([
        d.samples.reshape(n_samples, horizon).astype(np.float64)
        * p.norm_stats.sigma + p.norm_stats.mu
        for d, p in zip(dists, prepared)], axis=1)
    pair = M.EvalPair(truth=truth, point=point, samples=samples)
    return {
        "split": split,
        "windows": len(prepared),
        "horizon": horizon,
        "n_samples": n_samples,
        "n_steps": n_steps,
        "seed": seed,
        "mse": M.mse(pair),
        "mae": M.mae(pair),
        "crps": M.crps(pair),
        "nmae": M.nmae(pair),
    }


def write_report(report: dict, out_dir: str | Path, stem: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    with (out / f"{stem}.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(sorted(report))
        writer.writerow([report[k] for k in sorted(report)])


def run_ablation(cfg: TrainConfig, corpus: Corpus, out_dir: str | Path,
                 seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
                 eval_samples: int = 32, eval_steps: int = 8) -> dict:
    """Train all four variants with shared seeds and identical budgets; report
    held-out MSE/MAE per variant per seed plus medians."""
    if corpus.spec.text_informativeness < 0.9:
        raise ValueError("ablation corpus must have text_informativeness >= 0.9")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = build_default_vocab()
    results: dict[str, dict] = {v: {"mse": [], "mae": []} for v in ABLATION_VARIANTS}
    for variant in ABLATION_VARIANTS:
        for seed in seeds:
            run_cfg = TrainConfig(**{**asdict(cfg), "seed": seed})
            run_dir = out / f"{variant}_seed{seed}"
            ckpt = train(run_cfg, corpus, run_dir, variant=variant, vocab=vocab)
            model, _ = model_from_checkpoint(ckpt, vocab)
            rep = evaluate_model(model, run_cfg, corpus, "test",
                                 n_samples=eval_samples, n_steps=eval_steps,
                                 seed=seed, vocab=vocab)
            results[variant]["mse"].append(rep["mse"])
            results[variant]["mae"].append(rep["mae"])
    table = {
        "seeds": list(seeds),
        "per_variant": results,
        "median_mse": {v: float(np.median(results[v]["mse"])) for v in results},
        "median_mae": {v: float(np.median(results[v]["mae"])) for v in results},
    }
    (out / "ablation.json").write_text(json.dumps(table, sort_keys=True, indent=2) + "\n")
    with (out / "ablation.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "seed", "mse", "mae"])
        for v in ABLATION_VARIANTS:
            for i, seed in enumerate(seeds):
                writer.writerow([v, seed, f"{results[v]['mse'][i]:.10g}",
                                 f"{results[v]['mae'][i]:.10g}"])
    return table


def scale_study(model: MultimodalForecaster, cfg: TrainConfig, corpus: Corpus,
                split: str, out_dir: str | Path,
                sample_counts: tuple[int, ...] = (1, 5, 10, 25, 50, 100),
                step_counts: tuple[int, ...] = (4, 8, 16, 32),
                seed: int = 0, vocab: TextVocab | None = None,
                make_plot: bool = True) -> dict:
    """CRPS/NMAE versus sampling budget. Sample draws are keyed per (window,
    token, sample index), so the S-sample ensemble is a prefix of the
    S_max-sample ensemble and each budget reuses the same draws."""
    vocab = vocab or build_default_vocab()
    prepared = prepare_split(corpus, cfg, vocab, split)
    if not prepared:
        raise ValueError(f"split {split!r} is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    horizon = cfg.horizon_length
    s_max = max(sample_counts)
    truth = np.stack([
        (p.target.reshape(horizon).astype(np.float64) * p.norm_stats.sigma
         + p.norm_stats.mu) for p in prepared])

    rows = []
    curves: dict[int, dict[int, dict[str, float]]] = {}
    for n_steps in step_counts:
        dists = _forecast_split(model, cfg, prepared, s_max, n_steps, seed)
        samples = np.stack([
            d.samples.reshape(s_max, horizon).astype(np.float64)
            * p.norm_stats.sigma + p.norm_stats.mu
            for d, p in zip(dists, prepared)], axis=1)
        curves[n_steps] = {}
        for s in sample_counts:
            sub = samples[:s]
            point = sub.mean(axis=0)
            pair = M.EvalPair(truth=truth, point=point, samples=sub)
            entry = {"crps": M.crps(pair), "nmae": M.nmae(pair)}
            curves[n_steps][s] = entry
            rows.append([n_steps, s, f"{entry['crps']:.10g}", f"{entry['nmae']:.10g}"])

    with (out / "scale_study.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_steps", "n_samples", "crps", "nmae"])
        writer.writerows(rows)
    report = {"split": split, "seed": seed, "sample_counts": list(sample_counts),
              "step_counts": list(step_counts),
              "curves": {str(j): {str(s): curves[j][s] for s in sample_counts}
                         for j in step_counts}}
    (out / "scale_study.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n")
    if make_plot:
        _plot_scale_study(curves, sample_counts, step_counts, out / "scale_study.png")
    return report


def _plot_scale_study(curves, sample_counts, step_counts, path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for j in step_counts:
        axes[0].plot(sample_counts, [curves[j][s]["crps"] for s in sample_counts],
                     marker="o", label=f"J={j}")
        axes[1].plot(sample_counts, [curves[j][s]["nmae"] for s in sample_counts],
                     marker="o", label=f"J={j}")
    for ax, name in zip(axes, ("CRPS", "NMAE")):
        ax.set_xlabel("sampling budget S")
        ax.set_ylabel(name)
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": "flowcast"})
    plt.close(fig)


def forecast_window(model: MultimodalForecaster, cfg: TrainConfig,
                    raw_context: np.ndarray, text: str, seed: int,
                    n_samples: int, n_steps: int,
                    vocab: TextVocab | None = None,
                    text_present: bool = True):
    """Forecast one raw (unnormalized) context window end to end. Returns the
    ForecastDistribution; denormalize via point_forecast or the stored stats."""
    vocab = vocab or build_default_vocab()
    ctx, stats = instance_normalize(np.asarray(raw_context, dtype=np.float64))
    sample = MultimodalSample(context=ctx,
                              horizon=np.zeros(cfg.horizon_length),
                              text=text, domain_id="", norm_stats=stats)
    prepared = prepare_sample(sample, cfg, vocab)
    batch = collate([prepared])
    return model.forecast_prepared(batch, [stats], n_samples, n_steps,
                                   [seed], text_present=text_present)[0]

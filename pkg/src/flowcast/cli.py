"""Command-line entry points tying the pipeline together."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .checkpoint import checkpoint_hash
from .config import TrainConfig, load_config, save_config
from .corpus import Corpus, CorpusSpec, generate_synthetic_corpus, instance_normalize
from .harness import (evaluate_model, forecast_window, model_from_checkpoint,
                      run_ablation, scale_study, train, write_report)
from .tokenization import ImageRenderConfig, detect_dominant_period, render_endogenous_image


def _parse_corpus_spec(path: str) -> CorpusSpec:
    field_types = {f.name: f.type for f in fields(CorpusSpec)}
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        kind = field_types.get(key)
        if kind is None:
            raise ValueError(f"line {lineno}: unknown corpus key {key!r}")
        if kind == "int":
            values[key] = int(val)
        elif kind == "float":
            values[key] = float(val)
        elif key == "base_periods":
            values[key] = tuple(int(v) for v in val.split(","))
        elif key == "trend_families":
            values[key] = tuple(v.strip() for v in val.split(","))
        else:
            values[key] = val
    spec = CorpusSpec(**values)
    spec.validate()
    return spec


def cmd_generate_corpus(args) -> int:
    spec = _parse_corpus_spec(args.spec) if args.spec else CorpusSpec(seed=args.seed)
    out = generate_synthetic_corpus(spec, args.out)
    print(f"corpus written to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig(seed=args.seed)
    if args.seed is not None and args.config:
        cfg.seed = args.seed
    corpus = Corpus.load(args.corpus)
    ckpt = train(cfg, corpus, args.out, variant=args.variant)
    save_config(cfg, Path(args.out) / "config.txt")
    print(f"checkpoint written to {ckpt}")
    return 0


def cmd_evaluate(args) -> int:
    model, cfg = model_from_checkpoint(args.checkpoint)
    corpus = Corpus.load(args.corpus)
    report = evaluate_model(model, cfg, corpus, args.split,
                            n_samples=args.samples, n_steps=args.steps,
                            seed=args.seed)
    write_report(report, args.out, f"evaluate_{args.split}")
    print(json.dumps(report, sort_keys=True, indent=2))
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig()
    corpus = Corpus.load(args.corpus)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    table = run_ablation(cfg, corpus, args.out, seeds=seeds,
                         eval_samples=args.samples, eval_steps=args.steps)
    print(json.dumps({"median_mse": table["median_mse"],
                      "median_mae": table["median_mae"]}, indent=2, sort_keys=True))
    return 0


def cmd_scale_study(args) -> int:
    model, cfg = model_from_checkpoint(args.checkpoint)
    corpus = Corpus.load(args.corpus)
    sample_counts = tuple(int(s) for s in args.samples.split(","))
    step_counts = tuple(int(s) for s in args.steps.split(","))
    scale_study(model, cfg, corpus, args.split, args.out,
                sample_counts=sample_counts, step_counts=step_counts,
                seed=args.seed)
    print(f"scale study written to {args.out}")
    return 0


def cmd_sample(args) -> int:
    """Forecast one window of a corpus series and write the draws in the
    corpus binary format plus a metadata sidecar."""
    model, cfg = model_from_checkpoint(args.checkpoint)
    corpus = Corpus.load(args.corpus)
    series = corpus.series[args.series_id]
    T = corpus.spec.context_length
    w = args.window_start
    raw_ctx = series[w: w + T]
    if len(raw_ctx) < T:
        raise SystemExit(f"window start {w} leaves no full context window")
    text = corpus.texts.get((args.series_id, w), "")
    dist = forecast_window(model, cfg, raw_ctx, text, args.seed,
                           args.samples, args.steps)
    denorm = (dist.samples.reshape(args.samples, -1).astype(np.float64)
              * dist.norm_stats.sigma + dist.norm_stats.mu)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "samples.f32").write_bytes(denorm.astype("<f4").tobytes())
    meta = {
        "seed": args.seed,
        "n_steps": args.steps,
        "n_samples": args.samples,
        "checkpoint_hash": checkpoint_hash(args.checkpoint),
        "series_id": args.series_id,
        "window_start": w,
        "horizon": cfg.horizon_length,
    }
    (out / "samples_meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n")
    print(f"samples written to {out}")
    return 0


def cmd_render_image(args) -> int:
    """Debug rendering: channel 0 of the endogenous image as 8-bit PGM."""
    x = np.frombuffer(Path(args.infile).read_bytes(), dtype="<f4").astype(np.float64)
    ctx, _ = instance_normalize(x)
    period = detect_dominant_period(ctx)
    cfg = ImageRenderConfig(w=args.size, h=args.size, p_image=8)
    img = render_endogenous_image(ctx, period, cfg)
    gray = (img[0].numpy() * 255.0).round().clip(0, 255).astype(np.uint8)
    header = f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode()
    Path(args.out).write_bytes(header + gray.tobytes())
    print(f"image written to {args.out} (period {period})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowcast")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-corpus", help="write a synthetic corpus directory")
    p.add_argument("--spec", help="key=value corpus spec file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_generate_corpus)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--config", help="key=value training config file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--variant", default="full")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a corpus split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--steps", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and compare ablation variants")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--samples", type=int, default=32)
    p.add_argument("--steps", type=int, default=8)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("scale-study", help="CRPS/NMAE versus sampling budget")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--samples", default="1,5,10,25,50,100")
    p.add_argument("--steps", default="4,8,16,32")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_scale_study)

    p = sub.add_parser("sample", help="write forecast draws for one window")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--series-id", required=True)
    p.add_argument("--window-start", type=int, default=0)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--steps", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("render-image", help="debug-render a series to PGM")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=32)
    p.set_defaults(fn=cmd_render_image)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

"""Synthetic cross-domain multimodal corpus.

Each series is a sum of a periodic component, a trend drawn from one of four
families, and Gaussian noise. Series are laid out in blocks of length
context_length + horizon_length; the trend shape occupies only the last
horizon_length // 2 samples of each block, so for the block-aligned windows
(the ones the texts sidecar is keyed by) the context never reveals the trend
while the horizon's second half carries it. Texts name the trend family when
informative, so the corpus has a genuine text -> future dependence.

On-disk layout of a corpus directory:
    manifest.json   spec echo plus per-series index (domain, period, family)
    series_<domain>_<id>.f32   raw little-endian float32 samples
    texts.jsonl     one object per line: series_id, window_start, text
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

EPS_SIGMA = 1e-5

DOMAIN_NAMES = (
    "health", "energy", "traffic", "climate",
    "economy", "retail", "weather", "industry",
)

TREND_FAMILIES = ("linear", "exponential-decay", "logistic", "none")

# One keyword per family; uninformative templates avoid all of them, so the
# family is recoverable from an informative text by simple substring match.
TREND_KEYWORDS = {
    "linear": "linear",
    "exponential-decay": "decay",
    "logistic": "logistic",
    "none": "stable",
}

_TREND_PHRASES = {
    "linear": "a steady linear climb",
    "exponential-decay": "an exponential decay downward",
    "logistic": "a logistic rise to saturation",
    "none": "a stable flat level",
}


@dataclass(frozen=True)
class NormStats:
    """Per-window normalization statistics in original units; sigma > 0."""

    mu: float
    sigma: float


@dataclass(frozen=True)
class CorpusSpec:
    n_domains: int = 4
    series_per_domain: int = 8
    series_length: int = 2400
    context_length: int = 176
    horizon_length: int = 64
    base_periods: tuple[int, ...] = (8, 12, 16, 24)
    trend_families: tuple[str, ...] = TREND_FAMILIES
    noise_std: float = 0.1
    text_informativeness: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_domains < 1 or self.series_per_domain < 1:
            raise ValueError("need at least one domain and one series per domain")
        if self.context_length + self.horizon_length > self.series_length:
            raise ValueError("context_length + horizon_length exceeds series_length")
        if not 0.0 <= self.text_informativeness <= 1.0:
            raise ValueError("text_informativeness must lie in [0, 1]")
        if any(p < 2 for p in self.base_periods):
            raise ValueError("all base periods must be >= 2")
        unknown = set(self.trend_families) - set(TREND_FAMILIES)
        if unknown:
            raise ValueError(f"unknown trend families: {sorted(unknown)}")

    @property
    def block_length(self) -> int:
        return self.context_length + self.horizon_length


@dataclass(frozen=True)
class WindowMeta:
    domain: str
    trend_family: str
    period: int


@dataclass
class MultimodalSample:
    """One training/eval unit. context and horizon are stored normalized by
    the context-window statistics; norm_stats reverts to original units."""

    context: np.ndarray
    horizon: np.ndarray
    text: str
    domain_id: str
    norm_stats: NormStats
    series_id: str = ""
    window_start: int = 0


def instance_normalize(context: np.ndarray) -> tuple[np.ndarray, NormStats]:
    """Standardize by the window's own mean/std (population std, computed in
    float64). Constant windows are guarded by the EPS_SIGMA clamp."""
    x = np.asarray(context, dtype=np.float64)
    if x.size < 1:
        raise ValueError("cannot normalize an empty window")
    mu = float(x.mean())
    sigma = float(x.std())
    sigma = max(sigma, EPS_SIGMA)
    return (x - mu) / sigma, NormStats(mu=mu, sigma=sigma)


def denormalize(values: np.ndarray, stats: NormStats) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * stats.sigma + stats.mu


def window_samples(series: np.ndarray, T: int, H: int, stride: int = 1) -> list[tuple[int, int]]:
    """Every (context_start, horizon_start) pair whose context+horizon fits,
    ordered by start index. The final window is never discarded."""
    n = len(series)
    if T + H > n:
        raise ValueError(f"window of {T}+{H} does not fit a series of length {n}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return [(s, s + T) for s in range(0, n - T - H + 1, stride)]


def render_text_description(meta: WindowMeta, informative: bool) -> str:
    """Deterministic text for one sample window. Informative texts name the
    domain and the true future trend family; uninformative ones only the
    domain, with no trend keyword."""
    if meta.trend_family not in _TREND_PHRASES:
        raise ValueError(f"unknown trend family: {meta.trend_family!r}")
    if informative:
        phrase = _TREND_PHRASES[meta.trend_family]
        return f"{meta.domain} signal outlook shows {phrase} late in the horizon"
    return f"{meta.domain} signal outlook not further specified"


def _trend_shape(family: str, u: np.ndarray) -> np.ndarray:
    # u in [0, 1] over the transient region; every shape starts at 0
    if family == "linear":
        return u
    if family == "exponential-decay":
        return (np.exp(-4.0 * u) - 1.0) / (1.0 - math.exp(-4.0))
    if family == "logistic":
        k = 10.0
        lo = 1.0 / (1.0 + math.exp(k / 2.0))
        hi = 1.0 / (1.0 + math.exp(-k / 2.0))
        return (1.0 / (1.0 + np.exp(-k * (u - 0.5))) - lo) / (hi - lo)
    if family == "none":
        return np.zeros_like(u)
    raise ValueError(f"unknown trend family: {family!r}")


def _series_trend(spec: CorpusSpec, family: str, amplitude: float) -> np.ndarray:
    """Trend component over the whole series: zero except in the last
    horizon_length//2 samples of every block."""
    out = np.zeros(spec.series_length, dtype=np.float64)
    block = spec.block_length
    tail = spec.horizon_length // 2
    onset = block - tail
    u = np.arange(tail, dtype=np.float64) / max(tail - 1, 1)
    shape = amplitude * _trend_shape(family, u)
    for b0 in range(0, spec.series_length - block + 1, block):
        out[b0 + onset: b0 + block] = shape
    return out


def _build_series(spec: CorpusSpec, domain_idx: int, series_idx: int):
    rng = np.random.default_rng([spec.seed, domain_idx, series_idx])
    period = int(rng.choice(np.asarray(spec.base_periods)))
    phase = float(rng.uniform(0.0, 2.0 * math.pi))
    amp = float(rng.uniform(0.8, 1.2))
    family = str(rng.choice(np.asarray(spec.trend_families)))
    trend_amp = float(rng.uniform(1.5, 2.5)) if family != "none" else 0.0

    # tile one sampled cycle so noiseless series are exactly periodic
    cycle = amp * np.sin(2.0 * math.pi * np.arange(period) / period + phase)
    reps = spec.series_length // period + 1
    periodic = np.tile(cycle, reps)[: spec.series_length]

    x = periodic + _series_trend(spec, family, trend_amp)
    if spec.noise_std > 0:
        x = x + spec.noise_std * rng.standard_normal(spec.series_length)

    informative_draws = rng.random(spec.series_length)  # indexed by window start
    return x, period, family, informative_draws


def aligned_window_starts(spec: CorpusSpec) -> list[int]:
    block = spec.block_length
    return list(range(0, spec.series_length - block + 1, block))


def generate_synthetic_corpus(spec: CorpusSpec, out_dir: str | Path) -> Path:
    """Write a corpus directory. Pure function of the spec: reruns are
    byte-identical."""
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    index = []
    text_rows = []
    starts = aligned_window_starts(spec)
    for d in range(spec.n_domains):
        domain = DOMAIN_NAMES[d % len(DOMAIN_NAMES)]
        for s in range(spec.series_per_domain):
            x, period, family, draws = _build_series(spec, d, s)
            series_id = f"{domain}_{d}_{s}"
            fname = f"series_{series_id}.f32"
            (out / fname).write_bytes(x.astype("<f4").tobytes())
            index.append({
                "series_id": series_id,
                "domain": domain,
                "file": fname,
                "length": spec.series_length,
                "period": period,
                "trend_family": family,
            })
            meta = WindowMeta(domain=domain, trend_family=family, period=period)
            for w in starts:
                informative = bool(draws[w] < spec.text_informativeness)
                text_rows.append({
                    "series_id": series_id,
                    "window_start": w,
                    "text": render_text_description(meta, informative),
                })

    manifest = {"spec": asdict(spec), "window_starts": starts, "series": index}
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    with (out / "texts.jsonl").open("w") as fh:
        for row in text_rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return out


class Corpus:
    """Loaded corpus directory: raw series plus the per-window text sidecar."""

    def __init__(self, spec: CorpusSpec, series: dict[str, np.ndarray],
                 index: list[dict], texts: dict[tuple[str, int], str],
                 window_starts: list[int]):
        self.spec = spec
        self.series = series
        self.index = index
        self.texts = texts
        self.window_starts = window_starts

    @classmethod
    def load(cls, corpus_dir: str | Path) -> "Corpus":
        root = Path(corpus_dir)
        manifest = json.loads((root / "manifest.json").read_text())
        raw_spec = dict(manifest["spec"])
        raw_spec["base_periods"] = tuple(raw_spec["base_periods"])
        raw_spec["trend_families"] = tuple(raw_spec["trend_families"])
        spec = CorpusSpec(**raw_spec)
        series = {}
        for entry in manifest["series"]:
            data = np.frombuffer((root / entry["file"]).read_bytes(), dtype="<f4")
            series[entry["series_id"]] = data.astype(np.float64)
        texts = {}
        with (root / "texts.jsonl").open() as fh:
            for line in fh:
                row = json.loads(line)
                texts[(row["series_id"], int(row["window_start"]))] = row["text"]
        return cls(spec, series, manifest["series"], texts, list(manifest["window_starts"]))

    def split_starts(self, split: str) -> list[int]:
        """7:1:2 split by window start rank within each series."""
        n = len(self.window_starts)
        n_train = int(n * 0.7)
        n_val = int(n * 0.1)
        if split == "train":
            sel = self.window_starts[:n_train]
        elif split == "val":
            sel = self.window_starts[n_train:n_train + n_val]
        elif split == "test":
            sel = self.window_starts[n_train + n_val:]
        else:
            raise ValueError(f"unknown split: {split!r}")
        return sel

    def samples(self, split: str) -> list[MultimodalSample]:
        T = self.spec.context_length
        H = self.spec.horizon_length
        out = []
        for entry in self.index:
            sid = entry["series_id"]
            x = self.series[sid]
            for w in self.split_starts(split):
                ctx_raw = x[w: w + T]
                hor_raw = x[w + T: w + T + H]
                ctx, stats = instance_normalize(ctx_raw)
                hor = (hor_raw - stats.mu) / stats.sigma
                out.append(MultimodalSample(
                    context=ctx, horizon=hor,
                    text=self.texts.get((sid, w), ""),
                    domain_id=entry["domain"], norm_stats=stats,
                    series_id=sid, window_start=w,
                ))
        return out

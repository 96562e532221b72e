import hashlib
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowcast.corpus import (Corpus, CorpusSpec, NormStats, TREND_KEYWORDS,
                             WindowMeta, denormalize, generate_synthetic_corpus,
                             instance_normalize, render_text_description,
                             window_samples)
from flowcast.tokenization import build_default_vocab, tokenize_text


def dir_digest(path: Path) -> str:
    h = hashlib.sha256()
    for f in sorted(path.rglob("*")):
        if f.is_file():
            h.update(f.name.encode())
            h.update(f.read_bytes())
    return h.hexdigest()


class TestWindowing:
    def test_count_stride_one(self):
        assert len(window_samples(np.zeros(20), 10, 5)) == 6
        starts = [s for s, _ in window_samples(np.zeros(20), 10, 5)]
        assert starts == list(range(6))

    def test_single_window_boundary(self):
        assert len(window_samples(np.zeros(15), 10, 5)) == 1

    def test_too_short_series(self):
        with pytest.raises(ValueError):
            window_samples(np.zeros(14), 10, 5)

    def test_count_formula_exhaustive(self):
        for L in range(2, 65):
            for T in range(1, L):
                for H in range(1, L - T + 1):
                    got = len(window_samples(np.zeros(L), T, H))
                    assert got == L - T - H + 1

    def test_stride(self):
        starts = [s for s, _ in window_samples(np.zeros(30), 10, 5, stride=5)]
        assert starts == [0, 5, 10, 15]
        assert all(h == s + 10 for s, h in window_samples(np.zeros(30), 10, 5))


class TestNormalization:
    def test_constant_series(self):
        z, stats = instance_normalize(np.array([1.0, 1.0, 1.0, 1.0]))
        assert np.array_equal(z, np.zeros(4))
        assert stats.mu == 1.0
        assert stats.sigma == pytest.approx(1e-5)

    def test_two_point_symmetry(self):
        z, stats = instance_normalize(np.array([0.0, 2.0]))
        assert np.allclose(z, [-1.0, 1.0])
        assert (stats.mu, stats.sigma) == (1.0, 1.0)

    def test_moments(self):
        x = np.random.default_rng(0).standard_normal(257) * 3.0 + 7.0
        z, _ = instance_normalize(x)
        assert abs(z.mean()) < 1e-9
        assert abs(z.std() - 1.0) < 1e-9

    def test_denormalize_examples(self):
        assert np.allclose(denormalize(np.array([0.0, 0.0]), NormStats(5.0, 2.0)), [5.0, 5.0])
        assert np.allclose(denormalize(np.array([-1.0, 1.0]), NormStats(1.0, 1.0)), [0.0, 2.0])

    @given(st.integers(min_value=0, max_value=2**31 - 1),
           st.integers(min_value=2, max_value=64))
    @settings(max_examples=100, deadline=None)
    def test_round_trip_identity(self, seed, n):
        x = np.random.default_rng(seed).standard_normal(n) * 5.0 + 2.0
        if np.ptp(x) == 0.0:
            return
        z, stats = instance_normalize(x)
        back = denormalize(z, stats)
        assert np.allclose(back, x, rtol=1e-9, atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            instance_normalize(np.array([]))


class TestTextTemplates:
    def test_informative_contains_keyword(self):
        meta = WindowMeta(domain="health", trend_family="exponential-decay", period=8)
        text = render_text_description(meta, informative=True)
        assert "decay" in text
        assert "health" in text

    def test_uninformative_has_no_trend_keyword(self):
        meta = WindowMeta(domain="health", trend_family="exponential-decay", period=8)
        text = render_text_description(meta, informative=False)
        assert all(kw not in text for kw in TREND_KEYWORDS.values())

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError):
            render_text_description(WindowMeta("health", "cubic-spline", 8), True)

    def test_all_templates_tokenize_without_unk(self):
        vocab = build_default_vocab()
        from flowcast.corpus import DOMAIN_NAMES, TREND_FAMILIES
        for domain in DOMAIN_NAMES:
            for family in TREND_FAMILIES:
                for informative in (True, False):
                    meta = WindowMeta(domain, family, 8)
                    text = render_text_description(meta, informative)
                    ids, mask = tokenize_text(text, vocab, 32)
                    assert not np.any(ids[mask] == vocab.unk_id)


class TestSpecValidation:
    def test_window_longer_than_series(self):
        spec = CorpusSpec(series_length=100, context_length=80, horizon_length=40)
        with pytest.raises(ValueError):
            spec.validate()

    def test_informativeness_range(self):
        with pytest.raises(ValueError):
            CorpusSpec(text_informativeness=1.5).validate()

    def test_period_minimum(self):
        with pytest.raises(ValueError):
            CorpusSpec(base_periods=(1, 8)).validate()


@pytest.fixture(scope="module")
def small_spec():
    return CorpusSpec(n_domains=2, series_per_domain=2, series_length=960,
                      context_length=176, horizon_length=64,
                      base_periods=(8,), noise_std=0.1,
                      text_informativeness=1.0, seed=5)


class TestGeneration:
    def test_noiseless_pure_periodicity(self, tmp_path):
        spec = CorpusSpec(n_domains=1, series_per_domain=3, series_length=480,
                          context_length=176, horizon_length=64,
                          base_periods=(8,), trend_families=("none",),
                          noise_std=0.0, seed=1)
        generate_synthetic_corpus(spec, tmp_path)
        corpus = Corpus.load(tmp_path)
        for x in corpus.series.values():
            assert np.array_equal(x[:-8], x[8:])

    def test_informative_texts_name_family(self, small_spec, tmp_path):
        generate_synthetic_corpus(small_spec, tmp_path)
        corpus = Corpus.load(tmp_path)
        family_of = {e["series_id"]: e["trend_family"] for e in corpus.index}
        assert len(corpus.texts) > 0
        for (sid, _), text in corpus.texts.items():
            kw = TREND_KEYWORDS[family_of[sid]]
            assert kw in text
            others = [v for k, v in TREND_KEYWORDS.items() if k != family_of[sid]]
            assert all(o not in text for o in others)

    def test_byte_identical_reruns(self, small_spec, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        generate_synthetic_corpus(small_spec, a)
        generate_synthetic_corpus(small_spec, b)
        assert dir_digest(a) == dir_digest(b)

    def test_trend_confined_to_horizon_second_half(self, tmp_path):
        """For block-aligned sample windows the context is trend-free and the
        trend sits entirely in the horizon's second half."""
        spec = CorpusSpec(n_domains=1, series_per_domain=4, series_length=960,
                          context_length=176, horizon_length=64,
                          base_periods=(8,), trend_families=("linear",),
                          noise_std=0.0, seed=2)
        generate_synthetic_corpus(spec, tmp_path)
        corpus = Corpus.load(tmp_path)
        T, H = spec.context_length, spec.horizon_length
        for entry in corpus.index:
            x = corpus.series[entry["series_id"]]
            period = entry["period"]
            for w in corpus.window_starts:
                ctx = x[w: w + T]
                hor = x[w + T: w + T + H]
                # context is exactly periodic (no trend leaked in)
                assert np.allclose(ctx[:-period], ctx[period:], atol=1e-6)
                # first half of horizon continues the periodic pattern
                assert np.allclose(hor[: H // 2], ctx[: H // 2], atol=1e-6)
                # second half deviates for the linear family
                assert np.max(np.abs(hor[H // 2:] - ctx[H // 2: H])) > 0.5

    def test_splits_partition_starts(self, small_spec, tmp_path):
        generate_synthetic_corpus(small_spec, tmp_path)
        corpus = Corpus.load(tmp_path)
        tr = corpus.split_starts("train")
        va = corpus.split_starts("val")
        te = corpus.split_starts("test")
        assert tr + va + te == corpus.window_starts
        assert len(tr) >= len(te) >= len(va)

    def test_samples_are_normalized(self, small_spec, tmp_path):
        generate_synthetic_corpus(small_spec, tmp_path)
        corpus = Corpus.load(tmp_path)
        sample = corpus.samples("train")[0]
        assert abs(sample.context.mean()) < 1e-9
        assert abs(sample.context.std() - 1.0) < 1e-6
        raw = corpus.series[sample.series_id][
            sample.window_start: sample.window_start + small_spec.context_length]
        back = denormalize(sample.context, sample.norm_stats)
        assert np.allclose(back, raw, rtol=1e-6, atol=1e-9)

import math

import numpy as np
import pytest
import torch

from flowcast.corpus import DOMAIN_NAMES, TREND_FAMILIES, WindowMeta, render_text_description
from flowcast.tokenization import (ImageRenderConfig, TextVocab, TimeTokenConfig,
                                   build_default_vocab, detect_dominant_period,
                                   embed_image_patches, embed_time_patches,
                                   fold_to_grid, image_patchify, patch_time_series,
                                   render_endogenous_image, tokenize_text)


def brute_force_dft_period(x):
    """O(T^2) DFT amplitude argmax oracle, DC excluded, ties to the lowest
    bin, period clamped to [2, T]."""
    x = np.asarray(x, dtype=np.float64)
    T = len(x)
    best_f, best_amp = None, -1.0
    for f in range(1, T // 2 + 1):
        re = sum(x[t] * math.cos(-2.0 * math.pi * f * t / T) for t in range(T))
        im = sum(x[t] * math.sin(-2.0 * math.pi * f * t / T) for t in range(T))
        amp = math.hypot(re, im)
        if amp > best_amp:
            best_f, best_amp = f, amp
    return min(max(math.ceil(T / best_f), 2), T)


class TestTimePatching:
    def test_pad_replicates_first_value(self):
        x = np.arange(10.0)
        patches = patch_time_series(x, TimeTokenConfig(p_time=4))
        assert patches.shape == (3, 4)
        assert patches[0, 0] == patches[0, 1] == x[0]
        assert np.array_equal(patches.ravel()[2:], x)

    def test_exact_fit_single_patch(self):
        x = np.random.default_rng(0).standard_normal(48)
        patches = patch_time_series(x, TimeTokenConfig(p_time=48))
        assert patches.shape == (1, 48)
        assert np.array_equal(patches[0], x)

    def test_two_patch_reconstruction(self):
        x = np.random.default_rng(1).standard_normal(96)
        patches = patch_time_series(x, TimeTokenConfig(p_time=48))
        assert patches.shape == (2, 48)
        assert np.array_equal(np.concatenate([patches[0], patches[1]]), x)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            patch_time_series(np.array([]), TimeTokenConfig(p_time=4))


class TestTimeEmbedding:
    def test_identity_params(self):
        patches = torch.randn(3, 4)
        out = embed_time_patches(patches, torch.eye(4), torch.zeros(4))
        assert torch.equal(out, patches)

    def test_zero_weight_gives_bias(self):
        patches = torch.randn(5, 4)
        bias = torch.tensor([1.0, -2.0, 0.5])
        out = embed_time_patches(patches, torch.zeros(4, 3), bias)
        assert torch.equal(out, bias.expand(5, 3))

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(2)
        patches = rng.standard_normal((3, 4))
        weight = rng.standard_normal((4, 6))
        bias = rng.standard_normal(6)
        out = embed_time_patches(torch.tensor(patches), torch.tensor(weight),
                                 torch.tensor(bias)).numpy()
        want = np.zeros((3, 6))
        for i in range(3):
            for j in range(6):
                want[i, j] = bias[j]
                for k in range(4):
                    want[i, j] += patches[i, k] * weight[k, j]
        assert np.allclose(out, want, atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            embed_time_patches(torch.zeros(2, 5), torch.zeros(4, 3), torch.zeros(3))


class TestPeriodDetection:
    def test_sine_period_8(self):
        t = np.arange(32)
        x = np.sin(2 * np.pi * t / 8.0)
        assert detect_dominant_period(x) == 8
        assert brute_force_dft_period(x) == 8

    def test_sine_period_5(self):
        t = np.arange(30)
        x = np.sin(2 * np.pi * t / 5.0)
        assert detect_dominant_period(x) == 5
        assert brute_force_dft_period(x) == 5

    def test_constant_series_tie_break(self):
        assert detect_dominant_period(np.full(16, 3.0)) == 16

    def test_too_short(self):
        with pytest.raises(ValueError):
            detect_dominant_period(np.zeros(3))

    def test_agrees_with_brute_force_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            T = int(rng.integers(16, 129))
            period = int(rng.integers(2, 17))
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.5, 2.0)
            t = np.arange(T)
            x = amp * np.sin(2 * np.pi * t / period + phase)
            x += 0.3 * amp * np.sin(4 * np.pi * t / period + phase)
            assert detect_dominant_period(x) == brute_force_dft_period(x)


class TestImageRendering:
    cfg = ImageRenderConfig(w=32, h=32, p_image=8, d_image=32)

    def test_periodic_rows_identical(self):
        t = np.arange(16)
        x = np.sin(2 * np.pi * t / 8.0)
        grid = fold_to_grid(x, 8)
        assert grid.shape == (2, 8)
        assert np.allclose(grid[0], grid[1], atol=1e-12)

    def test_constant_series_maps_to_half(self):
        img = render_endogenous_image(np.full(32, 4.0), 8, self.cfg)
        assert torch.allclose(img, torch.full_like(img, 0.5))

    def test_three_identical_channels(self):
        x = np.random.default_rng(3).standard_normal(40)
        img = render_endogenous_image(x, 7, self.cfg)
        assert img.shape == (3, 32, 32)
        assert torch.equal(img[0], img[1])
        assert torch.equal(img[0], img[2])

    def test_affine_invariance_byte_identical(self):
        x = np.random.default_rng(4).standard_normal(50)
        base = render_endogenous_image(x, 9, self.cfg)
        for a, b in ((2.0, 0.0), (1.0, 5.0), (3.0, -2.0), (0.25, 11.0)):
            other = render_endogenous_image(a * x + b, 9, self.cfg)
            assert torch.equal(base, other)

    def test_period_out_of_range(self):
        with pytest.raises(ValueError):
            render_endogenous_image(np.zeros(16), 1, self.cfg)
        with pytest.raises(ValueError):
            render_endogenous_image(np.zeros(16), 17, self.cfg)

    def test_pixel_count_preserved(self):
        assert self.cfg.n_image * 3 * self.cfg.p_image ** 2 == 3 * 32 * 32


class TestImagePatchify:
    def test_grid_count(self):
        cfg = ImageRenderConfig(w=16, h=16, p_image=8)
        flat = image_patchify(torch.randn(3, 16, 16), cfg)
        assert flat.shape == (4, 3 * 64)

    def test_flatten_order_channel_row_col(self):
        cfg = ImageRenderConfig(w=4, h=4, p_image=2)
        img = torch.arange(3 * 16, dtype=torch.float32).reshape(3, 4, 4)
        flat = image_patchify(img, cfg)
        block = img[:, 0:2, 0:2].reshape(-1)
        assert torch.equal(flat[0], block)
        block_last = img[:, 2:4, 2:4].reshape(-1)
        assert torch.equal(flat[3], block_last)

    def test_matches_blocked_loop_oracle(self):
        cfg = ImageRenderConfig(w=16, h=16, p_image=8, d_image=5)
        rng = np.random.default_rng(6)
        img = torch.tensor(rng.standard_normal((3, 16, 16)), dtype=torch.float64)
        weight = torch.tensor(rng.standard_normal((cfg.flat_patch, 5)))
        bias = torch.tensor(rng.standard_normal(5))
        got = embed_image_patches(image_patchify(img, cfg), weight, bias).numpy()
        p = cfg.p_image
        want = np.zeros((4, 5))
        idx = 0
        for gr in range(2):
            for gc in range(2):
                vec = img[:, gr * p:(gr + 1) * p, gc * p:(gc + 1) * p].reshape(-1).numpy()
                want[idx] = vec @ weight.numpy() + bias.numpy()
                idx += 1
        assert np.allclose(got, want, atol=1e-6)

    def test_non_divisible_rejected(self):
        cfg = ImageRenderConfig(w=16, h=16, p_image=8)
        with pytest.raises(ValueError):
            image_patchify(torch.zeros(3, 15, 16), cfg)


class TestTextTokenizer:
    def test_empty_string(self):
        vocab = build_default_vocab()
        ids, mask = tokenize_text("", vocab, 8)
        assert np.all(ids == vocab.pad_id)
        assert not mask.any()

    def test_repeated_word(self):
        vocab = build_default_vocab()
        decay = vocab.token_to_id["decay"]
        ids, mask = tokenize_text("decay decay", vocab, 5)
        assert list(ids[:2]) == [decay, decay]
        assert np.all(ids[2:] == vocab.pad_id)
        assert list(mask) == [True, True, False, False, False]

    def test_unknown_maps_to_unk(self):
        vocab = build_default_vocab()
        ids, mask = tokenize_text("zyzzyva decay", vocab, 4)
        assert ids[0] == vocab.unk_id
        assert mask[0] and mask[1]

    def test_truncation(self):
        vocab = build_default_vocab()
        ids, mask = tokenize_text("decay " * 10, vocab, 3)
        assert mask.all() and len(ids) == 3

    def test_all_templates_in_vocab(self):
        vocab = build_default_vocab()
        for domain in DOMAIN_NAMES:
            for family in TREND_FAMILIES:
                for informative in (True, False):
                    text = render_text_description(WindowMeta(domain, family, 8), informative)
                    ids, mask = tokenize_text(text, vocab, 32)
                    assert not np.any(ids[mask] == vocab.unk_id)

    def test_vocab_specials_distinct_and_bijective(self):
        vocab = build_default_vocab()
        assert len({vocab.pad_id, vocab.unk_id, vocab.mask_id}) == 3
        assert len(vocab.token_to_id) == len(vocab.id_to_token)
        for tok, idx in vocab.token_to_id.items():
            assert vocab.id_to_token[idx] == tok

    def test_vocab_file_round_trip(self, tmp_path):
        vocab = build_default_vocab()
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        again = TextVocab.load(path)
        assert again.id_to_token == vocab.id_to_token
        lines = path.read_text().splitlines()
        assert lines[:3] == ["<pad>", "<unk>", "<mask>"]

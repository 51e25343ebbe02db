"""Synthetic corpus generation, augmentation, and wav-pair loading."""

import numpy as np
import pytest
import torch

from vqse.audio_io import write_wav
from vqse.data import (
    CorpusSpec,
    CorpusError,
    PairSample,
    SyntheticCorpus,
    bandmask_augment,
    load_wav_corpus,
    measure_snr_db,
    remix_augment,
    synth_pair,
    write_corpus,
)
from vqse.signal import Waveform

from helpers import make_noise, make_tone


SPEC = CorpusSpec(num_pairs=16, duration_range=(0.3, 0.6), seed=123)


class TestPairSample:
    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError):
            PairSample(make_tone(100), make_tone(101), 0.0)


class TestCorpusSpec:
    def test_standard_snr_set_is_default(self):
        assert CorpusSpec().snr_set == (0.0, 5.0, 10.0, 15.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            CorpusSpec(num_pairs=0)
        with pytest.raises(ValueError):
            CorpusSpec(duration_range=(1.0, 0.5))
        with pytest.raises(ValueError):
            CorpusSpec(snr_set=())


class TestSynthPair:
    def test_snr_is_exact(self):
        for i in range(SPEC.num_pairs):
            pair = synth_pair(SPEC, i)
            assert pair.snr_db in SPEC.snr_set
            measured = measure_snr_db(pair.clean, pair.noisy)
            assert measured == pytest.approx(pair.snr_db, abs=0.01)

    def test_deterministic(self):
        a, b = synth_pair(SPEC, 3), synth_pair(SPEC, 3)
        assert torch.equal(a.clean.samples, b.clean.samples)
        assert torch.equal(a.noisy.samples, b.noisy.samples)
        assert a.snr_db == b.snr_db

    def test_out_of_range_index(self):
        with pytest.raises(IndexError):
            synth_pair(SPEC, SPEC.num_pairs)

    def test_durations_in_range(self):
        for i in range(8):
            pair = synth_pair(SPEC, i)
            duration = len(pair.clean) / SPEC.sample_rate
            assert 0.3 <= duration <= 0.6 + 1e-3

    def test_corpus_view(self):
        corpus = SyntheticCorpus(SPEC)
        assert len(corpus) == 16
        items = list(corpus)
        assert len(items) == 16
        assert torch.equal(items[2].clean.samples, synth_pair(SPEC, 2).clean.samples)


def _fixed_batch(n=2, length=2000):
    batch = []
    for i in range(n):
        clean = make_tone(length, freq=300.0 + 80 * i, seed=i)
        noise = make_noise(length, amp=0.1, seed=100 + i)
        noisy = Waveform(clean.samples + noise.samples, clean.sample_rate)
        batch.append(PairSample(clean, noisy, measure_snr_db(clean, noisy), {"i": i}))
    return batch


def _find_permutation_seeds(n):
    identity_seed = swap_seed = None
    for seed in range(200):
        perm = np.random.default_rng(seed).permutation(n)
        if (perm == np.arange(n)).all() and identity_seed is None:
            identity_seed = seed
        if (perm == np.arange(n)[::-1]).all() and swap_seed is None:
            swap_seed = seed
        if identity_seed is not None and swap_seed is not None:
            return identity_seed, swap_seed
    raise RuntimeError("no suitable seeds found")


class TestRemix:
    def test_identity_permutation_is_noop(self):
        batch = _fixed_batch()
        identity_seed, _ = _find_permutation_seeds(2)
        out = remix_augment(batch, seed=identity_seed)
        for before, after in zip(batch, out):
            assert torch.allclose(before.noisy.samples, after.noisy.samples)

    def test_swap_reconstructs_other_noise(self):
        batch = _fixed_batch()
        _, swap_seed = _find_permutation_seeds(2)
        out = remix_augment(batch, seed=swap_seed)
        noise0 = batch[0].noisy.samples - batch[0].clean.samples
        noise1 = batch[1].noisy.samples - batch[1].clean.samples
        assert torch.allclose(out[0].noisy.samples, batch[0].clean.samples + noise1)
        assert torch.allclose(out[1].noisy.samples, batch[1].clean.samples + noise0)

    def test_clean_targets_unchanged(self):
        batch = _fixed_batch(4)
        out = remix_augment(batch, seed=5)
        for before, after in zip(batch, out):
            assert torch.equal(before.clean.samples, after.clean.samples)

    def test_noise_power_multiset_preserved(self):
        batch = _fixed_batch(5)
        out = remix_augment(batch, seed=9)
        powers = lambda samples: sorted(
            float(((s.noisy.samples - s.clean.samples) ** 2).sum()) for s in samples
        )
        np.testing.assert_allclose(powers(batch), powers(out), rtol=1e-6)

    def test_single_sample_warns_and_passes_through(self):
        batch = _fixed_batch(1)
        with pytest.warns(UserWarning):
            out = remix_augment(batch, seed=0)
        assert torch.equal(out[0].noisy.samples, batch[0].noisy.samples)

    def test_unequal_lengths_rejected(self):
        batch = [_fixed_batch(1, 1000)[0], _fixed_batch(1, 1200)[0]]
        with pytest.raises(ValueError):
            remix_augment(batch, seed=0)


class TestBandmask:
    def test_masked_band_energy_is_removed(self):
        pair = _fixed_batch(1, 4000)[0]
        # Broadband noisy signal so the masked band has energy to remove.
        noisy = Waveform(pair.clean.samples + make_noise(4000, amp=0.2, seed=55).samples)
        pair = PairSample(pair.clean, noisy, 0.0)
        out = bandmask_augment(pair, seed=4)
        f_lo, f_hi = out.metadata["bandmask_hz"]
        freqs = np.fft.rfftfreq(4000, d=1.0 / 16000)
        band = (freqs >= f_lo) & (freqs < f_hi)
        assert band.sum() > 3  # premise: the sampled band is non-trivial
        before = np.abs(np.fft.rfft(pair.noisy.numpy()))[band] ** 2
        after = np.abs(np.fft.rfft(out.noisy.numpy()))[band] ** 2
        assert after.sum() <= 0.01 * before.sum()

    def test_clean_bit_identical(self):
        pair = _fixed_batch(1, 3000)[0]
        out = bandmask_augment(pair, seed=6)
        assert out.clean.samples is pair.clean.samples

    def test_deterministic(self):
        pair = _fixed_batch(1, 3000)[0]
        a = bandmask_augment(pair, seed=6)
        b = bandmask_augment(pair, seed=6)
        assert torch.equal(a.noisy.samples, b.noisy.samples)

    def test_band_at_most_20_percent_of_mel_axis(self):
        from vqse.features import hz_to_mel

        for seed in range(30):
            out = bandmask_augment(_fixed_batch(1, 2000)[0], seed=seed)
            f_lo, f_hi = out.metadata["bandmask_hz"]
            mel_span = hz_to_mel(f_hi) - hz_to_mel(f_lo)
            assert mel_span <= 0.2 * hz_to_mel(8000.0) + 1e-6


class TestWavCorpus:
    def _write_pairs(self, root, names, length=1600):
        (root / "clean").mkdir()
        (root / "noisy").mkdir()
        for i, name in enumerate(names):
            clean = make_tone(length, freq=250.0 + 30 * i, seed=i)
            noisy = Waveform(clean.samples + 0.05 * make_noise(length, seed=50 + i).samples)
            write_wav(root / "clean" / name, clean)
            write_wav(root / "noisy" / name, noisy)

    def test_loads_matched_pairs(self, tmp_path):
        self._write_pairs(tmp_path, ["a.wav", "b.wav"])
        pairs = list(load_wav_corpus(tmp_path / "clean", tmp_path / "noisy"))
        assert [p.metadata["name"] for p in pairs] == ["a.wav", "b.wav"]
        assert all(len(p.clean) == len(p.noisy) for p in pairs)

    def test_unmatched_file_rejected(self, tmp_path):
        self._write_pairs(tmp_path, ["a.wav"])
        write_wav(tmp_path / "noisy" / "extra.wav", make_tone(800))
        with pytest.raises(CorpusError, match="unmatched"):
            list(load_wav_corpus(tmp_path / "clean", tmp_path / "noisy"))

    def test_length_mismatch_rejected(self, tmp_path):
        self._write_pairs(tmp_path, ["a.wav"])
        write_wav(tmp_path / "noisy" / "a.wav", make_tone(999))
        with pytest.raises(CorpusError, match="lengths"):
            list(load_wav_corpus(tmp_path / "clean", tmp_path / "noisy"))

    def test_unreadable_wav_rejected(self, tmp_path):
        self._write_pairs(tmp_path, ["a.wav"])
        (tmp_path / "clean" / "a.wav").write_bytes(b"not a wav at all")
        with pytest.raises(CorpusError):
            list(load_wav_corpus(tmp_path / "clean", tmp_path / "noisy"))

    def test_rate_mismatch_rejected(self, tmp_path):
        (tmp_path / "clean").mkdir()
        (tmp_path / "noisy").mkdir()
        w8k = Waveform(make_tone(800).samples, sample_rate=8000)
        write_wav(tmp_path / "clean" / "a.wav", w8k)
        write_wav(tmp_path / "noisy" / "a.wav", w8k)
        with pytest.raises(CorpusError, match="rate"):
            list(load_wav_corpus(tmp_path / "clean", tmp_path / "noisy", expected_rate=16000))

    def test_write_corpus_round_trips(self, tmp_path):
        spec = CorpusSpec(num_pairs=3, duration_range=(0.2, 0.3), seed=7)
        manifest = write_corpus(spec, tmp_path)
        lines = manifest.read_text().strip().splitlines()
        assert len(lines) == 6  # clean + noisy per pair
        assert all((tmp_path / line).exists() for line in lines)
        pairs = list(load_wav_corpus(tmp_path / "clean", tmp_path / "noisy"))
        assert len(pairs) == 3
        for i, pair in enumerate(pairs):
            original = synth_pair(spec, i)
            assert pair.snr_db == pytest.approx(original.snr_db, abs=0.01)

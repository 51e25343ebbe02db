"""Stub feature provider and precomputed-feature file format."""

import math
import struct

import numpy as np
import pytest
import torch

from vqse.features import (
    FORMAT_VERSION,
    MAGIC,
    FeatureBundle,
    FeatureFileError,
    load_precomputed,
    mel_filterbank,
    save_precomputed,
    stub_features,
)
from vqse.signal import Waveform

from helpers import make_noise, make_tone


class TestFeatureBundle:
    def test_rejects_empty_frames(self):
        with pytest.raises(ValueError):
            FeatureBundle(torch.zeros(0, 8), 50.0, "x")

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            FeatureBundle(torch.full((2, 4), float("nan")), 50.0, "x")

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            FeatureBundle(torch.zeros(2, 4), 0.0, "x")


class TestMelFilterbank:
    def test_shape_and_coverage(self):
        fb = mel_filterbank(64, 512, 16000)
        assert fb.shape == (64, 257)
        assert np.all(fb >= 0)
        # Every filter has support, and interior bins are covered by some filter.
        assert np.all(fb.sum(axis=1) > 0)
        assert np.all(fb[:, 1:-1].sum(axis=0) > 0)


class TestStubFeatures:
    def test_deterministic(self):
        x = make_tone(8000, seed=1)
        a = stub_features(x, dim=32, seed=7)
        b = stub_features(x, dim=32, seed=7)
        assert torch.equal(a.features, b.features)
        assert a.provider_id == b.provider_id
        assert a.frame_rate == b.frame_rate

    def test_seed_changes_output(self):
        x = make_tone(8000, seed=1)
        a = stub_features(x, dim=32, seed=7)
        b = stub_features(x, dim=32, seed=8)
        assert not torch.equal(a.features, b.features)

    def test_one_second_gives_50_frames(self):
        bundle = stub_features(make_noise(16000, seed=2), dim=16, seed=0)
        assert bundle.features.shape == (50, 16)
        assert bundle.frame_rate == 50.0

    def test_zero_input_is_affine_image_of_log_floor(self):
        bundle = stub_features(Waveform(torch.zeros(16000)), dim=24, seed=5)
        rng = np.random.default_rng(5)
        weight = rng.standard_normal((64, 24)) / np.sqrt(64.0)
        bias = 0.1 * rng.standard_normal(24)
        expected = (np.full(64, math.log(1e-5)) @ weight + bias).astype(np.float32)
        rows = bundle.features.numpy()
        np.testing.assert_allclose(rows, np.tile(expected, (rows.shape[0], 1)), rtol=1e-5)


class TestPrecomputedFiles:
    def test_round_trip(self, tmp_path):
        bundle = stub_features(make_noise(6000, seed=3), dim=48, seed=1)
        path = tmp_path / "sample.feat"
        save_precomputed(path, bundle)
        loaded = load_precomputed(path, expected_dim=48)
        assert torch.equal(loaded.features, bundle.features)
        assert loaded.frame_rate == bundle.frame_rate
        assert loaded.provider_id == bundle.provider_id

    def test_dimension_mismatch(self, tmp_path):
        bundle = FeatureBundle(torch.randn(4, 768), 50.0, "external")
        path = tmp_path / "wide.feat"
        save_precomputed(path, bundle)
        assert load_precomputed(path, 768).features.shape == (4, 768)
        with pytest.raises(FeatureFileError, match="dim"):
            load_precomputed(path, 512)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.feat"
        path.write_bytes(b"NOTAFEAT" + b"\0" * 64)
        with pytest.raises(FeatureFileError, match="magic"):
            load_precomputed(path, 8)

    def test_truncated(self, tmp_path):
        path = tmp_path / "short.feat"
        path.write_bytes(MAGIC)
        with pytest.raises(FeatureFileError, match="truncated"):
            load_precomputed(path, 8)

    def test_empty_frame_axis(self, tmp_path):
        header = MAGIC + struct.pack("<IIQdH", FORMAT_VERSION, 8, 0, 50.0, 1) + b"p"
        path = tmp_path / "empty.feat"
        path.write_bytes(header)
        with pytest.raises(FeatureFileError, match="empty"):
            load_precomputed(path, 8)

    def test_non_finite_payload(self, tmp_path):
        frames = np.array([[1.0, np.inf]], dtype="<f4")
        header = MAGIC + struct.pack("<IIQdH", FORMAT_VERSION, 2, 1, 50.0, 1) + b"p"
        path = tmp_path / "inf.feat"
        path.write_bytes(header + frames.tobytes())
        with pytest.raises(FeatureFileError, match="non-finite"):
            load_precomputed(path, 2)

    def test_unsupported_version(self, tmp_path):
        header = MAGIC + struct.pack("<IIQdH", 99, 2, 1, 50.0, 0)
        path = tmp_path / "v99.feat"
        path.write_bytes(header + np.zeros((1, 2), dtype="<f4").tobytes())
        with pytest.raises(FeatureFileError, match="version"):
            load_precomputed(path, 2)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import lfilter

from anmsim.errors import AliasingError, ConfigError, SignalFaultError
from anmsim.signals import (
    DelayLine,
    FirFilter,
    SampleFrame,
    SignalGen,
    white_block,
    write_f32,
    write_wav,
)
from oracles import splitmix64_ref


class TestWhiteNoise:
    def test_matches_scalar_reference(self):
        seed = 123456789
        block = white_block(seed, 0, 256)
        for i in range(256):
            u = splitmix64_ref(i, seed)
            assert block[i] == pytest.approx(2.0 * u - 1.0, abs=0.0)

    def test_offset_independence(self):
        a = white_block(7, 0, 1000)
        b = white_block(7, 500, 500)
        assert np.array_equal(a[500:], b)

    def test_range_and_spread(self):
        x = white_block(1, 0, 100000)
        assert np.all(x >= -1.0) and np.all(x < 1.0)
        assert abs(float(np.mean(x))) < 0.01
        assert float(np.var(x)) == pytest.approx(1.0 / 3.0, rel=0.02)

    def test_seeds_decorrelated(self):
        a = white_block(1, 0, 50000)
        b = white_block(2, 0, 50000)
        r = float(np.corrcoef(a, b)[0, 1])
        assert abs(r) < 0.02


class TestSignalGen:
    def test_tone_block(self, fs):
        g = SignalGen(kind="tone", fs=fs, tones=[(150.0, 1.0, 0.0)])
        x = g.block(0, fs)
        t = np.arange(fs) / fs
        assert np.allclose(x, np.sin(2 * math.pi * 150.0 * t), atol=1e-12)

    def test_block_splitting_identical(self, fs):
        for kind, kw in [
            ("tone", dict(tones=[(150.0, 1.0, 0.3)])),
            ("white", dict(seed=9)),
            ("genset", dict(seed=4)),
        ]:
            g = SignalGen(kind=kind, fs=fs, **kw)
            whole = g.block(0, 4096)
            parts = np.concatenate(
                [g.block(0, 1000), g.block(1000, 96), g.block(1096, 3000)])
            assert np.array_equal(whole, parts), kind

    def test_aliasing_rejected(self, fs):
        with pytest.raises(AliasingError):
            SignalGen(kind="tone", fs=fs, tones=[(4000.0, 1.0, 0.0)])
        with pytest.raises(AliasingError):
            SignalGen(kind="genset", fs=fs, genset_f0=1500.0)

    def test_bad_config_rejected(self, fs):
        with pytest.raises(ConfigError):
            SignalGen(kind="tone", fs=fs, tones=[])
        with pytest.raises(ConfigError):
            SignalGen(kind="nope", fs=fs)
        with pytest.raises(ConfigError):
            SignalGen(kind="tone", fs=fs,
                      tones=[(100.0, 1, 0), (200.0, 1, 0)])

    def test_genset_spectrum_lines(self, fs):
        g = SignalGen(kind="genset", fs=fs, amplitude=1.0, seed=3)
        x = g.block(0, fs * 8)
        spec = np.abs(np.fft.rfft(x * np.hanning(x.size)))
        freqs = np.fft.rfftfreq(x.size, 1.0 / fs)

        def level(f):
            i = int(np.argmin(np.abs(freqs - f)))
            return float(np.max(spec[i - 2 : i + 3]))

        l1 = level(77.0)
        assert 20 * math.log10(level(154.0) / l1) == pytest.approx(-10, abs=1)
        assert 20 * math.log10(level(231.0) / l1) == pytest.approx(-16, abs=1)


class TestSampleFrame:
    def test_rejects_non_finite(self, fs):
        with pytest.raises(SignalFaultError):
            SampleFrame(np.array([0.0, math.nan]), 0, fs)
        with pytest.raises(SignalFaultError):
            SampleFrame(np.array([math.inf]), 10, fs)

    def test_count(self, fs):
        f = SampleFrame(np.zeros(64), 128, fs)
        assert f.count == 64 and f.start == 128


class TestFirFilter:
    def test_matches_lfilter(self, rng):
        taps = rng.normal(size=12)
        x = rng.normal(size=500)
        f = FirFilter(taps)
        assert np.allclose(f.process(x), lfilter(taps, [1.0], x), atol=1e-12)

    def test_streaming_equals_batch(self, rng):
        taps = rng.normal(size=9)
        x = rng.normal(size=700)
        whole = FirFilter(taps).process(x)
        f = FirFilter(taps)
        parts = np.concatenate([f.process(x[:1]), f.process(x[1:300]),
                                f.process(x[300:])])
        assert np.array_equal(whole, parts)

    @settings(deadline=None, max_examples=30)
    @given(st.lists(st.integers(min_value=1, max_value=50),
                    min_size=1, max_size=8))
    def test_any_chunking_equivalent(self, sizes):
        rng = np.random.default_rng(5)
        taps = rng.normal(size=7)
        n = sum(sizes)
        x = rng.normal(size=n)
        whole = FirFilter(taps).process(x)
        f = FirFilter(taps)
        pos = 0
        parts = []
        for s in sizes:
            parts.append(f.process(x[pos : pos + s]))
            pos += s
        assert np.array_equal(whole, np.concatenate(parts))

    def test_single_tap(self):
        f = FirFilter([2.0])
        assert np.array_equal(f.process([1.0, 2.0]), [2.0, 4.0])

    def test_bad_taps(self):
        with pytest.raises(ConfigError):
            FirFilter([])


class TestDelayLine:
    def test_basic_delay(self):
        d = DelayLine(3)
        out = d.process(np.arange(1.0, 7.0))
        assert np.array_equal(out, [0, 0, 0, 1, 2, 3])
        out2 = d.process(np.arange(7.0, 9.0))
        assert np.array_equal(out2, [4, 5])

    def test_zero_delay(self):
        d = DelayLine(0)
        x = np.arange(5.0)
        assert np.array_equal(d.process(x), x)

    def test_negative_rejected(self):
        with pytest.raises(ConfigError):
            DelayLine(-1)


class TestExport:
    def test_f32_roundtrip(self, tmp_path):
        x = np.array([0.5, -0.25, 1.5], dtype=np.float64)
        p = tmp_path / "x.f32"
        write_f32(p, x)
        back = np.fromfile(p, dtype="<f4")
        assert np.allclose(back, x.astype(np.float32))

    def test_wav_header_and_payload(self, tmp_path):
        fs = 8000
        x = np.sin(np.arange(100) * 0.1)
        p = tmp_path / "x.wav"
        write_wav(p, x, fs)
        raw = p.read_bytes()
        assert raw[:4] == b"RIFF" and raw[8:12] == b"WAVE"
        # format tag 3 = IEEE float, mono, 32 bit
        assert int.from_bytes(raw[20:22], "little") == 3
        assert int.from_bytes(raw[22:24], "little") == 1
        assert int.from_bytes(raw[34:36], "little") == 32
        assert int.from_bytes(raw[24:28], "little") == fs
        back = np.frombuffer(raw[44:], dtype="<f4")
        assert np.allclose(back, x.astype(np.float32))

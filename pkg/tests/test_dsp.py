import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal

from ae_locate.dsp import (
    DB4_HIGHPASS,
    DB4_LOWPASS,
    PreprocessConfig,
    Scalogram,
    WaveletSpec,
    bilinear_resize,
    build_sample,
    cwt,
    cwt_coefficients,
    default_scales,
    dwt,
    dwt_denoise,
    highpass,
    highpass_gain,
    idwt,
    scale_for_frequency,
    scalogram_image,
)
from ae_locate.errors import InputError, ParameterError
from ae_locate.sim import PlateSpec, SensorLayout, SourceEvent, Waveform, gabor_pulse, synth_event

from oracles import cwt_bruteforce, morlet_literal, rel_error

FS = 1.0e6


def _wave(x):
    return Waveform(FS, np.asarray(x, dtype=np.float64))


# --- high-pass -------------------------------------------------------------

def test_highpass_removes_dc():
    out = highpass(_wave(np.full(512, 3.0)), 1000.0)
    assert np.max(np.abs(out.samples)) < 0.03


def test_highpass_passband_against_analytic_response():
    t = np.arange(4096) / FS
    x = np.sin(2 * np.pi * 100e3 * t)
    out = highpass(_wave(x), 1000.0)
    gain = highpass_gain(100e3, 1000.0, FS)
    rms_in = np.sqrt(np.mean(x ** 2))
    rms_out = np.sqrt(np.mean(out.samples ** 2))
    assert abs(rms_out / rms_in - 1.0) < 0.05
    assert abs(rms_out / rms_in - gain) < 0.01
    # independent check of the analytic response: Butterworth |H|^2 = 1 / (1 + (fc'/f')^(2n)), prewarped
    wc, wf = math.tan(math.pi * 1000.0 / FS), math.tan(math.pi * 100e3 / FS)
    assert gain == pytest.approx(1.0 / (1.0 + (wc / wf) ** 8), rel=1e-9)


def test_highpass_zero_and_bad_cutoff():
    assert np.all(highpass(_wave(np.zeros(256)), 1000.0).samples == 0.0)
    with pytest.raises(ParameterError):
        highpass(_wave(np.zeros(256)), FS)


# --- DWT ---------------------------------------------------------------------

def test_db4_filter_identities():
    h, g = DB4_LOWPASS, DB4_HIGHPASS
    assert h.size == 8
    assert h.sum() == pytest.approx(math.sqrt(2), abs=1e-14)
    assert np.dot(h, h) == pytest.approx(1.0, abs=1e-14)
    for k in (2, 4, 6):
        assert abs(np.dot(h[:-k], h[k:])) < 1e-14
    # four vanishing moments of the wavelet
    n = np.arange(8)
    for p in range(4):
        assert abs(np.sum(g * n ** p)) < 1e-10 * max(1, 8 ** p)


@given(n_blocks=st.integers(1, 40), levels=st.integers(1, 5), seed=st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_dwt_round_trip(n_blocks, levels, seed):
    x = np.random.default_rng(seed).normal(size=n_blocks * 2 ** levels)
    a, d = dwt(x, levels)
    assert len(d) == levels and a.size == x.size >> levels
    np.testing.assert_allclose(idwt(a, d), x, rtol=0, atol=1e-9 * max(1.0, np.abs(x).max()))
    # orthogonality: energy preserved
    e = np.sum(a ** 2) + sum(np.sum(di ** 2) for di in d)
    assert e == pytest.approx(np.sum(x ** 2), rel=1e-12)


def test_dwt_denoise_zero_threshold_identity():
    x = np.random.default_rng(1).normal(size=509)  # not a block multiple
    out = dwt_denoise(_wave(x), WaveletSpec(dwt_levels=4), threshold=0.0)
    assert rel_error(out.samples, x) < 1e-9
    assert np.all(dwt_denoise(_wave(np.zeros(512))).samples == 0.0)


def test_dwt_denoise_reduces_error():
    t = np.arange(512) / FS
    clean = gabor_pulse(t, 200e-6, 150e3, 30e-6)
    for seed in range(20):
        noisy = clean + np.random.default_rng(seed).normal(0.0, 0.1, t.size)
        out = dwt_denoise(_wave(noisy)).samples
        assert np.sqrt(np.mean((out - clean) ** 2)) < np.sqrt(np.mean((noisy - clean) ** 2))


# --- CWT ---------------------------------------------------------------------

def test_morlet_closed_form_matches_literal():
    from ae_locate.dsp import morlet

    for t in (-2.5, -0.3, 0.0, 0.7, 3.1):
        assert morlet(np.array([t]))[0] == pytest.approx(morlet_literal(t), abs=1e-15)


def test_cwt_matches_bruteforce():
    rng = np.random.default_rng(7)
    scales = np.geomspace(1.5, 80.0, 16)
    for _ in range(3):
        x = rng.normal(size=256)
        assert rel_error(cwt_coefficients(x, scales), cwt_bruteforce(x, scales)) < 1e-6


def test_cwt_zero_signal():
    s = cwt(_wave(np.zeros(128)), [2.0, 5.0, 9.0])
    assert np.all(s.magnitudes == 0.0)
    with pytest.raises(ParameterError):
        cwt_coefficients(np.zeros(8), [0.0])


def _time_avg(x, scales):
    return np.abs(cwt_coefficients(x, scales))[:, 200:-200].mean(axis=1)


def test_cwt_ridge_100khz_nearest_grid_scale():
    scales = default_scales(PreprocessConfig(), FS)
    x = np.sin(2 * np.pi * 100e3 * np.arange(1024) / FS)
    a_star = scale_for_frequency(100e3, FS)
    assert int(np.argmax(_time_avg(x, scales))) == int(np.argmin(np.abs(scales - a_star)))


@pytest.mark.parametrize("f0", [40e3, 75e3, 150e3, 230e3, 310e3])
def test_cwt_ridge_matches_dense_bruteforce(f0):
    """The grid peak is the grid scale nearest the ridge found on a dense scale grid."""
    scales = default_scales(PreprocessConfig(), FS)
    x = np.sin(2 * np.pi * f0 * np.arange(1024) / FS)
    a_star = scale_for_frequency(f0, FS)
    dense = a_star * np.linspace(0.9, 1.1, 401)
    ridge = dense[np.argmax(_time_avg(x, dense))]
    # the sqrt(a) normalisation moves the ridge slightly above a*: a w = (w0 + sqrt(w0^2 + 2)) / 2
    assert ridge / a_star == pytest.approx((6 + math.sqrt(38)) / 12, abs=2e-3)
    peak = int(np.argmax(_time_avg(x, scales)))
    assert peak == int(np.argmin(np.abs(np.log(scales / ridge))))
    assert abs(np.log(scales[peak] / a_star)) <= np.log(scales[1] / scales[0])


@given(alpha=st.floats(-3, 3), beta=st.floats(-3, 3), seed=st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_cwt_linearity(alpha, beta, seed):
    rng = np.random.default_rng(seed)
    f, g = rng.normal(size=128), rng.normal(size=128)
    scales = [1.2, 4.0, 11.0]
    lhs = cwt_coefficients(alpha * f + beta * g, scales)
    rhs = alpha * cwt_coefficients(f, scales) + beta * cwt_coefficients(g, scales)
    np.testing.assert_allclose(np.abs(lhs), np.abs(rhs), rtol=1e-9, atol=1e-9 * (abs(alpha) + abs(beta) + 1e-3))


def test_cwt_shift_covariance():
    rng = np.random.default_rng(3)
    x = np.zeros(400)
    x[150:250] = rng.normal(size=100)
    k = 17
    scales = [2.0, 6.0]
    a = cwt_coefficients(x, scales)
    b = cwt_coefficients(np.roll(x, k), scales)
    margin = 60  # > 8 * largest scale
    np.testing.assert_allclose(b[:, margin + k:-margin], a[:, margin:-margin - k], atol=1e-12)


# --- images ------------------------------------------------------------------

def test_bilinear_center_pixel():
    out = bilinear_resize(np.array([[0.0, 1.0], [1.0, 0.0]]), 3, 3)
    assert out[1, 1] == pytest.approx(0.5)
    np.testing.assert_allclose(out[[0, 0, 2, 2], [0, 2, 0, 2]], [0, 1, 1, 0])


def test_bilinear_against_scipy():
    from scipy.interpolate import RegularGridInterpolator

    img = np.random.default_rng(0).random((13, 29))
    interp = RegularGridInterpolator((np.arange(13), np.arange(29)), img)
    yy, xx = np.meshgrid(np.linspace(0, 12, 7), np.linspace(0, 28, 11), indexing="ij")
    ref = interp(np.stack([yy, xx], axis=-1))
    np.testing.assert_allclose(bilinear_resize(img, 7, 11), ref, atol=1e-12)


def test_scalogram_image_identity_and_constant():
    img = np.random.default_rng(2).random((8, 8))
    img = (img - img.min()) / (img.max() - img.min())
    out = scalogram_image(Scalogram(np.arange(8.0) + 1, img), 8, 8)
    np.testing.assert_allclose(out, img, atol=1e-15)
    flat = scalogram_image(Scalogram(np.arange(4.0) + 1, np.full((4, 10), 2.5)), 6, 6)
    assert np.all(flat == 0.0)


def test_build_sample_contract():
    plate = PlateSpec()
    lay = SensorLayout.corners(plate)
    waves = synth_event(plate, lay, SourceEvent(110.0, 170.0, seed=4), noise_rms=0.002)
    s = build_sample(waves, (110.0, 170.0), plate)
    assert s.channels.shape == (4, 64, 64)
    assert s.channels.min() >= 0.0 and s.channels.max() <= 1.0
    for c in range(4):
        assert s.channels[c].min() == 0.0 and s.channels[c].max() == pytest.approx(1.0)
    assert s.label == pytest.approx((110 / 300, 170 / 300))
    same = build_sample([waves[0]] * 4, (0.0, 0.0), plate)
    for c in range(1, 4):
        assert np.array_equal(same.channels[c], same.channels[0])
    assert same.label == (0.0, 0.0)
    assert build_sample([waves[0]] * 4, (300.0, 300.0), plate).label == (1.0, 1.0)
    with pytest.raises(InputError):
        build_sample(waves[:3], (1.0, 1.0), plate)


def test_scales_cover_band():
    cfg = PreprocessConfig()
    scales = default_scales(cfg, FS)
    assert scales.size == 64
    assert np.all(np.diff(scales) > 0)
    f = 6.0 * FS / (2 * np.pi * scales)
    assert f[0] == pytest.approx(500e3) and f[-1] == pytest.approx(10e3)
    # sanity: Butterworth order-4 design is the one scipy produces
    sos = signal.butter(4, 1000.0, btype="highpass", fs=FS, output="sos")
    assert sos.shape == (2, 6)

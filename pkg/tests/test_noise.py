from math import pi

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import signal, stats

from deeptherm.errors import ConfigError, ParameterError
from deeptherm.noise import (NoiseSpec, calibrate_from_t2star, closed_form_strength, crossing_time,
                             measure_t2star, ramsey_decay, ramsey_phases, sample_trajectory, spec_from_config)


def test_white_autocovariance():
    W, dt = 2e6, 1e-10
    x = sample_trajectory(NoiseSpec.white([W]), 1, dt, 1e6 * dt, seed=1).samples[:, 0]
    var = W / dt
    se = var / np.sqrt(len(x))
    assert abs(np.mean(x * x) - var) < 5 * np.sqrt(2) * se
    for lag in (1, 2, 5, 50):
        assert abs(np.mean(x[:-lag] * x[lag:])) < 5 * se
    assert abs(stats.kurtosis(x)) < 0.1
    halves = x.reshape(2, -1)
    assert abs(halves[0].var() / halves[1].var() - 1) < 0.02


def test_white_sites_independent():
    x = sample_trajectory(NoiseSpec.white([1e6, 4e6]), 2, 1e-9, 2e-4, seed=2).samples
    assert x[:, 1].var() / x[:, 0].var() == pytest.approx(4, rel=0.03)
    assert abs(np.corrcoef(x.T)[0, 1]) < 0.02


def test_one_over_f_periodogram():
    # the harmonic sum is a line spectrum, so compare power in octave bands;
    # dt keeps the 100 kHz cutoff below Nyquist
    A, dt, T = 1e3, 4e-6, 0.5
    spec = NoiseSpec.one_over_f([A])
    psd = []
    for seed in range(100):
        x = sample_trajectory(spec, 1, dt, T, seed).samples[:, 0]
        f, p = signal.periodogram(x, fs=1 / dt, window="hann", return_onesided=False)
        psd.append(p)
    keep = f > 0
    f, p = f[keep], np.mean(psd, axis=0)[keep]
    df = f[1] - f[0]
    edges = 10 * 2.0 ** np.arange(11)
    for lo, hi in zip(edges[:-1], edges[1:]):
        band = (f >= lo) & (f < hi)
        expected = A / (2 * pi) * np.log(hi / lo)  # integral of S(2 pi f) over the band
        assert abs(10 * np.log10(p[band].sum() * df / expected)) < 3.0, (lo, hi)


def test_zero_strength_gives_zeros():
    for spec in (NoiseSpec.white([0.0]), NoiseSpec.one_over_f([0.0])):
        assert not np.any(sample_trajectory(spec, 3, 1e-9, 1e-7, seed=5).samples)


@pytest.mark.parametrize("kind", ["white", "one_over_f"])
def test_seed_determinism(kind):
    spec = NoiseSpec(kind, (1e6,))
    a = sample_trajectory(spec, 2, 1e-9, 1e-7, seed=42).samples
    b = sample_trajectory(spec, 2, 1e-9, 1e-7, seed=42).samples
    c = sample_trajectory(spec, 2, 1e-9, 1e-7, seed=43).samples
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_ramsey_phases_match_trajectories():
    spec = NoiseSpec.one_over_f([3.5e11])
    times, phases = ramsey_phases(spec, 1e-6, 3, seed=8, n_grid=100)
    seeds = np.random.default_rng(8).integers(0, 2**63 - 1, 3)
    for row, s in zip(phases, seeds):
        traj = sample_trajectory(spec, 1, 1e-8, 1e-6, int(s))
        assert np.allclose(row, traj.phase()[:, 0], rtol=1e-12, atol=1e-12)


def test_white_ramsey_decay_closed_form():
    # <exp(i phi)> = exp(-W t / 2) for white noise
    W = 2e6
    times, phases = ramsey_phases(NoiseSpec.white([W]), 2e-6, 20000, seed=3)
    decay = ramsey_decay(phases)
    assert np.max(np.abs(decay - np.exp(-W * times / 2))) < 0.02


def test_closed_form_strengths():
    assert closed_form_strength("white", 1e-6) == pytest.approx(2e6)
    a = closed_form_strength("one_over_f", 1e-6)
    assert a == pytest.approx(2 * pi / (1e-12 * np.log(1e8)))


def test_crossing_time():
    t = np.array([1.0, 2.0, 3.0])
    assert crossing_time(t, np.array([0.8, 0.5, 0.2]), 0.5) == 2.0
    assert crossing_time(t, np.array([0.9, 0.8, 0.7]), 0.5) == float("inf")


@pytest.mark.parametrize("kind", ["white", "one_over_f"])
def test_calibration_roundtrip(kind):
    strength = calibrate_from_t2star(kind, 1e-6, n_trajectories=2000, seed=1)
    measured = measure_t2star(NoiseSpec(kind, (strength,)), 3e-6, n_trajectories=4000, seed=2)
    assert measured == pytest.approx(1e-6, rel=0.05)


@pytest.mark.parametrize("kind", ["white", "one_over_f"])
def test_calibration_monotonic(kind):
    strengths = [calibrate_from_t2star(kind, t2, n_trajectories=2000, seed=4) for t2 in (0.5e-6, 1e-6, 2e-6)]
    assert strengths[0] > strengths[1] > strengths[2]


def test_white_calibration_near_closed_form():
    assert calibrate_from_t2star("white", 1e-6, n_trajectories=4000) == pytest.approx(2e6, rel=0.05)


def test_calibration_errors():
    with pytest.raises(ParameterError):
        calibrate_from_t2star("white", 1e-6, n_trajectories=100)
    with pytest.raises(ParameterError):
        calibrate_from_t2star("white", -1.0)


def test_spec_validation():
    with pytest.raises(ParameterError):
        NoiseSpec("pink", (1.0,))
    with pytest.raises(ParameterError):
        NoiseSpec.white([-1.0])
    with pytest.raises(ParameterError):
        NoiseSpec.one_over_f([1.0], low_cut_hz=10, high_cut_hz=1)
    with pytest.raises(ParameterError):
        NoiseSpec.white([1.0, 2.0]).site_strengths(3)


def test_spec_from_config():
    spec = spec_from_config({"kind": "1/f", "strength": [1.0, 2.0]}, 2)
    assert spec.kind == "one_over_f" and spec.strengths == (1.0, 2.0)
    with pytest.raises(ConfigError):
        spec_from_config({"kind": "white"}, 2)
    with pytest.raises(ConfigError):
        spec_from_config({"kind": "brown", "strength": 1}, 2)


@given(st.floats(1e3, 1e9), st.floats(1e-2, 1e9))
def test_density_band(strength, f):
    white = NoiseSpec.white([strength])
    pink = NoiseSpec.one_over_f([strength])
    w = 2 * pi * f
    assert white.density(w) == (strength if f <= white.high_cut_hz else 0.0)
    inside = pink.low_cut_hz <= f <= pink.high_cut_hz
    assert pink.density(-w) == pytest.approx(strength / w if inside else 0.0)

"""Gaussian dephasing trajectories with white or 1/f spectra.

Spectral densities are two-sided: the autocovariance is
``<xi(0) xi(t)> = int dw/(2 pi) S(w) exp(-i w t)`` over the whole real line,
so a white process with ``S = W`` accumulates phase variance ``W t`` and a
single qubit dephases as ``exp(-W t / 2)`` (``T2* = 2 / W``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import e, log, pi, sqrt
from typing import Literal, Mapping, Sequence

import numpy as np

from .errors import CalibrationError, ConfigError, ParameterError

WHITE_HIGH_CUT_HZ = 1e9
ONE_OVER_F_LOW_CUT_HZ = 1e-3
ONE_OVER_F_HIGH_CUT_HZ = 1e5
N_HARMONICS = 200

Kind = Literal["white", "one_over_f"]


@dataclass(frozen=True)
class NoiseSpec:
    """Per-site noise strengths.

    ``strengths`` holds W_j (rad^2/s) for white noise and A_j for 1/f noise
    (S(w) = A_j / |w|).  Cutoffs are ordinary frequencies in Hz.
    """

    kind: Kind
    strengths: tuple[float, ...]
    low_cut_hz: float = ONE_OVER_F_LOW_CUT_HZ
    high_cut_hz: float | None = None
    n_harmonics: int = N_HARMONICS

    def __post_init__(self):
        if self.kind not in ("white", "one_over_f"):
            raise ParameterError(f"unknown noise kind {self.kind!r}")
        strengths = tuple(float(s) for s in np.atleast_1d(self.strengths))
        if any(s < 0 or not np.isfinite(s) for s in strengths):
            raise ParameterError("noise strengths must be finite and non-negative")
        object.__setattr__(self, "strengths", strengths)
        if self.high_cut_hz is None:
            default = WHITE_HIGH_CUT_HZ if self.kind == "white" else ONE_OVER_F_HIGH_CUT_HZ
            object.__setattr__(self, "high_cut_hz", default)
        # white noise has no low cutoff; the field is ignored for it
        if self.kind == "one_over_f" and not 0 < self.low_cut_hz < self.high_cut_hz:
            raise ParameterError("need 0 < low_cut < high_cut")
        if not self.high_cut_hz > 0:
            raise ParameterError("high_cut must be positive")
        if self.n_harmonics < 1:
            raise ParameterError("empty harmonic grid")

    @classmethod
    def white(cls, strengths, high_cut_hz: float = WHITE_HIGH_CUT_HZ) -> "NoiseSpec":
        return cls("white", strengths, high_cut_hz=high_cut_hz)

    @classmethod
    def one_over_f(cls, strengths, low_cut_hz: float = ONE_OVER_F_LOW_CUT_HZ,
                   high_cut_hz: float = ONE_OVER_F_HIGH_CUT_HZ, n_harmonics: int = N_HARMONICS) -> "NoiseSpec":
        return cls("one_over_f", strengths, low_cut_hz, high_cut_hz, n_harmonics)

    def site_strengths(self, n_sites: int) -> np.ndarray:
        s = np.asarray(self.strengths)
        if len(s) == 1:
            return np.full(n_sites, s[0])
        if len(s) != n_sites:
            raise ParameterError(f"noise spec has {len(s)} strengths for {n_sites} sites")
        return s

    def with_strengths(self, strengths) -> "NoiseSpec":
        return NoiseSpec(self.kind, strengths, self.low_cut_hz, self.high_cut_hz, self.n_harmonics)

    def density(self, omega, site: int = 0) -> np.ndarray:
        """Two-sided spectral density S(w) for one site, zero outside the band."""
        w = np.abs(np.asarray(omega, dtype=float))
        strength = self.strengths[site if len(self.strengths) > 1 else 0]
        lo, hi = 2 * pi * self.low_cut_hz, 2 * pi * self.high_cut_hz
        inside = (w <= hi) if self.kind == "white" else (w >= lo) & (w <= hi)
        with np.errstate(divide="ignore"):
            value = strength if self.kind == "white" else strength / w
        return np.where(inside, value, 0.0)


@dataclass(frozen=True)
class NoiseTrajectory:
    """Piecewise-constant noise: ``samples[k, j]`` is xi_j on [k dt, (k+1) dt).

    Values are taken at step midpoints.
    """

    dt: float
    samples: np.ndarray = field(repr=False)
    seed: int | None = None

    @property
    def n_steps(self) -> int:
        return self.samples.shape[0]

    @property
    def site_count(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.n_steps) + 0.5) * self.dt

    def phase(self) -> np.ndarray:
        """Accumulated phase int_0^t xi at step ends, shape (n_steps, sites)."""
        return np.cumsum(self.samples, axis=0) * self.dt


def n_steps_for(dt: float, duration: float) -> int:
    if dt <= 0 or not np.isfinite(dt):
        raise ParameterError(f"dt must be positive, got {dt}")
    if duration <= 0:
        raise ParameterError(f"duration must be positive, got {duration}")
    return max(1, int(round(duration / dt)))


def sample_trajectory(spec: NoiseSpec, sites: int, dt: float, duration: float,
                      seed: int) -> NoiseTrajectory:
    n = n_steps_for(dt, duration)
    rng = np.random.default_rng(seed)
    strengths = spec.site_strengths(sites)
    times = (np.arange(n) + 0.5) * dt
    if spec.kind == "white":
        samples = rng.standard_normal((n, sites)) * np.sqrt(strengths / dt)
    else:
        samples = np.empty((n, sites))
        for j in range(sites):
            samples[:, j] = _harmonic_sum(spec, strengths[j], times, rng)
    return NoiseTrajectory(dt, samples, seed)


def sample_trajectories(spec: NoiseSpec, sites: int, dt: float, duration: float,
                        seeds: Sequence[int]) -> list[NoiseTrajectory]:
    return [sample_trajectory(spec, sites, dt, duration, s) for s in seeds]


def harmonic_grid(spec: NoiseSpec) -> np.ndarray:
    """Log-spaced angular-frequency bin edges between the cutoffs."""
    return 2 * pi * np.geomspace(spec.low_cut_hz, spec.high_cut_hz, spec.n_harmonics + 1)


def _harmonic_params(spec: NoiseSpec, strength: float,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Frequencies, phases and amplitudes of one 1/f realization.

    Each log bin carries its exact band power ``int_bin S dw/(2 pi)`` from
    both signs of frequency, i.e. variance ``A ln(w_hi/w_lo) / pi``.  The
    frequency inside each bin is drawn log-uniformly so that averages over
    realizations see a continuous spectrum rather than fixed lines.
    """
    edges = harmonic_grid(spec)
    lo, hi = edges[:-1], edges[1:]
    u = rng.random(len(lo))
    phases = rng.uniform(0.0, 2 * pi, len(lo))
    omega = lo * (hi / lo) ** u
    amp = np.sqrt(2.0 * strength * np.log(hi / lo) / pi)
    return omega, phases, amp


def _harmonic_sum(spec: NoiseSpec, strength: float, times: np.ndarray,
                  rng: np.random.Generator, block: int = 256) -> np.ndarray:
    """One 1/f realization as a sum of random-phase cosines on a uniform grid."""
    omega, phases, amp = _harmonic_params(spec, strength, rng)
    if strength == 0.0:
        return np.zeros(len(times))
    # cos(w (t0 + s) + phi) = Re[exp(i (w t0 + phi)) exp(i w s)], evaluated block-wise as a matmul
    n = len(times)
    step = times[1] - times[0] if n > 1 else 0.0
    n_blocks = -(-n // block)
    starts = times[0] + np.arange(n_blocks) * block * step
    offsets = np.arange(block) * step
    head = (amp * np.exp(1j * phases))[None, :] * np.exp(1j * np.outer(starts, omega))
    tail = np.exp(1j * np.outer(omega, offsets))
    return (head @ tail).real.reshape(-1)[:n]


def ramsey_phases(spec: NoiseSpec, duration: float, n_trajectories: int, seed: int,
                  n_grid: int = 400) -> tuple[np.ndarray, np.ndarray]:
    """Single-qubit accumulated phases, shape (n_trajectories, n_grid).

    Uses the same generator and midpoint rule as the noisy evolution.
    """
    dt = duration / n_grid
    single = spec.with_strengths(spec.site_strengths(1)[:1])
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**63 - 1, n_trajectories)
    if spec.kind == "white":
        w = single.strengths[0]
        phases = np.cumsum(rng.standard_normal((n_trajectories, n_grid)), axis=1) * np.sqrt(w * dt)
    else:
        # same draws as sample_trajectory(single, 1, dt, duration, seed), evaluated in batches
        strength = single.strengths[0]
        params = [_harmonic_params(single, strength, np.random.default_rng(int(s))) for s in seeds]
        omega = np.array([p[0] for p in params])
        phi = np.array([p[1] for p in params])
        amp = params[0][2]
        mid = (np.arange(n_grid) + 0.5) * dt
        phases = np.empty((n_trajectories, n_grid))
        for start in range(0, n_trajectories, 64):
            w, f = omega[start:start + 64], phi[start:start + 64]
            xi = np.einsum("h,thg->tg", amp, np.cos(w[:, :, None] * mid[None, None, :] + f[:, :, None]))
            phases[start:start + 64] = np.cumsum(xi, axis=1) * dt
    return (np.arange(n_grid) + 1) * dt, phases


def ramsey_decay(phases: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """|<exp(i scale phi(t))>| over trajectories."""
    return np.abs(np.mean(np.exp(1j * scale * phases), axis=0))


def crossing_time(times: np.ndarray, decay: np.ndarray, level: float = 1 / e) -> float:
    """First time the decay falls to ``level`` (linear interpolation); inf if never."""
    below = np.nonzero(decay <= level)[0]
    if len(below) == 0:
        return float("inf")
    i = below[0]
    if i == 0:
        t0, d0 = 0.0, 1.0
    else:
        t0, d0 = times[i - 1], decay[i - 1]
    t1, d1 = times[i], decay[i]
    return float(t0 + (d0 - level) * (t1 - t0) / (d0 - d1))


def measure_t2star(spec: NoiseSpec, duration: float, n_trajectories: int = 4000,
                   seed: int = 0) -> float:
    times, phases = ramsey_phases(spec, duration, n_trajectories, seed)
    return crossing_time(times, ramsey_decay(phases))


def closed_form_strength(kind: Kind, t2star: float, low_cut_hz: float = ONE_OVER_F_LOW_CUT_HZ,
                         high_cut_hz: float = ONE_OVER_F_HIGH_CUT_HZ) -> float:
    """White: exact W = 2/T2*.  1/f: quasi-static estimate A = 2 pi / (T2*^2 ln(f_hi/f_lo))."""
    if kind == "white":
        return 2.0 / t2star
    return 2 * pi / (t2star**2 * log(high_cut_hz / low_cut_hz))


def calibrate_from_t2star(kind: Kind, target_t2star: float, ramsey_T: float | None = None, *,
                          low_cut_hz: float = ONE_OVER_F_LOW_CUT_HZ,
                          high_cut_hz: float | None = None,
                          n_trajectories: int = 4000, seed: int = 12345,
                          rel_tol: float = 1e-3) -> float:
    """Noise strength whose Monte-Carlo Ramsey decay crosses 1/e at ``target_t2star``.

    The unit-strength phases are drawn once; since phases scale as
    sqrt(strength), the bisection reuses them (common random numbers).
    """
    if not target_t2star > 0:
        raise ParameterError("target T2* must be positive")
    if n_trajectories < 2000:
        raise ParameterError("calibration needs at least 2000 trajectories")
    ramsey_T = 3.0 * target_t2star if ramsey_T is None else ramsey_T
    spec = NoiseSpec(kind, (1.0,), low_cut_hz, high_cut_hz)
    high_cut_hz = spec.high_cut_hz
    times, phases = ramsey_phases(spec, ramsey_T, n_trajectories, seed)

    def t2(strength):
        return crossing_time(times, ramsey_decay(phases, sqrt(strength)))

    guess = closed_form_strength(kind, target_t2star, low_cut_hz, high_cut_hz)
    lo, hi = guess / 4, guess * 4
    for _ in range(20):
        if t2(lo) > target_t2star:
            break
        lo /= 4
    else:
        raise CalibrationError("could not bracket the target T2* from below")
    for _ in range(20):
        if t2(hi) < target_t2star:
            break
        hi *= 4
    else:
        raise CalibrationError(f"no strength decays within ramsey_T={ramsey_T:g} s")
    while (hi - lo) / lo > rel_tol:
        mid = sqrt(lo * hi)
        if t2(mid) > target_t2star:
            lo = mid
        else:
            hi = mid
    return sqrt(lo * hi)


def spec_from_config(data: Mapping, n_sites: int, *, n_trajectories: int = 4000,
                     seed: int = 12345) -> NoiseSpec:
    """Build a NoiseSpec from ``{kind, t2star_us | strength, low_cut_hz, high_cut_hz}``."""
    kind = data.get("kind")
    if kind in ("1/f", "one-over-f", "pink"):
        kind = "one_over_f"
    if kind not in ("white", "one_over_f"):
        raise ConfigError(f"noise.kind must be 'white' or 'one_over_f', got {kind!r}")
    default_hi = WHITE_HIGH_CUT_HZ if kind == "white" else ONE_OVER_F_HIGH_CUT_HZ
    low = float(data.get("low_cut_hz", ONE_OVER_F_LOW_CUT_HZ))
    high = float(data.get("high_cut_hz", default_hi))
    if "strength" in data:
        strength = data["strength"]
    elif "t2star_us" in data:
        t2 = np.atleast_1d(np.asarray(data["t2star_us"], dtype=float)) * 1e-6
        cache: dict[float, float] = {}
        for value in np.unique(t2):
            cache[float(value)] = calibrate_from_t2star(
                kind, float(value), low_cut_hz=low, high_cut_hz=high,
                n_trajectories=n_trajectories, seed=seed)
        strength = [cache[float(v)] for v in t2]
    else:
        raise ConfigError("noise config needs either 'strength' or 't2star_us'")
    spec = NoiseSpec(kind, strength, low, high)
    spec.site_strengths(n_sites)
    return spec

"""Pure-state time evolution under the XY Hamiltonian, with and without dephasing noise."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Literal, Sequence

import numpy as np
from scipy.special import jv

from .errors import EncodingError, NumericalError, ParameterError
from .lattice import BasisTag, SparseHamiltonian, enumerate_sector
from .noise import NoiseTrajectory

Method = Literal["krylov", "chebyshev", "dense-eig"]

DENSE_PROPAGATOR_MAX_DIM = 2048


@dataclass
class StateVector:
    basis_tag: BasisTag
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (self.basis_tag.dimension,):
            raise ParameterError(
                f"{self.basis_tag} needs {self.basis_tag.dimension} amplitudes, got {self.amplitudes.shape}")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def strings(self) -> np.ndarray:
        return self.basis_tag.strings()

    def overlap(self, other: "StateVector") -> complex:
        if other.basis_tag != self.basis_tag:
            raise ParameterError("basis tags differ")
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def to_full(self) -> "StateVector":
        if not self.basis_tag.is_sector:
            return self
        full = np.zeros(1 << self.basis_tag.n_sites, dtype=np.complex128)
        full[self.strings()] = self.amplitudes
        return StateVector(BasisTag(self.basis_tag.n_sites), full)


@dataclass(frozen=True)
class EvolutionConfig:
    method: Method = "krylov"
    trotter_dt: float = 1e-10  # s
    krylov_dim: int = 30
    tolerance: float = 1e-10

    def __post_init__(self):
        if self.method not in ("krylov", "chebyshev", "dense-eig"):
            raise ParameterError(f"unknown evolution method {self.method!r}")
        if not self.trotter_dt > 0:
            raise ParameterError("trotter_dt must be positive")
        if not self.tolerance > 0:
            raise ParameterError("tolerance must be positive")
        if self.krylov_dim < 2:
            raise ParameterError("krylov_dim must be at least 2")


# ---------------------------------------------------------------- states

_SINGLE_SITE = {
    "0": np.array([1.0, 0.0], dtype=complex),
    "1": np.array([0.0, 1.0], dtype=complex),
    "X+": np.array([1.0, 1.0], dtype=complex) / np.sqrt(2),
    "Y+": np.array([1.0, 1.0j], dtype=complex) / np.sqrt(2),
}


def parse_pattern(pattern: str | Sequence[str]) -> list[str]:
    """Per-site tokens, site 0 first.

    A plain string of 0/1 characters is read one character per site;
    otherwise pass a sequence such as ``["X+", "Y+", ...]`` or a
    comma-separated string.
    """
    if isinstance(pattern, str):
        if "," in pattern:
            tokens = [t.strip() for t in pattern.split(",")]
        elif set(pattern) <= {"0", "1"}:
            tokens = list(pattern)
        else:
            tokens = pattern.split()
    else:
        tokens = [str(t) for t in pattern]
    aliases = {"X": "X+", "Y": "Y+", "+": "X+", "x+": "X+", "y+": "Y+"}
    tokens = [aliases.get(t, t) for t in tokens]
    bad = [t for t in tokens if t not in _SINGLE_SITE]
    if bad:
        raise EncodingError(f"unknown site tokens {bad}; use 0, 1, X+ or Y+")
    return tokens


def neel_pattern(rows: int, cols: int) -> list[str]:
    """Checkerboard half filling: site (r, c) excited when r + c is odd."""
    return ["1" if (r + c) % 2 else "0" for r in range(rows) for c in range(cols)]


def xy_checkerboard_pattern(n_sites: int) -> list[str]:
    """|X+> on even sites, |Y+> on odd sites."""
    return ["X+" if j % 2 == 0 else "Y+" for j in range(n_sites)]


def prepare_product_state(pattern: str | Sequence[str], basis_tag: BasisTag) -> StateVector:
    tokens = parse_pattern(pattern)
    n = basis_tag.n_sites
    if len(tokens) != n:
        raise EncodingError(f"pattern has {len(tokens)} sites, basis has {n}")
    if basis_tag.is_sector:
        if any(t not in ("0", "1") for t in tokens):
            raise EncodingError("X+/Y+ states span several charge sectors; use the full basis")
        weight = tokens.count("1")
        if weight != basis_tag.excitations:
            raise EncodingError(f"pattern has {weight} excitations, sector has {basis_tag.excitations}")
        value = sum(1 << j for j, t in enumerate(tokens) if t == "1")
        amps = np.zeros(basis_tag.dimension, dtype=np.complex128)
        amps[enumerate_sector(n, weight).rank[value]] = 1.0
        return StateVector(basis_tag, amps)
    amps = np.ones(1, dtype=np.complex128)
    for t in tokens:
        amps = np.kron(_SINGLE_SITE[t], amps)  # site j ends up as bit j
    return StateVector(basis_tag, amps)


def save_state(psi: StateVector, path: str | Path) -> None:
    """Write ``<path>.json`` (header) and ``<path>.bin`` (little-endian complex128)."""
    path = Path(path)
    header = {"basis_tag": psi.basis_tag.to_json(), "dimension": psi.basis_tag.dimension}
    path.with_suffix(".json").write_text(json.dumps(header, sort_keys=True))
    path.with_suffix(".bin").write_bytes(psi.amplitudes.astype("<c16").tobytes())


def load_state(path: str | Path) -> StateVector:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    tag = BasisTag.from_json(header["basis_tag"])
    amps = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<c16")
    if len(amps) != header["dimension"]:
        raise ParameterError("checkpoint length does not match its header")
    return StateVector(tag, amps.astype(np.complex128))


# ---------------------------------------------------------------- noiseless

def evolve(psi: StateVector, H: SparseHamiltonian, t: float,
           cfg: EvolutionConfig = EvolutionConfig()) -> StateVector:
    if psi.basis_tag != H.basis_tag:
        raise ParameterError(f"state basis {psi.basis_tag} does not match Hamiltonian basis {H.basis_tag}")
    if t == 0:
        return StateVector(psi.basis_tag, psi.amplitudes.copy())
    if cfg.method == "dense-eig":
        out = dense_expm_apply(H, psi.amplitudes, t)
    elif cfg.method == "chebyshev":
        out = chebyshev_expm_apply(H, psi.amplitudes, t, cfg.tolerance)
    else:
        out = krylov_expm_apply(H, psi.amplitudes, t, cfg.krylov_dim, cfg.tolerance)
    return StateVector(psi.basis_tag, out)


def evolve_times(psi: StateVector, H: SparseHamiltonian, times: Sequence[float],
                 cfg: EvolutionConfig = EvolutionConfig()) -> list[StateVector]:
    """States at each of the increasing ``times``, propagating incrementally."""
    out, current, t_prev = [], psi, 0.0
    for t in times:
        if t < t_prev:
            raise ParameterError("times must be non-decreasing")
        current = evolve(current, H, t - t_prev, cfg)
        out.append(current)
        t_prev = t
    return out


_SPECTRA: dict[int, tuple[SparseHamiltonian, np.ndarray, np.ndarray]] = {}


def spectrum(H: SparseHamiltonian) -> tuple[np.ndarray, np.ndarray]:
    """Dense eigendecomposition, cached per Hamiltonian object."""
    hit = _SPECTRA.get(id(H))
    if hit is not None and hit[0] is H:
        return hit[1], hit[2]
    if H.dimension > 16384:
        raise NumericalError(f"dense diagonalization of dimension {H.dimension} is not supported")
    evals, evecs = np.linalg.eigh(H.to_dense())
    if len(_SPECTRA) > 8:
        _SPECTRA.clear()
    _SPECTRA[id(H)] = (H, evals, evecs)
    return evals, evecs


def dense_expm_apply(H: SparseHamiltonian, v: np.ndarray, t: float) -> np.ndarray:
    evals, evecs = spectrum(H)
    return evecs @ (np.exp(-1j * evals * t)[:, None] * (evecs.conj().T @ v.reshape(len(v), -1))).reshape(v.shape)


def krylov_expm_apply(H: SparseHamiltonian, v: np.ndarray, t: float, m: int = 30,
                      tol: float = 1e-10) -> np.ndarray:
    """exp(-i H t) v by Lanczos with adaptive sub-stepping.

    The local error of a step of length tau is estimated as
    ``tau * beta * h_{m+1,m} * |[exp(-i tau T_m) e_1]_m|`` and kept below
    ``tol * tau / t`` so the global error stays below ``tol``.
    """
    A = H.csr
    w = np.array(v, dtype=np.complex128)
    n = len(w)
    m = min(m, n)
    t_done, tau = 0.0, float(t)
    sign = 1.0 if t >= 0 else -1.0
    total = abs(t)
    tau = total
    while t_done < total * (1 - 1e-15):
        beta = np.linalg.norm(w)
        if beta == 0:
            return w
        V = np.zeros((m + 1, n), dtype=np.complex128)
        alpha = np.zeros(m)
        offdiag = np.zeros(m)
        V[0] = w / beta
        k_used = m
        breakdown = False
        for j in range(m):
            x = A @ V[j]
            alpha[j] = np.vdot(V[j], x).real
            x -= alpha[j] * V[j]
            if j > 0:
                x -= offdiag[j - 1] * V[j - 1]
            # full reorthogonalization; m is small
            x -= V[: j + 1].T @ (V[: j + 1].conj() @ x)
            offdiag[j] = np.linalg.norm(x)
            if offdiag[j] < 1e-12 * max(1.0, abs(alpha[j])):
                k_used = j + 1
                breakdown = True
                break
            V[j + 1] = x / offdiag[j]
        k = k_used
        T = np.diag(alpha[:k]) + np.diag(offdiag[: k - 1], 1) + np.diag(offdiag[: k - 1], -1)
        evals, evecs = np.linalg.eigh(T)  # k <= m is small; stemr can fail on clustered spectra
        remaining = total - t_done
        tau = min(tau, remaining)

        def small_exp(step):
            return evecs @ (np.exp(-1j * sign * evals * step) * evecs[0].conj())

        if breakdown:
            tau = remaining
            y = small_exp(tau)
        else:
            while True:
                y = small_exp(tau)
                err = tau * beta * offdiag[k - 1] * abs(y[k - 1])
                if err <= tol * tau / total or tau <= remaining * 1e-300:
                    break
                tau *= 0.5
                if tau < total * 1e-10:
                    raise NumericalError(
                        f"Krylov expansion did not converge at dimension {m}: "
                        f"residual estimate {err:.3e} for step {tau:.3e} s")
        w = beta * (V[:k].T @ y)
        t_done += tau
        tau = min(2 * tau, total - t_done) if t_done < total else tau
    return w


def chebyshev_expm_apply(H: SparseHamiltonian, v: np.ndarray, t: float,
                         tol: float = 1e-10) -> np.ndarray:
    """exp(-i H t) v from a Chebyshev expansion on the Gershgorin interval."""
    A = H.csr
    v = np.asarray(v, dtype=np.complex128)
    half_width = 1.01 * H.norm_bound
    if half_width == 0:
        return v.copy()
    x = half_width * abs(t)
    n_terms = int(x + 10 * np.cbrt(max(x, 1.0)) + 20)
    while abs(jv(n_terms, x)) > tol * 1e-3:
        n_terms += 10
    coeffs = jv(np.arange(n_terms + 1), x) * (-1j * np.sign(t)) ** np.arange(n_terms + 1)
    coeffs[1:] *= 2
    prev = v
    cur = (A @ v) / half_width
    out = coeffs[0] * prev + coeffs[1] * cur
    for c in coeffs[2:]:
        prev, cur = cur, 2 * (A @ cur) / half_width - prev
        out += c * cur
    return out


# ---------------------------------------------------------------- noisy

def z_signs(basis_tag: BasisTag) -> np.ndarray:
    """sigma^z eigenvalue of every site on every basis string: +1 for bit 0, -1 for bit 1."""
    strings = basis_tag.strings()
    bits = (strings[:, None] >> np.arange(basis_tag.n_sites)[None, :]) & 1
    return 1.0 - 2.0 * bits


class _StepPropagator:
    """exp(-i H dt) on a block of states."""

    def __init__(self, H: SparseHamiltonian, dt: float, tol: float):
        self.H, self.dt, self.tol = H, dt, tol
        self.dense = None
        if H.dimension <= DENSE_PROPAGATOR_MAX_DIM:
            evals, evecs = spectrum(H)
            self.dense = (evecs * np.exp(-1j * evals * dt)) @ evecs.conj().T
        elif H.norm_bound * dt > 0.5:
            raise ParameterError("trotter_dt too large for the Taylor step; reduce it")

    def __call__(self, block: np.ndarray) -> np.ndarray:
        if self.dense is not None:
            return self.dense @ block
        A = self.H.csr
        term = block
        out = block.copy()
        k = 0
        while True:
            k += 1
            term = (A @ term) * (-1j * self.dt / k)
            out += term
            if np.max(np.abs(term)) < self.tol * 1e-3 or k > 40:
                break
        return out


def evolve_noisy(psi: StateVector, H: SparseHamiltonian, traj: NoiseTrajectory, t: float,
                 cfg: EvolutionConfig = EvolutionConfig()) -> StateVector:
    """One trajectory of H + 1/2 sum_j xi_j(t) sigma^z_j by second-order splitting."""
    (_, block), = evolve_noisy_batch(psi, H, [traj], [t], cfg)
    return StateVector(psi.basis_tag, block[:, 0])


def evolve_noisy_batch(psi: StateVector, H: SparseHamiltonian,
                       trajectories: Sequence[NoiseTrajectory], times: Sequence[float],
                       cfg: EvolutionConfig = EvolutionConfig()) -> Iterator[tuple[float, np.ndarray]]:
    """Propagate every trajectory together; yield ``(t, states[dim, n_traj])`` at each time.

    Per step: half diagonal phase, full hopping step, half diagonal phase,
    with the noise held at its step-midpoint value.  Consecutive half
    phases are merged except at output times.
    """
    if psi.basis_tag != H.basis_tag:
        raise ParameterError("state and Hamiltonian bases differ")
    if not trajectories:
        raise ParameterError("need at least one trajectory")
    dt = cfg.trotter_dt
    n_sites = psi.basis_tag.n_sites
    for traj in trajectories:
        if not np.isclose(traj.dt, dt, rtol=1e-9, atol=0):
            raise ParameterError(f"trajectory step {traj.dt} does not match trotter_dt {dt}")
        if traj.site_count != n_sites:
            raise ParameterError(f"trajectory covers {traj.site_count} sites, system has {n_sites}")
    steps = []
    for t in times:
        k = t / dt
        if abs(k - round(k)) > 1e-6:
            raise ParameterError(f"time {t} is not a multiple of trotter_dt {dt}")
        steps.append(int(round(k)))
    if any(b < a for a, b in zip(steps, steps[1:])) or (steps and steps[0] < 0):
        raise ParameterError("times must be non-negative and non-decreasing")
    n_total = steps[-1] if steps else 0
    if any(traj.n_steps < n_total for traj in trajectories):
        raise ParameterError(f"trajectories must cover {n_total} steps of {dt} s")

    xi = np.stack([traj.samples[:n_total] for traj in trajectories], axis=-1)  # (steps, sites, traj)
    half_z = 0.5 * z_signs(psi.basis_tag)
    propagate = _StepPropagator(H, dt, cfg.tolerance)
    state = np.repeat(psi.amplitudes[:, None], len(trajectories), axis=1)

    def half_phase(k):
        return np.exp(-0.5j * dt * (half_z @ xi[k]))

    outputs = iter(steps)
    target = next(outputs, None)
    while target == 0:
        yield 0.0, state.copy()
        target = next(outputs, None)
    if target is None:
        return
    state *= half_phase(0)
    for k in range(n_total):
        state = propagate(state)
        if k + 1 == target or k + 1 == n_total:
            state *= half_phase(k)
            while target == k + 1:
                yield (k + 1) * dt, state.copy()
                target = next(outputs, None)
            if k + 1 < n_total:
                state *= half_phase(k + 1)
        else:
            state *= np.exp(-0.5j * dt * (half_z @ (xi[k] + xi[k + 1])))

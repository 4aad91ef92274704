"""Projected ensembles, their k-th moments, and comparisons with the Haar ensemble."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from itertools import permutations
from math import comb, factorial, log, log2
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .errors import FitError, NumericalError, ParameterError, SizeError
from .evolution import StateVector
from .lattice import format_bits, split_subsystem
from .measurement import probability_of, select_bitstrings, tomo_reconstruct

SourceTag = Literal["exact_pure", "trajectory_avg", "shots", "samples"]

K_MAX = {2: 6, 4: 4}
CHUNK = 512


@dataclass
class ProjectedEnsemble:
    """Weighted conditional states ``{(z_B, p, rho_A)}``.

    ``z_b`` indexes the B sites in increasing order (bit m = m-th B site);
    ``discarded`` is the probability mass dropped by floors, selection or
    post-selection.
    """

    sites_a: tuple[int, ...]
    n_sites: int
    z_b: np.ndarray
    p: np.ndarray
    rho: np.ndarray = field(repr=False)
    source_tag: SourceTag = "exact_pure"
    discarded: float = 0.0

    def __post_init__(self):
        self.sites_a = tuple(self.sites_a)
        self.z_b = np.asarray(self.z_b, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=float)
        self.rho = np.asarray(self.rho, dtype=np.complex128)
        if self.rho.ndim != 3 or self.rho.shape[0] != len(self.p) or self.rho.shape[1] != self.rho.shape[2]:
            raise ParameterError("rho must have shape (entries, d, d)")
        if np.any(self.p < 0):
            raise ParameterError("probabilities must be non-negative")

    def __len__(self) -> int:
        return len(self.p)

    @property
    def d(self) -> int:
        return self.rho.shape[1]

    @property
    def n_b(self) -> int:
        return self.n_sites - len(self.sites_a)

    @property
    def total(self) -> float:
        return float(self.p.sum())

    def normalized(self) -> "ProjectedEnsemble":
        total = self.total
        if total <= 0:
            raise ParameterError("ensemble carries no probability")
        return ProjectedEnsemble(self.sites_a, self.n_sites, self.z_b, self.p / total, self.rho,
                                 self.source_tag, self.discarded)

    def filter(self, mask: np.ndarray) -> "ProjectedEnsemble":
        mask = np.asarray(mask, dtype=bool)
        return ProjectedEnsemble(self.sites_a, self.n_sites, self.z_b[mask], self.p[mask], self.rho[mask],
                                 self.source_tag, self.discarded + float(self.p[~mask].sum()))

    def purities(self) -> np.ndarray:
        return np.einsum("nab,nba->n", self.rho, self.rho).real

    def to_json(self) -> dict:
        return {
            "subsystem": list(self.sites_a),
            "n_sites": self.n_sites,
            "source_tag": self.source_tag,
            "discarded": self.discarded,
            "entries": [
                {"zB": format_bits(z, self.n_b), "p": float(p),
                 "rho_re": r.real.tolist(), "rho_im": r.imag.tolist()}
                for z, p, r in zip(self.z_b, self.p, self.rho)
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ProjectedEnsemble":
        entries = data["entries"]
        sites_a = tuple(data["subsystem"])
        n_sites = data.get("n_sites")
        if n_sites is None:
            n_sites = len(sites_a) + (len(entries[0]["zB"]) if entries else 0)
        rho = np.array([np.array(e["rho_re"]) + 1j * np.array(e["rho_im"]) for e in entries])
        if not entries:
            rho = np.zeros((0, 1 << len(sites_a), 1 << len(sites_a)), dtype=complex)
        return cls(sites_a, n_sites, [int(e["zB"], 2) if e["zB"] else 0 for e in entries],
                   [e["p"] for e in entries], rho, data.get("source_tag", "exact_pure"),
                   float(data.get("discarded", 0.0)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "ProjectedEnsemble":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class MomentMatrix:
    k: int
    d: int
    matrix: np.ndarray = field(repr=False)
    normalized: bool = True

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class LeakageFit:
    e0: float
    tau_mb: float
    window: tuple[float, float]
    offset: float
    residual: float
    r_squared: float
    n_points: int


def _check_subsystem(sites_a: Sequence[int]) -> None:
    if len(sites_a) not in (1, 2):
        raise ParameterError("subsystem A must have one or two sites")


def exact_ensemble(psi: StateVector, sites_a: Sequence[int], p_floor: float = 1e-6) -> ProjectedEnsemble:
    _check_subsystem(sites_a)
    zb, blocks = split_subsystem(psi.strings(), psi.amplitudes, sites_a, psi.basis_tag.n_sites)
    p = np.sum(np.abs(blocks) ** 2, axis=1)
    keep = p >= p_floor
    vecs = blocks[keep] / np.sqrt(p[keep])[:, None]
    rho = np.einsum("na,nb->nab", vecs, vecs.conj())
    return ProjectedEnsemble(tuple(sites_a), psi.basis_tag.n_sites, zb[keep], p[keep], rho,
                             "exact_pure", float(p[~keep].sum()))


def conditional_sums(block: np.ndarray, basis_tag, sites_a: Sequence[int],
                     weights: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized ``sum_t w_t psi_A(z_B) psi_A(z_B)^dagger`` for a block ``(dim, n_traj)``.

    The z_B list depends only on the basis, so sums from separate blocks of
    trajectories can simply be added.
    """
    block = block if block.ndim == 2 else block[:, None]
    zb, blocks = split_subsystem(basis_tag.strings(), block, sites_a, basis_tag.n_sites)
    if weights is None:
        return zb, np.einsum("nat,nbt->nab", blocks, blocks.conj())
    return zb, np.einsum("nat,nbt,t->nab", blocks, blocks.conj(), np.asarray(weights, dtype=float))


def ensemble_from_sums(zb: np.ndarray, sums: np.ndarray, total_weight: float, sites_a: Sequence[int],
                       n_sites: int, p_floor: float = 1e-6,
                       source_tag: SourceTag = "trajectory_avg") -> ProjectedEnsemble:
    """Projected ensemble from accumulated ``conditional_sums``."""
    _check_subsystem(sites_a)
    if not total_weight > 0:
        raise ParameterError("total trajectory weight must be positive")
    sums = np.asarray(sums) / total_weight
    p = np.einsum("naa->n", sums).real
    keep = p >= p_floor
    rho = sums[keep] / p[keep][:, None, None]
    return ProjectedEnsemble(tuple(sites_a), n_sites, zb[keep], p[keep], rho, source_tag,
                             float(p[~keep].sum()))


def trajectory_ensemble(states, sites_a: Sequence[int], weights: Sequence[float] | None = None,
                        p_floor: float = 1e-6, basis_tag=None) -> ProjectedEnsemble:
    """Projected ensemble of the trajectory-averaged (mixed) global state.

    ``states`` is a list of StateVector or an array ``(dim, n_traj)`` together
    with ``basis_tag``.
    """
    _check_subsystem(sites_a)
    if isinstance(states, np.ndarray):
        if basis_tag is None:
            raise ParameterError("basis_tag is required with a raw state array")
        block = states if states.ndim == 2 else states[:, None]
    else:
        states = list(states)
        if not states:
            raise ParameterError("need at least one trajectory")
        basis_tag = states[0].basis_tag
        if any(s.basis_tag != basis_tag for s in states):
            raise ParameterError("trajectories live in different bases")
        block = np.stack([s.amplitudes for s in states], axis=1)
    n_traj = block.shape[1]
    w = np.full(n_traj, 1.0 / n_traj) if weights is None else np.asarray(weights, dtype=float)
    if len(w) != n_traj or np.any(w < 0):
        raise ParameterError("need one non-negative weight per trajectory")
    zb, sums = conditional_sums(block, basis_tag, sites_a, w)
    tag = "exact_pure" if n_traj == 1 else "trajectory_avg"
    return ensemble_from_sums(zb, sums, float(w.sum()), sites_a, basis_tag.n_sites, p_floor, tag)


def shot_ensemble(tables, threshold: float = 80) -> ProjectedEnsemble:
    """Ensemble reconstructed from (mitigated) tomography shot tables."""
    tables = list(tables.values()) if isinstance(tables, dict) else list(tables)
    first = tables[0]
    selected = select_bitstrings(tables, threshold)
    rho = [tomo_reconstruct(tables, z, min_counts=threshold).rho for z in selected]
    p = [probability_of(z, tables) for z in selected]
    rho = np.array(rho) if rho else np.zeros((0, 4, 4), dtype=complex)
    return ProjectedEnsemble(first.sites_a, first.n_sites, selected, p, rho, "shots",
                             max(0.0, 1.0 - float(np.sum(p))))


def ensemble_from_states(vectors: np.ndarray, weights: Sequence[float] | None = None) -> ProjectedEnsemble:
    """Ensemble of explicit pure states (rows of ``vectors``), e.g. Haar samples."""
    vectors = np.asarray(vectors, dtype=np.complex128)
    n, d = vectors.shape
    vectors = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    p = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    rho = np.einsum("na,nb->nab", vectors, vectors.conj())
    n_a = int(round(log2(d)))
    return ProjectedEnsemble(tuple(range(n_a)), n_a, np.zeros(n, dtype=np.int64), p, rho, "samples")


def haar_states(d: int, n: int, seed: int | None = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, d)) + 1j * rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def post_select_sector(ens: ProjectedEnsemble, keep_indices: Sequence[int] = (1, 2),
                       zb_weight: int | None = None) -> ProjectedEnsemble:
    """Project every rho_A onto span{|i> : i in keep_indices} and renormalize.

    The default keeps ``|01>`` and ``|10>``; the result is written in that
    two-dimensional basis.  ``zb_weight`` additionally keeps only z_B with
    that many excitations.
    """
    idx = list(keep_indices)
    if not idx:
        raise ParameterError("projector must have rank at least 1")
    if zb_weight is not None:
        ens = ens.filter(np.bitwise_count(ens.z_b) == zb_weight)
    sub = ens.rho[:, idx][:, :, idx]
    tr = np.einsum("naa->n", sub).real
    good = tr > 1e-12
    if not np.all(good):
        warnings.warn(f"dropping {int((~good).sum())} entries with no weight in the projected subspace")
    discarded = ens.discarded + float(ens.p[~good].sum())
    p = ens.p[good]
    total = p.sum()
    if total <= 0:
        raise ParameterError("no entries survive post-selection")
    rho = sub[good] / tr[good][:, None, None]
    return ProjectedEnsemble(ens.sites_a, ens.n_sites, ens.z_b[good], p / total, rho, ens.source_tag, discarded)


def _check_size(d: int, k: int) -> None:
    if k < 1:
        raise ParameterError("moment order must be at least 1")
    if k * log2(d) > 20 or k > K_MAX.get(d, 20 // max(1, int(log2(d)))):
        raise SizeError(f"moment order {k} too large for local dimension {d}")


def kth_moment(ens: ProjectedEnsemble, k: int, normalize: bool = True) -> MomentMatrix:
    """sum_z p(z) rho(z)^{(x)k}, accumulated in fixed-size chunks."""
    d = ens.d
    _check_size(d, k)
    p = ens.p / ens.total if normalize else ens.p
    dim = d**k
    out = np.zeros((dim, dim), dtype=np.complex128)
    for start in range(0, len(p), CHUNK):
        rho = ens.rho[start:start + CHUNK]
        power = rho
        for _ in range(k - 1):
            n, a = power.shape[:2]
            power = np.einsum("nab,ncd->nacbd", power, rho).reshape(n, a * d, a * d)
        out += np.einsum("n,nab->ab", p[start:start + CHUNK], power)
    out = 0.5 * (out + out.conj().T)
    return MomentMatrix(k, d, out, normalize)


def permutation_operator(d: int, perm: Sequence[int]) -> np.ndarray:
    """Operator permuting the k tensor factors of (C^d)^{(x)k}: factor i goes to perm[i]."""
    k = len(perm)
    dim = d**k
    eye = np.eye(dim).reshape((d,) * k + (dim,))
    axes = [0] * k
    for i, target in enumerate(perm):
        axes[target] = i
    return eye.transpose(axes + [k]).reshape(dim, dim)


def haar_moment(d: int, k: int) -> MomentMatrix:
    """Symmetric-subspace projector of (C^d)^{(x)k} over binomial(d+k-1, k)."""
    if d < 2:
        raise ParameterError("local dimension must be at least 2")
    _check_size(d, k)
    dim = d**k
    sym = np.zeros((dim, dim))
    for perm in permutations(range(k)):
        sym += permutation_operator(d, perm)
    sym /= factorial(k)
    return MomentMatrix(k, d, (sym / comb(d + k - 1, k)).astype(np.complex128), True)


def _matrix(m) -> np.ndarray:
    return m.matrix if isinstance(m, MomentMatrix) else np.asarray(m)


def trace_distance(a, b) -> float:
    a, b = _matrix(a), _matrix(b)
    if a.shape != b.shape:
        raise ParameterError(f"dimension mismatch {a.shape} vs {b.shape}")
    diff = a - b
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))


def von_neumann_entropy(rho: np.ndarray, tol: float = 1e-9) -> float:
    evals = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if evals.min() < -tol:
        raise NumericalError(f"matrix has a negative eigenvalue {evals.min():.3e}")
    evals = evals[evals > 0]
    return float(-np.sum(evals * np.log(evals)))


def moment_entropy(m) -> float:
    """Von Neumann entropy -Tr(rho ln rho) in nats."""
    return von_neumann_entropy(_matrix(m))


def avg_entropy(ens: ProjectedEnsemble) -> float:
    """Probability-weighted second-Renyi entropy of the conditional states."""
    if len(ens) == 0:
        return 0.0
    purity = np.clip(ens.purities(), 1e-300, None)
    return float(np.sum(ens.p * -np.log(purity)) / ens.total)


def bloch_vectors(ens: ProjectedEnsemble) -> np.ndarray:
    """(x, y, z) for two-dimensional entries; index 1 of the basis is the north pole.

    After ``post_select_sector`` the basis is (|01>, |10>), so ``|10>`` sits
    at the north pole.
    """
    if ens.d != 2:
        raise ParameterError("Bloch coordinates need d = 2 entries")
    up_down = ens.rho[:, 1, 0]
    return np.stack([2 * up_down.real, -2 * up_down.imag, (ens.rho[:, 1, 1] - ens.rho[:, 0, 0]).real], axis=1)


def fit_leakage(times: Sequence[float], values: Sequence[float], e0: float = log(2),
                window: tuple[float, float] | None = None) -> LeakageFit:
    """Least-squares fit of ``E = e0 * t / tau + offset`` over ``window``."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if window is None:
        window = (float(t.min()), float(t.max()))
    mask = (t >= window[0]) & (t <= window[1])
    if mask.sum() < 3:
        raise FitError("need at least three points in the fit window")
    tw, yw = t[mask], y[mask]
    if np.ptp(tw) == 0:
        raise FitError("degenerate fit window")
    slope, offset = np.polyfit(tw, yw, 1)
    if not slope > 0:
        raise FitError(f"non-increasing entropy (slope {slope:.3e}); no leakage time")
    resid = yw - (slope * tw + offset)
    ss_tot = float(np.sum((yw - yw.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return LeakageFit(e0, e0 / slope, (float(window[0]), float(window[1])), float(offset),
                      float(np.sqrt(np.mean(resid**2))), r2, int(mask.sum()))

"""Joint single-shot readout, confusion-matrix mitigation and two-qubit tomography.

Basis-change convention: to measure X on a qubit we apply a -pi/2 rotation
about Y before Z readout; to measure Y, a +pi/2 rotation about X.  With this
choice outcome 0 always corresponds to eigenvalue +1.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from pathlib import Path
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np

from .errors import MitigationError, ParameterError, ReconstructionError
from .evolution import StateVector
from .lattice import compress_bits, expand_bits, format_bits, split_subsystem

BASES = tuple(a + b for a, b in product("XYZ", repeat=2))
Mode = Literal["inverse", "as_written", "none"]

_c = 1 / np.sqrt(2)
ROTATIONS = {
    "X": np.array([[_c, _c], [-_c, _c]], dtype=complex),  # R_y(-pi/2)
    "Y": np.array([[_c, -1j * _c], [-1j * _c, _c]]),  # R_x(+pi/2)
    "Z": np.eye(2, dtype=complex),
}
PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.diag([1.0, -1.0]).astype(complex),
}
MAX_MITIGATION_SITES = 22


@dataclass(frozen=True)
class ConfusionMatrix:
    """Product-form readout transition matrix; per-qubit factor [[F00, 1-F11], [1-F00, F11]]."""

    f00: np.ndarray
    f11: np.ndarray

    def __post_init__(self):
        f00 = np.atleast_1d(np.asarray(self.f00, dtype=float))
        f11 = np.atleast_1d(np.asarray(self.f11, dtype=float))
        if f00.shape != f11.shape:
            raise ParameterError("F00 and F11 must have one entry per qubit")
        if np.any((f00 < 0) | (f00 > 1) | (f11 < 0) | (f11 > 1)):
            raise ParameterError("readout fidelities must lie in [0, 1]")
        object.__setattr__(self, "f00", f00)
        object.__setattr__(self, "f11", f11)

    @classmethod
    def uniform(cls, n_qubits: int, f00: float = 0.996, f11: float = 0.975) -> "ConfusionMatrix":
        return cls(np.full(n_qubits, f00), np.full(n_qubits, f11))

    @property
    def n_qubits(self) -> int:
        return len(self.f00)

    def factor(self, j: int) -> np.ndarray:
        a, b = self.f00[j], self.f11[j]
        return np.array([[a, 1 - b], [1 - a, b]])

    def apply(self, vec: np.ndarray, inverse: bool = False) -> np.ndarray:
        """Act on a dense length-2**N vector indexed by integer bit-strings."""
        n = self.n_qubits
        out = np.asarray(vec, dtype=float).reshape((2,) * n)
        for j in range(n):
            f = self.factor(j)
            if inverse:
                det = f[0, 0] * f[1, 1] - f[0, 1] * f[1, 0]
                if abs(det) < 1e-12:
                    raise MitigationError(f"readout factor of qubit {j} is singular (F00 + F11 = 1)")
                f = np.linalg.inv(f)
            axis = n - 1 - j  # C order: axis 0 is the most significant bit
            out = np.moveaxis(np.tensordot(f, out, axes=([1], [axis])), 0, axis)
        return out.reshape(-1)


@dataclass
class ShotTable:
    basis: str
    n_sites: int
    sites_a: tuple[int, ...]
    strings: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.basis not in BASES:
            raise ParameterError(f"invalid basis label {self.basis!r}")
        self.sites_a = tuple(self.sites_a)
        strings = np.asarray(self.strings, dtype=np.int64)
        counts = np.asarray(self.counts, dtype=float)
        order = np.argsort(strings, kind="stable")
        self.strings, self.counts = strings[order], counts[order]

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @property
    def sites_b(self) -> list[int]:
        return [s for s in range(self.n_sites) if s not in self.sites_a]

    def as_dict(self) -> dict[str, float]:
        return {format_bits(s, self.n_sites): float(c) for s, c in zip(self.strings, self.counts)}

    @cached_property
    def _grouped(self) -> tuple[np.ndarray, np.ndarray]:
        """Sorted distinct z_B and their A-outcome counts, shape (n_zb, 2**|A|)."""
        zb = compress_bits(self.strings, self.sites_b)
        na = len(self.sites_a)
        a_idx = np.zeros(len(self.strings), dtype=np.int64)
        for pos, s in enumerate(self.sites_a):
            a_idx |= ((self.strings >> s) & 1) << (na - 1 - pos)
        uniq, inv = np.unique(zb, return_inverse=True)
        grid = np.zeros((len(uniq), 1 << na))
        np.add.at(grid, (inv, a_idx), self.counts)
        return uniq, grid

    @cached_property
    def _marginal(self) -> dict[int, float]:
        uniq, grid = self._grouped
        return dict(zip(uniq.tolist(), grid.sum(axis=1).tolist()))

    def marginal_b(self) -> dict[int, float]:
        return dict(self._marginal)

    def conditional_counts(self, z_b: int) -> np.ndarray:
        """Counts of the A outcomes (index 2*b0 + b1 for two sites) given ``z_b``."""
        uniq, grid = self._grouped
        i = int(np.searchsorted(uniq, z_b))
        if i < len(uniq) and uniq[i] == z_b:
            return grid[i].copy()
        return np.zeros(grid.shape[1])


@dataclass
class TomogramA:
    z_b: int
    rho: np.ndarray
    support: dict[str, float]


def basis_rotation(basis: str) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for letter in basis:
        out = np.kron(out, ROTATIONS[letter])
    return out


def sample_shots(psi: StateVector, basis: str, sites_a: Sequence[int], shots: int,
                 confusion: ConfusionMatrix | None = None, seed: int | None = 0) -> ShotTable:
    if basis not in BASES:
        raise ParameterError(f"invalid basis label {basis!r}; expected one of {BASES}")
    if len(sites_a) != 2:
        raise ParameterError("tomography subsystem must contain exactly two sites")
    if shots <= 0:
        raise ParameterError("number of shots must be positive")
    n = psi.basis_tag.n_sites
    rng = np.random.default_rng(seed)
    zb, blocks = split_subsystem(psi.strings(), psi.amplitudes, sites_a, n)
    rotated = blocks @ basis_rotation(basis).T
    probs = (np.abs(rotated) ** 2).reshape(-1)
    probs /= probs.sum()
    counts = rng.multinomial(shots, probs)
    hit = np.nonzero(counts)[0]
    sites_b = [s for s in range(n) if s not in sites_a]
    full = expand_bits(zb[hit // 4], sites_b)
    a_idx = hit % 4
    full |= ((a_idx >> 1) & 1) << sites_a[0]
    full |= (a_idx & 1) << sites_a[1]
    counts = counts[hit]
    if confusion is not None:
        if confusion.n_qubits != n:
            raise ParameterError("confusion matrix size does not match the system")
        single = np.repeat(full, counts)
        for j in range(n):
            bit = (single >> j) & 1
            p_flip = np.where(bit == 0, 1 - confusion.f00[j], 1 - confusion.f11[j])
            single ^= (rng.random(len(single)) < p_flip).astype(np.int64) << j
        full, counts = np.unique(single, return_counts=True)
    return ShotTable(basis, n, tuple(sites_a), full, counts.astype(float))


def sample_tomography(psi: StateVector, sites_a: Sequence[int], shots: int | Mapping[str, int],
                      confusion: ConfusionMatrix | None = None, seed: int = 0) -> dict[str, ShotTable]:
    """Shot tables for all nine bases with independent child seeds."""
    children = np.random.SeedSequence(seed).spawn(len(BASES))
    out = {}
    for basis, child in zip(BASES, children):
        m = shots[basis] if isinstance(shots, Mapping) else shots
        out[basis] = sample_shots(psi, basis, sites_a, m, confusion, child)
    return out


def mitigate_counts(table: ShotTable, confusion: ConfusionMatrix, mode: Mode = "inverse") -> ShotTable:
    """Readout mitigation on the dense 2**N count vector.

    ``inverse`` solves with the inverse of every 2x2 factor; ``as_written``
    multiplies by the transition matrix itself.  Negative results are
    clipped and the table is rescaled to its original total.
    """
    if mode == "none":
        return ShotTable(table.basis, table.n_sites, table.sites_a, table.strings.copy(), table.counts.copy())
    if mode not in ("inverse", "as_written"):
        raise ParameterError(f"unknown mitigation mode {mode!r}")
    n = table.n_sites
    if confusion.n_qubits != n:
        raise ParameterError("confusion matrix size does not match the table")
    if n > MAX_MITIGATION_SITES:
        raise ParameterError(f"mitigation supports at most {MAX_MITIGATION_SITES} qubits")
    dense = np.zeros(1 << n)
    dense[table.strings] = table.counts
    out = confusion.apply(dense, inverse=(mode == "inverse"))
    out = np.clip(out, 0.0, None)
    total = table.total
    if out.sum() > 0:
        out *= total / out.sum()
    keep = np.nonzero(out)[0]
    return ShotTable(table.basis, n, table.sites_a, keep, out[keep])


def _as_list(tables) -> list[ShotTable]:
    return list(tables.values()) if isinstance(tables, Mapping) else list(tables)


def select_bitstrings(tables, threshold: float = 80) -> list[int]:
    """z_B strings whose marginal count reaches ``threshold`` in every basis."""
    tables = _as_list(tables)
    marginals = [t._marginal for t in tables]
    candidates = sorted(set().union(*[{z for z, c in m.items() if c > 0} for m in marginals]))
    return [z for z in candidates if all(m.get(z, 0.0) >= threshold for m in marginals)]


def pauli_expectations(tables, z_b: int) -> dict[str, float]:
    """Two-qubit Pauli expectations conditioned on ``z_b``; keys like 'XZ', 'IY', 'II'."""
    sums: dict[str, float] = {}
    weights: dict[str, float] = {}
    parity = {
        "both": np.array([1, -1, -1, 1]),
        "first": np.array([1, 1, -1, -1]),
        "second": np.array([1, -1, 1, -1]),
    }
    for table in _as_list(tables):
        counts = table.conditional_counts(z_b)
        total = counts.sum()
        if total <= 0:
            continue
        p, q = table.basis
        for key, sign in ((p + q, "both"), (p + "I", "first"), ("I" + q, "second")):
            sums[key] = sums.get(key, 0.0) + float(parity[sign] @ counts)
            weights[key] = weights.get(key, 0.0) + float(total)
    out = {k: sums[k] / weights[k] for k in sums}
    out["II"] = 1.0
    return out


def project_psd(rho: np.ndarray) -> np.ndarray:
    """Closest unit-trace PSD matrix in the 2-norm (eigenvalue clipping with water-filling)."""
    rho = 0.5 * (rho + rho.conj().T)
    evals, evecs = np.linalg.eigh(rho)
    evals = evals / evals.sum() if evals.sum() > 0 else np.full(len(evals), 1 / len(evals))
    lam = evals[::-1].copy()  # descending
    deficit = 0.0
    i = len(lam) - 1
    while i >= 0 and lam[i] + deficit / (i + 1) < 0:
        deficit += lam[i]
        lam[i] = 0.0
        i -= 1
    lam[: i + 1] += deficit / (i + 1)
    evals = lam[::-1]
    out = (evecs * evals) @ evecs.conj().T
    return 0.5 * (out + out.conj().T)


def tomo_reconstruct(tables, z_b: int, min_counts: float = 80) -> TomogramA:
    """Linear-inversion estimate of rho_A given ``z_b``, projected to a physical state."""
    tables = _as_list(tables)
    if len(tables) != len(BASES) or {t.basis for t in tables} != set(BASES):
        raise ReconstructionError("tomography needs one table for each of the nine bases")
    support = {t.basis: float(t.conditional_counts(z_b).sum()) for t in tables}
    short = {b: c for b, c in support.items() if c < min_counts}
    if short:
        raise ReconstructionError(f"z_B={z_b} has fewer than {min_counts} counts in bases {sorted(short)}")
    exp = pauli_expectations(tables, z_b)
    rho = np.zeros((4, 4), dtype=complex)
    for key, value in exp.items():
        rho += value * np.kron(PAULI[key[0]], PAULI[key[1]])
    return TomogramA(z_b, project_psd(rho / 4), support)


def probability_of(z_b: int, tables) -> float:
    tables = _as_list(tables)
    num = sum(t._marginal.get(z_b, 0.0) for t in tables)
    den = sum(t.total for t in tables)
    return num / den if den > 0 else 0.0


def write_shot_tables(tables, path: str | Path) -> None:
    """CSV with columns basis,bitstring,count (bit-strings highest site first)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["basis", "bitstring", "count"])
        for table in _as_list(tables):
            for s, c in zip(table.strings, table.counts):
                writer.writerow([table.basis, format_bits(s, table.n_sites), repr(float(c))])


def read_shot_tables(path: str | Path, sites_a: Sequence[int]) -> dict[str, ShotTable]:
    rows: dict[str, tuple[list[int], list[float]]] = {}
    n_sites = None
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            bits = row["bitstring"].strip()
            if n_sites is None:
                n_sites = len(bits)
            elif len(bits) != n_sites:
                raise ParameterError("inconsistent bit-string lengths in shot file")
            strings, counts = rows.setdefault(row["basis"].strip(), ([], []))
            strings.append(int(bits, 2))
            counts.append(float(row["count"]))
    return {b: ShotTable(b, n_sites, tuple(sites_a), s, c) for b, (s, c) in rows.items()}


def exact_marginal_b(psi: StateVector, sites_a: Iterable[int]) -> dict[int, float]:
    zb, blocks = split_subsystem(psi.strings(), psi.amplitudes, list(sites_a), psi.basis_tag.n_sites)
    probs = np.sum(np.abs(blocks) ** 2, axis=1)
    return dict(zip(zb.tolist(), probs.tolist()))

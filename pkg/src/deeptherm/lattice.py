"""Square-lattice geometry, U(1) charge sectors and the sparse XY Hamiltonian.

Conventions used everywhere in the package:

* sites are numbered row-major, ``site = r * cols + c``;
* bit ``i`` of an integer bit-string is the state of site ``i``;
* printed bit-strings put the highest site first (``format_bits``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from math import comb, pi
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ParameterError, SpecError

DEFAULT_J = 2 * pi * 4e6  # rad/s
MAX_SITES = 24


def format_bits(value: int, width: int) -> str:
    return format(int(value), f"0{width}b") if width else ""


def parse_bits(text: str) -> int:
    return int(text, 2) if text else 0


@dataclass(frozen=True)
class BasisTag:
    """Either the full 2**N space (``excitations is None``) or a charge sector."""

    n_sites: int
    excitations: int | None = None

    @property
    def is_sector(self) -> bool:
        return self.excitations is not None

    @property
    def dimension(self) -> int:
        if self.excitations is None:
            return 1 << self.n_sites
        return comb(self.n_sites, self.excitations)

    def strings(self) -> np.ndarray:
        """Integer bit-string of every basis index, in basis order."""
        if self.excitations is None:
            return np.arange(1 << self.n_sites, dtype=np.int64)
        return enumerate_sector(self.n_sites, self.excitations).states

    def to_json(self) -> dict:
        return {"n_sites": self.n_sites, "excitations": self.excitations}

    @classmethod
    def from_json(cls, data: Mapping) -> "BasisTag":
        return cls(int(data["n_sites"]), None if data.get("excitations") is None else int(data["excitations"]))

    def __str__(self) -> str:
        if self.excitations is None:
            return f"full({self.n_sites})"
        return f"sector({self.n_sites},{self.excitations})"


@dataclass(frozen=True)
class SectorBasis:
    n_sites: int
    excitations: int
    states: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.states)

    @cached_property
    def rank(self) -> dict[int, int]:
        return {int(s): i for i, s in enumerate(self.states)}

    def index_of(self, strings: np.ndarray) -> np.ndarray:
        """Vectorized rank lookup; -1 for strings outside the sector."""
        strings = np.asarray(strings, dtype=np.int64)
        idx = np.searchsorted(self.states, strings)
        idx = np.clip(idx, 0, len(self.states) - 1)
        return np.where(self.states[idx] == strings, idx, -1)


@lru_cache(maxsize=32)
def enumerate_sector(n_sites: int, excitations: int) -> SectorBasis:
    if not (0 <= excitations <= n_sites <= MAX_SITES):
        raise ParameterError(
            f"need 0 <= excitations <= n_sites <= {MAX_SITES}, got ({n_sites}, {excitations})"
        )
    chunks = []
    step = 1 << 20
    for start in range(0, 1 << n_sites, step):
        block = np.arange(start, min(start + step, 1 << n_sites), dtype=np.int64)
        chunks.append(block[np.bitwise_count(block) == excitations])
    states = np.concatenate(chunks)
    states.setflags(write=False)
    return SectorBasis(n_sites, excitations, states)


@dataclass(frozen=True)
class LatticeSpec:
    """Grid shape, nearest-neighbour couplings (rad/s) and optional static detunings.

    ``detunings`` adds ``1/2 sum_j h_j sigma^z_j`` (rad/s per site).  It is
    empty by default; a non-empty tuple breaks the sublattice symmetry of
    the pure hopping model.
    """

    rows: int
    cols: int
    couplings: Mapping[tuple[int, int], float]
    detunings: tuple[float, ...] = ()

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise SpecError(f"lattice must be at least 1x1, got {self.rows}x{self.cols}")
        if self.rows * self.cols > MAX_SITES:
            raise SpecError(f"at most {MAX_SITES} sites supported")
        allowed = set(nearest_neighbor_pairs(self.rows, self.cols))
        normalized = {}
        for (i, j), value in self.couplings.items():
            key = (min(i, j), max(i, j))
            if key not in allowed:
                raise SpecError(f"coupling ({i},{j}) is not a nearest-neighbor pair on a {self.rows}x{self.cols} grid")
            if not np.isfinite(value) or np.iscomplexobj(value):
                raise SpecError(f"coupling ({i},{j}) must be a finite real number")
            normalized[key] = float(value)
        object.__setattr__(self, "couplings", dict(sorted(normalized.items())))
        detunings = tuple(float(h) for h in self.detunings)
        if detunings and len(detunings) != self.n_sites:
            raise SpecError(f"need one detuning per site ({self.n_sites}), got {len(detunings)}")
        if not all(np.isfinite(detunings)):
            raise SpecError("detunings must be finite")
        if detunings and not any(detunings):
            detunings = ()
        object.__setattr__(self, "detunings", detunings)

    @property
    def n_sites(self) -> int:
        return self.rows * self.cols

    @classmethod
    def uniform(cls, rows: int, cols: int, j: float = DEFAULT_J,
                overrides: Mapping[tuple[int, int], float] | None = None,
                detunings: Sequence[float] = ()) -> "LatticeSpec":
        couplings = {pair: j for pair in nearest_neighbor_pairs(rows, cols)}
        for (i, k), value in (overrides or {}).items():
            key = (min(i, k), max(i, k))
            if key not in couplings:
                raise SpecError(f"override ({i},{k}) is not a nearest-neighbor pair")
            couplings[key] = value
        return cls(rows, cols, couplings, tuple(detunings))

    def with_detunings(self, detunings: Sequence[float]) -> "LatticeSpec":
        return LatticeSpec(self.rows, self.cols, self.couplings, tuple(detunings))

    @classmethod
    def from_json(cls, data: Mapping) -> "LatticeSpec":
        """Parse ``{rows, cols, j_default_mhz, j_overrides: [{i, j, mhz}]}``.

        Optional detunings: ``detuning_mhz`` (one value per site) or
        ``detuning_disorder_mhz`` with ``detuning_seed`` (uniform in +-value).
        """
        try:
            rows, cols = int(data["rows"]), int(data["cols"])
            j = 2 * pi * 1e6 * float(data.get("j_default_mhz", DEFAULT_J / (2 * pi * 1e6)))
            overrides = {
                (int(o["i"]), int(o["j"])): 2 * pi * 1e6 * float(o["mhz"])
                for o in data.get("j_overrides", [])
            }
        except KeyError as exc:
            raise SpecError(f"lattice config missing key {exc}") from None
        except (TypeError, ValueError) as exc:
            raise SpecError(f"malformed lattice config ({exc})") from None
        n = rows * cols
        if "detuning_mhz" in data and "detuning_disorder_mhz" in data:
            raise SpecError("give either detuning_mhz or detuning_disorder_mhz, not both")
        detunings: Sequence[float] = ()
        if "detuning_mhz" in data:
            values = np.atleast_1d(np.asarray(data["detuning_mhz"], dtype=float))
            detunings = np.broadcast_to(values, (n,)) if len(values) == 1 else values
        elif "detuning_disorder_mhz" in data:
            width = float(data["detuning_disorder_mhz"])
            rng = np.random.default_rng(int(data.get("detuning_seed", 0)))
            detunings = rng.uniform(-width, width, n)
        return cls.uniform(rows, cols, j, overrides, [2 * pi * 1e6 * h for h in detunings])

    def to_json(self) -> dict:
        mhz = {k: v / (2 * pi * 1e6) for k, v in self.couplings.items()}
        values = list(mhz.values())
        default = max(set(values), key=values.count) if values else 4.0
        return {
            "rows": self.rows,
            "cols": self.cols,
            "j_default_mhz": default,
            "j_overrides": [{"i": i, "j": j, "mhz": v} for (i, j), v in mhz.items() if v != default],
            **({"detuning_mhz": [h / (2 * pi * 1e6) for h in self.detunings]} if self.detunings else {}),
        }


def load_lattice(path: str | Path) -> LatticeSpec:
    return LatticeSpec.from_json(json.loads(Path(path).read_text()))


def nearest_neighbor_pairs(rows: int, cols: int) -> list[tuple[int, int]]:
    pairs = []
    for r in range(rows):
        for c in range(cols):
            s = r * cols + c
            if c + 1 < cols:
                pairs.append((s, s + 1))
            if r + 1 < rows:
                pairs.append((s, s + cols))
    return sorted(pairs)


@dataclass(frozen=True)
class SparseHamiltonian:
    """XY Hamiltonian stored as a symmetric (row, col, amplitude) list."""

    basis_tag: BasisTag
    rows: np.ndarray = field(repr=False)
    cols: np.ndarray = field(repr=False)
    amps: np.ndarray = field(repr=False)

    @property
    def dimension(self) -> int:
        return self.basis_tag.dimension

    @property
    def terms(self):
        return zip(self.rows.tolist(), self.cols.tolist(), self.amps.tolist())

    @cached_property
    def csr(self) -> sp.csr_matrix:
        d = self.dimension
        return sp.csr_matrix((self.amps, (self.rows, self.cols)), shape=(d, d))

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()

    @cached_property
    def norm_bound(self) -> float:
        """Gershgorin bound on the spectral radius."""
        if len(self.amps) == 0:
            return 0.0
        return float(np.max(np.abs(self.csr).sum(axis=1)))

    def __matmul__(self, vec):
        return self.csr @ vec


def build_hamiltonian(spec: LatticeSpec, sector: tuple[int, int] | None = None) -> SparseHamiltonian:
    n = spec.n_sites
    if sector is not None:
        n_sec, k = sector
        if n_sec != n:
            raise ParameterError(f"sector has {n_sec} sites but the lattice has {n}")
        tag = BasisTag(n, int(k))
        basis = enumerate_sector(n, int(k))
        states = basis.states
    else:
        tag = BasisTag(n)
        basis = None
        states = np.arange(1 << n, dtype=np.int64)

    rows, cols, amps = [], [], []
    for (i, j), coupling in spec.couplings.items():
        if coupling == 0.0:
            continue
        bi = (states >> i) & 1
        bj = (states >> j) & 1
        src = np.nonzero(bi != bj)[0]
        targets = states[src] ^ ((1 << i) | (1 << j))
        dst = targets if basis is None else basis.index_of(targets)
        rows.append(dst)
        cols.append(src)
        amps.append(np.full(len(src), coupling))
    if spec.detunings:
        h = np.asarray(spec.detunings)
        bits = (states[:, None] >> np.arange(n)[None, :]) & 1
        diag = 0.5 * (1.0 - 2.0 * bits) @ h
        idx = np.arange(len(states))
        rows.append(idx)
        cols.append(idx)
        amps.append(diag)
    if rows:
        r, c, a = np.concatenate(rows), np.concatenate(cols), np.concatenate(amps)
    else:
        r = c = np.zeros(0, dtype=np.int64)
        a = np.zeros(0)
    order = np.lexsort((c, r))
    return SparseHamiltonian(tag, r[order].astype(np.int64), c[order].astype(np.int64), a[order])


def sector_isometry(n_sites: int, excitations: int) -> sp.csr_matrix:
    """Columns embed the sector basis into the full 2**N space."""
    states = enumerate_sector(n_sites, excitations).states
    d = len(states)
    return sp.csr_matrix((np.ones(d), (states, np.arange(d))), shape=(1 << n_sites, d))


def split_subsystem(strings: np.ndarray, amps: np.ndarray, sites_a: Sequence[int],
                    n_sites: int) -> tuple[np.ndarray, np.ndarray]:
    """Regroup amplitudes as ``{z_B: unnormalized vector on A}``.

    Returns ``(z_b, blocks)`` where ``z_b`` are sorted integers over the B
    sites (bit m = m-th B site in increasing site order) and
    ``blocks[n, a]`` is the amplitude of ``|a>_A |z_b[n]>_B``.  The A index
    puts the first listed A site in the most significant position, so
    ``|01>`` means ``sites_a[0]`` empty and ``sites_a[1]`` excited.
    Extra trailing axes of ``amps`` (e.g. trajectories) are carried along.
    """
    strings = np.asarray(strings, dtype=np.int64)
    sites_a = list(sites_a)
    if len(set(sites_a)) != len(sites_a) or any(not 0 <= s < n_sites for s in sites_a):
        raise ParameterError(f"invalid subsystem sites {sites_a}")
    sites_b = [s for s in range(n_sites) if s not in sites_a]
    na = len(sites_a)
    a_idx = np.zeros(len(strings), dtype=np.int64)
    for pos, s in enumerate(sites_a):
        a_idx |= ((strings >> s) & 1) << (na - 1 - pos)
    zb = compress_bits(strings, sites_b)
    uniq, inv = np.unique(zb, return_inverse=True)
    blocks = np.zeros((len(uniq), 1 << na) + amps.shape[1:], dtype=np.complex128)
    blocks[inv, a_idx] = amps
    return uniq, blocks


def compress_bits(strings: np.ndarray, sites: Sequence[int]) -> np.ndarray:
    out = np.zeros(len(strings), dtype=np.int64)
    for pos, s in enumerate(sites):
        out |= ((strings >> s) & 1) << pos
    return out


def expand_bits(values: np.ndarray, sites: Sequence[int]) -> np.ndarray:
    values = np.asarray(values, dtype=np.int64)
    out = np.zeros(values.shape, dtype=np.int64)
    for pos, s in enumerate(sites):
        out |= ((values >> pos) & 1) << s
    return out

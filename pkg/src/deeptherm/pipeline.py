"""Configuration-driven runs of the three experiment families, writing CSV/JSON artifacts.

Every run writes ``resolved_config.json`` (re-runnable as is) and a
``manifest.json`` with git-style blob hashes of the inputs and of every
emitted file.  Outputs contain no timestamps, so a fixed seed gives
byte-identical files for any worker count.
"""
from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from math import log
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import __version__
from .ensemble import (ProjectedEnsemble, avg_entropy, bloch_vectors, conditional_sums, ensemble_from_sums,
                       exact_ensemble, fit_leakage, haar_moment, kth_moment, moment_entropy,
                       post_select_sector, shot_ensemble, trace_distance)
from .errors import ConfigError, DeepThermError, FitError
from .evolution import (EvolutionConfig, StateVector, evolve_noisy_batch, evolve_times, neel_pattern,
                        parse_pattern, prepare_product_state, xy_checkerboard_pattern)
from .lattice import BasisTag, LatticeSpec, build_hamiltonian, enumerate_sector, format_bits
from .measurement import ConfusionMatrix, ShotTable, mitigate_counts, sample_shots, sample_tomography
from .noise import NoiseSpec, sample_trajectory, spec_from_config
from .stats import conditional_probability, excitation_density, porter_thomas_test

SCHEMA_VERSION = 1
EXPERIMENTS = ("ergodicity", "deep_thermalization", "leakage")
MODES = ("exact", "shots", "noisy")
SNAPSHOTS_NS = (2.0, 50.0, 306.0)
TRAJECTORY_CHUNK = 16
# leakage defaults: 10 ns grid, linear fit over the early window only
LEAK_TIMES_NS = tuple(10.0 * k for k in range(1, 31))
LEAK_WINDOW_NS = (0.0, 150.0)


def default_times_ns() -> tuple[float, ...]:
    grid = {25.0 * k for k in range(1, 21)}
    return tuple(sorted(grid | set(SNAPSHOTS_NS)))


def blob_hash(data: bytes) -> str:
    """Git blob id of ``data``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


# ---------------------------------------------------------------- config

class _Source:
    """Raw config text, used to point error messages at the offending line."""

    def __init__(self, name: str = "<config>", text: str | None = None):
        self.name, self.text = name, text

    def line_of(self, key: str) -> int | None:
        if not self.text:
            return None
        needle = f'"{key}"'
        for lineno, line in enumerate(self.text.splitlines(), 1):
            if needle in line:
                return lineno
        return None

    def fail(self, key: str, message: str) -> ConfigError:
        line = self.line_of(key)
        where = f"{self.name}:{line}" if line else self.name
        return ConfigError(f"{where}: '{key}': {message}")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    lattice: LatticeSpec
    pattern: tuple[str, ...]
    pattern_name: str
    times_ns: tuple[float, ...]
    sites_a: tuple[int, ...]
    mode: str = "exact"
    sector: bool = True
    shots: int = 300_000
    noise: tuple[Mapping[str, Any], ...] = ()
    n_trajectories: int = 200
    mitigation: str = "inverse"
    threshold: float = 80.0
    confusion: tuple[float, float] | None = (0.996, 0.975)
    seed: int = 0
    out: str = "out"
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    k_max: int = 4
    e0: float = log(2)
    fit_window_ns: tuple[float, float] | None = None
    p_floor: float = 1e-6
    snapshots_ns: tuple[float, ...] = SNAPSHOTS_NS
    workers: int = 1
    calibration_trajectories: int = 4000

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    @property
    def excitations(self) -> int | None:
        if all(t in ("0", "1") for t in self.pattern):
            return self.pattern.count("1")
        return None

    @property
    def basis_tag(self) -> BasisTag:
        if self.sector and self.excitations is not None:
            return BasisTag(self.n_sites, self.excitations)
        return BasisTag(self.n_sites)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        cfg = replace(self, **kw)
        _validate(cfg, _Source("<command line>"))
        return cfg

    def to_json(self) -> dict:
        evo = asdict(self.evolution)
        evo["trotter_dt_ns"] = round(evo.pop("trotter_dt") * 1e9, 12)
        return {
            "schema_version": SCHEMA_VERSION,
            "experiment": self.experiment,
            "lattice": self.lattice.to_json(),
            "pattern": list(self.pattern),
            "pattern_name": self.pattern_name,
            "times_ns": list(self.times_ns),
            "sites_a": list(self.sites_a),
            "mode": self.mode,
            "sector": self.sector,
            "shots": self.shots,
            "noise": [dict(n) for n in self.noise],
            "n_trajectories": self.n_trajectories,
            "mitigation": self.mitigation,
            "threshold": self.threshold,
            "confusion": None if self.confusion is None else {"f00": self.confusion[0], "f11": self.confusion[1]},
            "seed": self.seed,
            "out": self.out,
            "evolution": evo,
            "k_max": self.k_max,
            "e0": self.e0,
            "fit_window_ns": None if self.fit_window_ns is None else list(self.fit_window_ns),
            "p_floor": self.p_floor,
            "snapshots_ns": list(self.snapshots_ns),
            "workers": self.workers,
            "calibration_trajectories": self.calibration_trajectories,
        }

    @classmethod
    def from_json(cls, data: Mapping, source: _Source | None = None) -> "ExperimentConfig":
        src = source or _Source()
        if not isinstance(data, Mapping):
            raise ConfigError(f"{src.name}: top level must be a JSON object")
        known = set(cls.__dataclass_fields__) | {"schema_version", "pattern_name"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise src.fail(unknown[0], "unknown key")

        def get(key, default, convert):
            if key not in data or data[key] is None and default is None:
                return default
            try:
                return convert(data[key])
            except (TypeError, ValueError, KeyError) as exc:
                raise src.fail(key, f"invalid value {data[key]!r} ({exc})") from None

        experiment = get("experiment", None, str)
        if experiment not in EXPERIMENTS:
            raise src.fail("experiment", f"must be one of {EXPERIMENTS}, got {experiment!r}")
        leak = experiment == "leakage"
        try:
            lattice = LatticeSpec.from_json(data.get("lattice", {"rows": 3 if leak else 4, "cols": 3 if leak else 4}))
        except DeepThermError as exc:
            raise src.fail("lattice", str(exc)) from None
        raw_pattern = data.get("pattern", "xy_checkerboard" if leak else "neel")
        pattern, name = _resolve_pattern(raw_pattern, lattice, src)
        if name == "explicit" and isinstance(data.get("pattern_name"), str):
            name = data["pattern_name"]
        mode = get("mode", "noisy" if leak else "exact", str)
        default_a = (lattice.n_sites // 2,) if leak and lattice.n_sites % 2 else _bulk_pair(lattice)
        ev = data.get("evolution", {}) or {}
        try:
            evolution = EvolutionConfig(
                method=ev.get("method", "krylov"),
                trotter_dt=float(ev.get("trotter_dt_ns", 0.1)) * 1e-9,
                krylov_dim=int(ev.get("krylov_dim", 30)),
                tolerance=float(ev.get("tolerance", 1e-10)),
            )
        except (DeepThermError, TypeError, ValueError) as exc:
            raise src.fail("evolution", str(exc)) from None
        confusion = data.get("confusion", {"f00": 0.996, "f11": 0.975})
        if confusion is not None:
            try:
                confusion = (float(confusion["f00"]), float(confusion["f11"]))
            except (TypeError, KeyError, ValueError):
                raise src.fail("confusion", "expected {\"f00\": ..., \"f11\": ...} or null") from None
        noise_default = [{"kind": "white", "t2star_us": 1.0}, {"kind": "one_over_f", "t2star_us": 1.0}] \
            if leak else [{"kind": "white", "t2star_us": 1.0}]
        noise = data.get("noise", noise_default)
        if isinstance(noise, Mapping):
            noise = [noise]
        if not isinstance(noise, list) or not all(isinstance(n, Mapping) for n in noise):
            raise src.fail("noise", "expected a list of noise objects")
        window = get("fit_window_ns", LEAK_WINDOW_NS if leak and "fit_window_ns" not in data else None,
                     lambda v: (float(v[0]), float(v[1])))
        times_default = LEAK_TIMES_NS if leak else default_times_ns()
        cfg = cls(
            experiment=experiment,
            lattice=lattice,
            pattern=tuple(pattern),
            pattern_name=name,
            times_ns=get("times_ns", times_default, lambda v: tuple(float(x) for x in v)),
            sites_a=get("sites_a", default_a, lambda v: tuple(int(x) for x in v)),
            mode=mode,
            sector=get("sector", True, bool),
            shots=get("shots", 300_000 if lattice.n_sites > 9 else 80_000, int),
            noise=tuple(dict(n) for n in noise),
            n_trajectories=get("n_trajectories", 200, int),
            mitigation=get("mitigation", "inverse", lambda v: str(v).replace("-", "_")),
            threshold=get("threshold", 80.0, float),
            confusion=confusion,
            seed=get("seed", 0, int),
            out=get("out", "out", str),
            evolution=evolution,
            k_max=get("k_max", 4, int),
            e0=get("e0", log(2), float),
            fit_window_ns=window,
            p_floor=get("p_floor", 1e-6, float),
            snapshots_ns=get("snapshots_ns", SNAPSHOTS_NS, lambda v: tuple(float(x) for x in v)),
            workers=get("workers", 1, int),
            calibration_trajectories=get("calibration_trajectories", 4000, int),
        )
        _validate(cfg, src)
        return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    return ExperimentConfig.from_json(data, _Source(str(path), text))


def _bulk_pair(lattice: LatticeSpec) -> tuple[int, ...]:
    """Two horizontally adjacent sites in the second row (both in the bulk on a 4x4 grid)."""
    if lattice.rows >= 3 and lattice.cols >= 4:
        s = lattice.cols + 1
        return (s, s + 1)
    return (0, 1) if lattice.n_sites >= 3 else (0,)


def _resolve_pattern(raw, lattice: LatticeSpec, src: _Source) -> tuple[list[str], str]:
    if raw == "neel":
        return neel_pattern(lattice.rows, lattice.cols), "neel"
    if raw == "xy_checkerboard":
        return xy_checkerboard_pattern(lattice.n_sites), "xy_checkerboard"
    try:
        tokens = parse_pattern(raw)
    except DeepThermError as exc:
        raise src.fail("pattern", str(exc)) from None
    return tokens, "explicit"


def _validate(cfg: ExperimentConfig, src: _Source) -> None:
    n = cfg.n_sites
    if len(cfg.pattern) != n:
        raise src.fail("pattern", f"has {len(cfg.pattern)} sites, lattice has {n}")
    if cfg.mode not in MODES:
        raise src.fail("mode", f"must be one of {MODES}, got {cfg.mode!r}")
    times = np.asarray(cfg.times_ns, dtype=float)
    if len(times) == 0:
        raise src.fail("times_ns", "time grid is empty")
    if np.any(times < 0) or not np.all(np.isfinite(times)):
        raise src.fail("times_ns", "times must be finite and non-negative")
    if np.any(np.diff(times) <= 0):
        raise src.fail("times_ns", "time grid must be strictly increasing")
    if len(set(cfg.sites_a)) != len(cfg.sites_a) or not all(0 <= s < n for s in cfg.sites_a):
        raise src.fail("sites_a", f"need distinct sites in [0, {n})")
    if len(cfg.sites_a) not in (1, 2) or len(cfg.sites_a) >= n:
        raise src.fail("sites_a", "subsystem A must have one or two sites and leave B non-empty")
    if cfg.mode == "shots" and len(cfg.sites_a) != 2:
        raise src.fail("sites_a", "shots mode needs a two-site subsystem")
    if cfg.mode == "shots" and cfg.shots <= 0:
        raise src.fail("shots", "must be positive")
    if cfg.mode == "noisy":
        if cfg.n_trajectories < 1:
            raise src.fail("n_trajectories", "noisy mode needs at least one trajectory")
        if not cfg.noise:
            raise src.fail("noise", "noisy mode needs at least one noise spec")
        dt_ns = cfg.evolution.trotter_dt * 1e9
        for t in cfg.times_ns:
            if abs(t / dt_ns - round(t / dt_ns)) > 1e-6:
                raise src.fail("times_ns", f"time {t} ns is not a multiple of trotter_dt_ns={dt_ns:g}")
    if cfg.experiment == "leakage" and cfg.mode != "noisy":
        raise src.fail("mode", "the leakage benchmark runs in noisy mode")
    if cfg.experiment == "deep_thermalization" and len(cfg.sites_a) == 2 and cfg.k_max > 6:
        raise src.fail("k_max", "at most 6")
    if not 1 <= cfg.k_max <= 6:
        raise src.fail("k_max", "must lie in 1..6")
    if cfg.mitigation not in ("inverse", "as_written", "none"):
        raise src.fail("mitigation", "must be 'inverse', 'as_written' or 'none'")
    if cfg.threshold < 0:
        raise src.fail("threshold", "must be non-negative")
    if cfg.confusion is not None and not all(0 <= f <= 1 for f in cfg.confusion):
        raise src.fail("confusion", "fidelities must lie in [0, 1]")
    if cfg.workers < 1:
        raise src.fail("workers", "must be at least 1")
    if cfg.p_floor < 0:
        raise src.fail("p_floor", "must be non-negative")
    if cfg.fit_window_ns is not None and not cfg.fit_window_ns[0] < cfg.fit_window_ns[1]:
        raise src.fail("fit_window_ns", "window must satisfy start < end")
    if cfg.calibration_trajectories < 2000:
        raise src.fail("calibration_trajectories", "calibration needs at least 2000 trajectories")
    for entry in cfg.noise:
        try:
            noise_spec_for(entry, n, cfg, calibrate=False)
        except DeepThermError as exc:
            raise src.fail("noise", str(exc)) from None


def noise_spec_for(entry: Mapping, n_sites: int, cfg: ExperimentConfig, calibrate: bool = True) -> NoiseSpec:
    """Build the spec; with ``calibrate=False`` only the shape of the entry is checked."""
    if not calibrate and "strength" not in entry:
        if "t2star_us" not in entry:
            raise ConfigError("noise config needs either 'strength' or 't2star_us'")
        t2 = np.atleast_1d(np.asarray(entry["t2star_us"], dtype=float))
        if not np.all(t2 > 0):
            raise ConfigError("t2star_us must be positive")
        if len(t2) not in (1, n_sites):
            raise ConfigError(f"t2star_us needs 1 or {n_sites} values")
        entry = {**entry, "strength": 0.0}
    return spec_from_config(entry, n_sites, n_trajectories=cfg.calibration_trajectories)


# ---------------------------------------------------------------- outputs

class _Writer:
    def __init__(self, out: Path):
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def csv(self, name: str, header: Sequence[str], rows) -> Path:
        path = self.out / name
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
        self.files.append(name)
        return path

    def json(self, name: str, data) -> Path:
        path = self.out / name
        path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
        self.files.append(name)
        return path

    def manifest(self, cfg: ExperimentConfig, summary: dict) -> Path:
        resolved = (self.out / "resolved_config.json").read_bytes()
        data = {
            "schema_version": SCHEMA_VERSION,
            "package_version": __version__,
            "experiment": cfg.experiment,
            "config_hash": blob_hash(resolved),
            "files": {name: blob_hash((self.out / name).read_bytes()) for name in sorted(self.files)},
            "summary": summary,
        }
        path = self.out / "manifest.json"
        path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
        return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _tname(t_ns: float) -> str:
    return f"{t_ns:g}ns".replace(".", "p")


@dataclass
class RunResult:
    out: Path
    files: list[str]
    summary: dict


# ---------------------------------------------------------------- shared machinery

def setup(cfg: ExperimentConfig):
    tag = cfg.basis_tag
    H = build_hamiltonian(cfg.lattice, (tag.n_sites, tag.excitations) if tag.is_sector else None)
    psi = prepare_product_state(list(cfg.pattern), tag)
    return H, psi


def _exact_states(cfg: ExperimentConfig, H, psi) -> list[StateVector]:
    return evolve_times(psi, H, [t * 1e-9 for t in cfg.times_ns], cfg.evolution)


def _noisy_sums(cfg: ExperimentConfig, H, psi, spec: NoiseSpec,
                reducer: Callable[[np.ndarray], np.ndarray]) -> list[np.ndarray]:
    """Per-time sum over trajectories of ``reducer(block)``.

    Trajectories are split into fixed chunks; chunk results are added in
    chunk order, so the worker count only changes scheduling.
    """
    times = [t * 1e-9 for t in cfg.times_ns]
    dt = cfg.evolution.trotter_dt
    duration = max(times[-1], dt)
    n = cfg.n_trajectories
    chunks = [range(i, min(i + TRAJECTORY_CHUNK, n)) for i in range(0, n, TRAJECTORY_CHUNK)]

    def work(idx: range) -> list[np.ndarray]:
        trajs = [sample_trajectory(spec, cfg.n_sites, dt, duration, cfg.seed + i) for i in idx]
        return [reducer(block) for _, block in evolve_noisy_batch(psi, H, trajs, times, cfg.evolution)]

    if cfg.workers == 1:
        results = map(work, chunks)
        return _reduce(results)
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return _reduce(pool.map(work, chunks))


def _reduce(results) -> list[np.ndarray]:
    total = None
    for part in results:
        total = part if total is None else [a + b for a, b in zip(total, part)]
    return total


def _confusion(cfg: ExperimentConfig) -> ConfusionMatrix | None:
    if cfg.confusion is None:
        return None
    return ConfusionMatrix.uniform(cfg.n_sites, *cfg.confusion)


def _time_seed(cfg: ExperimentConfig, index: int) -> int:
    return int(np.random.SeedSequence([cfg.seed, index]).generate_state(1)[0])


def _snapshots(cfg: ExperimentConfig) -> list[int]:
    """Indices of the requested snapshot times present in the grid."""
    return [i for i, t in enumerate(cfg.times_ns) if any(abs(t - s) < 1e-9 for s in cfg.snapshots_ns)]


def _primary_noise(cfg: ExperimentConfig) -> NoiseSpec:
    return noise_spec_for(cfg.noise[0], cfg.n_sites, cfg)


def _resolved_noise(cfg: ExperimentConfig) -> ExperimentConfig:
    """Replace T2* targets by calibrated strengths so the resolved config re-runs without calibration."""
    if cfg.mode != "noisy":
        return cfg
    resolved = []
    for entry in cfg.noise:
        spec = noise_spec_for(entry, cfg.n_sites, cfg)
        item = {"kind": spec.kind, "strength": list(spec.strengths), "low_cut_hz": spec.low_cut_hz,
                "high_cut_hz": spec.high_cut_hz}
        if "t2star_us" in entry:
            item["t2star_us"] = entry["t2star_us"]
        resolved.append(item)
    return replace(cfg, noise=tuple(resolved))


def _begin(cfg: ExperimentConfig) -> tuple[ExperimentConfig, _Writer]:
    cfg = _resolved_noise(cfg)
    writer = _Writer(Path(cfg.out))
    data = cfg.to_json()
    data.pop("workers")  # scheduling and location do not affect results
    data.pop("out")
    (writer.out / "resolved_config.json").write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
    return cfg, writer


# ---------------------------------------------------------------- ergodicity

def run_ergodicity(cfg: ExperimentConfig) -> RunResult:
    """Excitation densities, Porter-Thomas statistics and conditional probabilities vs time."""
    cfg, w = _begin(cfg)
    H, psi = setup(cfg)
    n = cfg.n_sites
    strings_all = psi.basis_tag.strings()
    excitations = cfg.excitations
    sector_states = enumerate_sector(n, excitations).states if excitations is not None else None

    if cfg.mode == "exact":
        states = _exact_states(cfg, H, psi)
        sources = [(s.strings(), s.probabilities()) for s in states]
    elif cfg.mode == "noisy":
        spec = _primary_noise(cfg)
        sums = _noisy_sums(cfg, H, psi, spec, lambda b: np.sum(np.abs(b) ** 2, axis=1))
        sources = [(strings_all, p / cfg.n_trajectories) for p in sums]
    else:
        conf = _confusion(cfg)
        sources = []
        for i, state in enumerate(_exact_states(cfg, H, psi)):
            table = sample_shots(state, "ZZ", cfg.sites_a, cfg.shots, conf, _time_seed(cfg, i))
            if conf is not None:
                table = mitigate_counts(table, conf, cfg.mitigation)
            sources.append((table.strings, table.counts / table.total))

    density_rows, pt_rows = [], []
    snaps = set(_snapshots(cfg))
    z_a = "10" if len(cfg.sites_a) == 2 else "1"
    for i, (t, (strings, probs)) in enumerate(zip(cfg.times_ns, sources)):
        for site, value in enumerate(excitation_density((strings, probs), n)):
            density_rows.append((t, site, value))
        if sector_states is not None:
            pos = np.searchsorted(sector_states, strings)
            inside = (pos < len(sector_states)) & (sector_states[np.minimum(pos, len(sector_states) - 1)] == strings)
            accessible = np.zeros(len(sector_states))
            accessible[pos[inside]] = probs[inside]
        else:
            accessible = np.zeros(1 << n)
            accessible[strings] = probs
        hist = porter_thomas_test(accessible)
        pt_rows.append((t, hist.dimension, hist.ks, hist.decay_rate))
        if i in snaps:
            w.csv(f"porter_thomas_{_tname(t)}.csv", ["bin_lo", "bin_hi", "density"],
                  zip(hist.edges[:-1], hist.edges[1:], hist.density))
            w.csv(f"dp_values_{_tname(t)}.csv", ["t_ns", "Dp_value"], ((t, v) for v in hist.scaled))
            zb, cond, p_zb = conditional_probability((strings, probs), cfg.sites_a, z_a, n)
            w.csv(f"conditional_{_tname(t)}.csv", ["zB", "p_zB", f"p_{z_a}_given_zB"],
                  ((format_bits(z, n - len(cfg.sites_a)), p, c) for z, p, c in zip(zb, p_zb, cond)))
    w.csv("excitation_density.csv", ["t_ns", "site", "n_j"], density_rows)
    w.csv("porter_thomas_ks.csv", ["t_ns", "dimension", "ks_exp1", "decay_rate"], pt_rows)
    summary = {"final_ks": float(pt_rows[-1][2]), "final_decay_rate": float(pt_rows[-1][3])}
    w.manifest(cfg, summary)
    return RunResult(w.out, w.files, summary)


# ---------------------------------------------------------------- deep thermalization

def projected_ensembles(cfg: ExperimentConfig, H, psi) -> list[ProjectedEnsemble]:
    n = cfg.n_sites
    if cfg.mode == "exact":
        return [exact_ensemble(s, cfg.sites_a, cfg.p_floor) for s in _exact_states(cfg, H, psi)]
    if cfg.mode == "noisy":
        spec = _primary_noise(cfg)
        zb = conditional_sums(psi.amplitudes[:, None], psi.basis_tag, cfg.sites_a)[0]
        sums = _noisy_sums(cfg, H, psi, spec, lambda b: conditional_sums(b, psi.basis_tag, cfg.sites_a)[1])
        return [ensemble_from_sums(zb, s, cfg.n_trajectories, cfg.sites_a, n, cfg.p_floor) for s in sums]
    conf = _confusion(cfg)
    out = []
    for i, state in enumerate(_exact_states(cfg, H, psi)):
        tables = sample_tomography(state, cfg.sites_a, cfg.shots, conf, _time_seed(cfg, i))
        if conf is not None:
            tables = {b: mitigate_counts(t, conf, cfg.mitigation) for b, t in tables.items()}
        out.append(shot_ensemble(tables, cfg.threshold))
    return out


def post_selected(cfg: ExperimentConfig, ens: ProjectedEnsemble) -> ProjectedEnsemble:
    if ens.d == 2:
        return ens.normalized()
    k = cfg.excitations
    return post_select_sector(ens, (1, 2), None if k is None else k - 1)


def run_deep_thermalization(cfg: ExperimentConfig) -> RunResult:
    """Moment distances to the Haar ensemble, moment entropies and Bloch snapshots vs time."""
    cfg, w = _begin(cfg)
    H, psi = setup(cfg)
    ensembles = projected_ensembles(cfg, H, psi)
    haar = {k: haar_moment(2, k) for k in range(1, cfg.k_max + 1)}
    rows, bloch_snaps = [], set(_snapshots(cfg))
    final_moments = {}
    for i, (t, ens) in enumerate(zip(cfg.times_ns, ensembles)):
        e_bar = avg_entropy(ens)
        ps = post_selected(cfg, ens)
        for k in range(1, cfg.k_max + 1):
            m = kth_moment(ps, k)
            s_k = moment_entropy(m)
            rows.append((t, k, trace_distance(m, haar[k]), s_k, s_k / log(k + 1), e_bar, len(ps), ps.discarded))
            if i == len(ensembles) - 1 and k in (2, 3):
                final_moments[str(k)] = {"real": m.matrix.real.tolist(), "imag": m.matrix.imag.tolist()}
        if i in bloch_snaps:
            xyz = bloch_vectors(ps)
            w.csv(f"bloch_{_tname(t)}.csv", ["zB", "p", "x", "y", "z"],
                  ((format_bits(z, ps.n_b), p, *v) for z, p, v in zip(ps.z_b, ps.p, xyz)))
    w.csv("moments.csv", ["t_ns", "k", "delta_k", "s_k", "s_k_over_ln_k1", "avg_entropy", "n_entries",
                          "discarded"], rows)
    w.json("moment_matrices.json", {"t_ns": cfg.times_ns[-1], "moments": final_moments})
    w.json("ensemble_final.json", ensembles[-1].to_json())
    final = [r for r in rows if r[0] == cfg.times_ns[-1]]
    summary = {"final_delta": {str(r[1]): float(r[2]) for r in final},
               "final_s_ratio": {str(r[1]): float(r[4]) for r in final}}
    w.manifest(cfg, summary)
    return RunResult(w.out, w.files, summary)


# ---------------------------------------------------------------- leakage

def leakage_curve(cfg: ExperimentConfig, spec: NoiseSpec | None, H=None, psi=None) -> np.ndarray:
    """Trajectory-averaged E_A at every configured time; ``spec=None`` runs without noise."""
    if H is None:
        H, psi = setup(cfg)
    if spec is None:
        return np.array([avg_entropy(exact_ensemble(s, cfg.sites_a, cfg.p_floor))
                         for s in _exact_states(cfg, H, psi)])
    zb = conditional_sums(psi.amplitudes[:, None], psi.basis_tag, cfg.sites_a)[0]
    sums = _noisy_sums(cfg, H, psi, spec, lambda b: conditional_sums(b, psi.basis_tag, cfg.sites_a)[1])
    return np.array([avg_entropy(ensemble_from_sums(zb, s, cfg.n_trajectories, cfg.sites_a, cfg.n_sites,
                                                    cfg.p_floor)) for s in sums])


def run_leakage_benchmark(cfg: ExperimentConfig) -> RunResult:
    """E_A(t) for every listed noise spec plus a noiseless reference, with linear fits."""
    cfg, w = _begin(cfg)
    H, psi = setup(cfg)
    rows, fits = [], {}
    curves = [("none", None)] + [(f"{i}:{e['kind']}", noise_spec_for(e, cfg.n_sites, cfg))
                                 for i, e in enumerate(cfg.noise)]
    window = cfg.fit_window_ns
    for label, spec in curves:
        values = leakage_curve(cfg, spec, H, psi)
        rows.extend((label, t, v) for t, v in zip(cfg.times_ns, values))
        if spec is None:
            fits[label] = {"max_abs": float(np.max(np.abs(values)))}
            continue
        times = np.concatenate([[0.0], cfg.times_ns]) if cfg.times_ns[0] > 0 else np.asarray(cfg.times_ns)
        vals = np.concatenate([[0.0], values]) if cfg.times_ns[0] > 0 else values
        entry = {"kind": spec.kind, "strength": list(spec.strengths)}
        try:
            fit = fit_leakage(times * 1e-9, vals, cfg.e0, None if window is None else
                              (window[0] * 1e-9, window[1] * 1e-9))
            entry.update(tau_mb_us=fit.tau_mb * 1e6, e0=fit.e0, offset=fit.offset,
                         window_ns=list(window) if window is not None else [float(times[0]), float(times[-1])],
                         residual_rms=fit.residual,
                         r_squared=fit.r_squared, n_points=fit.n_points)
        except FitError as exc:
            entry["error"] = str(exc)
        fits[label] = entry
    w.csv("leakage.csv", ["noise", "t_ns", "avg_entropy"], rows)
    w.json("fits.json", fits)
    summary = {k: float(v.get("tau_mb_us", v.get("max_abs", np.nan))) for k, v in fits.items()}
    w.manifest(cfg, summary)
    return RunResult(w.out, w.files, summary)


RUNNERS = {
    "ergodicity": run_ergodicity,
    "deep_thermalization": run_deep_thermalization,
    "leakage": run_leakage_benchmark,
}


def run(cfg: ExperimentConfig) -> RunResult:
    return RUNNERS[cfg.experiment](cfg)

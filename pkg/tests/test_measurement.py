import numpy as np
import pytest
from hypothesis import given, strategies as st

from deeptherm.errors import MitigationError, ParameterError, ReconstructionError
from deeptherm.evolution import StateVector, evolve, neel_pattern, prepare_product_state
from deeptherm.lattice import BasisTag, LatticeSpec, build_hamiltonian
from deeptherm.measurement import (BASES, ConfusionMatrix, ShotTable, exact_marginal_b, mitigate_counts,
                                   pauli_expectations, probability_of, project_psd, read_shot_tables,
                                   sample_shots, sample_tomography, select_bitstrings, tomo_reconstruct,
                                   write_shot_tables)


def bell_state():
    # (|00> + |11>)/sqrt(2) on sites 0, 1 of a 3-site system, site 2 in |0>
    amps = np.zeros(8, complex)
    amps[[0b000, 0b011]] = 1 / np.sqrt(2)
    return StateVector(BasisTag(3), amps)


def test_ground_state_zz():
    psi = prepare_product_state("0000", BasisTag(4))
    table = sample_shots(psi, "ZZ", (0, 1), 1000, seed=1)
    assert table.strings.tolist() == [0] and table.total == 1000


def test_readout_errors_on_ground_state():
    psi = prepare_product_state("0000", BasisTag(4))
    shots = 200_000
    table = sample_shots(psi, "ZZ", (0, 1), shots, ConfusionMatrix.uniform(4), seed=2)
    frac = dict(zip(table.strings.tolist(), table.counts))[0] / shots
    p = 0.996**4
    assert abs(frac - p) < 5 * np.sqrt(p * (1 - p) / shots)


def test_bell_correlations():
    tables = sample_tomography(bell_state(), (0, 1), 4000, seed=3)
    exp = pauli_expectations(tables, 0)
    assert exp["XX"] == 1.0 and exp["ZZ"] == 1.0 and exp["YY"] == -1.0
    assert abs(exp["ZI"]) < 0.1


def test_mitigation_textbook_example():
    # one qubit, F00 = F11 = 0.9: counts (90, 10) come from a pure |0>
    table = ShotTable("ZZ", 1, (), [0, 1], [90.0, 10.0])
    out = mitigate_counts(table, ConfusionMatrix([0.9], [0.9]))
    counts = dict(zip(out.strings.tolist(), out.counts))
    assert counts[0] == pytest.approx(100.0) and counts.get(1, 0.0) == pytest.approx(0.0, abs=1e-9)


def test_identity_confusion_is_noop():
    table = ShotTable("XY", 3, (0, 1), [1, 5, 6], [3.0, 4.0, 5.0])
    out = mitigate_counts(table, ConfusionMatrix.uniform(3, 1.0, 1.0))
    assert out.strings.tolist() == [1, 5, 6] and np.allclose(out.counts, [3, 4, 5])


def test_singular_factor():
    table = ShotTable("ZZ", 2, (0, 1), [0], [10.0])
    with pytest.raises(MitigationError):
        mitigate_counts(table, ConfusionMatrix([0.5, 0.9], [0.5, 0.9]))


@given(st.lists(st.floats(0.6, 1.0), min_size=3, max_size=3), st.lists(st.floats(0.6, 1.0), min_size=3,
                                                                       max_size=3),
       st.integers(0, 2**31 - 1))
def test_mitigation_inverts_confusion(f00, f11, seed):
    cm = ConfusionMatrix(f00, f11)
    v = np.random.default_rng(seed).random(8)
    assert np.allclose(cm.apply(cm.apply(v), inverse=True), v)


def test_confusion_factor_bit_order():
    cm = ConfusionMatrix([1.0, 0.5], [1.0, 1.0])
    # qubit 1 flips 0 -> 1 with probability one half; qubit 0 is perfect
    out = cm.apply(np.eye(4)[0b00])
    assert np.allclose(out, [0.5, 0, 0.5, 0])


def test_synthetic_mitigation_pipeline():
    H = build_hamiltonian(LatticeSpec.uniform(2, 2), (4, 2))
    psi = evolve(prepare_product_state(neel_pattern(2, 2), H.basis_tag), H, 60e-9)
    M = 200_000
    cm = ConfusionMatrix.uniform(4)
    raw = sample_shots(psi, "ZZ", (0, 1), M, cm, seed=4)
    fixed = mitigate_counts(raw, cm)
    ideal = dict(zip(psi.strings().tolist(), psi.probabilities()))
    got = dict(zip(fixed.strings.tolist(), fixed.counts / M))
    for s in range(16):
        assert abs(got.get(s, 0.0) - ideal.get(s, 0.0)) < 5 / np.sqrt(M)


def test_as_written_mode_differs():
    table = ShotTable("ZZ", 1, (), [0, 1], [90.0, 10.0])
    out = mitigate_counts(table, ConfusionMatrix([0.9], [0.9]), "as_written")
    assert np.allclose(out.counts, [82.0, 18.0])
    with pytest.raises(ParameterError):
        mitigate_counts(table, ConfusionMatrix([0.9], [0.9]), "magic")


def test_selection_threshold():
    psi = prepare_product_state("0110", BasisTag(4, 2))  # sites 1 and 2 excited
    tables = sample_tomography(psi, (0, 1), 1000, seed=5)
    assert select_bitstrings(tables, 0) == [0b01]  # z_B packs site 2 into bit 0, site 3 into bit 1
    assert select_bitstrings(tables, 1000) == [0b01]
    assert select_bitstrings(tables, 1001) == []


def test_uniform_sector_selects_nothing():
    tag = BasisTag(16, 8)
    psi = StateVector(tag, np.full(tag.dimension, 1 / np.sqrt(tag.dimension)))
    tables = sample_tomography(psi, (5, 6), 200_000, seed=6)
    assert select_bitstrings(tables, 80) == []


def test_tomography_tracks_z_b():
    # A = (0, 1) copies B = (2, 3), so each z_B heralds a different basis state of A
    amps = np.zeros(16, complex)
    for a in range(4):
        amps[a | (a << 2)] = 0.5
    psi = StateVector(BasisTag(4), amps)
    tables = sample_tomography(psi, (0, 1), 40_000, seed=7)
    for z in range(4):
        rho = tomo_reconstruct(tables, z).rho
        a_index = 2 * (z & 1) + (z >> 1)  # site 0 is the most significant bit of the A index
        assert rho[a_index, a_index].real > 0.95


def test_tomography_of_product_state():
    psi = prepare_product_state("010", BasisTag(3))
    tables = sample_tomography(psi, (0, 1), 2000, seed=8)
    exp = pauli_expectations(tables, 0)
    assert exp["ZZ"] == -1.0
    tomo = tomo_reconstruct(tables, 0)
    evals = np.linalg.eigvalsh(tomo.rho)
    assert np.all(evals >= -1e-12) and np.trace(tomo.rho).real == pytest.approx(1.0)
    # |a> = |b_site0 b_site1> = |01> is index 1
    assert tomo.rho[1, 1].real > 0.9


def test_tomography_needs_all_bases():
    tables = sample_tomography(bell_state(), (0, 1), 100, seed=9)
    with pytest.raises(ReconstructionError):
        tomo_reconstruct({k: v for k, v in tables.items() if k != "XY"}, 0)
    with pytest.raises(ReconstructionError):
        tomo_reconstruct(tables, 0, min_counts=1000)


@given(st.integers(0, 2**31 - 1))
def test_project_psd_is_physical(seed):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    rho = project_psd(m + m.conj().T)
    assert np.allclose(rho, rho.conj().T)
    assert np.trace(rho).real == pytest.approx(1.0)
    assert np.linalg.eigvalsh(rho).min() > -1e-12


def test_probability_of():
    psi = bell_state()
    tables = sample_tomography(psi, (0, 1), 100, seed=10)
    assert probability_of(0, tables) == 1.0
    assert probability_of(1, tables) == 0.0
    marginal = exact_marginal_b(psi, (0, 1))
    assert marginal[0] == pytest.approx(1.0) and marginal.get(1, 0.0) == 0.0


def test_csv_roundtrip(tmp_path):
    tables = sample_tomography(bell_state(), (0, 1), 500, seed=11)
    write_shot_tables(tables, tmp_path / "shots.csv")
    again = read_shot_tables(tmp_path / "shots.csv", (0, 1))
    assert set(again) == set(BASES)
    for b in BASES:
        assert again[b].strings.tolist() == tables[b].strings.tolist()
        assert np.array_equal(again[b].counts, tables[b].counts)


def test_seed_determinism():
    psi = bell_state()
    a = sample_tomography(psi, (0, 1), 300, ConfusionMatrix.uniform(3), seed=12)
    b = sample_tomography(psi, (0, 1), 300, ConfusionMatrix.uniform(3), seed=12)
    assert all(np.array_equal(a[k].counts, b[k].counts) for k in BASES)


def test_sampling_argument_errors():
    psi = bell_state()
    with pytest.raises(ParameterError):
        sample_shots(psi, "ZQ", (0, 1), 10)
    with pytest.raises(ParameterError):
        sample_shots(psi, "ZZ", (0,), 10)
    with pytest.raises(ParameterError):
        sample_shots(psi, "ZZ", (0, 1), 0)

from math import comb, log

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deeptherm.errors import FitError, ParameterError, SizeError
from deeptherm.evolution import StateVector, evolve, neel_pattern, prepare_product_state
from deeptherm.lattice import BasisTag, LatticeSpec, build_hamiltonian
from deeptherm.ensemble import (CHUNK, ProjectedEnsemble, avg_entropy, bloch_vectors, ensemble_from_states,
                                exact_ensemble, fit_leakage, haar_moment, haar_states, kth_moment,
                                moment_entropy, permutation_operator, post_select_sector, trace_distance,
                                trajectory_ensemble)


def random_state(tag, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(tag.dimension) + 1j * rng.standard_normal(tag.dimension)
    return StateVector(tag, v / np.linalg.norm(v))


def test_product_state_single_entry():
    psi = prepare_product_state("0110", BasisTag(4))
    ens = exact_ensemble(psi, (1, 2))
    assert len(ens) == 1 and ens.p[0] == 1.0
    assert ens.z_b.tolist() == [0]
    assert ens.rho[0, 3, 3] == 1.0  # both A sites excited


def test_two_site_example():
    # (|00> + |11>)/sqrt(2), A = site 0: z_B = 0 gives |0>, z_B = 1 gives |1>
    psi = StateVector(BasisTag(2), np.array([1, 0, 0, 1]) / np.sqrt(2))
    ens = exact_ensemble(psi, (0,))
    assert ens.z_b.tolist() == [0, 1]
    assert np.allclose(ens.p, 0.5)
    assert np.allclose(ens.rho[0], np.diag([1, 0])) and np.allclose(ens.rho[1], np.diag([0, 1]))


def test_probability_floor():
    amps = np.array([np.sqrt(1 - 1e-8), 0, 1e-4, 0])
    ens = exact_ensemble(StateVector(BasisTag(2), amps), (0,), p_floor=1e-6)
    assert len(ens) == 1 and ens.discarded == pytest.approx(1e-8)


def test_single_trajectory_equals_exact():
    psi = random_state(BasisTag(6, 3), 1)
    a = exact_ensemble(psi, (2, 3))
    b = trajectory_ensemble([psi], (2, 3))
    assert b.source_tag == "exact_pure"
    assert np.array_equal(a.z_b, b.z_b)
    assert np.allclose(a.p, b.p) and np.allclose(a.rho, b.rho)


def test_orthogonal_trajectories_mix():
    up = prepare_product_state("00", BasisTag(2))
    down = prepare_product_state("10", BasisTag(2))
    ens = trajectory_ensemble([up, down], (0,))
    assert ens.source_tag == "trajectory_avg"
    assert np.allclose(ens.rho[0], np.eye(2) / 2)
    assert avg_entropy(ens) == pytest.approx(log(2))


def test_trajectory_argument_errors():
    with pytest.raises(ParameterError):
        trajectory_ensemble([], (0,))
    with pytest.raises(ParameterError):
        trajectory_ensemble(np.ones((4, 2)), (0,))
    psi = random_state(BasisTag(2), 0)
    with pytest.raises(ParameterError):
        trajectory_ensemble([psi, psi], (0,), weights=[1.0])
    with pytest.raises(ParameterError):
        exact_ensemble(psi, (0, 1, 2))


def test_post_select_keeps_sector_states():
    H = build_hamiltonian(LatticeSpec.uniform(2, 3), (6, 3))
    psi = evolve(prepare_product_state(neel_pattern(2, 3), H.basis_tag), H, 80e-9)
    ens = exact_ensemble(psi, (1, 2))
    sel = post_select_sector(ens, (1, 2), zb_weight=2)
    assert sel.d == 2 and sel.total == pytest.approx(1.0)
    assert np.all(np.bitwise_count(sel.z_b) == 2)
    # every kept z_B carries one excitation on A, so the projection loses nothing
    kept = np.isin(ens.z_b, sel.z_b)
    assert np.allclose(ens.rho[kept][:, [1, 2]][:, :, [1, 2]], sel.rho)


def test_post_select_maximally_mixed():
    ens = ProjectedEnsemble((0, 1), 2, [0], [1.0], [np.eye(4) / 4])
    sel = post_select_sector(ens)
    assert np.allclose(sel.rho[0], np.eye(2) / 2)


def test_post_select_drops_empty_entries():
    rho = np.zeros((2, 4, 4))
    rho[0, 0, 0] = 1
    rho[1, 1, 1] = 1
    ens = ProjectedEnsemble((0, 1), 3, [0, 1], [0.5, 0.5], rho)
    with pytest.warns(UserWarning):
        sel = post_select_sector(ens)
    assert len(sel) == 1 and sel.discarded == pytest.approx(0.5)


def test_first_moment_is_reduced_density_matrix():
    psi = random_state(BasisTag(5), 3)
    ens = exact_ensemble(psi, (0, 3))
    amps = psi.amplitudes.reshape((2,) * 5)  # axis 0 is site 4
    full = np.moveaxis(amps, [4, 1], [0, 1]).reshape(4, -1)  # site 0, site 3 lead
    assert np.allclose(kth_moment(ens, 1).matrix, full @ full.conj().T)


def test_second_moment_of_pure_state():
    ens = ensemble_from_states(np.array([[1, 1j]]) / np.sqrt(2))
    evals = np.sort(np.linalg.eigvalsh(kth_moment(ens, 2).matrix))
    assert np.allclose(evals, [0, 0, 0, 1])
    mixed = ensemble_from_states(np.array([[1, 0], [0, 1]]))
    assert np.allclose(np.sort(np.linalg.eigvalsh(kth_moment(mixed, 2).matrix)), [0, 0, 0.5, 0.5])


@pytest.mark.parametrize("d,k", [(2, 1), (2, 2), (2, 3), (4, 2)])
def test_haar_moment_properties(d, k):
    m = haar_moment(d, k).matrix
    assert np.trace(m).real == pytest.approx(1.0)
    assert np.linalg.matrix_rank(m) == comb(d + k - 1, k)
    assert moment_entropy(m) == pytest.approx(log(comb(d + k - 1, k)))


def test_haar_d2_examples():
    assert np.allclose(haar_moment(2, 1).matrix, np.eye(2) / 2)
    assert np.linalg.matrix_rank(haar_moment(2, 2).matrix) == 3
    assert moment_entropy(haar_moment(2, 3)) == pytest.approx(log(4))


def test_haar_samples_approach_haar_moment():
    ens = ensemble_from_states(haar_states(2, 20_000, seed=5))
    for k in (1, 2, 3):
        assert trace_distance(kth_moment(ens, k), haar_moment(2, k)) < 0.03


@given(st.integers(0, 2**31 - 1), st.permutations(range(3)))
def test_moment_is_permutation_symmetric(seed, perm):
    ens = ensemble_from_states(haar_states(2, 7, seed=seed))
    m = kth_moment(ens, 3).matrix
    P = permutation_operator(2, perm)
    assert np.allclose(P @ m @ P.T, m)


def test_pure_state_distance_grows_with_k():
    ens = ensemble_from_states(np.array([[1.0, 0.0]]))
    deltas = [trace_distance(kth_moment(ens, k), haar_moment(2, k)) for k in range(1, 5)]
    assert np.all(np.diff(deltas) > 0)
    # 1 - 1/(k+1) for a single pure state
    assert np.allclose(deltas, [1 - 1 / (k + 1) for k in range(1, 5)])


@given(st.integers(0, 2**31 - 1))
def test_trace_distance_is_a_metric(seed):
    rng = np.random.default_rng(seed)
    mats = [kth_moment(ensemble_from_states(haar_states(2, 3, seed=int(s))), 2).matrix
            for s in rng.integers(0, 2**31, 3)]
    a, b, c = mats
    assert trace_distance(a, a) == pytest.approx(0.0, abs=1e-12)
    assert trace_distance(a, b) == pytest.approx(trace_distance(b, a))
    assert trace_distance(a, c) <= trace_distance(a, b) + trace_distance(b, c) + 1e-12
    assert 0 <= trace_distance(a, b) <= 1 + 1e-12


def test_trace_distance_shape_mismatch():
    with pytest.raises(ParameterError):
        trace_distance(np.eye(2), np.eye(4))


def test_moment_size_limits():
    ens = ensemble_from_states(haar_states(4, 3))
    with pytest.raises(SizeError):
        kth_moment(ens, 5)
    with pytest.raises(ParameterError):
        kth_moment(ens, 0)


def test_chunked_accumulation_matches_serial():
    n = 3 * CHUNK + 17
    states = haar_states(2, n, seed=9)
    p = np.random.default_rng(1).random(n)
    ens = ensemble_from_states(states, p)
    m = kth_moment(ens, 3).matrix
    serial = np.zeros((8, 8), complex)
    for w, v in zip(p / p.sum(), states):
        v3 = np.kron(np.kron(v, v), v)
        serial += w * np.outer(v3, v3.conj())
    assert np.max(np.abs(m - serial)) < 1e-12


def test_avg_entropy_examples():
    pure = ensemble_from_states(haar_states(4, 10))
    assert avg_entropy(pure) == pytest.approx(0.0, abs=1e-12)
    mixed = ProjectedEnsemble((0, 1), 2, [0, 1], [0.25, 0.75], [np.eye(4) / 4, np.diag([1, 0, 0, 0])])
    assert avg_entropy(mixed) == pytest.approx(0.25 * log(4))
    assert avg_entropy(ProjectedEnsemble((0,), 1, [], [], np.zeros((0, 2, 2)))) == 0.0


@given(st.integers(0, 2**31 - 1))
def test_purity_bounds(seed):
    psi = random_state(BasisTag(6), seed)
    trajs = [random_state(BasisTag(6), seed + i) for i in range(3)]
    for ens in (exact_ensemble(psi, (0, 1)), trajectory_ensemble(trajs, (0, 1))):
        purity = ens.purities()
        assert np.all(purity <= 1 + 1e-12) and np.all(purity >= 0.25 - 1e-12)
        assert -1e-12 <= avg_entropy(ens) <= log(4) + 1e-12


def test_bloch_vectors():
    # index 1 is the north pole, so (|0> + i|1>)/sqrt(2) = |N> - i|S> up to phase points along -y
    ens = ensemble_from_states(np.array([[1, 0], [0, 1], [1, 1], [1, 1j]]))
    assert np.allclose(bloch_vectors(ens), [[0, 0, -1], [0, 0, 1], [1, 0, 0], [0, -1, 0]])


def test_fit_recovers_exact_line():
    tau = 1e-6
    t = np.linspace(0, 200e-9, 11)
    fit = fit_leakage(t, log(2) * t / tau + 0.01, log(2))
    assert abs(fit.tau_mb - tau) / tau < 1e-12
    assert fit.offset == pytest.approx(0.01) and fit.r_squared == pytest.approx(1.0)


def test_fit_window_and_errors():
    t = np.arange(10.0)
    fit = fit_leakage(t, 0.5 * t, 1.0, window=(2.0, 6.0))
    assert fit.n_points == 5 and fit.tau_mb == pytest.approx(2.0)
    with pytest.raises(FitError):
        fit_leakage(t, t, window=(0.0, 1.0))
    with pytest.raises(FitError):
        fit_leakage(t, -t)


def test_json_roundtrip(tmp_path):
    psi = random_state(BasisTag(6, 3), 4)
    ens = exact_ensemble(psi, (1, 4))
    ens.save(tmp_path / "ens.json")
    again = ProjectedEnsemble.load(tmp_path / "ens.json")
    assert again.sites_a == ens.sites_a and again.n_sites == 6
    assert np.array_equal(again.z_b, ens.z_b)
    assert np.array_equal(again.p, ens.p) and np.array_equal(again.rho, ens.rho)

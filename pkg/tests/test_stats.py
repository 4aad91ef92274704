from math import pi

import numpy as np
import pytest

from deeptherm.errors import ParameterError
from deeptherm.evolution import EvolutionConfig, StateVector, evolve, neel_pattern, prepare_product_state
from deeptherm.lattice import DEFAULT_J, BasisTag, LatticeSpec, build_hamiltonian
from deeptherm.stats import (conditional_probability, excitation_density, porter_thomas_test,
                             uniformity_ks)

# weighted mean and spread of p(10 | z_B) for A = (5, 6) after a 306 ns 4x4 Neel quench,
# frozen from a Chebyshev-propagated reference run
COND_MEAN_306 = 0.28716059796736865
COND_SPREAD_306 = 0.3711833935491668


@pytest.fixture(scope="module")
def quench_306():
    H = build_hamiltonian(LatticeSpec.uniform(4, 4), (16, 8))
    psi = prepare_product_state(neel_pattern(4, 4), H.basis_tag)
    return psi, evolve(psi, H, 306e-9)


def test_neel_densities_at_zero(quench_306):
    psi, _ = quench_306
    n = excitation_density(psi)
    assert n.tolist() == [float((r + c) % 2) for r in range(4) for c in range(4)]


def test_densities_relax(quench_306):
    _, late = quench_306
    n = excitation_density(late)
    assert abs(n.mean() - 0.5) < 1e-12
    assert np.ptp(n) < 0.1


def test_two_site_swap_density():
    H = build_hamiltonian(LatticeSpec.uniform(1, 2), (2, 1))
    psi = evolve(prepare_product_state("10", H.basis_tag), H, pi / (2 * DEFAULT_J))
    assert np.allclose(excitation_density(psi), [0, 1], atol=1e-10)


def test_raw_source_needs_n_sites():
    with pytest.raises(ParameterError):
        excitation_density(([0, 1], [0.5, 0.5]))
    assert excitation_density(([0b01, 0b10], [0.25, 0.75]), 2).tolist() == [0.25, 0.75]


def test_haar_vector_is_porter_thomas():
    D = 12870
    rng = np.random.default_rng(0)
    v = rng.standard_normal(D) + 1j * rng.standard_normal(D)
    hist = porter_thomas_test(StateVector(BasisTag(16, 8), v / np.linalg.norm(v)))
    assert hist.ks < 0.02
    assert hist.decay_rate == pytest.approx(1.0, abs=0.05)


def test_early_state_is_not_porter_thomas():
    H = build_hamiltonian(LatticeSpec.uniform(4, 4), (16, 8))
    psi = evolve(prepare_product_state(neel_pattern(4, 4), H.basis_tag), H, 2e-9)
    assert porter_thomas_test(psi, dimension=12870).ks > 0.3


def test_exponential_samples():
    p = np.random.default_rng(1).exponential(size=20000)
    hist = porter_thomas_test(p / p.sum())
    assert hist.ks < 0.02
    assert np.sum(hist.density * np.diff(hist.edges)) == pytest.approx(1.0)


def test_unobserved_strings_count_as_zero():
    hist = porter_thomas_test(np.array([0.5, 0.5]), dimension=4)
    assert hist.scaled.tolist() == [2.0, 2.0, 0.0, 0.0]
    with pytest.raises(ParameterError):
        porter_thomas_test(np.ones(5) / 5, dimension=4)


def test_dimension_mismatch():
    psi = prepare_product_state("0101", BasisTag(4, 2))
    with pytest.raises(ParameterError):
        porter_thomas_test(psi, dimension=7)
    with pytest.raises(ParameterError):
        porter_thomas_test(psi, excitations=1)


def test_full_space_state_restricted_to_sector():
    tag = BasisTag(4)
    amps = np.zeros(16, complex)
    amps[[0b0011, 0b0101]] = 1 / np.sqrt(2)
    hist = porter_thomas_test(StateVector(tag, amps), excitations=2)
    assert hist.dimension == 6


def test_conditional_product_state():
    psi = prepare_product_state("0110", BasisTag(4))
    zb, cond, p = conditional_probability(psi, (1, 2), "11")
    assert zb.tolist() == [0] and cond.tolist() == [1.0] and p.tolist() == [1.0]


def test_conditional_bell_state():
    # (|01> + |10>)/sqrt(2) on sites (0, 1), site 2 excited
    amps = np.zeros(8, complex)
    amps[[0b101, 0b110]] = 1 / np.sqrt(2)
    zb, cond, _ = conditional_probability(StateVector(BasisTag(3), amps), (0, 1), "10")
    assert zb.tolist() == [1] and cond[0] == pytest.approx(0.5)
    with pytest.raises(ParameterError):
        conditional_probability(StateVector(BasisTag(3), amps), (0, 1), "1")


def test_conditional_spread_regression(quench_306):
    _, late = quench_306
    zb, cond, p = conditional_probability(late, (5, 6), "10")
    assert len(zb) == 9438
    mean = np.sum(p * cond)
    spread = np.sqrt(np.sum(p * (cond - mean) ** 2))
    assert mean == pytest.approx(COND_MEAN_306, abs=1e-8)
    assert spread == pytest.approx(COND_SPREAD_306, abs=1e-8)


def test_krylov_and_chebyshev_conditionals_agree(quench_306):
    psi, late = quench_306
    H = build_hamiltonian(LatticeSpec.uniform(4, 4), (16, 8))
    other = evolve(psi, H, 306e-9, EvolutionConfig(method="chebyshev"))
    a = conditional_probability(late, (5, 6), "01")[1]
    b = conditional_probability(other, (5, 6), "01")[1]
    assert np.max(np.abs(a - b)) < 1e-8


def test_uniformity_ks():
    assert uniformity_ks(np.random.default_rng(2).random(20000)) < 0.02
    assert uniformity_ks(np.full(100, 0.5)) == pytest.approx(0.5)

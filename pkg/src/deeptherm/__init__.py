"""Projected-ensemble and deep-thermalization simulator for 2D XY qubit lattices."""
from .ensemble import (ProjectedEnsemble, avg_entropy, exact_ensemble, fit_leakage, haar_moment, kth_moment,
                       moment_entropy, post_select_sector, trace_distance, trajectory_ensemble)
from .errors import DeepThermError
from .evolution import (EvolutionConfig, StateVector, evolve, evolve_noisy, evolve_noisy_batch,
                        prepare_product_state)
from .lattice import BasisTag, LatticeSpec, SparseHamiltonian, build_hamiltonian
from .measurement import ConfusionMatrix, ShotTable, mitigate_counts, sample_shots, tomo_reconstruct
from .noise import NoiseSpec, NoiseTrajectory, calibrate_from_t2star, sample_trajectory

__version__ = "0.1.0"

__all__ = [
    "BasisTag", "ConfusionMatrix", "DeepThermError", "EvolutionConfig", "LatticeSpec", "NoiseSpec",
    "NoiseTrajectory", "ProjectedEnsemble", "ShotTable", "SparseHamiltonian", "StateVector",
    "avg_entropy", "build_hamiltonian", "calibrate_from_t2star", "evolve", "evolve_noisy",
    "evolve_noisy_batch", "exact_ensemble", "fit_leakage", "haar_moment", "kth_moment",
    "mitigate_counts", "moment_entropy", "post_select_sector", "prepare_product_state",
    "sample_shots", "sample_trajectory", "tomo_reconstruct", "trace_distance", "trajectory_ensemble",
]

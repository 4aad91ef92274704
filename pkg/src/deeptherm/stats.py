"""Ergodicity diagnostics: excitation densities, Porter-Thomas statistics, conditional probabilities."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, stats as sps

from .errors import ParameterError
from .evolution import StateVector
from .lattice import enumerate_sector, split_subsystem


@dataclass
class ProbabilityHistogram:
    dimension: int
    scaled: np.ndarray = field(repr=False)  # D * p(z)
    edges: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)
    decay_rate: float
    ks: float


def _strings_and_probs(source, n_sites: int | None = None):
    if isinstance(source, StateVector):
        return source.strings(), source.probabilities(), source.basis_tag.n_sites
    strings, probs = source
    if n_sites is None:
        raise ParameterError("n_sites is required with raw (strings, probabilities)")
    return np.asarray(strings, dtype=np.int64), np.asarray(probs, dtype=float), n_sites


def excitation_density(source, n_sites: int | None = None) -> np.ndarray:
    """<n_j> for every site from a state or from ``(strings, probabilities)``."""
    strings, probs, n = _strings_and_probs(source, n_sites)
    bits = (strings[:, None] >> np.arange(n)[None, :]) & 1
    return probs @ bits / probs.sum()


def porter_thomas_test(source, dimension: int | None = None, excitations: int | None = None,
                       n_bins: int = 40) -> ProbabilityHistogram:
    """Compare D * p(z) with Exp(1) on the accessible space of dimension D.

    ``source`` is a StateVector or an array of probabilities over the
    accessible space.  A full-space state may be restricted to one charge
    sector with ``excitations``.
    """
    if isinstance(source, StateVector):
        probs = source.probabilities()
        tag = source.basis_tag
        if excitations is not None and not tag.is_sector:
            states = enumerate_sector(tag.n_sites, excitations).states
            probs = probs[states]
        elif excitations is not None and excitations != tag.excitations:
            raise ParameterError("state lives in a different charge sector")
        if dimension is None:
            dimension = len(probs)
        if dimension != len(probs):
            raise ParameterError(f"D={dimension} does not match the {len(probs)}-dimensional accessible space")
    else:
        probs = np.asarray(source, dtype=float)
        if dimension is None:
            dimension = len(probs)
        if len(probs) > dimension:
            raise ParameterError(f"{len(probs)} probabilities exceed D={dimension}")
        if len(probs) < dimension:  # unobserved strings have estimated probability 0
            probs = np.concatenate([probs, np.zeros(dimension - len(probs))])
    probs = probs / probs.sum()
    scaled = dimension * probs
    ks = float(sps.kstest(scaled, "expon").statistic)
    # log bins cover every non-zero D*p; structural zeros cannot sit on a log axis and are left out
    positive = scaled[scaled > 0]
    lo = min(positive.min() * 0.999, 1e-2) if len(positive) else 1e-4
    hi = max(positive.max() * 1.001, 10.0) if len(positive) else 10.0
    edges = np.geomspace(lo, hi, n_bins + 1)
    counts, _ = np.histogram(positive, edges)
    density = counts / (max(len(positive), 1) * np.diff(edges))
    return ProbabilityHistogram(dimension, scaled, edges, density, _fit_rate(edges, density), ks)


def _fit_rate(edges: np.ndarray, density: np.ndarray, x_max: float = 8.0) -> float:
    """Exponential decay rate of the histogram on (0, x_max]; 1 for Porter-Thomas.

    Binned maximum likelihood for an exponential truncated to the covered
    bins, so wide log-spaced bins do not bias the estimate.
    """
    keep = edges[1:] <= x_max
    lo, hi = edges[:-1][keep], edges[1:][keep]
    weight = density[keep] * (hi - lo)
    if np.count_nonzero(weight) < 2:
        return float("nan")

    def nll(rate):
        cell = np.exp(-rate * lo) - np.exp(-rate * hi)
        return -float(weight @ np.log(np.clip(cell, 1e-300, None)) - weight.sum() * np.log(cell.sum()))

    res = optimize.minimize_scalar(nll, bounds=(1e-3, 1e3), method="bounded", options={"xatol": 1e-8})
    return float(res.x)


def conditional_probability(source, sites_a: Sequence[int], z_a: str,
                            n_sites: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """p(z_A | z_B) for every z_B with p(z_B) > 0.

    ``z_a`` is written in the order of ``sites_a`` (``"10"`` means the first
    A site excited).  Returns ``(z_b, p_conditional, p_zb)``.
    """
    strings, probs, n = _strings_and_probs(source, n_sites)
    if len(z_a) != len(sites_a) or set(z_a) - {"0", "1"}:
        raise ParameterError(f"z_A pattern {z_a!r} does not match subsystem {list(sites_a)}")
    zb, blocks = split_subsystem(strings, np.sqrt(np.clip(probs, 0, None)), sites_a, n)
    joint = np.abs(blocks) ** 2
    p_zb = joint.sum(axis=1)
    keep = p_zb > 0
    cond = joint[keep, int(z_a, 2)] / p_zb[keep]
    return zb[keep], cond, p_zb[keep]


def uniformity_ks(values: np.ndarray) -> float:
    """KS distance of a sample from Uniform(0, 1)."""
    return float(sps.kstest(np.asarray(values, dtype=float), "uniform").statistic)

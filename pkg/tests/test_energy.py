import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from graphfpe.energy import (PotentialSystem, as_distribution, dirichlet_form, entropy_functional, euclidean_sq,
                             free_energy, gibbs, relative_entropy, weighted_l2_sq, xlogx_excess)
from graphfpe.errors import InputError
from graphfpe.graph_core import Graph

from .strategies import graphs, seeds, systems


def test_distribution_validation():
    with pytest.raises(InputError):
        as_distribution([1.0, 0.0])
    with pytest.raises(InputError):
        as_distribution([0.5, 0.6])
    with pytest.raises(InputError):
        as_distribution([0.5, np.nan])
    assert as_distribution([1e-200, 1 - 1e-200])[0] == 1e-200


def test_free_energy_uniform():
    ps = PotentialSystem([0.0, 0.0], 1.0)
    assert free_energy(ps, [0.5, 0.5]) == pytest.approx(-math.log(2), rel=1e-15)


def test_gibbs_examples():
    assert np.allclose(gibbs(np.zeros(4), 0.3), 0.25)
    assert np.allclose(gibbs([0.0, math.log(2)], 1.0), [2 / 3, 1 / 3], rtol=1e-15)


@given(systems(), st.floats(-50, 50))
def test_gibbs_shift_invariant(sys, c):
    _, psi, beta, _ = sys
    assert np.allclose(gibbs(psi + c, beta), gibbs(psi, beta), rtol=1e-12)


@given(systems())
def test_gibbs_minimizes_free_energy(sys):
    _, psi, beta, rho = sys
    ps = PotentialSystem(psi, beta)
    F_star = free_energy(ps, ps.gibbs)
    assert free_energy(ps, rho) >= F_star - 1e-12
    excess = free_energy(ps, rho) - F_star
    assert excess == pytest.approx(beta * relative_entropy(rho, ps.gibbs), rel=1e-10, abs=1e-14)


def test_free_energy_minimum_on_many_points(rng):
    ps = PotentialSystem(rng.uniform(-1, 1, 5), 0.7)
    F_star = free_energy(ps, ps.gibbs)
    pts = rng.dirichlet(np.ones(5), size=10_000)
    assert min(free_energy(ps, p) for p in pts) >= F_star - 1e-12


def test_discrepancy_examples():
    assert weighted_l2_sq([0.9, 0.1], [0.5, 0.5]) == pytest.approx(0.64, rel=1e-14)
    assert relative_entropy([0.9, 0.1], [0.5, 0.5]) == pytest.approx(
        0.9 * math.log(1.8) + 0.1 * math.log(0.2), rel=1e-14)
    assert weighted_l2_sq([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert relative_entropy([0.3, 0.7], [0.3, 0.7]) == 0.0


@given(seeds, st.integers(2, 8))
def test_discrepancy_inequalities(seed, n):
    rng = np.random.default_rng(seed)
    nu, mu = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    H = relative_entropy(nu, mu)
    assert H >= 0.5 * np.abs(nu - mu).sum() ** 2 - 1e-15  # Pinsker
    assert weighted_l2_sq(nu, mu) >= euclidean_sq(nu, mu) / mu.max() - 1e-15
    direct = math.fsum(nu * np.log(nu / mu))
    assert H == pytest.approx(direct, rel=1e-9, abs=1e-15)
    assert H > 0 and weighted_l2_sq(nu, mu) > 0


def test_relative_entropy_keeps_precision_near_equilibrium():
    mu = np.array([0.25, 0.75])
    d = 1e-9
    nu = mu + np.array([d, -d])
    # second-order expansion: H ~ d^2/2 (1/mu_0 + 1/mu_1)
    assert relative_entropy(nu, mu) == pytest.approx(0.5 * d * d * (4 + 4 / 3), rel=1e-6)


def test_xlogx_excess_branches_agree():
    x = np.array([0.98, 0.99, 0.9900001, 1.0099999, 1.01, 1.02])
    ref = np.array([math.fsum([v * math.log(v), -v, 1.0]) for v in x])
    assert np.allclose(xlogx_excess(x), ref, rtol=1e-9)
    assert xlogx_excess(np.array([1e-300]))[0] == pytest.approx(1.0)


def test_dirichlet_form_example():
    g = Graph.complete(2)
    assert dirichlet_form(g, [0.5, 0.5], [math.e, 1.0]) == pytest.approx(math.e - 1, rel=1e-14)
    assert dirichlet_form(g, [0.5, 0.5], [2.0, 2.0]) == 0.0


@given(graphs(), seeds)
def test_dirichlet_form_positive_and_label_invariant(g, seed):
    rng = np.random.default_rng(seed)
    ref = rng.dirichlet(np.ones(g.n))
    f = np.exp(rng.normal(size=g.n))
    E = dirichlet_form(g, ref, f)
    assert E > 0
    perm = rng.permutation(g.n)
    inv = np.argsort(perm)
    h = g.relabel(perm)
    # vertex v of g becomes perm[v] in h
    assert dirichlet_form(h, ref[inv], f[inv]) == pytest.approx(E, rel=1e-12)


def test_entropy_functional_examples():
    assert entropy_functional([0.5, 0.5], [1.8, 0.2]) == pytest.approx(
        relative_entropy([0.9, 0.1], [0.5, 0.5]), rel=1e-14)
    assert entropy_functional([0.2, 0.8], [3.0, 3.0]) == pytest.approx(0.0, abs=1e-15)


@given(seeds, st.floats(1e-3, 1e3))
def test_entropy_functional_homogeneous(seed, c):
    rng = np.random.default_rng(seed)
    ref = rng.dirichlet(np.ones(4))
    f = np.exp(rng.normal(size=4))
    assert entropy_functional(ref, c * f) == pytest.approx(c * entropy_functional(ref, f), rel=1e-12)


def test_potential_system_from_reference():
    mu = np.array([0.2, 0.3, 0.5])
    ps = PotentialSystem.from_reference(mu)
    assert np.allclose(ps.gibbs, mu, rtol=1e-14)
    nu = np.array([0.4, 0.4, 0.2])
    assert free_energy(ps, nu) == pytest.approx(relative_entropy(nu, mu), rel=1e-12)

import io
import math

import numpy as np
import pytest
from hypothesis import given, settings

from graphfpe.dynamics import (FpeVariant, IntegratorConfig, integrate, make_rhs, rhs_fpe1, rhs_fpe2,
                               stationarity_residual)
from graphfpe.energy import PotentialSystem
from graphfpe.errors import InputError
from graphfpe.graph_core import Graph

from .strategies import systems

K2 = Graph.complete(2)
FLAT = PotentialSystem([0.0, 0.0], 1.0)


def test_variant_parsing():
    assert FpeVariant.parse("I") is FpeVariant.EQUATION_I
    assert FpeVariant.parse(2) is FpeVariant.EQUATION_II
    with pytest.raises(InputError):
        FpeVariant.parse("3")


def test_rhs_examples_on_k2():
    assert np.allclose(rhs_fpe1(K2, FLAT, [0.9, 0.1]), [-0.8, 0.8], rtol=1e-14)
    # Psi_bar_0 > Psi_bar_1, so mass leaves vertex 0 at rate log(9) * 0.9
    assert np.allclose(rhs_fpe2(K2, FLAT, [0.9, 0.1]), [-0.9 * math.log(9), 0.9 * math.log(9)], rtol=1e-14)


def _scalar_fpe1_k2(psi, rho):
    # d rho_0/dt for two vertices, written out by hand
    r0, r1 = rho
    if psi[1] > psi[0]:
        return ((psi[1] - psi[0]) + math.log(r1 / r0)) * r1
    return ((psi[1] - psi[0]) + math.log(r1 / r0)) * r0


@pytest.mark.parametrize("shift", [+0.05, -0.05])
def test_fpe1_k2_unequal_potentials_flow_back(shift):
    ps = PotentialSystem([0.0, 1.0], 1.0)
    rho = ps.gibbs + np.array([shift, -shift])
    d0 = rhs_fpe1(K2, ps, rho)[0]
    assert d0 == pytest.approx(_scalar_fpe1_k2(ps.psi, rho), rel=1e-12)
    assert np.sign(d0) == -np.sign(shift)


@given(systems(n_max=7))
def test_rhs_conserves_mass_and_vanishes_at_gibbs(sys):
    g, psi, beta, rho = sys
    ps = PotentialSystem(psi, beta)
    for variant in (1, 2):
        f = make_rhs(g, ps, variant)
        d = f(rho)
        assert abs(math.fsum(d)) <= 1e-14 * max(1.0, np.abs(d).sum())
        assert stationarity_residual(g, ps, variant, ps.gibbs) < 1e-12
        assert stationarity_residual(g, ps, variant, rho) > 0


def test_mass_conservation_many_random_systems(rng):
    for _ in range(10_000 // 50):
        n = int(rng.integers(2, 7))
        g = Graph.erdos_renyi(n, 0.7, rng) if n > 2 else K2
        for _ in range(50 // 5):
            ps = PotentialSystem(rng.uniform(-1, 1, n), float(rng.choice([0.5, 1, 2])))
            rho = rng.dirichlet(np.ones(n))
            for variant in (1, 2):
                assert abs(math.fsum(make_rhs(g, ps, variant)(rho))) < 1e-14


def test_fpe2_continuous_across_ties(rng):
    g = Graph.path(3)
    ps = PotentialSystem(rng.uniform(-1, 1, 3), 1.0)
    # equal Psi_bar on edge (0, 1): rho_0 / rho*_0 == rho_1 / rho*_1
    rho = ps.gibbs * np.array([1.2, 1.2, 0.0])
    rho[2] = 1 - rho[0] - rho[1]
    f = make_rhs(g, ps, 2)
    for sign in (+1, -1):
        bump = np.array([sign * 1e-9, -sign * 1e-9, 0.0])
        assert np.max(np.abs(f(rho + bump) - f(rho))) < 1e-8


def test_closed_form_solution_k2():
    times = (0.1, 0.5, 1.0, 2.0)
    tr = integrate(K2, FLAT, 1, [0.9, 0.1], IntegratorConfig(t_end=2.0, sample_times=times))
    for t in times:
        exact = 0.5 + 0.4 * math.exp(-2 * t)
        assert tr.state_at(t)[0] == pytest.approx(exact, rel=1e-8)
    assert tr.state_at(1.0)[0] == pytest.approx(0.554134, abs=1e-6)


def test_start_at_equilibrium_stays_put():
    ps = PotentialSystem([0.3, -0.2, 0.5], 0.5)
    g = Graph.path(3)
    for variant in (1, 2):
        tr = integrate(g, ps, variant, ps.gibbs, IntegratorConfig(t_end=5.0))
        assert np.max(np.abs(tr.states - ps.gibbs)) <= 1e-12


def test_both_variants_reach_the_same_equilibrium(rng):
    # equation I moves mass with the smaller Gibbs weight of each edge and can
    # relax several times slower than equation II, hence the longer horizon
    g = Graph.path(3)
    ps = PotentialSystem(rng.uniform(-1, 1, 3), 1.0)
    rho0 = rng.dirichlet(np.ones(3))
    ends = [integrate(g, ps, v, rho0, IntegratorConfig(t_end=30.0)).states[-1] for v in (1, 2)]
    for end in ends:
        assert np.max(np.abs(end - ps.gibbs)) < 1e-6


@settings(max_examples=20)
@given(systems(n_max=5))
def test_matches_reference_solver(sys):
    from scipy.integrate import solve_ivp

    g, psi, beta, rho0 = sys
    ps = PotentialSystem(psi, beta)
    for variant in (1, 2):
        f = make_rhs(g, ps, variant)
        ref = solve_ivp(lambda t, y: f(y), (0.0, 2.0), rho0, method="DOP853", rtol=1e-12, atol=1e-14)
        # equation II has kinks where two Psi_bar cross, so its global error
        # sits a little above the per-step tolerance
        tr = integrate(g, ps, variant, rho0, IntegratorConfig(t_end=2.0))
        assert np.max(np.abs(tr.states[-1] - ref.y[:, -1])) < 1e-7
        tight = integrate(g, ps, variant, rho0, IntegratorConfig(t_end=2.0, rel_tol=1e-11))
        assert np.max(np.abs(tight.states[-1] - ref.y[:, -1])) < 1e-9


@settings(max_examples=25)
@given(systems(n_max=5))
def test_trajectory_invariants(sys):
    g, psi, beta, rho0 = sys
    ps = PotentialSystem(psi, beta)
    cfg = IntegratorConfig(t_end=3.0)
    for variant in (1, 2):
        tr = integrate(g, ps, variant, rho0, cfg)
        assert np.max(np.abs(tr.states.sum(axis=1) - 1)) <= 1e-10
        assert tr.states.min() > cfg.floor
        F = tr.free_energy
        assert np.all(F[1:] <= F[:-1] + 10 * cfg.rel_tol * np.abs(F[:-1]))
        assert np.all(np.diff(tr.times) > 0)


def test_residual_decreases_along_tail():
    tr = integrate(K2, FLAT, 1, [0.9, 0.1], IntegratorConfig(t_end=5.0))
    res = [stationarity_residual(K2, FLAT, 1, s) for s in tr.states[len(tr) // 2:]]
    assert all(b <= a for a, b in zip(res, res[1:]))


def test_csv_output():
    tr = integrate(K2, FLAT, 2, [0.9, 0.1], IntegratorConfig(t_end=0.5, sample_times=(0.25,)))
    buf = io.StringIO()
    tr.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,rho_0,rho_1,F,l2sq,relent"
    assert len(lines) == len(tr) + 1
    row = [float(v) for v in lines[1].split(",")]
    assert row[:3] == [0.0, 0.9, 0.1]
    assert float(lines[-1].split(",")[0]) == 0.5


def test_integrator_config_validation():
    with pytest.raises(InputError):
        IntegratorConfig(rel_tol=0)
    with pytest.raises(InputError):
        IntegratorConfig(t_end=-1)
    with pytest.raises(InputError):
        integrate(K2, FLAT, 1, [0.2, 0.3, 0.5])


def test_deviation_diagnostics_track_exact_decay():
    # the discrepancy decays far below the resolution of rho itself
    tr = integrate(K2, FLAT, 1, [0.9, 0.1], IntegratorConfig(t_end=10.0))
    exact = 0.64 * math.exp(-40.0)
    assert tr.l2sq[-1] == pytest.approx(exact, rel=1e-6)

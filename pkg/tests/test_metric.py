import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphfpe.energy import relative_entropy
from graphfpe.errors import InputError
from graphfpe.graph_core import Graph, batched_weighted_laplacian
from graphfpe.metric import (DiscreteCurve, LowerBoundMetric, PNormMetric, PotentialMetric, _energy_and_grad, as_tangent,
                             check_talagrand_global, check_talagrand_local, curve_length, geodesic_distance,
                             identify, invert_identification, log_mean, metric_form, metric_weights,
                             talagrand_global_constant)

from .strategies import seeds, systems

K2 = Graph.complete(2)
ORACLE = 2 * (math.sqrt(0.9) - math.sqrt(0.5))


def kinds(g, psi, beta):
    return [LowerBoundMetric(g), PotentialMetric.constant(g, psi), PotentialMetric.free_energy_potential(g, psi, beta)]


def test_weight_examples():
    assert metric_weights(LowerBoundMetric(K2), [0.9, 0.1])[0] == 0.9
    flat = PotentialMetric.constant(K2, [0.0, 0.0])
    assert metric_weights(flat, [0.5, 0.5])[0] == 0.5
    assert metric_weights(flat, [0.9, 0.1])[0] == pytest.approx(0.8 / math.log(9), rel=1e-14)
    tilted = PotentialMetric.constant(K2, [1.0, 0.0])
    assert metric_weights(tilted, [0.3, 0.7])[0] == 0.3


@given(st.floats(1e-12, 1.0), st.floats(1e-12, 1.0))
def test_log_mean_between_min_and_max(a, b):
    e = float(log_mean(a, b))
    assert min(a, b) * (1 - 1e-12) <= e <= max(a, b) * (1 + 1e-12)


def test_log_mean_near_equal():
    a = 0.3
    for d in (1e-6, 1e-10, 1e-14):
        assert float(log_mean(a + d, a)) == pytest.approx(a + d / 2, rel=1e-12)


@given(systems())
def test_lower_bound_weights_dominate(sys):
    g, psi, beta, rho = sys
    wm = metric_weights(LowerBoundMetric(g), rho)
    for kind in kinds(g, psi, beta)[1:]:
        assert np.all(metric_weights(kind, rho) <= wm * (1 + 1e-12))


def test_identification_examples():
    lb = LowerBoundMetric(K2)
    rho = [0.9, 0.1]
    assert np.allclose(identify(lb, rho, [1.0, 0.0]), [0.9, -0.9])
    assert np.allclose(invert_identification(lb, rho, [0.9, -0.9]), [0.5, -0.5])
    assert np.allclose(identify(lb, rho, [3.0, 3.0]), 0.0)
    assert np.allclose(invert_identification(lb, rho, [0.0, 0.0]), 0.0)
    s = 0.37
    assert metric_form(lb, rho, [s, -s], [s, -s]) == pytest.approx(s * s / 0.9, rel=1e-13)


def test_tangent_must_sum_to_zero():
    with pytest.raises(InputError):
        as_tangent([1.0, 0.0])
    with pytest.raises(InputError):
        invert_identification(LowerBoundMetric(K2), [0.5, 0.5], [0.1, 0.0])


@given(systems(n_max=7), seeds)
def test_identification_round_trips(sys, seed):
    g, psi, beta, rho = sys
    rng = np.random.default_rng(seed)
    p0 = rng.normal(size=g.n)
    sigma = rng.normal(size=g.n)
    sigma -= sigma.mean()
    for kind in kinds(g, psi, beta):
        assert np.allclose(identify(kind, rho, p0), identify(kind, rho, p0 + rng.normal()), atol=1e-12)
        back = invert_identification(kind, rho, identify(kind, rho, p0))
        assert np.max(np.abs(back - (p0 - p0.mean()))) <= 1e-10 * max(1, np.abs(p0).max())
        assert np.max(np.abs(identify(kind, rho, invert_identification(kind, rho, sigma)) - sigma)) <= 1e-10


@given(systems(n_max=7), seeds)
def test_metric_form_symmetric_and_sandwiched(sys, seed):
    g, psi, beta, rho = sys
    rng = np.random.default_rng(seed)
    s1, s2 = rng.normal(size=(2, g.n))
    s1 -= s1.mean()
    s2 -= s2.mean()
    for kind in kinds(g, psi, beta):
        assert abs(metric_form(kind, rho, s1, s2) - metric_form(kind, rho, s2, s1)) < 1e-12 * max(
            1, abs(metric_form(kind, rho, s1, s2)))
        ev = np.linalg.eigvalsh(batched_weighted_laplacian(g, metric_weights(kind, rho)))
        gss = metric_form(kind, rho, s1, s1)
        nrm = float(s1 @ s1)
        assert gss > 0
        assert nrm / ev[-1] * (1 - 1e-9) <= gss <= nrm / ev[1] * (1 + 1e-9)


def test_curve_length_k2_quadrature():
    curve = DiscreteCurve.straight([0.5, 0.5], [0.9, 0.1], 2048)
    assert curve_length(LowerBoundMetric(K2), curve) == pytest.approx(ORACLE, abs=1e-6)
    const = DiscreteCurve(np.tile([0.3, 0.7], (5, 1)))
    assert curve_length(LowerBoundMetric(K2), const) == 0.0


def test_curve_length_reparametrization_invariant():
    s = np.linspace(0, 1, 2049) ** 2
    x = 0.5 + 0.4 * s
    curve = DiscreteCurve(np.stack([x, 1 - x], axis=1))
    assert curve_length(LowerBoundMetric(K2), curve) == pytest.approx(ORACLE, abs=1e-6)


def test_geodesic_k2_oracle():
    res = geodesic_distance(LowerBoundMetric(K2), [0.5, 0.5], [0.9, 0.1], 2048)
    assert res.distance == pytest.approx(ORACLE, abs=1e-3)
    assert res.distance <= res.chord_upper
    assert set(res.to_json()) >= {"kind", "rho1", "rho2", "K", "distance_upper", "chord_upper", "iterations",
                                  "converged"}


def test_geodesic_identical_endpoints():
    res = geodesic_distance(LowerBoundMetric(Graph.cycle(4)), [0.1, 0.2, 0.3, 0.4], [0.1, 0.2, 0.3, 0.4])
    assert res.distance == 0.0


def _branches(kind, knots):
    mid = 0.5 * (knots[1:] + knots[:-1])
    ea = kind.graph.edge_array
    if isinstance(kind, PotentialMetric):
        phi = np.asarray(kind.phi(mid))
        return np.sign(phi[:, ea[:, 0]] - phi[:, ea[:, 1]])
    return np.sign(mid[:, ea[:, 0]] - mid[:, ea[:, 1]])


@given(systems(n_max=5), seeds)
def test_energy_gradient_matches_finite_differences(sys, seed):
    g, psi, beta, rho = sys
    rng = np.random.default_rng(seed)
    other = rng.dirichlet(np.ones(g.n)) * 0.9 + 0.1 / g.n
    knots = DiscreteCurve.straight(rho, other, 6).knots.copy()
    d = rng.normal(size=knots.shape)
    d[0] = d[-1] = 0
    d -= d.mean(axis=1, keepdims=True)
    h = 1e-7 * min(1.0, knots.min())
    metrics = [LowerBoundMetric(g), PNormMetric(g, 8.0), PotentialMetric.constant(g, np.zeros(g.n)),
               PotentialMetric.constant(g, psi), PotentialMetric.free_energy_potential(g, psi, beta)]
    for kind in metrics:
        # the upwind rules are only piecewise smooth; compare inside one branch
        if not np.array_equal(_branches(kind, knots + h * d), _branches(kind, knots - h * d)):
            continue
        E, grad = _energy_and_grad(kind, knots)
        fd = (_energy_and_grad(kind, knots + h * d)[0] - _energy_and_grad(kind, knots - h * d)[0]) / (2 * h)
        assert fd == pytest.approx(float(np.sum(grad * d)), rel=1e-4, abs=1e-8)


@settings(max_examples=15)
@given(systems(n_max=5), seeds)
def test_metric_ordering_and_triangle(sys, seed):
    g, psi, beta, a = sys
    rng = np.random.default_rng(seed)
    b, c = rng.dirichlet(np.ones(g.n), size=2) * 0.95 + 0.05 / g.n
    dm = geodesic_distance(LowerBoundMetric(g), a, b, 24).distance_upper
    for kind in kinds(g, psi, beta)[1:]:
        assert dm <= geodesic_distance(kind, a, b, 24).distance_upper + 2e-3
    lb = LowerBoundMetric(g)
    ab, bc, ac = (geodesic_distance(lb, x, y, 24).distance_upper for x, y in ((a, b), (b, c), (a, c)))
    assert ac <= ab + bc + 6e-3


def test_global_constant_k2():
    assert talagrand_global_constant(K2, [0.5, 0.5]) == pytest.approx(3 * math.log(72), rel=1e-13)


def test_global_constant_grows_as_mass_thins():
    g = Graph.path(3)
    vals = [talagrand_global_constant(g, [m, (1 - m) / 2, (1 - m) / 2]) for m in (0.3, 0.1, 0.01)]
    assert vals[0] < vals[1] < vals[2]


def test_global_constant_label_invariant(rng):
    g = Graph.erdos_renyi(6, 0.5, rng)
    mu = rng.dirichlet(np.ones(6))
    perm = rng.permutation(6)
    inv = np.argsort(perm)
    assert talagrand_global_constant(g.relabel(perm), mu[inv]) == pytest.approx(
        talagrand_global_constant(g, mu), rel=1e-12)


def test_global_worked_example():
    rep = check_talagrand_global(K2, [0.5, 0.5], [0.9, 0.1], segments=256)
    assert rep.holds
    assert rep.lhs == pytest.approx(0.233437, abs=1e-3)
    assert rep.rhs == pytest.approx(4.7224, abs=1e-3)
    trivial = check_talagrand_global(K2, [0.3, 0.7], [0.3, 0.7])
    assert trivial.holds and trivial.lhs == 0.0 == trivial.rhs


def test_local_k2_grid():
    mu = [0.5, 0.5]
    for x in np.linspace(0.2, 0.8, 7):
        rep = check_talagrand_local(K2, mu, [x, 1 - x], margin=0.2)
        assert rep.holds
        assert rep.extra["resolution"] == 512
    assert check_talagrand_local(K2, mu, mu, margin=0.2).lhs == 0.0


def test_local_rejects_nu_outside_box():
    with pytest.raises(InputError):
        check_talagrand_local(K2, [0.5, 0.5], [0.95, 0.05], margin=0.1)


def test_local_constant_grows_toward_boundary():
    nu = [0.55, 0.45]
    ks = [check_talagrand_local(K2, [0.5, 0.5], nu, margin=m, resolution=64).constant
          for m in (0.3, 0.1, 0.05, 0.01)]
    assert all(b >= a for a, b in zip(ks, ks[1:]))
    assert ks[-1] > ks[1] > ks[0] * (1 - 1e-12)


def test_local_uses_relative_entropy():
    rep = check_talagrand_local(K2, [0.4, 0.6], [0.5, 0.5], margin=0.25, resolution=64)
    assert rep.rhs == pytest.approx(rep.constant * relative_entropy([0.5, 0.5], [0.4, 0.6]), rel=1e-12)

"""Discrete Wasserstein-type metrics on the open simplex.

A metric is fixed by a rule ``rho -> w(rho)`` of positive edge weights. A
tangent vector ``sigma`` (zero sum) is identified with the potential class
``[p]`` solving ``sigma = p L(G, w(rho))`` and the inner product is
``g(sigma1, sigma2) = p1 L p2^T``. Two families are provided:

* :class:`PotentialMetric` -- upwind weights driven by a potential rule
  ``Phi(rho)``: ``rho_i`` if ``Phi_i > Phi_j``, ``rho_j`` if ``Phi_i < Phi_j``
  and the logarithmic mean on ties.
* :class:`LowerBoundMetric` -- weights ``max(rho_i, rho_j)``. These dominate
  every potential-metric weight, so its distance is the smallest.

Geodesic distances are upper bounds obtained by minimizing the discrete
energy of a knot curve; knots are parametrized by a softmax so they remain
strictly inside the simplex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .energy import PotentialSystem, as_distribution, relative_entropy
from .errors import IdentificationError, InputError, NumericalError
from .graph_core import Graph, batched_weighted_laplacian, spectral_gap
from .rates import epsilon_ladder, rate_constant_fpe2

TIE_TOL = 1e-12
TANGENT_TOL = 1e-12
KNOT_MARGIN = 1e-8


def log_mean(a, b):
    """Logarithmic mean ``(a - b) / (log a - log b)``, equal to ``a`` when ``a == b``."""
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    d = a - b
    near = np.abs(d) <= 1e-12 * np.maximum(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = d / np.log1p(d / b)
    return np.where(near, 0.5 * (a + b), out)


def _log_mean_partials(a, b):
    """``(de/da, de/db)``; both tend to 1/2 at ``a == b``."""
    d = a - b
    near = np.abs(d) <= 1e-8 * np.maximum(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        L = np.log1p(d / b)
        da = (L - d / a) / (L * L)
        db = (d / b - L) / (L * L)
    return np.where(near, 0.5, da), np.where(near, 0.5, db)


class MetricKind:
    """Base class: subclasses provide batched edge weights and their partials."""

    name = "metric"
    graph: Graph

    def edge_weights(self, rho):
        raise NotImplementedError

    def edge_weight_partials(self, rho):
        """Return ``(dw/drho_i, dw/drho_j)`` for each edge ``(i, j)``, batched."""
        raise NotImplementedError

    def continuation(self):
        """Smoother metrics solved in order to warm-start the geodesic search."""
        return []


@dataclass(frozen=True, eq=False)
class LowerBoundMetric(MetricKind):
    graph: Graph
    name: str = "d_m"

    def edge_weights(self, rho):
        rho = np.asarray(rho, dtype=float)
        ea = self.graph.edge_array
        return np.maximum(rho[..., ea[:, 0]], rho[..., ea[:, 1]])

    def edge_weight_partials(self, rho):
        rho = np.asarray(rho, dtype=float)
        ea = self.graph.edge_array
        left = rho[..., ea[:, 0]] >= rho[..., ea[:, 1]]
        return left.astype(float), (~left).astype(float)

    def continuation(self):
        # the max rule has kinks where rho_i = rho_j that stall quasi-Newton
        # descent; smooth p-norm weights approach it from below
        return [PNormMetric(self.graph, p) for p in (2.0, 8.0, 32.0)]


@dataclass(frozen=True, eq=False)
class PNormMetric(MetricKind):
    """Weights ``(rho_i^p + rho_j^p)^(1/p)``: a smooth stand-in for the max rule,
    used only to warm-start geodesic searches for :class:`LowerBoundMetric`."""

    graph: Graph
    p: float
    name: str = "d_pnorm"

    def _parts(self, rho):
        rho = np.asarray(rho, dtype=float)
        ea = self.graph.edge_array
        a, b = rho[..., ea[:, 0]], rho[..., ea[:, 1]]
        top = np.maximum(a, b)
        ra, rb = a / top, b / top
        return top, ra, rb, ra**self.p + rb**self.p

    def edge_weights(self, rho):
        top, _, _, S = self._parts(rho)
        return top * S ** (1.0 / self.p)

    def edge_weight_partials(self, rho):
        _, ra, rb, S = self._parts(rho)
        f = S ** (1.0 / self.p - 1.0)
        return f * ra ** (self.p - 1.0), f * rb ** (self.p - 1.0)


@dataclass(frozen=True, eq=False)
class PotentialMetric(MetricKind):
    graph: Graph
    phi: Callable[[np.ndarray], np.ndarray]
    name: str = "d_phi"

    @classmethod
    def constant(cls, graph, psi, name="d_psi"):
        """Metric of equation I: ``Phi(rho) = psi`` for every ``rho``."""
        psi = np.array(psi, dtype=float)
        if psi.size != graph.n:
            raise InputError("potential length does not match graph")
        psi.setflags(write=False)
        return cls(graph, lambda rho: np.broadcast_to(psi, np.shape(rho)), name)

    @classmethod
    def free_energy_potential(cls, graph, psi, beta, name="d_psibar"):
        """Metric of equation II: ``Phi(rho) = psi + beta log rho``."""
        psi = np.array(psi, dtype=float)
        if psi.size != graph.n:
            raise InputError("potential length does not match graph")
        if not beta > 0:
            raise InputError("beta must be positive")
        psi.setflags(write=False)
        return cls(graph, lambda rho: psi + beta * np.log(rho), name)

    def _branches(self, rho):
        rho = np.asarray(rho, dtype=float)
        ea = self.graph.edge_array
        phi = np.asarray(self.phi(rho), dtype=float)
        dphi = phi[..., ea[:, 0]] - phi[..., ea[:, 1]]
        tie = np.abs(dphi) <= TIE_TOL
        return rho[..., ea[:, 0]], rho[..., ea[:, 1]], dphi > 0, tie

    def edge_weights(self, rho):
        ri, rj, i_higher, tie = self._branches(rho)
        return np.where(tie, log_mean(ri, rj), np.where(i_higher, ri, rj))

    def edge_weight_partials(self, rho):
        ri, rj, i_higher, tie = self._branches(rho)
        li, lj = _log_mean_partials(ri, rj)
        di = np.where(tie, li, i_higher.astype(float))
        dj = np.where(tie, lj, (~i_higher).astype(float))
        return di, dj


def metric_weights(kind: MetricKind, rho) -> np.ndarray:
    """Per-edge weights ``w(rho)`` aligned with ``kind.graph.edges``."""
    return kind.edge_weights(as_distribution(rho))


def as_tangent(sigma, n=None) -> np.ndarray:
    s = np.array(sigma, dtype=float).reshape(-1)
    if n is not None and s.size != n:
        raise InputError(f"tangent vector has {s.size} entries, expected {n}")
    if abs(math.fsum(s)) > TANGENT_TOL * max(1.0, float(np.abs(s).sum())):
        raise InputError(f"tangent vector must sum to zero, sums to {math.fsum(s)!r}")
    return s


def _laplacian(kind, rho):
    return batched_weighted_laplacian(kind.graph, kind.edge_weights(rho))


def _gauge_solve(L, sigma):
    """Solve ``L p = sigma`` with ``sum p = 0`` via ``(L + 11^T/n) p = sigma``."""
    n = L.shape[-1]
    A = L + 1.0 / n
    return np.linalg.solve(A, sigma[..., None])[..., 0]


def identify(kind: MetricKind, rho, p) -> np.ndarray:
    """Tangent vector ``sigma = p L(G, w(rho))``."""
    L = _laplacian(kind, as_distribution(rho))
    return np.asarray(p, dtype=float) @ L


def invert_identification(kind: MetricKind, rho, sigma) -> np.ndarray:
    """Zero-mean representative ``p`` of the class with ``p L(G, w(rho)) = sigma``."""
    rho = as_distribution(rho)
    sigma = as_tangent(sigma, kind.graph.n)
    L = _laplacian(kind, rho)
    try:
        p = _gauge_solve(L, sigma)
    except np.linalg.LinAlgError as exc:
        raise IdentificationError(str(exc)) from exc
    resid = float(np.max(np.abs(p @ L - sigma)))
    if not resid <= 1e-9:
        raise IdentificationError(f"identification residual {resid:.3e} exceeds 1e-9")
    return p


def metric_form(kind: MetricKind, rho, sigma1, sigma2) -> float:
    """Inner product ``g_rho(sigma1, sigma2) = p1 L p2^T``."""
    rho = as_distribution(rho)
    p1 = invert_identification(kind, rho, sigma1)
    p2 = invert_identification(kind, rho, sigma2)
    return float(p1 @ _laplacian(kind, rho) @ p2)


@dataclass(frozen=True, eq=False)
class DiscreteCurve:
    knots: np.ndarray

    def __post_init__(self):
        k = np.array(self.knots, dtype=float)
        if k.ndim != 2 or k.shape[0] < 2:
            raise InputError("a curve needs at least two knots")
        for row in k:
            as_distribution(row)
        k.setflags(write=False)
        object.__setattr__(self, "knots", k)

    @property
    def segments(self) -> int:
        return self.knots.shape[0] - 1

    @classmethod
    def straight(cls, rho1, rho2, segments):
        s = np.linspace(0.0, 1.0, segments + 1)[:, None]
        r1, r2 = as_distribution(rho1), as_distribution(rho2)
        knots = (1 - s) * r1 + s * r2
        knots[0], knots[-1] = r1, r2
        return cls(knots)


def _segment_norms_sq(kind, knots):
    delta = np.diff(knots, axis=0)
    mid = 0.5 * (knots[1:] + knots[:-1])
    L = _laplacian(kind, mid)
    p = _gauge_solve(L, delta)
    return np.einsum("kn,kn->k", p, delta), p, delta, mid


def curve_length(kind: MetricKind, curve: DiscreteCurve) -> float:
    """``sum_k sqrt(g_{mid_k}(Delta_k, Delta_k))`` with ``mid_k`` the knot average."""
    g, *_ = _segment_norms_sq(kind, curve.knots)
    return math.fsum(np.sqrt(np.maximum(g, 0.0)))


def _energy_and_grad(kind, knots):
    """Discrete energy ``K sum_k g(Delta_k, Delta_k)`` and its gradient in the knots."""
    K = knots.shape[0] - 1
    g, p, delta, mid = _segment_norms_sq(kind, knots)
    ea = kind.graph.edge_array
    dw_i, dw_j = kind.edge_weight_partials(mid)
    dp2 = (p[:, ea[:, 0]] - p[:, ea[:, 1]]) ** 2
    eye = np.eye(knots.shape[1])
    dmid = -(dp2 * dw_i) @ eye[ea[:, 0]] - (dp2 * dw_j) @ eye[ea[:, 1]]
    grad = np.zeros_like(knots)
    grad[:-1] += -2.0 * p + 0.5 * dmid
    grad[1:] += 2.0 * p + 0.5 * dmid
    return K * float(np.sum(g)), K * grad


@dataclass(frozen=True)
class GeodesicBudget:
    max_iter: int = 500
    gtol: float = 1e-10


@dataclass(frozen=True, eq=False)
class GeodesicResult:
    kind: str
    rho1: np.ndarray
    rho2: np.ndarray
    segments: int
    distance: float
    distance_upper: float
    chord_upper: float
    curve: DiscreteCurve = field(repr=False)
    iterations: int
    converged: bool
    margin_active: bool

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "rho1": [float(v) for v in self.rho1],
            "rho2": [float(v) for v in self.rho2],
            "K": self.segments,
            "distance": self.distance,
            "distance_upper": self.distance_upper,
            "chord_upper": self.chord_upper,
            "iterations": self.iterations,
            "converged": self.converged,
            "margin_active": self.margin_active,
        }


def inverse_gap_max(kind: MetricKind, points) -> float:
    """``max 1/lambda2(L(G, w(rho)))`` over a stack of points."""
    ev = np.linalg.eigvalsh(_laplacian(kind, np.asarray(points, dtype=float)))
    return float(np.max(1.0 / ev[..., 1]))


def inverse_top_min(kind: MetricKind, points) -> float:
    """``min 1/lambda_N(L(G, w(rho)))`` over a stack of points."""
    ev = np.linalg.eigvalsh(_laplacian(kind, np.asarray(points, dtype=float)))
    return float(np.min(1.0 / ev[..., -1]))


def _minimize_energy(kind, r1, r2, start: DiscreteCurve, budget: GeodesicBudget):
    """L-BFGS on the discrete energy over softmax-parametrized interior knots.

    Returns ``(curve or None, iterations, converged)``.
    """
    inner_shape = (start.segments - 1, kind.graph.n)

    def unpack(z):
        zz = z.reshape(inner_shape)
        x = np.exp(zz - zz.max(axis=1, keepdims=True))
        return x / x.sum(axis=1, keepdims=True)

    def fun(z):
        x = unpack(z)
        E, grad = _energy_and_grad(kind, np.vstack([r1, x, r2]))
        gx = grad[1:-1]
        return E, (x * (gx - np.sum(x * gx, axis=1, keepdims=True))).ravel()

    try:
        res = minimize(fun, np.log(start.knots[1:-1]).ravel(), jac=True, method="L-BFGS-B",
                       options={"maxiter": budget.max_iter, "gtol": budget.gtol, "ftol": 1e-15})
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"geodesic solve failed: {exc}") from exc
    x = unpack(res.x)
    curve = None
    if np.all(np.isfinite(x)) and np.all(x > 0):
        curve = DiscreteCurve(np.vstack([r1, x, r2]))
    return curve, int(res.nit), bool(res.success)


def geodesic_distance(kind: MetricKind, rho1, rho2, segments: int = 64,
                      budget: GeodesicBudget | None = None, initial: DiscreteCurve | None = None) -> GeodesicResult:
    """Upper bounds on the geodesic distance between ``rho1`` and ``rho2``.

    ``distance_upper`` is the length of the shortest discrete curve seen: the
    straight chord, ``initial`` if given, and the energy-minimized curves. If
    ``kind`` offers smoother continuation metrics, they are minimized in turn,
    each warm-starting the next, before the final search; every candidate is
    measured in ``kind`` itself. ``chord_upper`` is ``sqrt(C1) |rho1 - rho2|``
    with ``C1`` the largest ``1/lambda2`` along the chord knots. ``distance``
    is the smaller of the two bounds.
    """
    budget = budget or GeodesicBudget()
    r1, r2 = as_distribution(rho1), as_distribution(rho2)
    if r1.size != kind.graph.n or r2.size != kind.graph.n:
        raise InputError("endpoint dimension does not match graph")
    if segments < 1:
        raise InputError("need at least one segment")
    if initial is not None and initial.segments != segments:
        raise InputError(f"initial curve has {initial.segments} segments, expected {segments}")
    chord = DiscreteCurve.straight(r1, r2, segments)
    euclid = float(np.linalg.norm(r1 - r2))
    if euclid == 0.0:
        return GeodesicResult(kind.name, r1, r2, segments, 0.0, 0.0, 0.0, chord, 0, True, False)
    chord_upper = math.sqrt(inverse_gap_max(kind, chord.knots)) * euclid
    best = [chord, curve_length(kind, chord)]

    def consider(curve):
        if curve is not None:
            length = curve_length(kind, curve)
            if length < best[1]:
                best[:] = [curve, length]

    iterations, converged = 0, True
    if segments >= 2:
        start = chord if initial is None else initial
        consider(initial)
        for smooth in kind.continuation():
            curve, nit, _ = _minimize_energy(smooth, r1, r2, start, budget)
            iterations += nit
            consider(curve)
            start = curve if curve is not None else start
        curve, nit, converged = _minimize_energy(kind, r1, r2, start, budget)
        iterations += nit
        consider(curve)
    best_curve, best_len = best
    margin_active = bool(best_curve.knots.min() < KNOT_MARGIN)
    return GeodesicResult(kind.name, r1, r2, segments, min(best_len, chord_upper), best_len,
                          chord_upper, best_curve, iterations, converged, margin_active)


# -- Talagrand-type inequalities --------------------------------------------

def talagrand_global_constant(g: Graph, mu) -> float:
    """``M (D N^3 + 4) / (2 lambda2 m) * log(18 M / m^3)`` for reference ``mu``."""
    mu = as_distribution(mu)
    m, M = float(mu.min()), float(mu.max())
    D = float(g.degrees.max())
    N = g.n
    lam2 = spectral_gap(g)
    return M * (D * N**3 + 4) / (2 * lam2 * m) * math.log(18 * M / m**3)


@dataclass(frozen=True)
class TalagrandReport:
    lhs: float
    rhs: float
    holds: bool
    constant: float
    distance: float
    segments: int
    refinements: int
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"lhs": self.lhs, "rhs": self.rhs, "holds": self.holds, "constant": self.constant,
               "distance": self.distance, "segments": self.segments, "refinements": self.refinements}
        out.update(self.extra)
        return out


def _refined_check(kind, a, b, rhs, segments, budget, max_refinements):
    refinements = 0
    while True:
        res = geodesic_distance(kind, a, b, segments, budget)
        lhs = res.distance_upper**2
        if lhs <= rhs or refinements >= max_refinements:
            return res, lhs, refinements
        segments *= 2
        refinements += 1


def check_talagrand_global(g: Graph, mu, nu, segments: int = 16, budget: GeodesicBudget | None = None,
                           max_refinements: int = 2) -> TalagrandReport:
    """Certify ``d_m(nu, mu)^2 <= K H(nu | mu)`` using an upper bound for ``d_m``.

    A failed comparison is retried with twice as many segments, up to
    ``max_refinements`` times, before it is reported.
    """
    mu, nu = as_distribution(mu), as_distribution(nu)
    K = talagrand_global_constant(g, mu)
    rhs = K * relative_entropy(nu, mu)
    res, lhs, refinements = _refined_check(LowerBoundMetric(g), nu, mu, rhs, segments, budget, max_refinements)
    return TalagrandReport(lhs, rhs, bool(lhs <= rhs), K, res.distance_upper, res.segments, refinements)


def sample_ladder_set(ladder, center, resolution: int = 512, seed: int = 0) -> np.ndarray:
    """Deterministic sample of the ladder set: scrambled-Halton points on the
    simplex, each kept if inside, otherwise pulled toward ``center`` onto the
    boundary by bisection. ``center`` must lie in the set."""
    n = ladder.n
    center = np.asarray(center, dtype=float)
    u = qmc.Halton(d=n - 1, scramble=True, seed=seed).random(resolution)
    cuts = np.sort(u, axis=1)
    pts = np.diff(np.hstack([np.zeros((resolution, 1)), cuts, np.ones((resolution, 1))]), axis=1)
    out = [center]
    for q in pts:
        if ladder.contains(q) and q.min() > 0:
            out.append(q)
            continue
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if ladder.contains(center + mid * (q - center)):
                lo = mid
            else:
                hi = mid
        out.append(center + lo * (q - center))
    return np.array(out)


def check_talagrand_local(g: Graph, mu, nu, margin: float, segments: int = 16,
                          budget: GeodesicBudget | None = None, resolution: int = 512,
                          max_refinements: int = 2) -> TalagrandReport:
    """Certify ``d_Psi(mu, nu)^2 <= K H(nu | mu)`` with ``Psi = -log mu``, ``beta = 1``
    for ``nu`` in ``B = {rho : rho_i >= margin}``.

    ``K = 2 T C1 / C2 + 2 T`` with ``T = log(4 M / m) / C``, ``C`` the corrected
    equation-I rate for the ladder enclosing ``B``, and ``C1``/``C2`` the
    extremes of ``1/lambda2`` and ``1/lambda_N`` over a sample of the ladder set
    of ``resolution`` points.
    """
    mu, nu = as_distribution(mu), as_distribution(nu)
    if not 0 < margin <= 1.0 / g.n:
        raise InputError(f"margin must lie in (0, 1/n], got {margin}")
    if nu.min() < margin * (1 - 1e-12):
        raise InputError(f"nu has a coordinate {nu.min():.3g} below the margin {margin}")
    ps = PotentialSystem.from_reference(mu)
    ladder = epsilon_ladder(ps, min_coordinate=margin)
    eps = ladder.eps
    C = rate_constant_fpe2(g, ps) * eps[-1] / (1.0 - eps[1])
    m, M = float(mu.min()), float(mu.max())
    C = float(C)
    T = math.log(4 * M / m) / C
    kind = PotentialMetric.constant(g, ps.psi)
    pts = sample_ladder_set(ladder, mu, resolution)
    C1, C2 = inverse_gap_max(kind, pts), inverse_top_min(kind, pts)
    K = 2 * T * C1 / C2 + 2 * T
    rhs = K * relative_entropy(nu, mu)
    res, lhs, refinements = _refined_check(kind, mu, nu, rhs, segments, budget, max_refinements)
    extra = {"T": T, "C": float(C), "C1": C1, "C2": C2, "resolution": resolution, "margin": margin}
    return TalagrandReport(lhs, float(rhs), bool(lhs <= rhs), float(K), res.distance_upper, res.segments,
                           refinements, extra)

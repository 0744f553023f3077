"""Convergence-rate constants, the epsilon ladder and decay-rate fitting.

The equation-I constant is reported twice. ``paper_literal`` evaluates the
published expression ``beta lambda2 (m/M) (1 - eps_{N-1}) / eps_1``, which
exceeds the equation-II constant by the factor ``(1 - eps_{N-1}) / eps_1 > 1``
and so cannot come from the ratio bound it is derived from. ``corrected``
uses what the ladder set actually guarantees, ``min q >= eps_{N-1}`` and
``max q <= 1 - eps_1``, giving ``beta lambda2 (m/M) eps_{N-1} / (1 - eps_1)``.
Envelope checks use ``corrected``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .energy import PotentialSystem, as_distribution, xlogx_excess
from .errors import InputError, NumericalError
from .graph_core import Graph, spectral_gap

ENVELOPE_RTOL = 1e-6
UNDERFLOW = 1e-280
MIN_LOG_SPREAD = 1e-6


def _ratio(ps: PotentialSystem) -> float:
    star = ps.gibbs
    return float(star.min() / star.max())


def rate_constant_fpe2(g: Graph, ps: PotentialSystem) -> float:
    """``beta * lambda2(L(G)) * min(rho*) / max(rho*)``."""
    return ps.beta * spectral_gap(g) * _ratio(ps)


def entropy_rate_constant(g: Graph, ps: PotentialSystem, gamma0: float) -> float:
    """``beta * gamma0 * min(rho*) / max(rho*)``."""
    if not gamma0 > 0:
        raise InputError(f"gamma0 must be positive, got {gamma0}")
    return ps.beta * gamma0 * _ratio(ps)


@dataclass(frozen=True, eq=False)
class EpsilonLadder:
    """Nested partial-sum bounds ``eps_0 = 1 > eps_1 > ... > eps_{N-1}``.

    ``contains(q)`` tests membership in the compact set where every sum of
    ``l`` coordinates is at most ``1 - eps_l``.
    """

    big_m: float
    log_eps: np.ndarray

    @property
    def eps(self) -> np.ndarray:
        return np.exp(self.log_eps)

    @property
    def n(self) -> int:
        return self.log_eps.size

    def margins(self, q) -> np.ndarray:
        """``1 - eps_l - (sum of the l largest q)`` for ``l = 1..N-1``; all >= 0 inside."""
        q = np.asarray(q, dtype=float)
        top = np.cumsum(np.sort(q)[::-1])[: self.n - 1]
        return (1.0 - self.eps[1:]) - top

    def contains(self, q, tol: float = 0.0, exhaustive: bool = False) -> bool:
        if exhaustive:
            return self._contains_exhaustive(q, tol)
        return bool(np.all(self.margins(q) >= -tol))

    def contains_interior(self, q) -> bool:
        return bool(np.all(self.margins(q) > 0))

    def _contains_exhaustive(self, q, tol):
        q = np.asarray(q, dtype=float)
        eps = self.eps
        for ell in range(1, self.n):
            for idx in itertools.combinations(range(self.n), ell):
                if math.fsum(q[list(idx)]) > 1 - eps[ell] + tol:
                    return False
        return True


def epsilon_ladder(ps: PotentialSystem, rho0=None, min_coordinate: float | None = None) -> EpsilonLadder:
    """Ladder built from ``M = max exp(2|psi_i|)`` and the smallest initial mass.

    ``min_coordinate`` replaces ``min(rho0)`` when the ladder has to enclose a
    whole set of initial states rather than a single one.
    """
    if min_coordinate is None:
        if rho0 is None:
            raise InputError("need rho0 or min_coordinate")
        min_coordinate = float(as_distribution(rho0).min())
    n = ps.n
    log_two_m = math.log(2.0) + 2.0 * float(np.max(np.abs(ps.psi)))
    log_growth = float(np.logaddexp(0.0, log_two_m / ps.beta))  # log(1 + (2M)^(1/beta))
    log_eps = np.empty(n)
    log_eps[0] = 0.0
    log_eps[1] = math.log(0.5) + min(-log_growth, math.log(min_coordinate))
    for ell in range(2, n):
        log_eps[ell] = log_eps[ell - 1] - log_growth
    log_eps.setflags(write=False)
    big_m = math.exp(min(2.0 * float(np.max(np.abs(ps.psi))), 709.0))
    return EpsilonLadder(big_m, log_eps)


@dataclass(frozen=True)
class Fpe1Constants:
    paper_literal: float
    corrected: float


def rate_constant_fpe1(g: Graph, ps: PotentialSystem, rho0) -> Fpe1Constants:
    base = rate_constant_fpe2(g, ps)
    ladder = epsilon_ladder(ps, rho0)
    eps = ladder.eps
    eps1, eps_last = eps[1], eps[-1]
    return Fpe1Constants(
        paper_literal=base * (1.0 - eps_last) / eps1,
        corrected=base * eps_last / (1.0 - eps1),
    )


# -- modified log-Sobolev constant -------------------------------------------

@dataclass(frozen=True)
class MlsiBudget:
    n_starts: int = 64
    max_iter: int = 400
    seed: int = 0


def _dirichlet_batch(g, ref, f):
    i, j = g.edge_array[:, 0], g.edge_array[:, 1]
    with np.errstate(divide="ignore"):
        logf = np.log(f)
    return np.sum((logf[..., i] - logf[..., j]) * (f[..., i] - f[..., j]) * (ref[i] + ref[j]), axis=-1)


def _entropy_batch(ref, f):
    mean = f @ ref
    return mean * np.sum(ref * xlogx_excess(f / mean[..., None]), axis=-1)


def mlsi_ratio(g: Graph, ref, log_f) -> np.ndarray:
    """``E(f, log f) / (2 Ent(f))`` for ``f = exp(log_f)`` (batched on leading axes).

    Returns ``inf`` where the spread of ``log f`` is below ``1e-6``: both
    sides are then dominated by rounding.
    """
    log_f = np.asarray(log_f, dtype=float)
    spread = log_f.max(axis=-1) - log_f.min(axis=-1)
    log_f = log_f - log_f.max(axis=-1, keepdims=True)
    f = np.exp(log_f)
    ref = np.asarray(ref, dtype=float)
    num = _dirichlet_batch(g, ref, f)
    den = 2.0 * _entropy_batch(ref, f)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = num / den
    return np.where((spread >= MIN_LOG_SPREAD) & (den > 0) & np.isfinite(r), r, np.inf)


def _linearized_direction(g, ref):
    """Minimizer of the small-perturbation limit of the ratio (a generalized eigenvector)."""
    from scipy.linalg import eigh
    ref = np.asarray(ref, dtype=float)
    i, j = g.edge_array[:, 0], g.edge_array[:, 1]
    A = np.einsum("e,eab->ab", ref[i] + ref[j], g.edge_projectors)
    V = np.diag(ref) - np.outer(ref, ref)
    # restrict to sum-zero coordinates to make V definite
    Q = np.linalg.qr(np.vstack([np.ones(g.n), np.eye(g.n)[:-1]]).T)[0][:, 1:]
    w, U = eigh(Q.T @ A @ Q, Q.T @ V @ Q)
    return Q @ U[:, 0], float(w[0])


def estimate_mlsi(g: Graph, ref, budget: MlsiBudget | None = None) -> float:
    """Upper estimate of the best constant ``gamma0`` in ``2 gamma0 Ent(f) <= E(f, log f)``.

    Multi-start Nelder-Mead over ``log f`` with ``log f_0 = 0`` fixed; the
    result is the smallest ratio seen at any probe, so the inequality holds
    with the returned constant at every probe. Starts are drawn from per-start
    streams, so a larger budget only adds probes and never raises the result.
    """
    budget = budget or MlsiBudget()
    ref = as_distribution(ref)
    if ref.size != g.n:
        raise InputError("reference length does not match graph")
    n = g.n
    best = [math.inf]

    def objective(u):
        r = float(mlsi_ratio(g, ref, np.concatenate(([0.0], u))))
        if r < best[0]:
            best[0] = r
        return r

    starts = []
    h, _ = _linearized_direction(g, ref)
    h = h - h[0]
    for scale in (1e-4, 1e-2, 0.3, 1.0, 3.0):
        starts.append(scale * h[1:] / max(np.abs(h).max(), 1e-300))
    for v in range(n):
        for a in (-4.0, 4.0):
            u = np.zeros(n)
            u[v] = a
            starts.append((u - u[0])[1:])
    for k in range(budget.n_starts):
        rng = np.random.default_rng([budget.seed, k])
        starts.append(rng.normal(scale=rng.uniform(0.05, 3.0), size=n - 1))

    for u0 in starts:
        objective(u0)
        minimize(objective, u0, method="Nelder-Mead",
                 options={"maxiter": budget.max_iter, "xatol": 1e-10, "fatol": 1e-14})
    if not math.isfinite(best[0]):
        raise NumericalError("no probe produced a finite ratio")
    return best[0]


def validate_mlsi(g: Graph, ref, gamma: float, n_samples: int = 100_000, seed: int = 0) -> float:
    """Smallest value of ``E(f, log f) - 2 gamma Ent(f)`` over fresh random ``f``."""
    rng = np.random.default_rng(seed)
    scales = np.exp(rng.uniform(math.log(1e-3), math.log(10.0), size=(n_samples, 1)))
    log_f = rng.normal(size=(n_samples, g.n)) * scales
    log_f -= log_f.max(axis=1, keepdims=True)
    f = np.exp(log_f)
    ref = np.asarray(ref, dtype=float)
    slack = _dirichlet_batch(g, ref, f) - 2.0 * gamma * _entropy_batch(ref, f)
    return float(slack.min())


# -- empirical decay ----------------------------------------------------------

@dataclass(frozen=True)
class RateReport:
    theorem_constant: float
    empirical_rate: float
    bound_satisfied: bool
    fit_residual: float
    first_violation_time: float | None = None
    worst_ratio: float = 0.0
    n_fit: int = 0


def fit_decay_rate(traj, which: str, theorem_constant: float, rtol: float = ENVELOPE_RTOL) -> RateReport:
    """Fit ``log(diagnostic)`` against ``t`` over the tail half of the usable samples
    and check ``diagnostic(t) <= diagnostic(0) exp(-C t) (1 + rtol)`` at every sample.

    ``which`` is ``"l2"`` (weighted L2 discrepancy) or ``"entropy"`` (relative
    entropy). Samples at or below ``1e-280`` are excluded from the fit.
    """
    if which == "l2":
        values = np.asarray(traj.l2sq, dtype=float)
    elif which == "entropy":
        values = np.asarray(traj.relent, dtype=float)
    else:
        raise InputError(f"unknown diagnostic {which!r}; use 'l2' or 'entropy'")
    t = np.asarray(traj.times, dtype=float)

    envelope = values[0] * np.exp(-theorem_constant * t) * (1.0 + rtol)
    violations = np.flatnonzero(values > envelope)
    first = float(t[violations[0]]) if violations.size else None
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratios = np.where(envelope > 0, values / envelope, np.where(values > 0, np.inf, 0.0))
    worst = float(ratios.max())

    under = np.flatnonzero(values <= UNDERFLOW)
    usable = np.arange(under[0] if under.size else values.size)
    rate, resid, n_fit = math.nan, math.nan, 0
    if usable.size >= 10:
        tail = usable[usable.size // 2:]
        coef, res, *_ = np.polyfit(t[tail], np.log(values[tail]), 1, full=True)
        rate = -float(coef[0])
        n_fit = tail.size
        resid = math.sqrt(float(res[0]) / tail.size) if res.size else 0.0
    return RateReport(theorem_constant, rate, violations.size == 0, resid, first, worst, n_fit)

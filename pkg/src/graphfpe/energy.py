"""Points of the open probability simplex and the functionals evaluated on them.

All reductions go through :func:`math.fsum`, which is exactly rounded; the
discrepancy functionals are differences of nearly equal sums close to
equilibrium and plain ``np.sum`` loses digits there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InputError
from .graph_core import Graph

MASS_TOL = 1e-12
CONSTRUCTION_FLOOR = 1e-300


def fsum(x) -> float:
    return math.fsum(np.asarray(x, dtype=float).ravel())


def as_distribution(rho, floor: float = CONSTRUCTION_FLOOR) -> np.ndarray:
    """Validate ``rho`` as an interior simplex point and return a read-only copy.

    Entries must be finite, strictly greater than ``floor`` and sum to one
    within ``1e-12``.
    """
    r = np.array(rho, dtype=float).reshape(-1)
    if r.size < 2:
        raise InputError(f"distribution needs at least 2 entries, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise InputError("distribution has non-finite entries")
    if np.any(r <= floor):
        raise InputError(f"distribution has entries <= {floor:g}; must be interior")
    total = fsum(r)
    if abs(total - 1.0) > MASS_TOL:
        raise InputError(f"distribution sums to {total!r}, not 1")
    r.setflags(write=False)
    return r


def normalize(x) -> np.ndarray:
    """Scale a positive vector onto the simplex (helper for samplers)."""
    x = np.asarray(x, dtype=float)
    return x / fsum(x)


def _check_same_length(*vectors):
    sizes = {len(v) for v in vectors}
    if len(sizes) != 1:
        raise InputError(f"dimension mismatch: lengths {sorted(sizes)}")


def gibbs(psi, beta: float) -> np.ndarray:
    """Gibbs distribution ``exp(-psi/beta) / Z``, shifted by the max exponent first."""
    psi = np.asarray(psi, dtype=float).reshape(-1)
    if not beta > 0 or not math.isfinite(beta):
        raise InputError(f"beta must be a finite positive number, got {beta}")
    if not np.all(np.isfinite(psi)):
        raise InputError("potential has non-finite entries")
    a = -psi / beta
    e = np.exp(a - a.max())
    r = e / fsum(e)
    r.setflags(write=False)
    return r


@dataclass(frozen=True, eq=False)
class PotentialSystem:
    psi: np.ndarray
    beta: float

    def __post_init__(self):
        psi = np.array(self.psi, dtype=float).reshape(-1)
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "beta", float(self.beta))
        _ = self.gibbs  # validates beta and psi eagerly

    @cached_property
    def gibbs(self) -> np.ndarray:
        return as_distribution(gibbs(self.psi, self.beta))

    @property
    def n(self) -> int:
        return self.psi.size

    @classmethod
    def from_reference(cls, mu) -> "PotentialSystem":
        """``psi = -log(mu)``, ``beta = 1``: free energy becomes ``H(. | mu)``."""
        mu = as_distribution(mu)
        return cls(-np.log(mu), 1.0)


def free_energy(ps: PotentialSystem, rho) -> float:
    """``sum psi_i rho_i + beta sum rho_i log rho_i``."""
    rho = np.asarray(rho, dtype=float)
    _check_same_length(ps.psi, rho)
    return fsum(ps.psi * rho) + ps.beta * fsum(rho * np.log(rho))


def euclidean_sq(rho, ref) -> float:
    rho, ref = np.asarray(rho, float), np.asarray(ref, float)
    _check_same_length(rho, ref)
    return fsum((rho - ref) ** 2)


def weighted_l2_sq(rho, ref) -> float:
    """``|| rho/ref - 1 ||^2`` in ``L^2(ref)``, i.e. ``sum (rho - ref)^2 / ref``."""
    rho, ref = np.asarray(rho, float), np.asarray(ref, float)
    _check_same_length(rho, ref)
    return fsum((rho - ref) ** 2 / ref)


def xlogx_excess(x) -> np.ndarray:
    """``x log x - x + 1`` (>= 0), accurate near ``x = 1``."""
    x = np.asarray(x, dtype=float)
    y = x - 1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        direct = x * np.log(x) - y
    # (-1)^k y^k / (k (k - 1)) for k = 2..10, exact to rounding for |y| < 1e-2
    series = np.zeros_like(y)
    for k in range(10, 1, -1):
        series = series * y + (-1) ** k / (k * (k - 1))
    series = series * y * y
    return np.where(np.abs(y) < 1e-2, series, direct)


def relative_entropy(nu, mu) -> float:
    """Kullback-Leibler divergence ``sum nu_i log(nu_i / mu_i)``.

    Evaluated as ``sum mu_i phi(nu_i / mu_i)`` with ``phi(x) = x log x - x + 1``,
    which agrees for normalized inputs and has no cancellation near ``nu = mu``.
    """
    nu, mu = np.asarray(nu, float), np.asarray(mu, float)
    _check_same_length(nu, mu)
    return fsum(mu * xlogx_excess(nu / mu))


@dataclass(frozen=True)
class DiscrepancyReport:
    weighted_l2_sq: float
    rel_entropy: float
    euclidean_sq: float


def discrepancies(rho, ref) -> DiscrepancyReport:
    return DiscrepancyReport(weighted_l2_sq(rho, ref), relative_entropy(rho, ref), euclidean_sq(rho, ref))


def _positive(f):
    f = np.asarray(f, dtype=float).reshape(-1)
    if not np.all(np.isfinite(f)) or np.any(f <= 0):
        raise InputError("f must be finite and strictly positive")
    return f


def dirichlet_form(g: Graph, ref, f) -> float:
    """``E(f, log f) = sum_i sum_{j ~ i} (log f_i - log f_j)(f_i - f_j) ref_i``.

    Each undirected edge appears twice in the double sum, once weighted by
    each endpoint's reference mass.
    """
    f = _positive(f)
    ref = np.asarray(ref, dtype=float)
    _check_same_length(f, ref)
    if f.size != g.n:
        raise InputError(f"vector length {f.size} does not match n={g.n}")
    i, j = g.edge_array[:, 0], g.edge_array[:, 1]
    logf = np.log(f)
    return fsum((logf[i] - logf[j]) * (f[i] - f[j]) * (ref[i] + ref[j]))


def entropy_functional(ref, f) -> float:
    """``Ent_ref(f) = E[f log f] - E[f] log E[f]``."""
    f = _positive(f)
    ref = np.asarray(ref, dtype=float)
    _check_same_length(f, ref)
    mean = fsum(ref * f)
    return mean * fsum(ref * xlogx_excess(f / mean))

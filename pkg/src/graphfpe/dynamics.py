"""Fokker-Planck equations I and II on a graph and a positivity-aware integrator.

Both right-hand sides are assembled edge by edge. For an edge ``{i, j}`` the
flux into ``i`` is the difference of the free-energy potentials
``Psi_bar = Psi + beta log rho`` times an upwind mass; ``j`` receives the
negative, so every right-hand side sums to zero.

The potential difference is evaluated as ``beta * (log(rho_j/rho*_j) -
log(rho_i/rho*_i))``, which equals ``Psi_bar_j - Psi_bar_i`` exactly in real
arithmetic and keeps full relative accuracy near equilibrium.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .energy import PotentialSystem, as_distribution, free_energy, fsum, xlogx_excess
from .errors import InputError, NumericalError, StepSizeUnderflowError
from .graph_core import Graph

POTENTIAL_TIE_TOL = 1e-12


class FpeVariant(enum.Enum):
    EQUATION_I = 1
    EQUATION_II = 2

    @classmethod
    def parse(cls, value) -> "FpeVariant":
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper()
        aliases = {"1": cls.EQUATION_I, "I": cls.EQUATION_I, "EQUATION_I": cls.EQUATION_I,
                   "2": cls.EQUATION_II, "II": cls.EQUATION_II, "EQUATION_II": cls.EQUATION_II}
        if key not in aliases:
            raise InputError(f"unknown Fokker-Planck variant {value!r}; use 1 or 2")
        return aliases[key]


def make_deviation_rhs(g: Graph, ps: PotentialSystem, variant):
    """Return ``f(delta) -> d delta/dt`` for the deviation ``delta = rho - rho*``.

    The potential differences only involve ``log1p(delta / rho*)``, so they stay
    accurate for deviations far below the resolution of ``rho`` itself.
    """
    variant = FpeVariant.parse(variant)
    if ps.n != g.n:
        raise InputError(f"potential has {ps.n} entries, graph has {g.n} vertices")
    n, beta = g.n, ps.beta
    i, j = g.edge_array[:, 0].copy(), g.edge_array[:, 1].copy()
    star = ps.gibbs
    dpsi = ps.psi[j] - ps.psi[i]
    tie = np.abs(dpsi) < POTENTIAL_TIE_TOL
    j_higher = dpsi > 0

    if variant is FpeVariant.EQUATION_I:
        def rhs(delta):
            rho = star + delta
            ell = np.log1p(delta / star)
            upwind = np.where(j_higher, rho[j], rho[i])
            flux = np.where(tie, beta * (delta[j] - delta[i] + star[j] - star[i]),
                            beta * (ell[j] - ell[i]) * upwind)
            return np.bincount(i, flux, n) - np.bincount(j, flux, n)
    else:
        def rhs(delta):
            rho = star + delta
            ell = np.log1p(delta / star)
            x = beta * (ell[j] - ell[i])
            flux = np.maximum(x, 0.0) * rho[j] - np.maximum(-x, 0.0) * rho[i]
            return np.bincount(i, flux, n) - np.bincount(j, flux, n)

    return rhs


def make_rhs(g: Graph, ps: PotentialSystem, variant):
    """Return ``f(rho) -> drho/dt`` with the edge bookkeeping precomputed."""
    f = make_deviation_rhs(g, ps, variant)
    star = ps.gibbs
    return lambda rho: f(np.asarray(rho, dtype=float) - star)


def rhs_fpe1(g: Graph, ps: PotentialSystem, rho) -> np.ndarray:
    """Right-hand side of equation I; upwinding switches on the sign of ``Psi_j - Psi_i``
    and equal potentials (within ``1e-12``) give the linear term ``beta (rho_j - rho_i)``."""
    return make_rhs(g, ps, FpeVariant.EQUATION_I)(np.asarray(rho, dtype=float))


def rhs_fpe2(g: Graph, ps: PotentialSystem, rho) -> np.ndarray:
    """Right-hand side of equation II in positive/negative-part form."""
    return make_rhs(g, ps, FpeVariant.EQUATION_II)(np.asarray(rho, dtype=float))


def stationarity_residual(g: Graph, ps: PotentialSystem, variant, rho) -> float:
    """Sup norm of the right-hand side at ``rho``."""
    return float(np.max(np.abs(make_rhs(g, ps, variant)(as_distribution(rho)))))


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    t_end: float = 10.0
    max_step: float = math.inf
    floor: float = 1e-13
    sample_stride: int = 1
    # Times the integrator must land on exactly (clipped step, no interpolation).
    sample_times: tuple = ()
    max_steps: int = 1_000_000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise InputError("tolerances must be positive")
        if not self.t_end > 0:
            raise InputError("t_end must be positive")
        if not self.max_step > 0:
            raise InputError("max_step must be positive")
        if self.sample_stride < 1:
            raise InputError("sample_stride must be >= 1")
        if not self.floor >= 0:
            raise InputError("floor must be nonnegative")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    free_energy: np.ndarray
    l2sq: np.ndarray
    relent: np.ndarray
    n_accepted: int = 0
    n_rejected: int = 0
    n_floor_rejections: int = 0
    gibbs: np.ndarray = field(default=None, repr=False)
    deviations: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return self.times.size

    def state_at(self, t) -> np.ndarray:
        """State recorded at exactly time ``t`` (must be a sample time)."""
        k = np.flatnonzero(self.times == t)
        if k.size == 0:
            raise KeyError(f"t={t!r} is not a sample time")
        return self.states[k[0]]

    def write_csv(self, fh):
        """``t, rho_0..rho_{n-1}, F, l2sq, relent`` with 17 significant digits."""
        n = self.states.shape[1]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *(f"rho_{k}" for k in range(n)), "F", "l2sq", "relent"])
        for row in zip(self.times, self.states, self.free_energy, self.l2sq, self.relent):
            t, rho, F, l2, h = row
            w.writerow([format17(t), *(format17(v) for v in rho), format17(F), format17(l2), format17(h)])


def format17(x) -> str:
    return format(float(x), ".17g")


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def _initial_step(y, f0, cfg, dev_scale):
    scale = cfg.abs_tol + cfg.rel_tol * dev_scale
    d0 = dev_scale / scale
    d1 = np.max(np.abs(f0)) / scale
    h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    return min(h, cfg.max_step, cfg.t_end)


def _entropy_from_deviation(star, delta):
    return fsum(star * xlogx_excess(1.0 + delta / star))


def integrate(g: Graph, ps: PotentialSystem, variant, rho0, cfg: IntegratorConfig | None = None) -> Trajectory:
    """Adaptive Dormand-Prince 5(4) integration from ``rho0`` to ``cfg.t_end``.

    The state is the deviation ``delta = rho - rho*``, so the discrepancy
    functionals keep full relative accuracy long after ``rho`` itself agrees
    with ``rho*`` to the last bit. The error of a step is measured against
    ``abs_tol * d + rel_tol * |delta|_inf`` with ``d = |delta|_inf / |delta_0|_inf``,
    i.e. relative to the current deviation.

    A step is rejected when its error estimate exceeds the tolerance, when any
    stage or the new state has a component at or below ``cfg.floor``, or when
    the free energy rises by more than ``10 * rel_tol`` of its excess over the
    minimum. The mass defect of each accepted state is removed by a uniform
    additive correction.
    """
    cfg = cfg or IntegratorConfig()
    variant = FpeVariant.parse(variant)
    rho_init = as_distribution(rho0)
    if rho_init.size != g.n:
        raise InputError(f"initial state has {rho_init.size} entries, graph has {g.n} vertices")
    rhs = make_deviation_rhs(g, ps, variant)
    star = ps.gibbs
    n = g.n
    landings = sorted({float(s) for s in cfg.sample_times if 0 < s < cfg.t_end} | {float(cfg.t_end)})
    mass_cap = 10 * cfg.abs_tol

    y = rho_init - star
    dev0 = float(np.max(np.abs(y)))
    t = 0.0
    H = _entropy_from_deviation(star, y)
    times, devs = [0.0], [y.copy()]
    k1 = rhs(y)
    h = _initial_step(y, k1, cfg, max(dev0, 1e-300))
    accepted = rejected = floor_rejects = 0
    next_landing = 0

    while t < cfg.t_end:
        if accepted + rejected >= cfg.max_steps:
            raise NumericalError(f"step budget {cfg.max_steps} exhausted at t={t}")
        target = landings[next_landing]
        h = h_prop = min(h, cfg.max_step)
        lands = t + h >= target * (1 - 1e-15)
        if lands:
            h = target - t
        if h <= 1e-14 * max(1.0, t):
            raise StepSizeUnderflowError(f"step size underflow at t={t!r}", t=t, state=star + y)

        K = [k1]
        ok = True
        for s in range(1, 7):
            ys = y + h * sum(a * K[q] for q, a in enumerate(_A[s]) if a != 0.0)
            if np.min(star + ys) <= cfg.floor:
                ok = False
                break
            K.append(rhs(ys))
        if not ok:
            rejected += 1
            floor_rejects += 1
            h *= 0.5
            continue

        y_new = ys  # FSAL: the last stage point is the 5th-order solution
        dev = max(float(np.max(np.abs(y))), float(np.max(np.abs(y_new))))
        if dev == 0.0:
            err_norm = 0.0
        else:
            err = h * sum(e * k for e, k in zip(_E, K))
            scale = cfg.abs_tol * dev / max(dev0, 1e-300) + cfg.rel_tol * dev
            err_norm = float(np.max(np.abs(err)) / scale)
        if err_norm > 1.0:
            rejected += 1
            h *= max(0.2, 0.9 * err_norm ** -0.2)
            continue

        defect = fsum(y_new)
        if abs(defect) > mass_cap:
            raise NumericalError(f"mass defect {defect:.3e} exceeds {mass_cap:.1e} at t={t + h!r}")
        if defect != 0.0:
            y_new = y_new - defect / n
        if np.min(star + y_new) <= cfg.floor:
            rejected += 1
            floor_rejects += 1
            h *= 0.5
            continue
        H_new = _entropy_from_deviation(star, y_new)
        if H_new > H * (1 + 10 * cfg.rel_tol):
            rejected += 1
            h *= 0.5
            continue

        t = target if lands else t + h
        y, H = y_new, H_new
        k1 = K[6]
        accepted += 1
        if lands:
            next_landing += 1
            times.append(t)
            devs.append(y.copy())
        elif accepted % cfg.sample_stride == 0:
            times.append(t)
            devs.append(y.copy())
        factor = 5.0 if err_norm == 0 else min(5.0, 0.9 * err_norm ** -0.2)
        h = max(h_prop, h * factor) if lands else h * factor

    dev_arr = np.array(devs)
    states = star + dev_arr
    states[0] = rho_init
    return Trajectory(
        times=np.array(times),
        states=states,
        free_energy=np.array([free_energy(ps, star + d) for d in dev_arr]),
        l2sq=np.array([fsum(d * d / star) for d in dev_arr]),
        relent=np.array([_entropy_from_deviation(star, d) for d in dev_arr]),
        n_accepted=accepted,
        n_rejected=rejected,
        n_floor_rejections=floor_rejects,
        gibbs=star,
        deviations=dev_arr,
    )

"""Graphs, (weighted) Laplacians, spectral gaps and isoperimetric numbers.

Vertices are 0-indexed. A :class:`Graph` is simple, undirected, connected and
immutable; edges are stored as sorted pairs ``(i, j)`` with ``i < j`` in
lexicographic order, and every per-edge array in the package is aligned with
that order.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import (
    BruteForceCapError,
    DisconnectedGraphError,
    EigenConvergenceError,
    InputError,
)

DEFAULT_BRUTE_FORCE_CAP = 20


@dataclass(frozen=True, eq=True)
class Graph:
    n: int
    edges: tuple[tuple[int, int], ...]

    def __init__(self, n, edges):
        n = int(n)
        if n < 2:
            raise InputError(f"graph needs at least 2 vertices, got n={n}")
        normalized = set()
        for e in edges:
            i, j = (int(v) for v in e)
            if not (0 <= i < n and 0 <= j < n):
                raise InputError(f"edge {{{i},{j}}} out of range for n={n}")
            if i == j:
                raise InputError(f"self-loop at vertex {i}")
            key = (min(i, j), max(i, j))
            if key in normalized:
                raise InputError(f"duplicate edge {{{key[0]},{key[1]}}}")
            normalized.add(key)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", tuple(sorted(normalized)))
        if not self._is_connected():
            raise DisconnectedGraphError(f"graph with n={n} is not connected")

    def _is_connected(self):
        seen = {0}
        queue = deque([0])
        adj = self.neighbors
        while queue:
            v = queue.popleft()
            for u in adj[v]:
                if u not in seen:
                    seen.add(u)
                    queue.append(u)
        return len(seen) == self.n

    @property
    def m(self) -> int:
        return len(self.edges)

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        adj = [[] for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return tuple(tuple(sorted(a)) for a in adj)

    @cached_property
    def edge_array(self) -> np.ndarray:
        """``(m, 2)`` int array of edge endpoints; read-only."""
        arr = np.array(self.edges, dtype=np.intp).reshape(-1, 2)
        arr.setflags(write=False)
        return arr

    @cached_property
    def degrees(self) -> np.ndarray:
        d = np.array([len(a) for a in self.neighbors], dtype=float)
        d.setflags(write=False)
        return d

    @cached_property
    def edge_projectors(self) -> np.ndarray:
        """``(m, n, n)`` stack of ``b_e b_e^T`` so that ``L(w) = sum_e w_e P_e``."""
        P = np.zeros((self.m, self.n, self.n))
        for k, (i, j) in enumerate(self.edges):
            P[k, i, i] = P[k, j, j] = 1.0
            P[k, i, j] = P[k, j, i] = -1.0
        P.setflags(write=False)
        return P

    def diameter(self) -> int:
        """Graph diameter by all-pairs BFS."""
        best = 0
        for s in range(self.n):
            dist = [-1] * self.n
            dist[s] = 0
            queue = deque([s])
            while queue:
                v = queue.popleft()
                for u in self.neighbors[v]:
                    if dist[u] < 0:
                        dist[u] = dist[v] + 1
                        queue.append(u)
            best = max(best, max(dist))
        return best

    def relabel(self, perm) -> "Graph":
        """Graph with vertex ``v`` renamed to ``perm[v]``."""
        perm = list(perm)
        return Graph(self.n, [(perm[i], perm[j]) for i, j in self.edges])

    # -- small generators used by tests and corpora --------------------------

    @classmethod
    def path(cls, n):
        return cls(n, [(i, i + 1) for i in range(n - 1)])

    @classmethod
    def cycle(cls, n):
        if n < 3:
            raise InputError("cycle needs n >= 3")
        return cls(n, [(i, (i + 1) % n) for i in range(n)])

    @classmethod
    def complete(cls, n):
        return cls(n, itertools.combinations(range(n), 2))

    @classmethod
    def star(cls, n):
        """Star with centre 0 and ``n - 1`` leaves (``star(5)`` is S5)."""
        return cls(n, [(0, i) for i in range(1, n)])

    @classmethod
    def erdos_renyi(cls, n, p, rng, max_tries=1000):
        """Connected G(n, p) sample by rejection."""
        pairs = list(itertools.combinations(range(n), 2))
        for _ in range(max_tries):
            keep = rng.random(len(pairs)) < p
            try:
                return cls(n, [e for e, k in zip(pairs, keep) if k])
            except DisconnectedGraphError:
                continue
        raise InputError(f"no connected G({n}, {p}) sample in {max_tries} tries")

    @classmethod
    def random_tree(cls, n, rng):
        """Uniform random recursive tree (vertex k attaches to a random earlier one)."""
        return cls(n, [(int(rng.integers(k)), k) for k in range(1, n)])


@dataclass(frozen=True, eq=False)
class EdgeWeights:
    """Positive weights on the edges of ``graph``, aligned with ``graph.edges``."""

    graph: Graph
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.shape != (self.graph.m,):
            raise InputError(f"expected {self.graph.m} edge weights, got {v.size}")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise InputError("edge weights must be finite and strictly positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def uniform(cls, graph, value=1.0):
        return cls(graph, np.full(graph.m, float(value)))

    @classmethod
    def from_matrix(cls, graph, w):
        w = np.asarray(w, dtype=float)
        n = graph.n
        if w.shape != (n, n):
            raise InputError(f"weight matrix must be {n}x{n}, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise InputError("weight matrix has non-finite entries")
        if not np.array_equal(w, w.T):
            raise InputError("weight matrix is not symmetric")
        support = np.zeros((n, n), dtype=bool)
        ea = graph.edge_array
        support[ea[:, 0], ea[:, 1]] = support[ea[:, 1], ea[:, 0]] = True
        if np.any(w[support] <= 0) or np.any(w[~support] != 0):
            raise InputError("weight matrix support does not match the edge set")
        return cls(graph, w[ea[:, 0], ea[:, 1]])

    def matrix(self) -> np.ndarray:
        n = self.graph.n
        w = np.zeros((n, n))
        ea = self.graph.edge_array
        w[ea[:, 0], ea[:, 1]] = self.values
        w[ea[:, 1], ea[:, 0]] = self.values
        return w


@dataclass(frozen=True, eq=False)
class SpectralSummary:
    eigenvalues: np.ndarray

    @property
    def lambda2(self) -> float:
        return float(self.eigenvalues[1])

    @property
    def lambdaN(self) -> float:
        return float(self.eigenvalues[-1])


@dataclass(frozen=True)
class SpectralGapBounds:
    degree_bound: float
    diameter_bound: float | None
    cycle_bound: float


@dataclass(frozen=True)
class IsoperimetricBound:
    isoperimetric_number: float
    max_degree: float
    bound: float
    chained_bound: float


def laplacian(g: Graph) -> np.ndarray:
    """Combinatorial Laplacian ``D - A``."""
    return weighted_laplacian(g, EdgeWeights.uniform(g))


def _as_edge_weights(g, w):
    if isinstance(w, EdgeWeights):
        if w.graph != g:
            raise InputError("edge weights belong to a different graph")
        return w
    w = np.asarray(w, dtype=float)
    if w.ndim == 2:
        return EdgeWeights.from_matrix(g, w)
    return EdgeWeights(g, w)


def weighted_laplacian(g: Graph, w) -> np.ndarray:
    """``diag(row sums of w) - w``. ``w`` is an :class:`EdgeWeights`, a per-edge
    vector, or a full symmetric matrix whose support must equal the edge set."""
    w = _as_edge_weights(g, w)
    ea = g.edge_array
    L = np.zeros((g.n, g.n))
    L[ea[:, 0], ea[:, 1]] = -w.values
    L[ea[:, 1], ea[:, 0]] = -w.values
    L[np.diag_indices(g.n)] = -L.sum(axis=1)
    return L


def batched_weighted_laplacian(g: Graph, values: np.ndarray) -> np.ndarray:
    """Stack of weighted Laplacians for a ``(..., m)`` array of edge weights."""
    return np.einsum("...e,eij->...ij", values, g.edge_projectors)


def kernel_tolerance(lambda_max: float) -> float:
    return 1e-9 * max(1.0, lambda_max)


def spectral_summary(m) -> SpectralSummary:
    """Full spectrum of a symmetric Laplacian-like matrix.

    Raises :class:`DisconnectedGraphError` if the second eigenvalue sits in the
    numerical kernel ``|lambda| <= 1e-9 * max(1, lambda_N)``.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
        raise InputError(f"expected a square matrix of size >= 2, got {m.shape}")
    if not np.allclose(m, m.T, rtol=0, atol=1e-12 * max(1.0, np.abs(m).max())):
        raise InputError("matrix is not symmetric")
    try:
        ev = np.linalg.eigvalsh(m)
    except np.linalg.LinAlgError as exc:
        raise EigenConvergenceError(str(exc)) from exc
    tol = kernel_tolerance(ev[-1])
    if abs(ev[0]) > tol:
        raise InputError(f"smallest eigenvalue {ev[0]:.3e} is not zero; not a Laplacian")
    if ev[1] <= tol:
        raise DisconnectedGraphError(f"lambda2 = {ev[1]:.3e} is in the kernel")
    ev.setflags(write=False)
    return SpectralSummary(ev)


def spectral_gap(g: Graph, w=None) -> float:
    L = laplacian(g) if w is None else weighted_laplacian(g, w)
    return spectral_summary(L).lambda2


def spectral_gap_lower_bounds(g: Graph) -> SpectralGapBounds:
    """Three closed-form lower bounds for the unweighted spectral gap.

    ``diameter_bound`` is ``None`` if its denominator is nonpositive; with
    ``M <= N(N-1)/2`` edges the denominator is at least 2, so this never
    happens for a simple graph.
    """
    d_max = float(g.degrees.max())
    d_min = float(g.degrees.min())
    N, M, d = g.n, g.m, g.diameter()
    degree_bound = d_max - math.sqrt(max(d_max**2 - d_min**2, 0.0))
    denom = 2 + N * (N - 1) * d - 2 * M * d
    diameter_bound = 2 * N / denom if denom > 0 else None
    cycle_bound = 2 * (1 - math.cos(math.pi / N))
    return SpectralGapBounds(degree_bound, diameter_bound, cycle_bound)


def _subset_masks(n):
    """Boolean membership table for every nonempty X with |X| <= n/2."""
    codes = np.arange(1, 1 << n, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(n)) & 1).astype(bool)
    sizes = bits.sum(axis=1)
    keep = sizes <= n // 2
    return bits[keep], sizes[keep]


def isoperimetric_number(g: Graph, w=None, cap: int = DEFAULT_BRUTE_FORCE_CAP) -> float:
    """``min cut(X, V\\X) / |X|`` over nonempty ``X`` with ``|X| <= N/2``, by enumeration."""
    if g.n > cap:
        raise BruteForceCapError(f"n={g.n} exceeds the brute-force cap {cap}")
    w = EdgeWeights.uniform(g) if w is None else _as_edge_weights(g, w)
    bits, sizes = _subset_masks(g.n)
    ea = g.edge_array
    crossing = bits[:, ea[:, 0]] != bits[:, ea[:, 1]]
    cut = crossing @ w.values
    return float(np.min(cut / sizes))


def isoperimetric_spectral_bound(g: Graph, w=None, cap: int = DEFAULT_BRUTE_FORCE_CAP) -> IsoperimetricBound:
    """``delta - sqrt(delta^2 - i^2)`` and the weaker ``i^2 / (2 delta)``,
    with ``delta`` the largest weighted degree and ``i`` the isoperimetric number."""
    w = EdgeWeights.uniform(g) if w is None else _as_edge_weights(g, w)
    i = isoperimetric_number(g, w, cap)
    delta = float(np.diag(weighted_laplacian(g, w)).max())
    bound = delta - math.sqrt(max(delta * delta - i * i, 0.0))
    return IsoperimetricBound(i, delta, bound, i * i / (2 * delta))

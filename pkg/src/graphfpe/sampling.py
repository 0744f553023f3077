"""Seeded random instances: graphs, potentials and interior distributions.

Every generator takes a :class:`numpy.random.Generator`; corpora derive one
per cell from ``numpy.random.default_rng([seed, cell_index])`` so cells are
reproducible independently of evaluation order.
"""

from __future__ import annotations

import numpy as np

from .energy import normalize
from .graph_core import Graph


def cell_rng(seed: int, *index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *map(int, index)])


def random_distribution(rng: np.random.Generator, n: int, concentration: float = 1.0,
                        floor: float = 1e-6) -> np.ndarray:
    """Dirichlet draw, mixed with the uniform vector just enough to keep every entry >= ``floor``."""
    x = rng.dirichlet(np.full(n, concentration))
    if x.min() < floor:
        x = (1 - n * floor) * x + floor
    return normalize(x)


def random_potential(rng: np.random.Generator, n: int, bound: float = 1.0) -> np.ndarray:
    return rng.uniform(-bound, bound, size=n)


def random_graph(rng: np.random.Generator, n_min: int = 2, n_max: int = 6) -> Graph:
    """Connected graph on ``n`` vertices, ``n`` uniform in ``[n_min, n_max]``:
    a random tree, a path, a cycle, a star, a complete graph or an
    Erdos-Renyi graph conditioned on connectivity."""
    n = int(rng.integers(n_min, n_max + 1))
    if n == 2:
        return Graph.complete(2)
    family = int(rng.integers(0, 6))
    if family == 0:
        return Graph.random_tree(n, rng)
    if family == 1:
        return Graph.path(n)
    if family == 2:
        return Graph.cycle(n)
    if family == 3:
        return Graph.star(n)
    if family == 4:
        return Graph.complete(n)
    return Graph.erdos_renyi(n, float(rng.uniform(0.3, 0.9)), rng)

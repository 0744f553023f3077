"""Free-energy gradient flows on finite graphs: Fokker-Planck dynamics,
convergence rates, discrete transport metrics and Talagrand-type inequalities."""

from .dynamics import FpeVariant, IntegratorConfig, Trajectory, integrate, rhs_fpe1, rhs_fpe2
from .energy import PotentialSystem, free_energy, gibbs, relative_entropy, weighted_l2_sq
from .errors import GraphFPEError, InputError, NumericalError
from .graph_core import EdgeWeights, Graph, laplacian, spectral_gap, weighted_laplacian
from .metric import LowerBoundMetric, PotentialMetric, geodesic_distance

__all__ = [
    "EdgeWeights", "FpeVariant", "Graph", "GraphFPEError", "InputError", "IntegratorConfig",
    "LowerBoundMetric", "NumericalError", "PotentialMetric", "PotentialSystem", "Trajectory",
    "free_energy", "geodesic_distance", "gibbs", "integrate", "laplacian", "relative_entropy",
    "rhs_fpe1", "rhs_fpe2", "spectral_gap", "weighted_l2_sq", "weighted_laplacian",
]

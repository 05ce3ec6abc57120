"""hp boundary elements for the electric field integral equation on plane-faced surfaces."""
from .approx import (ConvergenceRecord, StudyConfig, estimate_rate, p_hp, q_hp,
                     quasi_optimality_report, run_convergence)
from .efie import DenseSystem, QuadratureConfig, WaveProblem, assemble, excitation_plane_wave, solve
from .interp import project_div_global, project_div_reference, reference_interpolator
from .mesh import SurfaceMesh, build_mesh, load_mesh, preset_surface, refine_uniform
from .normx import EdgeFunction, energy_gram, energy_norm, h1h_norm, hdiv_norm, tilde_hm1h_norm
from .refelem import SQUARE, TRIANGLE, ElementKind, rt_basis
from .space import DiscreteField, RTSpace, embedding

__version__ = "0.1.0"

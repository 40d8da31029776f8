"""Geometry registration and reduction with smooth bijective polynomial maps."""

__version__ = "0.1.0"

from .cpd import CpdConfig, cpd_run
from .errors import (ConfigurationError, DegenerateInputError, DomainError, GrrError, InfeasibleError,
                     MeshParseError, NumericalError)
from .mapspace import Box, MapSpace, Mapping, build_space, h2_inner, jacobian_det, map_eval
from .mesh import Mesh, discrete_bijectivity, mesh_quality, read_mesh, write_mesh
from .objective import ObjectiveConfig, objective_value_grad
from .pod import PodBasis, pod_build, reduce_space
from .registration import RegistrationProblem, assemble_Bz, morph_mesh, register, register_with_cpd
from .solver import SolverConfig, minimize_linconstr, minimize_nlconstr, minimize_qn

__all__ = [
    "Box", "ConfigurationError", "CpdConfig", "DegenerateInputError", "DomainError", "GrrError",
    "InfeasibleError", "MapSpace", "Mapping", "Mesh", "MeshParseError", "NumericalError",
    "ObjectiveConfig", "PodBasis", "RegistrationProblem", "SolverConfig", "assemble_Bz", "build_space",
    "cpd_run", "discrete_bijectivity", "h2_inner", "jacobian_det", "map_eval", "mesh_quality",
    "minimize_linconstr", "minimize_nlconstr", "minimize_qn", "morph_mesh", "objective_value_grad",
    "pod_build", "read_mesh", "reduce_space", "register", "register_with_cpd", "write_mesh",
]

from .linalg import ToleranceConfig, DEFAULT_TOL, orthonormalize, svd, energy_rank
from .subspace import Subspace, project, angle, cosine_to, extend, extract_representation_space, \
    extend_by_residual, oblique_combine, principal_cosines
from .relax import RelaxConfig, SearchReport, gradient_rep_space, gradient_rep_space_from_factors, \
    complement_space, check_inside, closest_direction, search_relaxing_space, verify_theorems

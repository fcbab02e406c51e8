import logging
import torch
from dataclasses import dataclass, field, asdict
from typing import List, Optional

from config import DTYPE
from exceptions import InvalidInputError, PreconditionError, EmptySpaceError
from subspaces.linalg import ToleranceConfig, DEFAULT_TOL, as_matrix, orthonormalize, svd, energy_rank
from subspaces.subspace import Subspace, extend

logger = logging.getLogger(__name__)


@dataclass
class RelaxConfig:
    """
    Relaxing-space search settings.

    Args:
        zeta_hidden (float):      cos of the relaxing angle for hidden layers.
        zeta_output (float):      cos of the relaxing angle for the output layer.
        zeta (list or None):      [Optional] per-layer override of both values above.
        k_g (int):                Max dimension of the gradient representation space.
        epsilon_g (float or None): Energy threshold of the gradient space. None reuses the method's epsilon.
        e_t (int):                Epochs between two searches.
        max_search_rounds (int):  Max number of searches per task.
        probe_size (int):         Samples in the per-round probe batch.
    """
    zeta_hidden: float = 0.95
    zeta_output: float = 0.9
    zeta: Optional[List[float]] = None
    k_g: int = 10
    epsilon_g: Optional[float] = None
    e_t: int = 1
    max_search_rounds: int = 2
    probe_size: int = 256

    def __post_init__(self):
        zetas = [self.zeta_hidden, self.zeta_output] + list(self.zeta or [])
        if not all(0 < z <= 1 for z in zetas):
            raise InvalidInputError('zeta must lie in (0, 1], got %s' % zetas)
        if self.k_g < 1 or self.e_t < 1 or self.max_search_rounds < 1 or self.probe_size < 1:
            raise InvalidInputError('k_g, e_t, max_search_rounds and probe_size must be >= 1')
        if self.epsilon_g is not None and not 0 < self.epsilon_g <= 1:
            raise InvalidInputError('epsilon_g must lie in (0, 1]')

    def zeta_for(self, layer: int, n_layers: int) -> float:
        if self.zeta is not None:
            if len(self.zeta) != n_layers:
                raise InvalidInputError('%i zeta values given for %i layers' % (len(self.zeta), n_layers))
            return float(self.zeta[layer])
        return float(self.zeta_output if layer == n_layers - 1 else self.zeta_hidden)


@dataclass
class SearchReport:
    added_dims: int = 0
    cosines: List[float] = field(default_factory=list)
    rounds_used: int = 0
    complement_max_cosine: float = 0.0

    def to_dict(self):
        return asdict(self)


def _rep_space_from_stack(stack: torch.Tensor, k_g: int, epsilon_g: float, tol: ToleranceConfig) -> Subspace:
    if stack.numel() == 0 or stack.abs().max() == 0:
        # nothing is relaxable
        return Subspace.empty(stack.shape[1], tol)
    _, singular, right = svd(stack)
    k = min(k_g, energy_rank(singular, epsilon_g))
    return Subspace(right[:, :k], tol)


def gradient_rep_space(per_sample_grads, k_g: int, epsilon_g: float, tol: ToleranceConfig = DEFAULT_TOL) -> Subspace:
    """
    Gradient representation space of a layer: leading right singular directions of the
    per-sample (out, in) gradients stacked vertically. The result lives in the layer input space.

    Args:
        per_sample_grads:  list of (out, in) matrices or a (N, out, in) tensor.
        k_g (int):         cap on the dimension.
        epsilon_g (float): energy threshold.
    """
    if isinstance(per_sample_grads, (list, tuple)):
        if len(per_sample_grads) == 0:
            raise InvalidInputError('no per-sample gradients given')
        per_sample_grads = torch.stack([torch.as_tensor(g, dtype=DTYPE) for g in per_sample_grads])
    grads = torch.as_tensor(per_sample_grads, dtype=DTYPE)
    if grads.dim() != 3 or grads.shape[0] == 0:
        raise InvalidInputError('expected a nonempty (N, out, in) stack of gradients')
    stack = as_matrix(grads.reshape(-1, grads.shape[-1]), 'gradients')
    return _rep_space_from_stack(stack, k_g, epsilon_g, tol)


def gradient_rep_space_from_factors(deltas, inputs, k_g: int, epsilon_g: float,
                                    tol: ToleranceConfig = DEFAULT_TOL) -> Subspace:
    """
    Same space as gradient_rep_space for rank-1 per-sample gradients delta_i h_i^T.
    Since G^T G = sum_i |delta_i|^2 h_i h_i^T, the SVD of diag(|delta_i|) H gives the same
    singular values and right singular vectors without the (N, out, in) stack.

    Args:
        deltas: (N, out) per-sample output deltas.
        inputs: (N, in) per-sample layer inputs.
    """
    deltas = as_matrix(deltas, 'deltas')
    inputs = as_matrix(inputs, 'inputs')
    if deltas.shape[0] != inputs.shape[0] or deltas.shape[0] == 0:
        raise InvalidInputError('deltas and inputs must hold the same nonzero number of samples')
    weighted = deltas.norm(dim=1, keepdim=True) * inputs
    return _rep_space_from_stack(weighted, k_g, epsilon_g, tol)


def complement_space(u: Subspace, v: Subspace) -> Subspace:
    """U \\ V: U's basis orthogonalized against V and re-orthonormalized."""
    if u.ambient_dim != v.ambient_dim:
        raise InvalidInputError('subspaces live in different ambient dimensions')
    if v.is_empty:
        return u
    if u.is_empty:
        return u
    return Subspace(orthonormalize(u.basis, u.tol, against=v.basis), u.tol)


def closest_direction(complement: Subspace, rg: Subspace):
    """
    Unit d in the complement with the largest cosine to R_g, from the top singular triple of
    B_c^T B_Rg. Ties among equal top singular values resolve to the first SVD vector.

    Return:
        (d, cosine) with cosine in [0, 1].
    """
    if complement.is_empty or rg.is_empty:
        raise EmptySpaceError('closest direction needs a nonempty complement and gradient space')
    if complement.ambient_dim != rg.ambient_dim:
        raise InvalidInputError('subspaces live in different ambient dimensions')
    left, singular, _ = svd(complement.basis.T @ rg.basis)
    if singular[0] == 0:
        # fully orthogonal: every complement direction is equally far
        return complement.basis[:, 0].clone(), 0.0
    d = complement.basis @ left[:, 0]
    d = d / d.norm()
    return d, float(singular[0].clamp(0.0, 1.0))


def check_inside(v: Subspace, u: Subspace):
    """Raises PreconditionError unless every basis vector of V lies in U up to 10x the angle tolerance."""
    if u.ambient_dim != v.ambient_dim:
        raise InvalidInputError('subspaces live in different ambient dimensions')
    if v.is_empty:
        return
    residual = v.basis - u.basis @ (u.basis.T @ v.basis) if not u.is_empty else v.basis
    worst = float(residual.norm(dim=0).max())
    if worst > u.tol.angle_tol * 10:
        raise PreconditionError('relaxing space is not inside the frozen space (residual %.2e)' % worst)


def search_relaxing_space(u: Subspace, rg: Subspace, zeta: float, existing_v: Subspace = None):
    """
    Greedy relaxing-space search. Starting from existing_v, the closest complement direction to
    R_g is appended while its cosine reaches zeta. At most dim(R_g) directions are accepted.

    Return:
        (V, SearchReport)
    """
    if existing_v is None:
        existing_v = Subspace.empty(u.ambient_dim, u.tol)
    if u.ambient_dim != rg.ambient_dim or u.ambient_dim != existing_v.ambient_dim:
        raise InvalidInputError('subspaces live in different ambient dimensions')
    if not 0 < zeta <= 1:
        raise InvalidInputError('zeta must lie in (0, 1], got %s' % zeta)
    check_inside(existing_v, u)
    report = SearchReport()
    v = existing_v
    if u.is_empty or rg.is_empty:
        return v, report

    # equality with zeta is accepted
    threshold = zeta - u.tol.cosine_tol
    while True:
        complement = complement_space(u, v)
        if complement.is_empty:
            report.complement_max_cosine = 0.0
            break
        d, cosine = closest_direction(complement, rg)
        if report.added_dims >= rg.dim:
            # capped: this probe only records the termination witness
            report.complement_max_cosine = cosine
            break
        report.rounds_used += 1
        if cosine < threshold:
            report.complement_max_cosine = cosine
            break
        v = extend(v, Subspace(d.reshape(-1, 1), u.tol))
        report.added_dims += 1
        report.cosines.append(cosine)
    logger.debug('relaxing search: +%i dims, cosines %s', report.added_dims, report.cosines)
    return v, report


@dataclass
class TheoremChecklist:
    rank_bound: bool
    maximality: bool
    lemma_ordering: bool
    lemma_sampling: bool
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.rank_bound and self.maximality and self.lemma_ordering and self.lemma_sampling


def verify_theorems(u: Subspace, rg: Subspace, zeta: float, v: Subspace, report: SearchReport,
                    n_samples: int = 10_000, generator: torch.Generator = None, slack: float = 1e-6):
    """
    Executable checks on a finished search:
        rank bound:   dim(V) - dim(V_0) <= dim(R_g), and at most dim(R_g) search rounds ran;
        maximality:   no complement direction reaches zeta any more (recomputed, not read from the report);
        ordering:     accepted cosines are non-increasing and sampled unit vectors of V are at least
                      as close to R_g as the last accepted direction, up to slack.
    """
    details = {}
    rank_bound = report.added_dims <= rg.dim and v.dim <= u.dim and report.rounds_used <= rg.dim
    details['dim_v'] = v.dim
    details['dim_rg'] = rg.dim

    complement = complement_space(u, v)
    if complement.is_empty or rg.is_empty:
        witness = 0.0
    else:
        witness = closest_direction(complement, rg)[1]
    threshold = zeta - u.tol.cosine_tol
    maximality = witness < threshold and report.complement_max_cosine < threshold
    details['complement_max_cosine'] = witness

    cosines = report.cosines
    lemma_ordering = all(a >= b - slack for a, b in zip(cosines, cosines[1:])) and \
        all(c >= threshold for c in cosines)

    lemma_sampling = True
    if report.added_dims > 0:
        # sample the accepted directions only; existing columns carry no ordering guarantee
        accepted = v.basis[:, v.dim - report.added_dims:]
        coeffs = torch.randn(accepted.shape[1], n_samples, dtype=DTYPE, generator=generator)
        samples = accepted @ coeffs
        samples = samples / samples.norm(dim=0, keepdim=True)
        sample_cosines = (rg.basis.T @ samples).norm(dim=0).clamp(max=1.0)
        worst = float(sample_cosines.min())
        details['min_sampled_cosine'] = worst
        lemma_sampling = worst >= cosines[-1] - slack
    return TheoremChecklist(rank_bound, maximality, lemma_ordering, lemma_sampling, details)

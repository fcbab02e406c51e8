import torch
from dataclasses import dataclass

from config import DTYPE
from assistive_functions import to_tensor
from exceptions import InvalidInputError, NumericalFailureError


@dataclass(frozen=True)
class ToleranceConfig:
    """
    Numerical tolerance policy shared by every subspace operation.

    Args:
        rank_tol (float):        Relative cutoff on residual norms / singular values.
        orthonorm_tol (float):   Max allowed entry of |B^T B - I| for a basis.
        angle_tol (float):       Slack in radians for angle comparisons.
        cosine_tol (float):      Slack on cosine comparisons against a threshold.
    """
    rank_tol: float = 1e-10
    orthonorm_tol: float = 1e-8
    angle_tol: float = 1e-9
    cosine_tol: float = 1e-12

    def __post_init__(self):
        for name in ('rank_tol', 'orthonorm_tol', 'angle_tol', 'cosine_tol'):
            if not getattr(self, name) > 0:
                raise InvalidInputError('tolerance %s must be strictly positive' % name)


DEFAULT_TOL = ToleranceConfig()

_SVD_ATTEMPTS = 2


def check_finite(m: torch.Tensor, name: str = 'matrix') -> torch.Tensor:
    if not torch.isfinite(m).all():
        raise InvalidInputError('%s has non-finite entries' % name)
    return m


def as_matrix(m, name: str = 'matrix') -> torch.Tensor:
    m = to_tensor(m)
    if m.dim() == 1:
        m = m.reshape(-1, 1)
    if m.dim() != 2:
        raise InvalidInputError('%s must be 2-D, got shape %s' % (name, tuple(m.shape)))
    return check_finite(m, name)


def orthonormalize(m, tol: ToleranceConfig = DEFAULT_TOL, against: torch.Tensor = None) -> torch.Tensor:
    """
    Gram-Schmidt with one re-orthogonalization pass.

    Columns are processed left to right; each is orthogonalized twice against the basis
    accumulated so far (and against the orthonormal columns of "against", when given).
    A column whose residual norm is below rank_tol times the largest column norm is dropped.

    Args:
        m:        (n, c) matrix.
        tol:      tolerance policy.
        against:  [Optional] (n, k) orthonormal columns the result must be orthogonal to.
    Return:
        (n, r) matrix with orthonormal columns, r the numerical rank of the surviving part.
    """
    m = as_matrix(m)
    n = m.shape[0]
    if m.shape[1] == 0:
        return m.new_zeros(n, 0)
    cutoff = tol.rank_tol * m.norm(dim=0).max()
    q = m.new_zeros(n, 0) if against is None else against
    start = q.shape[1]
    for j in range(m.shape[1]):
        v = m[:, j].clone()
        for _ in range(2):
            v = v - q @ (q.T @ v)
        norm = v.norm()
        if norm > cutoff and norm > 0:
            q = torch.cat((q, (v / norm).reshape(-1, 1)), dim=1)
    return q[:, start:].contiguous()


def _apply_sign_convention(left, right):
    # largest-magnitude entry of every right singular vector is made non-negative
    if right.shape[1] == 0:
        return left, right
    idx = right.abs().argmax(dim=0)
    signs = torch.sign(right[idx, torch.arange(right.shape[1])])
    signs[signs == 0] = 1.0
    return left * signs, right * signs


def svd(m):
    """
    Thin SVD, m = left @ diag(singular) @ right.T with singular values non-increasing.

    Return:
        left (n, k), singular (k,), right (c, k) with k = min(n, c).
    """
    m = as_matrix(m)
    scale = m.abs().max() if m.numel() > 0 else m.new_tensor(0.0)
    if scale == 0:
        k = min(m.shape)
        return m.new_zeros(m.shape[0], k), m.new_zeros(k), m.new_zeros(m.shape[1], k)
    work = m
    for attempt in range(1, _SVD_ATTEMPTS + 1):
        try:
            u, s, vh = torch.linalg.svd(work, full_matrices=False)
        except torch.linalg.LinAlgError:
            # retry on the normalized matrix before giving up
            work = m / scale
            continue
        if attempt > 1:
            s = s * scale
        left, right = _apply_sign_convention(u, vh.T)
        return left, s, right
    raise NumericalFailureError('SVD did not converge on a %ix%i matrix' % tuple(m.shape), _SVD_ATTEMPTS)


def energy_rank(singular, epsilon: float) -> int:
    """
    Smallest k such that the k leading squared singular values hold at least
    an epsilon fraction of the total squared spectrum.
    """
    singular = torch.as_tensor(singular, dtype=DTYPE)
    if not 0 < epsilon <= 1:
        raise InvalidInputError('epsilon must lie in (0, 1], got %s' % epsilon)
    check_finite(singular, 'singular values')
    if (singular < 0).any():
        raise InvalidInputError('singular values must be non-negative')
    energy = singular ** 2
    total = energy.sum()
    if total == 0:
        raise InvalidInputError('all-zero spectrum has no energy rank')
    ratio = torch.cumsum(energy, dim=0) / total
    # the last ratio is 1 up to roundoff; epsilon = 1 must still keep every nonzero mode
    hits = torch.nonzero(ratio >= epsilon * (1 - 1e-15)).flatten()
    k = int(hits[0]) + 1 if hits.numel() > 0 else energy.numel()
    return min(k, int((energy > 0).sum()))

import math
import struct
import numpy as np
import torch
from dataclasses import dataclass, field

from config import DTYPE
from exceptions import InvalidInputError, PreconditionError, FormatError
from subspaces.linalg import ToleranceConfig, DEFAULT_TOL, as_matrix, orthonormalize, svd, energy_rank

SERIAL_VERSION = 1
_HEADER = struct.Struct('>BII')


@dataclass(frozen=True, eq=False)
class Subspace:
    """
    Orthonormal basis of a subspace of R^ambient_dim, stored as the columns of "basis".
    Used for frozen spaces U, representation spaces R, gradient spaces R_g and relaxing spaces V.
    The basis is never modified after construction. Equality is identity; compare spans with
    principal_cosines or angle.
    """
    basis: torch.Tensor
    tol: ToleranceConfig = field(default=DEFAULT_TOL, repr=False, compare=False)

    def __post_init__(self):
        basis = as_matrix(self.basis, 'basis')
        if basis.shape[1] > basis.shape[0]:
            raise InvalidInputError('a basis of %i columns cannot live in dimension %i' % (basis.shape[1], basis.shape[0]))
        if basis.shape[1] > 0:
            gram_error = (basis.T @ basis - torch.eye(basis.shape[1], dtype=DTYPE)).abs().max()
            if gram_error >= self.tol.orthonorm_tol:
                raise InvalidInputError('basis is not orthonormal (max |B^T B - I| = %.2e)' % gram_error)
        object.__setattr__(self, 'basis', basis.contiguous())

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def is_empty(self) -> bool:
        return self.dim == 0

    @classmethod
    def empty(cls, ambient_dim: int, tol: ToleranceConfig = DEFAULT_TOL):
        return cls(torch.zeros(ambient_dim, 0, dtype=DTYPE), tol)

    @classmethod
    def from_columns(cls, columns, tol: ToleranceConfig = DEFAULT_TOL):
        """Span of arbitrary (possibly dependent) columns."""
        return cls(orthonormalize(columns, tol), tol)

    def projector(self) -> torch.Tensor:
        return self.basis @ self.basis.T

    # ---- serialization ----
    def to_bytes(self) -> bytes:
        body = self.basis.detach().cpu().numpy().astype('>f8', copy=False).tobytes(order='C')
        return _HEADER.pack(SERIAL_VERSION, self.ambient_dim, self.dim) + body

    @classmethod
    def from_bytes(cls, payload: bytes, tol: ToleranceConfig = DEFAULT_TOL):
        if len(payload) < _HEADER.size:
            raise FormatError('truncated subspace header', len(payload))
        version, ambient_dim, dim = _HEADER.unpack_from(payload, 0)
        if version != SERIAL_VERSION:
            raise FormatError('unknown subspace format version %i' % version, 0)
        expected = _HEADER.size + 8 * ambient_dim * dim
        if len(payload) != expected:
            raise FormatError('subspace body has %i bytes, expected %i' % (len(payload), expected),
                              min(len(payload), expected))
        values = np.frombuffer(payload, dtype='>f8', offset=_HEADER.size).astype(np.float64)
        return cls(torch.from_numpy(values.reshape(ambient_dim, dim).copy()), tol)


def _vector(v, ambient_dim: int) -> torch.Tensor:
    v = torch.as_tensor(v, dtype=DTYPE).flatten()
    if v.shape[0] != ambient_dim:
        raise InvalidInputError('vector of length %i does not match ambient dimension %i' % (v.shape[0], ambient_dim))
    if not torch.isfinite(v).all():
        raise InvalidInputError('vector has non-finite entries')
    return v


def project(v, s: Subspace) -> torch.Tensor:
    """B B^T v."""
    v = _vector(v, s.ambient_dim)
    if s.is_empty:
        return torch.zeros_like(v)
    return s.basis @ (s.basis.T @ v)


def angle(v, s: Subspace) -> float:
    """
    Minimum angle between v and any unit vector of s, i.e. arccos(|B B^T v| / |v|) in [0, pi/2].
    The angle to an empty subspace is pi/2.
    """
    v = _vector(v, s.ambient_dim)
    norm = v.norm()
    if norm == 0:
        raise InvalidInputError('the angle of the zero vector is undefined')
    if s.is_empty:
        return math.pi / 2
    coefficients = s.basis.T @ v
    residual = v - s.basis @ coefficients
    # atan2 stays accurate near 0 and pi/2, where arccos of the cosine does not
    return math.atan2(float(residual.norm()), float(coefficients.norm()))


def cosine_to(v, s: Subspace) -> float:
    """cos of angle(v, s), computed without the arccos round trip."""
    v = _vector(v, s.ambient_dim)
    norm = v.norm()
    if norm == 0:
        raise InvalidInputError('the angle of the zero vector is undefined')
    if s.is_empty:
        return 0.0
    return min(1.0, float((s.basis.T @ v).norm() / norm))


def extend(u: Subspace, r: Subspace) -> Subspace:
    """
    span(U u R). U's columns are kept verbatim and in order; R's columns are orthogonalized
    against them and the surviving directions are appended.
    """
    if u.ambient_dim != r.ambient_dim:
        raise InvalidInputError('cannot extend a %i-dim ambient space with a %i-dim one' % (u.ambient_dim, r.ambient_dim))
    if r.is_empty:
        return u
    added = orthonormalize(r.basis, u.tol, against=u.basis)
    if added.shape[1] == 0:
        return u
    return Subspace(torch.cat((u.basis, added), dim=1), u.tol)


def extract_representation_space(samples, epsilon: float, tol: ToleranceConfig = DEFAULT_TOL) -> Subspace:
    """
    Top-k left singular directions of the representation matrix (columns are samples),
    k the energy rank at threshold epsilon.
    """
    samples = as_matrix(samples, 'samples')
    if samples.numel() == 0 or samples.abs().max() == 0:
        raise InvalidInputError('representation matrix has no nonzero column')
    left, singular, _ = svd(samples)
    k = energy_rank(singular, epsilon)
    return Subspace(left[:, :k], tol)


def extend_by_residual(u: Subspace, samples, epsilon: float, tol: ToleranceConfig = DEFAULT_TOL) -> Subspace:
    """
    Incremental frozen-space update: directions are taken from the part of the representation matrix
    lying outside U, and only as many as needed for U plus the new directions to hold an epsilon
    fraction of the matrix energy.
    """
    samples = as_matrix(samples, 'samples')
    if samples.shape[0] != u.ambient_dim:
        raise InvalidInputError('samples live in dimension %i, frozen space in %i' % (samples.shape[0], u.ambient_dim))
    total = (samples ** 2).sum()
    if total == 0:
        raise InvalidInputError('representation matrix has no nonzero column')
    residual = samples if u.is_empty else samples - u.basis @ (u.basis.T @ samples)
    captured = total - (residual ** 2).sum()
    if captured / total >= epsilon:
        return u
    left, singular, _ = svd(residual)
    cumulative = (captured + torch.cumsum(singular ** 2, dim=0)) / total
    hits = torch.nonzero(cumulative >= epsilon * (1 - 1e-15)).flatten()
    k = int(hits[0]) + 1 if hits.numel() > 0 else int((singular > 0).sum())
    return extend(u, Subspace(orthonormalize(left[:, :k], tol), tol))


def oblique_combine(v, u: Subspace, theta: float) -> torch.Tensor:
    """
    Unit vector at angle theta from U, built as cos(theta) u_1 + sin(theta) v
    from a unit v orthogonal to U and the first basis column u_1 of U.
    """
    if u.is_empty:
        raise PreconditionError('oblique combination needs a nonempty subspace')
    if not 0 <= theta <= math.pi / 2 + u.tol.angle_tol:
        raise InvalidInputError('theta must lie in [0, pi/2], got %s' % theta)
    v = _vector(v, u.ambient_dim)
    if abs(float(v.norm()) - 1.0) > u.tol.orthonorm_tol:
        raise PreconditionError('v must be a unit vector')
    if abs(angle(v, u) - math.pi / 2) > u.tol.angle_tol:
        raise PreconditionError('v must be orthogonal to the subspace')
    return math.cos(theta) * u.basis[:, 0] + math.sin(theta) * v


def principal_cosines(a: Subspace, b: Subspace) -> torch.Tensor:
    """Cosines of the principal angles between two subspaces, non-increasing."""
    if a.ambient_dim != b.ambient_dim:
        raise InvalidInputError('subspaces live in different ambient dimensions')
    if a.is_empty or b.is_empty:
        return torch.zeros(0, dtype=DTYPE)
    return svd(a.basis.T @ b.basis)[1].clamp(0.0, 1.0)

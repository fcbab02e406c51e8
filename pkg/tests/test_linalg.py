import math
import pytest
import torch

from config import DTYPE
from exceptions import InvalidInputError, NumericalFailureError
from subspaces.linalg import ToleranceConfig, orthonormalize, svd, energy_rank, as_matrix


def test_orthonormalize_identity():
    eye = torch.eye(3, dtype=DTYPE)
    torch.testing.assert_close(orthonormalize(eye), eye)


def test_orthonormalize_drops_repeated_column():
    b = orthonormalize(torch.tensor([[1.0, 1.0], [0.0, 0.0]], dtype=DTYPE))
    assert b.shape == (2, 1)
    torch.testing.assert_close(b[:, 0], torch.tensor([1.0, 0.0], dtype=DTYPE))


def test_orthonormalize_random_full_rank(generator):
    m = torch.randn(6, 4, dtype=DTYPE, generator=generator)
    b = orthonormalize(m)
    assert b.shape == (6, 4)
    assert (b.T @ b - torch.eye(4, dtype=DTYPE)).abs().max() < 1e-8
    assert (m - b @ (b.T @ m)).norm() < 1e-8 * m.norm()


def test_orthonormalize_against_basis(generator):
    q = orthonormalize(torch.randn(7, 3, dtype=DTYPE, generator=generator))
    b = orthonormalize(torch.randn(7, 3, dtype=DTYPE, generator=generator), against=q)
    assert b.shape == (7, 3)
    assert (q.T @ b).abs().max() < 1e-12


@pytest.mark.parametrize('n_cols', [1, 5, 20])
def test_orthonormalize_rank_deficient(generator, n_cols):
    m = torch.randn(10, 2, dtype=DTYPE, generator=generator) @ torch.randn(2, n_cols, dtype=DTYPE, generator=generator)
    assert orthonormalize(m).shape[1] == min(2, n_cols)


def test_orthonormalize_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        orthonormalize(torch.tensor([[1.0, math.nan]], dtype=DTYPE))


def test_svd_diagonal():
    _, s, _ = svd(torch.diag(torch.tensor([3.0, 2.0], dtype=DTYPE)))
    torch.testing.assert_close(s, torch.tensor([3.0, 2.0], dtype=DTYPE))


def test_svd_zero_matrix():
    left, s, right = svd(torch.zeros(4, 3, dtype=DTYPE))
    assert torch.all(s == 0)
    assert left.shape == (4, 3) and right.shape == (3, 3)


@pytest.mark.parametrize('shape', [(8, 5), (5, 8), (64, 64), (256, 256)])
def test_svd_reconstruction_and_eigen_oracle(generator, shape):
    m = torch.randn(*shape, dtype=DTYPE, generator=generator)
    left, s, right = svd(m)
    assert (left @ torch.diag(s) @ right.T - m).norm() < 1e-8 * m.norm()
    assert torch.all(s[:-1] >= s[1:])
    gram = m.T @ m if shape[0] >= shape[1] else m @ m.T
    oracle = torch.linalg.eigvalsh(gram).clamp(min=0).sqrt().flip(0)
    assert (oracle - s).abs().max() < 1e-7 * max(1.0, float(s[0]))


def test_svd_sign_convention_is_deterministic(generator):
    m = torch.randn(6, 4, dtype=DTYPE, generator=generator)
    _, _, right = svd(m)
    idx = right.abs().argmax(dim=0)
    assert torch.all(right[idx, torch.arange(4)] >= 0)
    _, _, right_neg = svd(-m)
    torch.testing.assert_close(right, right_neg)


def test_svd_reports_non_convergence(monkeypatch):
    def failing(*args, **kwargs):
        raise torch.linalg.LinAlgError('no convergence')

    monkeypatch.setattr(torch.linalg, 'svd', failing)
    with pytest.raises(NumericalFailureError) as err:
        svd(torch.ones(3, 3, dtype=DTYPE))
    assert err.value.iterations == 2


@pytest.mark.parametrize('singular, epsilon, expected', [
    ([3.0, 2.0, 1.0], 1.0, 3),
    ([1.0, 0.0, 0.0], 0.5, 1),
    ([3.0, 2.0, 1.0], 0.9, 2),
    ([3.0, 2.0, 1.0], 9.0 / 14.0, 1),
    ([1.0, 0.0, 0.0], 1.0, 1),
])
def test_energy_rank(singular, epsilon, expected):
    assert energy_rank(torch.tensor(singular, dtype=DTYPE), epsilon) == expected


def test_energy_rank_monotone_in_epsilon(generator):
    s = torch.rand(12, dtype=DTYPE, generator=generator).sort(descending=True).values
    ranks = [energy_rank(s, e) for e in torch.linspace(0.05, 1.0, 40).tolist()]
    assert ranks == sorted(ranks)


def test_energy_rank_errors():
    with pytest.raises(InvalidInputError):
        energy_rank(torch.zeros(3, dtype=DTYPE), 0.5)
    with pytest.raises(InvalidInputError):
        energy_rank(torch.tensor([1.0], dtype=DTYPE), 0.0)
    with pytest.raises(InvalidInputError):
        energy_rank(torch.tensor([1.0], dtype=DTYPE), 1.5)


def test_tolerances_must_be_positive():
    with pytest.raises(InvalidInputError):
        ToleranceConfig(rank_tol=0.0)
    with pytest.raises(InvalidInputError):
        ToleranceConfig(cosine_tol=-1.0)


def test_as_matrix_promotes_vectors_and_rejects_tensors():
    assert as_matrix([1.0, 2.0]).shape == (2, 1)
    with pytest.raises(InvalidInputError):
        as_matrix(torch.zeros(2, 2, 2))

import math

import pytest
import torch

from config import DTYPE
from exceptions import InvalidInputError
from assistive_functions import substream
from networks import Mlp, finite_diff_check, relative_error, save_checkpoint, load_checkpoint


def make_net(dims=(6, 5, 4, 3), seed=0, **kwargs):
    return Mlp(list(dims), generator=substream(seed, 'init'), **kwargs)


def batch(generator, n=8, d=6, classes=3):
    return torch.randn(n, d, dtype=DTYPE, generator=generator), torch.randint(0, classes, (n,), generator=generator)


# ----- construction -----
def test_init_bounds_and_shapes():
    net = make_net()
    assert [tuple(w.shape) for w in net.weights] == [(5, 6), (4, 5), (3, 4)]
    for w in net.weights:
        bound = (6.0 / (w.shape[0] + w.shape[1])) ** 0.5
        assert float(w.abs().max()) <= bound
    assert all(float(b.abs().max()) == 0.0 for b in net.biases)


def test_init_is_seeded():
    a, b = make_net(seed=3), make_net(seed=3)
    assert all(torch.equal(x, y) for x, y in zip(a.weights, b.weights))
    assert not torch.equal(make_net(seed=4).weights[0], a.weights[0])


@pytest.mark.parametrize('kwargs', [dict(head_mode='both'), dict(loss='hinge'), dict(head_mode='multi', n_tasks=2)])
def test_invalid_construction(kwargs):
    with pytest.raises(InvalidInputError):
        make_net(**kwargs)


# ----- forward -----
def test_zero_weights_give_uniform_softmax(generator):
    net = make_net()
    for w in net.weights:
        w.data.zero_()
    x, y = batch(generator)
    logits, inputs = net(x)
    assert torch.all(logits == 0)
    assert len(inputs) == 3 and torch.equal(inputs[0], x)
    assert net.loss(x, y) == pytest.approx(math.log(3.0), abs=1e-12)


def test_identity_single_layer(generator):
    net = Mlp([4, 4])
    net.weights[0].data.copy_(torch.eye(4, dtype=DTYPE))
    x = torch.randn(5, 4, dtype=DTYPE, generator=generator)
    torch.testing.assert_close(net(x)[0], x, rtol=0, atol=0)


def test_forward_rejects_wrong_width(generator):
    with pytest.raises(InvalidInputError):
        make_net()(torch.zeros(2, 7, dtype=DTYPE))


def test_forward_is_deterministic(generator):
    x, _ = batch(generator)
    assert torch.equal(make_net(seed=9)(x)[0], make_net(seed=9)(x)[0])


def test_multi_head_slices_logits(generator):
    net = Mlp([6, 8, 4], head_mode='multi', n_tasks=2, generator=generator)
    x = torch.randn(3, 6, dtype=DTYPE, generator=generator)
    logits, _ = net(x, task_id=1)
    assert logits.shape == (3, 2)
    assert net.class_range(1) == (2, 4)
    assert torch.all(net.predict(x, task_id=1) >= 2)
    with pytest.raises(InvalidInputError):
        net.backward(x, torch.tensor([0, 1, 2]), task_id=1)


# ----- backward -----
def test_single_sample_closed_form(generator):
    net = Mlp([4, 3], use_bias=False, generator=generator)
    x = torch.randn(1, 4, dtype=DTYPE, generator=generator)
    y = torch.tensor([2])
    trace = net.backward(x, y)
    p = torch.softmax(x @ net.weights[0].T, dim=1)[0]
    onehot = torch.zeros(3, dtype=DTYPE)
    onehot[2] = 1.0
    torch.testing.assert_close(trace.mean_grad[0], torch.outer(p - onehot, x[0]))


def test_saturated_softmax_has_no_gradient():
    net = Mlp([2, 2], use_bias=False)
    net.weights[0].data.copy_(100.0 * torch.eye(2, dtype=DTYPE))
    x = torch.eye(2, dtype=DTYPE)
    trace = net.backward(x, torch.tensor([0, 1]))
    assert float(trace.mean_grad[0].abs().max()) < 1e-6


def test_per_sample_grads_average_to_mean(generator):
    net = make_net()
    x, y = batch(generator)
    trace = net.backward(x, y)
    for per_sample, mean in zip(trace.per_sample_grads, trace.mean_grad):
        assert (per_sample.mean(dim=0) - mean).abs().max() < 1e-10


def test_labels_out_of_range(generator):
    x, _ = batch(generator)
    with pytest.raises(InvalidInputError):
        make_net().backward(x, torch.full((8,), 3))


# ----- finite differences -----
def test_finite_diff_relu_net(generator):
    net = make_net()
    for b in net.biases:
        b.data.copy_(0.1 * torch.randn(b.shape, dtype=DTYPE, generator=generator))
    x, y = batch(generator)
    assert finite_diff_check(net, x, y, step=1e-5, n_coords=100, generator=generator) < 1e-4


def test_finite_diff_linear_quadratic_is_exact(generator):
    net = Mlp([5, 3], loss='mse', generator=generator)
    x, y = batch(generator, d=5)
    assert finite_diff_check(net, x, y, step=1e-3, n_coords=100, generator=generator) < 1e-9


def test_finite_diff_second_order(generator):
    net = make_net()
    x, y = batch(generator)
    coarse = finite_diff_check(net, x, y, step=1e-3, n_coords=100, generator=substream(1, 'coords'))
    fine = finite_diff_check(net, x, y, step=5e-4, n_coords=100, generator=substream(1, 'coords'))
    assert fine <= 4 * coarse + 1e-12


def test_finite_diff_rejects_bad_step(generator):
    x, y = batch(generator)
    with pytest.raises(InvalidInputError):
        finite_diff_check(make_net(), x, y, step=0.0)


def test_relative_error_floor_is_absolute_for_small_coordinates():
    analytic = torch.tensor([1.0, 1e-9], dtype=DTYPE)
    numeric = torch.tensor([1.0, 2e-9], dtype=DTYPE)
    # the small coordinate is off by a factor 2 but only by 1e-9 in absolute terms
    assert relative_error(analytic, numeric) == pytest.approx(1e-7, rel=1e-9)
    assert relative_error(analytic, numeric, floor=0.0) == pytest.approx(0.5, rel=1e-9)
    assert relative_error(analytic, numeric, floor=1.0) == pytest.approx(1e-9, rel=1e-9)


def test_relative_error_rejects_negative_floor():
    x = torch.ones(3, dtype=DTYPE)
    with pytest.raises(InvalidInputError):
        relative_error(x, x, floor=-1.0)


# ----- sgd -----
def test_sgd_zero_lr_and_linearity(generator):
    net = make_net()
    x, y = batch(generator)
    grads = net.backward(x, y).mean_grad
    before = [w.detach().clone() for w in net.weights]
    net.sgd_step(grads, 0.0)
    assert all(torch.equal(a, w) for a, w in zip(before, net.weights))

    twice = make_net()
    twice.sgd_step(grads, 0.1)
    twice.sgd_step(grads, 0.1)
    once = make_net()
    once.sgd_step([2 * g for g in grads], 0.1)
    for a, b in zip(twice.weights, once.weights):
        torch.testing.assert_close(a, b)


def test_sgd_scalar_problem():
    net = Mlp([1, 1], use_bias=False)
    net.weights[0].data.fill_(2.0)
    net.sgd_step([torch.tensor([[0.5]], dtype=DTYPE)], 0.1)
    assert float(net.weights[0]) == pytest.approx(1.95)


def test_sgd_refuses_non_finite():
    net = make_net()
    grads = [torch.zeros_like(w) for w in net.weights]
    grads[1][0, 0] = float('inf')
    with pytest.raises(InvalidInputError):
        net.sgd_step(grads, 0.1)
    with pytest.raises(InvalidInputError):
        net.sgd_step(grads[:2], 0.1)


def test_checkpoint_round_trip(tmp_path, generator):
    net = make_net(head_mode='multi', n_tasks=3)
    path = tmp_path / 'net.pt'
    save_checkpoint(net, path, extra={'seed': 5})
    loaded, extra = load_checkpoint(path)
    assert extra == {'seed': 5} and loaded.head_mode == 'multi'
    assert all(torch.equal(a, b) for a, b in zip(net.weights, loaded.weights))

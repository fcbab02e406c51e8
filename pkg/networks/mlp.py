import math
import torch
import torch.nn as nn
from dataclasses import dataclass
from typing import List, Optional

from config import DTYPE
from exceptions import InvalidInputError, FormatError

CHECKPOINT_VERSION = 1


@dataclass
class BatchTrace:
    """
    Everything one forward/backward pass exposes to the projection rules.
    Rows of inputs_per_layer[l] are the per-sample inputs h^l of layer l, rows of deltas[l] the
    per-sample derivatives of the sample loss wrt the layer outputs.
    """
    inputs_per_layer: List[torch.Tensor]
    deltas: List[torch.Tensor]
    mean_grad: List[torch.Tensor]
    bias_grad: List[torch.Tensor]
    loss: float

    @property
    def per_sample_grads(self) -> List[torch.Tensor]:
        # (N, out, in) per layer, delta_i h_i^T
        return [torch.einsum('no,ni->noi', d, h) for d, h in zip(self.deltas, self.inputs_per_layer)]


class Mlp(nn.Module):
    """
    Fully-connected ReLU network trained by explicit backpropagation (no autograd).

    Args:
        layer_dims (list):    e.g. [784, 100, 100, 10].
        head_mode (str):      'single' or 'multi'. In multi-head mode the output units are split into
                              n_tasks equal class slices and each task only sees its own slice.
        n_tasks (int):        number of heads in multi-head mode.
        use_bias (bool):      [Optional] train biases (never projected). Default True.
        loss (str):           'cross_entropy' (softmax) or 'mse' (half squared error to one-hot targets).
        generator:            [Optional] torch.Generator for the initialization.
    """

    def __init__(self, layer_dims, head_mode: str = 'single', n_tasks: int = 1, use_bias: bool = True,
                 loss: str = 'cross_entropy', generator: Optional[torch.Generator] = None):
        super().__init__()
        if len(layer_dims) < 2 or any(d < 1 for d in layer_dims):
            raise InvalidInputError('layer_dims needs at least two positive sizes, got %s' % list(layer_dims))
        if head_mode not in ('single', 'multi'):
            raise InvalidInputError('head_mode must be single or multi, got %s' % head_mode)
        if loss not in ('cross_entropy', 'mse'):
            raise InvalidInputError('loss must be cross_entropy or mse, got %s' % loss)
        n_tasks = n_tasks if head_mode == 'multi' else 1
        if layer_dims[-1] % n_tasks != 0:
            raise InvalidInputError('%i output units cannot be split over %i heads' % (layer_dims[-1], n_tasks))

        self.layer_dims = [int(d) for d in layer_dims]
        self.head_mode = head_mode
        self.n_tasks = n_tasks
        self.use_bias = use_bias
        self.loss_type = loss
        self.classes_per_task = self.layer_dims[-1] // n_tasks

        weights, biases = [], []
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            w = (torch.rand(fan_out, fan_in, dtype=DTYPE, generator=generator) * 2 - 1) * bound
            weights.append(nn.Parameter(w, requires_grad=False))
            biases.append(nn.Parameter(torch.zeros(fan_out, dtype=DTYPE), requires_grad=False))
        self.weights = nn.ParameterList(weights)
        self.biases = nn.ParameterList(biases)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def class_range(self, task_id: int):
        if self.head_mode == 'single':
            return 0, self.layer_dims[-1]
        if not 0 <= task_id < self.n_tasks:
            raise InvalidInputError('task %i has no head (%i heads)' % (task_id, self.n_tasks))
        return task_id * self.classes_per_task, (task_id + 1) * self.classes_per_task

    def _check_batch(self, batch):
        batch = torch.as_tensor(batch, dtype=DTYPE)
        if batch.dim() != 2 or batch.shape[1] != self.layer_dims[0]:
            raise InvalidInputError('batch must be (N, %i), got %s' % (self.layer_dims[0], tuple(batch.shape)))
        return batch

    def _weights(self, weights):
        return list(self.weights) if weights is None else weights

    def forward(self, batch, task_id: int = 0, weights: Optional[List[torch.Tensor]] = None):
        """
        Args:
            batch:    (N, in) inputs, one sample per row.
            task_id:  selects the head in multi-head mode.
            weights:  [Optional] per-layer weights used instead of the live ones (effective weights).
        Return:
            logits (N, classes of the task) and the list of per-layer inputs.
        """
        logits, inputs, _ = self._forward(self._check_batch(batch), task_id, self._weights(weights))
        return logits, inputs

    def _forward(self, batch, task_id, weights):
        inputs, pre_activations = [], []
        h = batch
        for l, (w, b) in enumerate(zip(weights, self.biases)):
            inputs.append(h)
            z = h @ w.T
            if self.use_bias:
                z = z + b
            pre_activations.append(z)
            h = torch.relu(z) if l < self.n_layers - 1 else z
        lo, hi = self.class_range(task_id)
        return h[:, lo:hi], inputs, pre_activations

    def _loss_and_delta(self, logits, labels, task_id):
        lo, hi = self.class_range(task_id)
        labels = torch.as_tensor(labels, dtype=torch.long)
        if labels.dim() != 1 or labels.shape[0] != logits.shape[0]:
            raise InvalidInputError('expected %i labels' % logits.shape[0])
        if labels.numel() and (labels.min() < lo or labels.max() >= hi):
            raise InvalidInputError('labels must lie in the class range [%i, %i) of task %i' % (lo, hi, task_id))
        targets = torch.zeros_like(logits)
        targets[torch.arange(labels.shape[0]), labels - lo] = 1.0
        if self.loss_type == 'cross_entropy':
            log_probs = torch.log_softmax(logits, dim=1)
            loss = -(log_probs * targets).sum(dim=1).mean()
            delta = torch.exp(log_probs) - targets
        else:
            residual = logits - targets
            loss = 0.5 * (residual ** 2).sum(dim=1).mean()
            delta = residual
        return float(loss), delta

    def loss(self, batch, labels, task_id: int = 0, weights: Optional[List[torch.Tensor]] = None) -> float:
        logits, _ = self.forward(batch, task_id, weights)
        return self._loss_and_delta(logits, labels, task_id)[0]

    def backward(self, batch, labels, task_id: int = 0, weights: Optional[List[torch.Tensor]] = None) -> BatchTrace:
        """
        Exact gradients of the mean loss over the batch, with per-sample deltas kept.
        """
        batch = self._check_batch(batch)
        weights = self._weights(weights)
        logits, inputs, pre_activations = self._forward(batch, task_id, weights)
        loss, delta_head = self._loss_and_delta(logits, labels, task_id)

        lo, hi = self.class_range(task_id)
        delta = torch.zeros(batch.shape[0], self.layer_dims[-1], dtype=DTYPE)
        delta[:, lo:hi] = delta_head

        n = batch.shape[0]
        deltas = [None] * self.n_layers
        for l in reversed(range(self.n_layers)):
            deltas[l] = delta
            if l > 0:
                delta = (delta @ weights[l]) * (pre_activations[l - 1] > 0).to(DTYPE)
        mean_grad = [d.T @ h / n for d, h in zip(deltas, inputs)]
        bias_grad = [d.mean(dim=0) if self.use_bias else torch.zeros(d.shape[1], dtype=DTYPE) for d in deltas]
        return BatchTrace(inputs_per_layer=inputs, deltas=deltas, mean_grad=mean_grad, bias_grad=bias_grad, loss=loss)

    def sgd_step(self, grads: List[torch.Tensor], lr: float, bias_grads: Optional[List[torch.Tensor]] = None):
        """W <- W - lr * grad per layer; biases take their own unprojected gradients."""
        if len(grads) != self.n_layers:
            raise InvalidInputError('%i gradients given for %i layers' % (len(grads), self.n_layers))
        for l, g in enumerate(grads):
            if g.shape != self.weights[l].shape:
                raise InvalidInputError('gradient of layer %i has shape %s, expected %s'
                                        % (l, tuple(g.shape), tuple(self.weights[l].shape)))
            if not torch.isfinite(g).all():
                raise InvalidInputError('refusing a non-finite update on layer %i' % l)
        if bias_grads is not None and not all(torch.isfinite(b).all() for b in bias_grads):
            raise InvalidInputError('refusing a non-finite bias update')
        for l, g in enumerate(grads):
            self.weights[l].data.sub_(lr * g)
            if self.use_bias and bias_grads is not None:
                self.biases[l].data.sub_(lr * bias_grads[l])

    def predict(self, batch, task_id: int = 0, weights: Optional[List[torch.Tensor]] = None) -> torch.Tensor:
        lo, _ = self.class_range(task_id)
        logits, _ = self.forward(batch, task_id, weights)
        return logits.argmax(dim=1) + lo

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.weights) + (sum(p.numel() for p in self.biases) if self.use_bias else 0)


def finite_diff_check(net: Mlp, batch, labels, step: float = 1e-5, task_id: int = 0, n_coords: int = 100,
                      generator: Optional[torch.Generator] = None, floor: float = 1e-2) -> float:
    """
    Max error between backward's mean gradient and central differences of the loss,
    on n_coords weight coordinates drawn at random over all layers.
    The error is relative_error(..., floor): relative for the large coordinates and absolute,
    against floor times the largest coordinate, for the small ones.
    """
    if not step > 0:
        raise InvalidInputError('finite-difference step must be positive')
    trace = net.backward(batch, labels, task_id)
    sizes = [w.numel() for w in net.weights]
    offsets = torch.cumsum(torch.tensor([0] + sizes), dim=0)
    picks = torch.randint(0, int(offsets[-1]), (n_coords,), generator=generator)

    analytic, numeric = [], []
    for flat in picks.tolist():
        l = int(torch.searchsorted(offsets, torch.tensor(flat), right=True)) - 1
        idx = flat - int(offsets[l])
        weights = [w.detach().clone() for w in net.weights]
        w = weights[l].view(-1)
        original = float(w[idx])
        w[idx] = original + step
        plus = net.loss(batch, labels, task_id, weights)
        w[idx] = original - step
        minus = net.loss(batch, labels, task_id, weights)
        numeric.append((plus - minus) / (2 * step))
        analytic.append(float(trace.mean_grad[l].view(-1)[idx]))
    return relative_error(torch.tensor(analytic, dtype=DTYPE), torch.tensor(numeric, dtype=DTYPE), floor)


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = 1e-2) -> float:
    """
    Max over coordinates of |a - n| / max(|a|, |n|, floor * largest magnitude).
    With floor > 0 this is a hybrid error: coordinates much smaller than the largest one are
    measured relative to floor * largest, i.e. in absolute terms, so that the rounding noise of a
    near-zero derivative is not reported as a 100% error. floor = 0 gives the pure relative error.
    """
    if floor < 0:
        raise InvalidInputError('relative error floor must be non-negative')
    magnitude = torch.maximum(analytic.abs(), numeric.abs())
    denominator = max(floor * float(magnitude.max()), 1e-12)
    scale = torch.maximum(magnitude, torch.tensor(denominator, dtype=DTYPE))
    return float(((analytic - numeric).abs() / scale).max())


def save_checkpoint(net: Mlp, path, extra: Optional[dict] = None):
    payload = {
        'version': CHECKPOINT_VERSION,
        'layer_dims': net.layer_dims,
        'head_mode': net.head_mode,
        'n_tasks': net.n_tasks,
        'use_bias': net.use_bias,
        'loss': net.loss_type,
        'state_dict': net.state_dict(),
        'extra': extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path):
    payload = torch.load(path, weights_only=False)
    if payload.get('version') != CHECKPOINT_VERSION:
        raise FormatError('unsupported checkpoint version %s' % payload.get('version'), 0)
    net = Mlp(payload['layer_dims'], head_mode=payload['head_mode'], n_tasks=payload['n_tasks'],
              use_bias=payload['use_bias'], loss=payload['loss'])
    net.load_state_dict(payload['state_dict'])
    return net, payload['extra']

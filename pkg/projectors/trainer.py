import time
import logging
import torch
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Callable, List, Optional
from torch.utils.data import DataLoader, TensorDataset
from tqdm import tqdm

from assistive_functions import substream, thread_cap
from config import DTYPE
from exceptions import InvalidInputError, NumericalFailureError
from networks.mlp import Mlp, relative_error
from subspaces.subspace import Subspace, extend, extract_representation_space, extend_by_residual
from subspaces.relax import RelaxConfig, gradient_rep_space_from_factors, search_relaxing_space
from projectors.projections import LayerTaskState, ExpStore, gpm_project, rogo_modify, scale_grad, reg_loss, \
    expand_scale, consolidate, effective_weight, exp_inference_weights

logger = logging.getLogger(__name__)

METHODS = ('plain', 'gpm', 'rogo', 'rogo_exp')


@dataclass
class MethodConfig:
    """
    Args:
        method (str):         plain | gpm | rogo | rogo_exp.
        epsilon (float):      energy threshold of the representation spaces.
        relax (RelaxConfig):  relaxing-space search settings.
        lr (float):           SGD learning rate.
        epochs (int):         epochs per task.
        batch_size (int):     mini-batch size.
        seed (int):           master seed of the run.
        beta (float):         weight of the scale regularizer, shared by all layers.
        beta_layers (list):   [Optional] per-layer override of beta.
        rep_samples (int):    training samples used to extract representation spaces.
        frozen_update (str):  union (append the extracted space) | residual (incremental energy criterion).
    """
    method: str = 'rogo'
    epsilon: float = 0.95
    relax: RelaxConfig = field(default_factory=RelaxConfig)
    lr: float = 0.01
    epochs: int = 5
    batch_size: int = 10
    seed: int = 0
    beta: float = 1.0
    beta_layers: Optional[List[float]] = None
    rep_samples: int = 300
    frozen_update: str = 'union'

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError('method must be one of %s, got %s' % (METHODS, self.method))
        if not 0 < self.epsilon <= 1:
            raise InvalidInputError('epsilon must lie in (0, 1], got %s' % self.epsilon)
        if self.epochs < 1 or self.batch_size < 1 or self.rep_samples < 1:
            raise InvalidInputError('epochs, batch_size and rep_samples must be >= 1')
        if not self.lr >= 0 or self.beta < 0:
            raise InvalidInputError('lr and beta must be non-negative')
        if self.frozen_update not in ('union', 'residual'):
            raise InvalidInputError('frozen_update must be union or residual, got %s' % self.frozen_update)

    @property
    def relaxes(self) -> bool:
        return self.method in ('rogo', 'rogo_exp')

    @property
    def projects(self) -> bool:
        return self.method != 'plain'

    def beta_for(self, layer: int, n_layers: int) -> float:
        if self.beta_layers is None:
            return float(self.beta)
        if len(self.beta_layers) != n_layers:
            raise InvalidInputError('%i beta values given for %i layers' % (len(self.beta_layers), n_layers))
        return float(self.beta_layers[layer])

    @property
    def epsilon_g(self) -> float:
        return self.epsilon if self.relax.epsilon_g is None else self.relax.epsilon_g


@dataclass
class ContinualMemory:
    """What survives between tasks: one frozen space per layer, and the ExpStore for rogo_exp."""
    frozen: List[Subspace]
    store: ExpStore = field(default_factory=ExpStore)

    @classmethod
    def empty(cls, net: Mlp):
        return cls(frozen=[Subspace.empty(d) for d in net.layer_dims[:-1]])


@dataclass
class TaskReport:
    task_id: int
    method: str
    relaxing_dims: List[int] = field(default_factory=list)
    frozen_dims_before: List[int] = field(default_factory=list)
    frozen_dims_after: List[int] = field(default_factory=list)
    relaxing_ratios: List[float] = field(default_factory=list)
    search_rounds: int = 0
    searches: List[List[dict]] = field(default_factory=list)  # [round][layer]
    extra_parameters: int = 0
    epoch_losses: List[float] = field(default_factory=list)
    wall_clock: float = 0.0

    def to_dict(self):
        return asdict(self)


def _loader(task, cfg: MethodConfig, task_id: int) -> DataLoader:
    dataset = TensorDataset(task.train_x, task.train_y)
    return DataLoader(dataset, batch_size=cfg.batch_size, shuffle=True,
                      generator=substream(cfg.seed, 'batch_order:%i' % task_id))


def _effective_weights(net: Mlp, states: List[LayerTaskState]) -> List[torch.Tensor]:
    return [effective_weight(w.data, s.relaxing, s.scale) if not s.relaxing.is_empty else w.data
            for w, s in zip(net.weights, states)]


def training_step(net: Mlp, x, y, head: int, states: List[LayerTaskState], cfg: MethodConfig,
                  step_hook: Optional[Callable] = None) -> float:
    """
    One SGD step under the method's gradient rule. ROGO layers with a nonempty relaxing space run the
    forward pass on their effective weights and also take a step on S.
    Return:
        the objective (loss plus scale regularizer).
    """
    weights = _effective_weights(net, states) if cfg.relaxes else None
    trace = net.backward(x, y, head, weights=weights)
    grads, scale_updates = [], []
    for l, g in enumerate(trace.mean_grad):
        state = states[l]
        if cfg.method == 'plain':
            modified = g
        elif cfg.method == 'gpm':
            modified = gpm_project(g, state.frozen)
        else:
            modified = rogo_modify(g, state)
            if not state.relaxing.is_empty:
                scale_updates.append((state, scale_grad(g, net.weights[l].data, state)))
        if step_hook is not None:
            step_hook(l, modified, state)
        grads.append(modified)
    objective = trace.loss + (reg_loss(states) if cfg.relaxes else 0.0)
    net.sgd_step(grads, cfg.lr, trace.bias_grad)
    for state, grad_s in scale_updates:
        if not torch.isfinite(grad_s).all():
            raise NumericalFailureError('non-finite scale gradient', 1)
        state.scale = state.scale - cfg.lr * grad_s
    return objective


def search_round(net: Mlp, task, head: int, states: List[LayerTaskState], cfg: MethodConfig,
                 task_id: int, round_id: int) -> List[dict]:
    """
    Fresh gradient spaces from a probe batch, then a relaxing-space search on every layer whose
    frozen space is nonempty. Layers are independent and searched concurrently.
    """
    n = task.train_x.shape[0]
    probe = torch.randperm(n, generator=substream(cfg.seed, 'probe:%i:%i' % (task_id, round_id)))
    probe = probe[:min(cfg.relax.probe_size, n)]
    trace = net.backward(task.train_x[probe], task.train_y[probe], head, weights=_effective_weights(net, states))
    n_layers = net.n_layers

    def search_layer(l):
        state = states[l]
        if state.frozen.is_empty:
            return state.relaxing, None
        rg = gradient_rep_space_from_factors(trace.deltas[l], trace.inputs_per_layer[l], cfg.relax.k_g,
                                             cfg.epsilon_g, state.frozen.tol)
        return search_relaxing_space(state.frozen, rg, cfg.relax.zeta_for(l, n_layers), state.relaxing)

    with ThreadPoolExecutor(max_workers=min(thread_cap(), n_layers)) as pool:
        results = list(pool.map(search_layer, range(n_layers)))

    reports = []
    for l, (relaxing, report) in enumerate(results):
        expand_scale(states[l], relaxing)
        reports.append({'layer': l, 'round': round_id, **(report.to_dict() if report else {'added_dims': 0})})
    return reports


def update_frozen_spaces(net: Mlp, task, head: int, memory: ContinualMemory, cfg: MethodConfig, task_id: int,
                         weights: Optional[List[torch.Tensor]] = None):
    """Extract each layer's representation space from the task's inputs and merge it into U."""
    n = task.train_x.shape[0]
    picks = torch.randperm(n, generator=substream(cfg.seed, 'representation:%i' % task_id))[:cfg.rep_samples]
    _, inputs = net.forward(task.train_x[picks], head, weights)
    for l, h in enumerate(inputs):
        samples = h.T
        if samples.abs().max() == 0:
            logger.warning('layer %i saw only zero inputs on task %i; frozen space unchanged', l, task_id)
            continue
        if cfg.frozen_update == 'residual':
            memory.frozen[l] = extend_by_residual(memory.frozen[l], samples, cfg.epsilon)
        else:
            memory.frozen[l] = extend(memory.frozen[l], extract_representation_space(samples, cfg.epsilon))


def train_task(net: Mlp, task, memory: ContinualMemory, cfg: MethodConfig, task_id: int,
               step_hook: Optional[Callable] = None) -> TaskReport:
    """
    Train one task of the sequence and update the continual memory.

    1. V starts empty on every layer;
    2. (rogo, rogo_exp) after every e_t epochs a search round extends V and S, until a round adds
       nothing or max_search_rounds is reached;
    3. the remaining epochs run with the final V and S;
    4. rogo consolidates S into the weights, rogo_exp stores (V, S) per layer;
    5. every projecting method merges the task's representation spaces into the frozen spaces.
    """
    start = time.time()
    head = task.head
    n_layers = net.n_layers
    states = [LayerTaskState.fresh(memory.frozen[l], cfg.beta_for(l, n_layers)) for l in range(n_layers)]
    report = TaskReport(task_id=task_id, method=cfg.method,
                        frozen_dims_before=[u.dim for u in memory.frozen])
    searching = cfg.relaxes and any(not u.is_empty for u in memory.frozen)
    loader = _loader(task, cfg, task_id)

    try:
        tqdm_bar = tqdm(range(cfg.epochs), desc='Task %i [%s]' % (task_id + 1, cfg.method), disable=None, leave=False)
        for epoch in tqdm_bar:
            losses = []
            for x, y in loader:
                losses.append(training_step(net, x, y, head, states, cfg, step_hook))
            epoch_loss = sum(losses) / max(len(losses), 1)
            report.epoch_losses.append(epoch_loss)
            tqdm_bar.set_postfix(loss=epoch_loss)

            if searching and (epoch + 1) % cfg.relax.e_t == 0 and epoch + 1 < cfg.epochs:
                round_reports = search_round(net, task, head, states, cfg, task_id, report.search_rounds)
                report.searches.append(round_reports)
                report.search_rounds += 1
                added = sum(r['added_dims'] for r in round_reports)
                logger.debug('task %i round %i: %i relaxing dims added', task_id + 1, report.search_rounds, added)
                if added == 0 or report.search_rounds >= cfg.relax.max_search_rounds:
                    searching = False
    except NumericalFailureError as err:
        report.wall_clock = time.time() - start
        err.report = report
        logger.error('task %i aborted: %s', task_id + 1, err)
        raise

    report.relaxing_dims = [s.relaxing.dim for s in states]
    report.relaxing_ratios = [s.relaxing.dim / s.frozen.dim if s.frozen.dim else 0.0 for s in states]

    inference_weights = None
    if cfg.method == 'rogo':
        consolidate(net, states)
    elif cfg.method == 'rogo_exp':
        memory.store.store(task_id, states)
        inference_weights = exp_inference_weights(list(net.weights), memory.store, task_id)
        report.extra_parameters = memory.store.extra_parameters()

    if cfg.projects:
        update_frozen_spaces(net, task, head, memory, cfg, task_id, inference_weights)
    report.frozen_dims_after = [u.dim for u in memory.frozen]
    report.wall_clock = time.time() - start
    logger.info('Task %i [%s] --- loss: %.4f --- relaxing dims: %s --- frozen dims: %s --- time: %.1f s',
                task_id + 1, cfg.method, report.epoch_losses[-1], report.relaxing_dims,
                report.frozen_dims_after, report.wall_clock)
    return report


def task_weights(net: Mlp, memory: ContinualMemory, cfg: MethodConfig, task_id: int):
    """Weights used to evaluate a task: the stored ones under rogo_exp, the live ones otherwise."""
    if cfg.method == 'rogo_exp' and task_id in memory.store:
        return exp_inference_weights(list(net.weights), memory.store, task_id)
    return None


def evaluate_task(net: Mlp, task, weights: Optional[List[torch.Tensor]] = None) -> float:
    """Test accuracy on one task, in [0, 1]."""
    if task.test_x.shape[0] == 0:
        return 0.0
    with torch.no_grad():
        predictions = net.predict(task.test_x, task.head, weights)
    return float((predictions == task.test_y).to(DTYPE).mean())


def scale_finite_diff_check(net: Mlp, x, y, head: int, states: List[LayerTaskState], step: float = 1e-5,
                            floor: float = 1e-2) -> float:
    """
    Max error between scale_grad and central differences of
    loss(effective weights) + reg_loss(states), over every entry of every nonempty S.
    Measured with relative_error(..., floor), absolute below floor times the largest entry.
    """
    if not step > 0:
        raise InvalidInputError('finite-difference step must be positive')
    trace = net.backward(x, y, head, weights=_effective_weights(net, states))
    analytic, numeric = [], []
    for l, state in enumerate(states):
        if state.relaxing.is_empty:
            continue
        grad_s = scale_grad(trace.mean_grad[l], net.weights[l].data, state)
        original = state.scale.clone()
        for i in range(original.shape[0]):
            for j in range(original.shape[1]):
                values = []
                for sign in (1.0, -1.0):
                    state.scale = original.clone()
                    state.scale[i, j] += sign * step
                    values.append(net.loss(x, y, head, _effective_weights(net, states)) + reg_loss(states))
                state.scale = original
                numeric.append((values[0] - values[1]) / (2 * step))
                analytic.append(float(grad_s[i, j]))
    if not analytic:
        raise InvalidInputError('no layer has a relaxing space to check')
    return relative_error(torch.tensor(analytic, dtype=DTYPE), torch.tensor(numeric, dtype=DTYPE), floor)

import torch
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from config import DTYPE
from exceptions import InvalidInputError, PreconditionError, TaskLookupError
from subspaces.linalg import as_matrix
from subspaces.subspace import Subspace
from subspaces.relax import complement_space, check_inside


@dataclass(eq=False)
class LayerTaskState:
    """
    Continual-learning memory of one layer while a task is trained.

    Args:
        frozen:      U_{t-1}, spanned by the inputs of all previous tasks.
        relaxing:    V_t, subspace of U whose directions may move under scale control.
        complement:  U \\ V, kept in sync by refresh().
        scale:       S_t, (dim V, dim V), starts at identity.
        beta:        weight of ||S - I||_F^2 in the objective.
    """
    frozen: Subspace
    relaxing: Subspace = None
    complement: Subspace = None
    scale: torch.Tensor = None
    beta: float = 1.0

    def __post_init__(self):
        if self.relaxing is None:
            self.relaxing = Subspace.empty(self.frozen.ambient_dim, self.frozen.tol)
        if self.scale is None:
            self.scale = torch.eye(self.relaxing.dim, dtype=DTYPE)
        self.refresh()

    def refresh(self):
        check_inside(self.relaxing, self.frozen)
        self.complement = complement_space(self.frozen, self.relaxing)
        if self.scale.shape != (self.relaxing.dim, self.relaxing.dim):
            raise InvalidInputError('scale of shape %s does not match a %i-dim relaxing space'
                                    % (tuple(self.scale.shape), self.relaxing.dim))

    @classmethod
    def fresh(cls, frozen: Subspace, beta: float = 1.0):
        """Task start: V empty, S of size 0."""
        return cls(frozen=frozen, beta=beta)

    @property
    def ambient_dim(self) -> int:
        return self.frozen.ambient_dim


def _check_grad(g, ambient_dim: int, name: str = 'gradient') -> torch.Tensor:
    g = as_matrix(g, name)
    if g.shape[1] != ambient_dim:
        raise InvalidInputError('%s with %i input columns does not match subspace dimension %i'
                                % (name, g.shape[1], ambient_dim))
    return g


def gpm_project(g, u: Subspace) -> torch.Tensor:
    """g - g B_U B_U^T: every row of g is projected off the frozen space."""
    g = _check_grad(g, u.ambient_dim)
    if u.is_empty:
        return g
    return g - (g @ u.basis) @ u.basis.T


def scaled_project(g, v: Subspace, s: torch.Tensor) -> torch.Tensor:
    """g B_V S B_V^T."""
    g = _check_grad(g, v.ambient_dim)
    s = torch.as_tensor(s, dtype=DTYPE)
    if s.shape != (v.dim, v.dim):
        raise InvalidInputError('scale of shape %s does not match a %i-dim subspace' % (tuple(s.shape), v.dim))
    if v.is_empty:
        return torch.zeros_like(g)
    return ((g @ v.basis) @ s) @ v.basis.T


def rogo_modify(g, state: LayerTaskState) -> torch.Tensor:
    """
    g - g B_U B_U^T + g B_V S B_V^T. With an empty relaxing space this is exactly gpm_project;
    with S = I it equals g - g B_C B_C^T for the complement C = U \\ V.
    """
    projected = gpm_project(g, state.frozen)
    if state.relaxing.is_empty:
        return projected
    return projected + scaled_project(g, state.relaxing, state.scale)


def effective_weight(w, v: Subspace, s: torch.Tensor) -> torch.Tensor:
    """W - W B_V B_V^T + W B_V S B_V^T."""
    w = _check_grad(w, v.ambient_dim, 'weight')
    if v.is_empty:
        return w
    s = torch.as_tensor(s, dtype=DTYPE)
    wb = w @ v.basis
    return w - wb @ v.basis.T + (wb @ s) @ v.basis.T


def scale_grad(g, w, state: LayerTaskState) -> torch.Tensor:
    """
    Gradient of the objective wrt S for one layer.

    The loss sees the effective weight W_eff(S) = W + W B_V (S - I) B_V^T, so with
    g = dL/dW_eff the loss path is B_V^T W^T g B_V; the regularizer adds 2 beta (S - I).

    Args:
        g: (out, in) loss gradient wrt the effective weight.
        w: (out, in) live weight.
    """
    if state.relaxing.is_empty:
        raise PreconditionError('scale gradient requested with an empty relaxing space')
    g = _check_grad(g, state.ambient_dim)
    w = _check_grad(w, state.ambient_dim, 'weight')
    b = state.relaxing.basis
    loss_path = (b.T @ w.T) @ (g @ b)
    return loss_path + 2.0 * state.beta * (state.scale - torch.eye(state.relaxing.dim, dtype=DTYPE))


def reg_loss(states: List[LayerTaskState]) -> float:
    """sum_l beta_l ||S_l - I||_F^2."""
    total = 0.0
    for state in states:
        if state.relaxing.is_empty:
            continue
        diff = state.scale - torch.eye(state.relaxing.dim, dtype=DTYPE)
        total += state.beta * float((diff ** 2).sum())
    return total


def expand_scale(state: LayerTaskState, relaxing: Subspace):
    """
    Grow V to "relaxing" (which must keep the old basis as its leading columns) and S block-diagonally
    with an identity block for the added directions.
    """
    old = state.relaxing
    added = relaxing.dim - old.dim
    if added < 0:
        raise InvalidInputError('the relaxing space cannot shrink during a task')
    if added == 0:
        return state
    if old.dim and not torch.equal(relaxing.basis[:, :old.dim], old.basis):
        raise InvalidInputError('the expanded relaxing space must keep the previous basis as prefix')
    state.scale = torch.block_diag(state.scale, torch.eye(added, dtype=DTYPE))
    state.relaxing = relaxing
    state.refresh()
    return state


def consolidate(net, states: List[LayerTaskState]):
    """
    End-of-task rewrite W <- W - W B_V B_V^T + W B_V S B_V^T on every layer, then S is dropped
    (V reset to empty, S to a 0x0 identity).
    """
    for l, state in enumerate(states):
        if not state.relaxing.is_empty:
            net.weights[l].data.copy_(effective_weight(net.weights[l].data, state.relaxing, state.scale))
        state.relaxing = Subspace.empty(state.ambient_dim, state.frozen.tol)
        state.scale = torch.eye(0, dtype=DTYPE)
        state.refresh()


@dataclass
class ExpStore:
    """Per task and layer: relaxing basis and final scale matrix kept for inference."""
    entries: Dict[int, List[tuple]] = field(default_factory=dict)

    def store(self, task_id: int, states: List[LayerTaskState]):
        self.entries[task_id] = [(state.relaxing, state.scale.detach().clone()) for state in states]

    def lookup(self, task_id: int):
        if task_id not in self.entries:
            raise TaskLookupError('no relaxing space stored for task %i' % task_id)
        return self.entries[task_id]

    def __contains__(self, task_id):
        return task_id in self.entries

    def extra_parameters(self, up_to_task: Optional[int] = None) -> int:
        """sum over stored tasks and layers of dim(V) * ambient + dim(V)^2 scalars."""
        total = 0
        for task_id, layers in self.entries.items():
            if up_to_task is not None and task_id > up_to_task:
                continue
            total += sum(v.dim * v.ambient_dim + v.dim ** 2 for v, _ in layers)
        return total


def exp_inference_weights(weights: List[torch.Tensor], store: ExpStore, task_id: int) -> List[torch.Tensor]:
    """Inference weights of a stored task; the live weights are left untouched."""
    layers = store.lookup(task_id)
    if len(layers) != len(weights):
        raise InvalidInputError('store holds %i layers, network has %i' % (len(layers), len(weights)))
    return [effective_weight(w.detach().clone(), v, s) for w, (v, s) in zip(weights, layers)]

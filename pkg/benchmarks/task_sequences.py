import logging
import torch
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from assistive_functions import substream
from config import DTYPE
from exceptions import InvalidInputError
from benchmarks.idx_loader import IdxDataset

logger = logging.getLogger(__name__)


@dataclass
class TaskData:
    """
    One task of a continual-learning sequence. Inputs are (N, d) float64 rows, labels are global
    class indices inside class_range.
    """
    train_x: torch.Tensor
    train_y: torch.Tensor
    val_x: torch.Tensor
    val_y: torch.Tensor
    test_x: torch.Tensor
    test_y: torch.Tensor
    class_range: tuple
    head: int = 0

    @property
    def input_dim(self) -> int:
        return self.train_x.shape[1]


@dataclass
class TaskSequence:
    tasks: List[TaskData]
    kind: str
    seed: int
    permutations: List[torch.Tensor] = field(default_factory=list)

    def __len__(self):
        return len(self.tasks)

    def __getitem__(self, t) -> TaskData:
        return self.tasks[t]

    def __iter__(self):
        return iter(self.tasks)


def _take(dataset: IdxDataset, start: int, count: Optional[int]):
    stop = len(dataset) if count is None else start + count
    if stop > len(dataset):
        raise InvalidInputError('requested %i samples, the dataset holds %i' % (stop, len(dataset)))
    return dataset.images[start:stop], dataset.labels[start:stop]


def _split_base(train: IdxDataset, test: IdxDataset, n_train, n_val, n_test):
    if n_train is None:
        n_train = len(train) - n_val
    train_x, train_y = _take(train, 0, n_train)
    val_x, val_y = _take(train, n_train, n_val)
    test_x, test_y = _take(test, 0, n_test)
    return train_x, train_y, val_x, val_y, test_x, test_y


def make_permuted_tasks(train: IdxDataset, test: IdxDataset, n_tasks: int, seed: int,
                        n_train: Optional[int] = None, n_val: int = 0, n_test: Optional[int] = None) -> TaskSequence:
    """
    Permuted-pixel sequence. Task 1 sees the images unchanged, every later task applies its own
    seeded pixel permutation, shared by its train, validation and test sets. All tasks use every class.

    Args:
        train, test:  base datasets.
        n_tasks:      number of tasks T >= 1.
        n_train:      [Optional] training samples per task, taken from the head of "train". Default all.
        n_val:        validation samples per task, taken right after the training ones.
        n_test:       [Optional] test samples per task. Default all.
    """
    if n_tasks < 1:
        raise InvalidInputError('a task sequence needs at least one task, got %i' % n_tasks)
    base = _split_base(train, test, n_train, n_val, n_test)
    n_pixels = base[0].shape[1]
    n_classes = int(max(train.labels.max(), test.labels.max())) + 1 if len(train) else 0

    permutations = [torch.arange(n_pixels)]
    for t in range(1, n_tasks):
        generator = substream(seed, 'permutations:%i' % t)
        perm = torch.randperm(n_pixels, generator=generator)
        # distinct from every earlier task
        while any(torch.equal(perm, p) for p in permutations):
            perm = torch.randperm(n_pixels, generator=generator)
        permutations.append(perm)

    tasks = []
    for perm in permutations:
        train_x, train_y, val_x, val_y, test_x, test_y = base
        tasks.append(TaskData(train_x[:, perm], train_y, val_x[:, perm], val_y, test_x[:, perm], test_y,
                              class_range=(0, n_classes), head=0))
    logger.info('%i permuted tasks: %i train / %i val / %i test samples each',
                n_tasks, base[0].shape[0], base[2].shape[0], base[4].shape[0])
    return TaskSequence(tasks=tasks, kind='permuted', seed=seed, permutations=permutations)


def make_split_tasks(train: IdxDataset, test: IdxDataset, n_tasks: int, seed: int, n_classes: Optional[int] = None,
                     n_train: Optional[int] = None, n_val: int = 0, n_test: Optional[int] = None) -> TaskSequence:
    """
    Class-split sequence: task t keeps the samples of classes [t*c, (t+1)*c) with c = n_classes / T,
    and is trained on head t of a multi-head network. Per-task sample caps apply after the split.
    """
    if n_tasks < 1:
        raise InvalidInputError('a task sequence needs at least one task, got %i' % n_tasks)
    n_classes = n_classes or int(max(train.labels.max(), test.labels.max())) + 1
    if n_classes % n_tasks != 0:
        raise InvalidInputError('%i classes cannot be split over %i tasks' % (n_classes, n_tasks))
    per_task = n_classes // n_tasks

    tasks = []
    for t in range(n_tasks):
        lo, hi = t * per_task, (t + 1) * per_task
        task_train = train.subset((train.labels >= lo) & (train.labels < hi))
        task_test = test.subset((test.labels >= lo) & (test.labels < hi))
        train_x, train_y, val_x, val_y, test_x, test_y = _split_base(task_train, task_test, n_train, n_val, n_test)
        tasks.append(TaskData(train_x, train_y, val_x, val_y, test_x, test_y, class_range=(lo, hi), head=t))
    logger.info('%i split tasks of %i classes each', n_tasks, per_task)
    return TaskSequence(tasks=tasks, kind='split', seed=seed)


@dataclass
class SyntheticSpec:
    """
    Args:
        input_dim:         ambient dimension of the inputs.
        supports:          per task, either a list of coordinate indices or a (input_dim, k) orthonormal basis.
        samples_per_task:  training samples per task.
        test_samples:      test samples per task.
        n_classes:         classes labelled by the fixed random linear map.
        orthogonal:        require mutually orthogonal supports.
        seed:              master seed.
    """
    input_dim: int
    supports: Sequence
    samples_per_task: int = 200
    test_samples: int = 100
    n_classes: int = 2
    orthogonal: bool = True
    seed: int = 0


def _support_basis(support, input_dim: int) -> torch.Tensor:
    support = torch.as_tensor(support)
    if support.dim() == 1:
        indices = support.to(torch.long)
        if indices.numel() == 0 or indices.min() < 0 or indices.max() >= input_dim:
            raise InvalidInputError('support coordinates must lie in [0, %i)' % input_dim)
        if indices.unique().numel() != indices.numel():
            raise InvalidInputError('support coordinates must be distinct')
        basis = torch.zeros(input_dim, indices.numel(), dtype=DTYPE)
        basis[indices, torch.arange(indices.numel())] = 1.0
        return basis
    basis = support.to(DTYPE)
    if basis.dim() != 2 or basis.shape[0] != input_dim:
        raise InvalidInputError('support basis must be (%i, k), got %s' % (input_dim, tuple(basis.shape)))
    return basis


def make_synthetic_tasks(spec: SyntheticSpec) -> TaskSequence:
    """
    Gaussian inputs confined to each task's support subspace, labelled by the argmax of one fixed
    random linear map shared by all tasks. Single head, all classes in every task.
    """
    if len(spec.supports) == 0:
        raise InvalidInputError('at least one task support is required')
    if spec.samples_per_task < 1 or spec.test_samples < 0 or spec.n_classes < 2:
        raise InvalidInputError('samples_per_task >= 1, test_samples >= 0 and n_classes >= 2 are required')
    bases = [_support_basis(s, spec.input_dim) for s in spec.supports]
    if spec.orthogonal:
        for i in range(len(bases)):
            for j in range(i + 1, len(bases)):
                overlap = float((bases[i].T @ bases[j]).abs().max())
                if overlap > 1e-12:
                    raise InvalidInputError('supports of tasks %i and %i overlap (max |cos| %.2e)' % (i, j, overlap))

    labeller = torch.randn(spec.n_classes, spec.input_dim, dtype=DTYPE, generator=substream(spec.seed, 'synthetic_labels'))
    empty_x = torch.zeros(0, spec.input_dim, dtype=DTYPE)
    empty_y = torch.zeros(0, dtype=torch.long)
    tasks = []
    for t, basis in enumerate(bases):
        generator = substream(spec.seed, 'synthetic:%i' % t)
        n = spec.samples_per_task + spec.test_samples
        x = torch.randn(n, basis.shape[1], dtype=DTYPE, generator=generator) @ basis.T
        y = (x @ labeller.T).argmax(dim=1)
        tasks.append(TaskData(x[:spec.samples_per_task], y[:spec.samples_per_task], empty_x, empty_y,
                              x[spec.samples_per_task:], y[spec.samples_per_task:],
                              class_range=(0, spec.n_classes), head=0))
    return TaskSequence(tasks=tasks, kind='synthetic', seed=spec.seed)

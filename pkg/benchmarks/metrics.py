import math
import numpy as np
from dataclasses import dataclass, field
from typing import Optional

from exceptions import InvalidInputError

IDENTITY_TOL = 1e-12


@dataclass
class AccuracyMatrix:
    """
    A[i, j]: test accuracy on task j after learning task i (0-based here), NaN where not measured.
    The lower triangle is filled during a run; A[i, i+1] holds the zero-shot accuracy used by FWT.
    b[j]: accuracy of a randomly initialized network on task j.
    """
    n_tasks: int
    A: np.ndarray = None
    b: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n_tasks < 1:
            raise InvalidInputError('an accuracy matrix needs at least one task')
        if self.A is None:
            self.A = np.full((self.n_tasks, self.n_tasks), np.nan)
        self.A = np.asarray(self.A, dtype=np.float64)
        if self.A.shape != (self.n_tasks, self.n_tasks):
            raise InvalidInputError('A must be %ix%i, got %s' % (self.n_tasks, self.n_tasks, self.A.shape))
        if self.b is not None:
            self.b = np.asarray(self.b, dtype=np.float64)

    def record(self, after_task: int, task: int, accuracy: float):
        if not 0.0 <= accuracy <= 1.0:
            raise InvalidInputError('accuracy %s outside [0, 1]' % accuracy)
        self.A[after_task, task] = accuracy

    def lower_complete(self) -> bool:
        return bool(np.all(np.isfinite(self.A[np.tril_indices(self.n_tasks)])))

    def superdiagonal_complete(self) -> bool:
        return bool(np.all(np.isfinite(np.diag(self.A, k=1))))

    def rows(self):
        """(i, j, accuracy) for every measured entry, row-major."""
        for i in range(self.n_tasks):
            for j in range(self.n_tasks):
                if np.isfinite(self.A[i, j]):
                    yield i, j, float(self.A[i, j])


def compute_metrics(m: AccuracyMatrix, with_fwt: Optional[bool] = None) -> dict:
    """
    ACC    = mean_i A[T, i];
    BWT    = mean_{i<T} (A[T, i] - A[i, i]);
    Omega  = mean_{i>=2} A[i, i];
    FWT    = mean_{i>=2} (A[i-1, i] - b_i), only when the superdiagonal and b are available.
    Tasks are 1-based in these formulas. BWT, Omega and FWT are NaN for a single task.
    Omega = T/(T-1) ACC - BWT - A[1, 1]/(T-1) is checked on every call.
    """
    if not m.lower_complete():
        raise InvalidInputError('accuracy matrix has missing entries in its lower triangle')
    t = m.n_tasks
    a = m.A
    last = a[t - 1]
    metrics = {'ACC': float(last.mean())}
    if t == 1:
        metrics.update(BWT=math.nan, Omega_new=math.nan, FWT=math.nan)
        return metrics

    diag = np.diag(a)
    metrics['BWT'] = float((last[:-1] - diag[:-1]).sum() / (t - 1))
    metrics['Omega_new'] = float(diag[1:].sum() / (t - 1))
    identity = t / (t - 1) * metrics['ACC'] - metrics['BWT'] - diag[0] / (t - 1)
    assert abs(identity - metrics['Omega_new']) <= IDENTITY_TOL, \
        'Omega_new identity violated: %.17g vs %.17g' % (identity, metrics['Omega_new'])

    fwt_ready = m.b is not None and m.superdiagonal_complete()
    if with_fwt and not fwt_ready:
        raise InvalidInputError('FWT needs the superdiagonal of A and the random-init accuracies b')
    if fwt_ready and with_fwt is not False:
        if m.b.shape != (t,):
            raise InvalidInputError('b must hold %i values' % t)
        metrics['FWT'] = float((np.diag(a, k=1) - m.b[1:]).sum() / (t - 1))
    else:
        metrics['FWT'] = math.nan
    return metrics

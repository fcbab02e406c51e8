import os
import json
import time
import logging
import dataclasses
import numpy as np
import pandas as pd
from dataclasses import dataclass, field
from typing import List, Optional
from omegaconf import OmegaConf

from assistive_functions import substream
from config import BASE_DIR
from exceptions import ConfigError, NumericalFailureError
from benchmarks import AccuracyMatrix, compute_metrics, load_idx, make_permuted_tasks, make_split_tasks, \
    make_synthetic_tasks, SyntheticSpec, TaskSequence
from networks.mlp import Mlp, save_checkpoint
from projectors.trainer import MethodConfig, ContinualMemory, TaskReport, train_task, evaluate_task, task_weights
from experiments.continual.run_config import RunConfig, BenchmarkConfig, echo_effective_config

logger = logging.getLogger(__name__)


@dataclass
class RunResult:
    seed: int
    matrix: AccuracyMatrix
    metrics: dict
    reports: List[TaskReport]
    net: Mlp = field(repr=False, default=None)
    memory: ContinualMemory = field(repr=False, default=None)
    wall_clock: float = 0.0

    def summary(self) -> dict:
        last = self.reports[-1] if self.reports else None
        return {
            'seed': self.seed,
            'metrics': self.metrics,
            'relaxing_ratios': [r.relaxing_ratios for r in self.reports],
            'relaxing_dims': [r.relaxing_dims for r in self.reports],
            'frozen_dims': [r.frozen_dims_after for r in self.reports],
            'network_parameters': self.net.n_parameters() if self.net is not None else None,
            'extra_parameters': [r.extra_parameters for r in self.reports],
            'searches': [r.searches for r in self.reports],
            'task_seconds': [r.wall_clock for r in self.reports],
            'final_extra_parameters': last.extra_parameters if last else 0,
            'wall_clock': self.wall_clock,
        }


# ------------ benchmark construction ------------
def build_tasks(bench: BenchmarkConfig, seed: int) -> TaskSequence:
    if bench.kind == 'synthetic':
        supports = [list(range(t * bench.block_size, (t + 1) * bench.block_size)) for t in range(bench.n_tasks)]
        spec = SyntheticSpec(input_dim=bench.input_dim, supports=supports,
                             samples_per_task=bench.n_train or 200, test_samples=bench.n_test or 100,
                             n_classes=bench.n_classes, seed=seed)
        return make_synthetic_tasks(spec)

    data_dir = bench.data_dir if os.path.isabs(bench.data_dir) else os.path.join(BASE_DIR, bench.data_dir)
    paths = [os.path.join(data_dir, name) for name in
             (bench.train_images, bench.train_labels, bench.test_images, bench.test_labels)]
    for path in paths:
        if not os.path.isfile(path):
            raise ConfigError('data file not found: %s' % path)
    train = load_idx(paths[0], paths[1])
    test = load_idx(paths[2], paths[3])
    if bench.kind == 'split':
        return make_split_tasks(train, test, bench.n_tasks, seed, n_train=bench.n_train, n_val=bench.n_val,
                                n_test=bench.n_test)
    return make_permuted_tasks(train, test, bench.n_tasks, seed, n_train=bench.n_train, n_val=bench.n_val,
                               n_test=bench.n_test)


def build_network(bench: BenchmarkConfig, tasks: TaskSequence, generator) -> Mlp:
    n_outputs = max(task.class_range[1] for task in tasks)
    return Mlp([tasks[0].input_dim] + list(bench.hidden) + [n_outputs], head_mode=bench.head_mode,
               n_tasks=len(tasks), use_bias=bench.use_bias, loss=bench.loss, generator=generator)


# ------------ one seeded run ------------
def run_sequence(run_config: RunConfig, seed: int, tasks: Optional[TaskSequence] = None) -> RunResult:
    """
    Train the whole task sequence once, filling A row by row: after task i every task j <= i is
    evaluated, plus task i+1 zero-shot. b_i comes from an untrained network seeded away from the run.
    """
    start = time.time()
    bench = run_config.benchmark
    cfg = dataclasses.replace(run_config.method, seed=seed)
    tasks = tasks if tasks is not None else build_tasks(bench, seed)
    n_tasks = len(tasks)

    net = build_network(bench, tasks, substream(seed, 'init'))
    random_net = build_network(bench, tasks, substream(seed + bench.random_init_offset, 'random_init'))
    matrix = AccuracyMatrix(n_tasks, b=np.array([evaluate_task(random_net, task) for task in tasks]))
    memory = ContinualMemory.empty(net)

    reports = []
    for i, task in enumerate(tasks):
        reports.append(train_task(net, task, memory, cfg, i))
        for j in range(i + 1):
            matrix.record(i, j, evaluate_task(net, tasks[j], task_weights(net, memory, cfg, j)))
        if i + 1 < n_tasks:
            matrix.record(i, i + 1, evaluate_task(net, tasks[i + 1]))
        logger.info('after task %i: accuracies %s', i + 1,
                    ' '.join('%.2f' % (100 * a) for a in matrix.A[i, :i + 1]))

    metrics = compute_metrics(matrix)
    return RunResult(seed=seed, matrix=matrix, metrics=metrics, reports=reports, net=net, memory=memory,
                     wall_clock=time.time() - start)


def _mean_metrics(results: List[RunResult]) -> dict:
    keys = results[0].metrics.keys()
    return {k: float(np.mean([r.metrics[k] for r in results])) for k in keys}


def accuracy_frame(results: List[RunResult], method: str) -> pd.DataFrame:
    rows = [{'run': r.seed, 'method': method, 'task_i': i + 1, 'task_j': j + 1, 'accuracy': acc}
            for r in results for i, j, acc in r.matrix.rows()]
    return pd.DataFrame(rows, columns=['run', 'method', 'task_i', 'task_j', 'accuracy'])


# ------------ subcommands ------------
def cmd_run(run_config: RunConfig) -> List[RunResult]:
    """Execute every seed; write accuracies.csv, summary.json, the effective config and optional checkpoints."""
    out_dir = run_config.out_dir
    echo_effective_config(run_config)
    results = []
    for seed in run_config.seeds:
        logger.info('run seed %i, method %s', seed, run_config.method.method)
        try:
            result = run_sequence(run_config, seed)
        except NumericalFailureError as err:
            report = getattr(err, 'report', None)
            _write_json(os.path.join(out_dir, 'failure_seed%i.json' % seed),
                        {'seed': seed, 'error': str(err), 'report': report.to_dict() if report else None})
            raise
        results.append(result)
        if run_config.checkpoints:
            path = os.path.join(out_dir, 'checkpoint_seed%i.pt' % seed)
            save_checkpoint(result.net, path, extra={'frozen': [u.to_bytes() for u in result.memory.frozen],
                                                     'seed': seed})
            logger.info('checkpoint saved: %s', path)

    accuracy_frame(results, run_config.method.method).to_csv(os.path.join(out_dir, 'accuracies.csv'), index=False)
    summary = {
        'config': OmegaConf.to_container(OmegaConf.structured(run_config)),
        'mean_metrics': _mean_metrics(results),
        'runs': [r.summary() for r in results],
    }
    _write_json(os.path.join(out_dir, 'summary.json'), summary)
    logger.info('mean metrics over %i seeds: %s', len(results),
                ' -- '.join('%s: %.4f' % kv for kv in summary['mean_metrics'].items()))
    return results


def _apply_axis(method: MethodConfig, axis: str, value: float) -> MethodConfig:
    if axis == 'zeta':
        relax = dataclasses.replace(method.relax, zeta_hidden=value, zeta_output=value, zeta=None)
        return dataclasses.replace(method, relax=relax)
    if axis == 'beta':
        return dataclasses.replace(method, beta=value, beta_layers=None)
    return dataclasses.replace(method, epsilon=value)


def directional_report(frame: pd.DataFrame, axis: str) -> dict:
    """Observed trends of a sweep; reported, never enforced."""
    means = frame.groupby('value')['BWT'].mean().sort_index()
    report = {'axis': axis, 'mean_BWT': {str(k): float(v) for k, v in means.items()}}
    if axis == 'zeta':
        report['bwt_non_decreasing_in_zeta'] = bool(np.all(np.diff(means.values) >= 0))
    elif axis == 'beta' and 0.0 in means.index:
        report['beta_zero_worst_bwt'] = bool(means.loc[0.0] <= means.min())
    return report


def cmd_sweep(run_config: RunConfig, axis: Optional[str] = None) -> pd.DataFrame:
    """One run per axis value and seed; writes sweep_<axis>.csv (tidy) and sweep_<axis>.json (trends)."""
    axis = axis or run_config.sweep.axis
    if axis is None:
        raise ConfigError('no sweep axis given (--axis or sweep.axis)')
    values = run_config.sweep.values_for(axis)
    if len(values) == 0:
        raise ConfigError('sweep axis %s has no values' % axis)
    echo_effective_config(run_config)

    rows = []
    for value in values:
        point = dataclasses.replace(run_config, method=_apply_axis(run_config.method, axis, float(value)))
        for seed in run_config.seeds:
            logger.info('sweep %s = %s, seed %i', axis, value, seed)
            result = run_sequence(point, seed)
            ratios = np.array([r.relaxing_ratios for r in result.reports[1:]]) if len(result.reports) > 1 else None
            row = {'axis': axis, 'value': float(value), 'seed': seed, 'ACC': result.metrics['ACC'],
                   'BWT': result.metrics['BWT'], 'Omega_new': result.metrics['Omega_new']}
            for l in range(result.net.n_layers):
                row['relaxing_ratio_l%i' % (l + 1)] = float(ratios[:, l].mean()) if ratios is not None else 0.0
            rows.append(row)

    frame = pd.DataFrame(rows)
    frame.to_csv(os.path.join(run_config.out_dir, 'sweep_%s.csv' % axis), index=False)
    _write_json(os.path.join(run_config.out_dir, 'sweep_%s.json' % axis), directional_report(frame, axis))
    return frame


def _write_json(path, payload):
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    with open(path, 'w') as f:
        json.dump(payload, f, indent=2, default=float)

import os
import json
import dataclasses
import math
import pandas as pd
import pytest

from config import BASE_DIR, EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFICATION
from exceptions import ConfigError, NumericalFailureError, VerificationError
from experiments.continual import run_continual, verify_suites
from experiments.continual.arg_parser import argument_parser, print_args
from experiments.continual.run_config import load_run_config, echo_effective_config, EFFECTIVE_CONFIG_NAME
from experiments.continual.runner import cmd_run, cmd_sweep, run_sequence, directional_report

SMOKE = os.path.join(BASE_DIR, 'experiments', 'continual', 'configs', 'synthetic_smoke.yaml')
DESK = os.path.join(BASE_DIR, 'experiments', 'continual', 'configs', 'pmnist_desk.yaml')


def write_config(tmp_path, text, name='cfg.yaml'):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# ----- arguments -----
def test_argument_parser():
    args = argument_parser(['run', '--config', 'a.yaml', '--seed', '3'])
    assert args.command == 'run' and args.config == 'a.yaml' and args.seed == 3 and args.out is None
    args = argument_parser(['verify'])
    assert args.suite == 'all' and args.seed == 0
    args = argument_parser(['sweep', '--config', 'a.yaml', '--axis', 'zeta'])
    assert args.axis == 'zeta'
    with pytest.raises(SystemExit):
        argument_parser(['verify', '--suite', 'everything'])
    with pytest.raises(SystemExit):
        argument_parser(['run'])


# ----- config files -----
def test_shipped_configs_load():
    smoke = load_run_config(SMOKE)
    assert smoke.benchmark.kind == 'synthetic' and smoke.method.method == 'rogo'
    desk = load_run_config(DESK, seed=4, out_dir='elsewhere')
    assert desk.seeds == [4] and desk.out_dir == 'elsewhere'
    assert desk.benchmark.n_tasks == 5
    assert '[INFO] Method: rogo' in print_args(desk)


def test_effective_config_round_trip(tmp_path):
    run_config = load_run_config(SMOKE, out_dir=str(tmp_path))
    path = echo_effective_config(run_config)
    assert os.path.basename(path) == EFFECTIVE_CONFIG_NAME
    assert load_run_config(path) == run_config


def test_bad_value_reports_its_line(tmp_path):
    path = write_config(tmp_path, 'benchmark:\n  kind: synthetic\nmethod:\n  epochs: 2\n  lr: fast\n')
    with pytest.raises(ConfigError) as info:
        load_run_config(path)
    assert info.value.path == path and info.value.line == 5


@pytest.mark.parametrize('text', [
    'method:\n  method: ewc\n',
    'benchmark:\n  unknown_key: 1\n',
    'method: [1, 2\n',
    'seeds: []\n',
])
def test_invalid_configs(tmp_path, text):
    with pytest.raises(ConfigError):
        load_run_config(write_config(tmp_path, text))


def test_missing_config(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / 'none.yaml'))


# ----- run -----
def test_run_writes_results_and_is_reproducible(tmp_path):
    first = load_run_config(SMOKE, out_dir=str(tmp_path / 'a'))
    results = cmd_run(first)
    frame = pd.read_csv(tmp_path / 'a' / 'accuracies.csv')
    assert list(frame.columns) == ['run', 'method', 'task_i', 'task_j', 'accuracy']
    # lower triangle plus the zero-shot superdiagonal
    assert len(frame) == 6 + 2
    assert frame['accuracy'].between(0.0, 1.0).all()

    with open(tmp_path / 'a' / 'summary.json') as f:
        summary = json.load(f)
    assert set(summary['mean_metrics']) == {'ACC', 'BWT', 'Omega_new', 'FWT'}
    assert len(summary['runs'][0]['relaxing_ratios']) == 3
    assert summary['mean_metrics']['ACC'] == pytest.approx(results[0].metrics['ACC'])
    assert (tmp_path / 'a' / EFFECTIVE_CONFIG_NAME).is_file()

    cmd_run(load_run_config(SMOKE, out_dir=str(tmp_path / 'b')))
    assert (tmp_path / 'a' / 'accuracies.csv').read_bytes() == (tmp_path / 'b' / 'accuracies.csv').read_bytes()


def test_single_task_plain_run(tmp_path):
    base = load_run_config(SMOKE, out_dir=str(tmp_path))
    run_config = dataclasses.replace(base, benchmark=dataclasses.replace(base.benchmark, n_tasks=1),
                                     method=dataclasses.replace(base.method, method='plain'), checkpoints=True)
    results = cmd_run(run_config)
    assert math.isnan(results[0].metrics['BWT']) and math.isnan(results[0].metrics['FWT'])
    assert len(pd.read_csv(tmp_path / 'accuracies.csv')) == 1
    assert (tmp_path / 'checkpoint_seed0.pt').is_file()


def test_rogo_matches_gpm_without_shared_directions(tmp_path):
    base = load_run_config(SMOKE, out_dir=str(tmp_path))
    bench = dataclasses.replace(base.benchmark, n_tasks=2, hidden=[])
    metrics = {}
    for name in ('gpm', 'rogo'):
        method = dataclasses.replace(base.method, method=name,
                                     relax=dataclasses.replace(base.method.relax, zeta_hidden=1.0, zeta_output=1.0))
        result = run_sequence(dataclasses.replace(base, benchmark=bench, method=method), seed=0)
        metrics[name] = result.metrics
    assert metrics['gpm'] == metrics['rogo']


# ----- sweep -----
def test_sweep_writes_trends(tmp_path):
    base = load_run_config(SMOKE, out_dir=str(tmp_path))
    run_config = dataclasses.replace(base, benchmark=dataclasses.replace(base.benchmark, n_tasks=2))
    frame = cmd_sweep(run_config)
    assert sorted(frame['value']) == [0.0, 1.0]
    assert {'relaxing_ratio_l1', 'relaxing_ratio_l2'} <= set(frame.columns)
    with open(tmp_path / 'sweep_beta.json') as f:
        report = json.load(f)
    assert report['axis'] == 'beta' and isinstance(report['beta_zero_worst_bwt'], bool)
    assert (tmp_path / 'sweep_beta.csv').is_file()


def test_directional_report_trends():
    frame = pd.DataFrame({'value': [0.0, 0.0, 1.0, 1.0, 5.0, 5.0],
                          'BWT': [-0.08, -0.06, -0.03, -0.05, -0.02, -0.02]})
    report = directional_report(frame, 'beta')
    assert report['mean_BWT'] == pytest.approx({'0.0': -0.07, '1.0': -0.04, '5.0': -0.02})
    assert report['beta_zero_worst_bwt'] is True
    frame.loc[frame['value'] == 5.0, 'BWT'] = -0.1
    assert directional_report(frame, 'beta')['beta_zero_worst_bwt'] is False
    assert 'beta_zero_worst_bwt' not in directional_report(frame[frame['value'] > 0], 'beta')

    zeta = pd.DataFrame({'value': [0.5, 0.9, 0.99], 'BWT': [-0.04, -0.02, -0.01]})
    assert directional_report(zeta, 'zeta')['bwt_non_decreasing_in_zeta'] is True
    zeta['BWT'] = [-0.01, -0.02, -0.01]
    assert directional_report(zeta, 'zeta')['bwt_non_decreasing_in_zeta'] is False


def test_sweep_without_values(tmp_path):
    base = load_run_config(SMOKE, out_dir=str(tmp_path))
    with pytest.raises(ConfigError):
        cmd_sweep(base, 'zeta')
    with pytest.raises(ConfigError):
        cmd_sweep(dataclasses.replace(base, sweep=dataclasses.replace(base.sweep, axis=None)))


# ----- exit codes -----
def test_exit_code_for_configuration_errors(tmp_path):
    assert run_continual.main(['run', '--config', str(tmp_path / 'none.yaml')]) == EXIT_CONFIG
    missing_data = write_config(tmp_path, 'benchmark:\n  kind: permuted\n  data_dir: %s\n' % (tmp_path / 'no_data'))
    assert run_continual.main(['run', '--config', missing_data, '--out', str(tmp_path)]) == EXIT_CONFIG


def test_exit_code_for_numerical_failures(tmp_path, monkeypatch):
    def fail(run_config):
        raise NumericalFailureError('svd did not converge', iterations=3)

    monkeypatch.setattr(run_continual, 'cmd_run', fail)
    assert run_continual.main(['run', '--config', SMOKE, '--out', str(tmp_path)]) == EXIT_NUMERICAL


def test_exit_codes_for_verify(tmp_path, monkeypatch):
    monkeypatch.setattr(verify_suites, 'theorem_campaign', lambda seed: {'suite': 'theorems', 'seed': seed})
    assert run_continual.main(['verify', '--suite', 'theorems', '--out', str(tmp_path)]) == EXIT_OK

    def broken(seed):
        raise VerificationError('rank bound violated', {'seed': seed, 'u': [[1.0]]})

    monkeypatch.setattr(verify_suites, 'theorem_campaign', broken)
    assert run_continual.main(['verify', '--suite', 'theorems', '--seed', '5', '--out', str(tmp_path)]) \
        == EXIT_VERIFICATION
    with open(tmp_path / 'failing_instance.json') as f:
        assert json.load(f)['seed'] == 5


# ----- desk benchmark (needs the MNIST files) -----
MNIST_DIR = os.path.join(BASE_DIR, 'data', 'mnist')
needs_mnist = pytest.mark.skipif(not os.path.isfile(os.path.join(MNIST_DIR, 'train-images-idx3-ubyte.gz')),
                                 reason='MNIST files are not available')


@needs_mnist
def test_desk_rogo_not_behind_gpm(tmp_path):
    desk = load_run_config(DESK, out_dir=str(tmp_path))
    assert desk.seeds == [0, 1, 2]
    means = {}
    for name in ('gpm', 'rogo'):
        run_config = dataclasses.replace(desk, method=dataclasses.replace(desk.method, method=name))
        results = [run_sequence(run_config, seed) for seed in desk.seeds]
        means[name] = {k: sum(r.metrics[k] for r in results) / len(results) for k in ('ACC', 'BWT', 'Omega_new')}
    assert means['rogo']['ACC'] >= means['gpm']['ACC']
    assert means['rogo']['Omega_new'] >= means['gpm']['Omega_new']
    assert means['rogo']['BWT'] > -0.05 and means['gpm']['BWT'] > -0.05


@needs_mnist
def test_desk_beta_sweep_zero_forgets_most(tmp_path):
    desk = load_run_config(DESK, out_dir=str(tmp_path))
    assert list(desk.sweep.beta) == [0.0, 0.5, 1.0, 5.0, 50.0]
    frame = cmd_sweep(desk, 'beta')
    means = frame.groupby('value')['BWT'].mean()
    assert means.idxmin() == 0.0
    with open(tmp_path / 'sweep_beta.json') as f:
        assert json.load(f)['beta_zero_worst_bwt'] is True

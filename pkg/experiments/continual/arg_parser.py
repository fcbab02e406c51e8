import argparse

from experiments.continual.verify_suites import SUITES
from experiments.continual.run_config import SWEEP_AXES


# argument parser
def argument_parser(argv=None):
    parser = argparse.ArgumentParser(description="Continual learning with restricted orthogonal gradient projection.")
    subparsers = parser.add_subparsers(dest='command', required=True)

    # run
    run = subparsers.add_parser('run', help='Train a task sequence for every seed of the config.')
    run.add_argument('--config', type=str, required=True, help='YAML experiment config.')
    run.add_argument('--out', type=str, default=None, help='Output directory. Default is out_dir of the config.')
    run.add_argument('--seed', type=int, default=None, help='Run this single seed instead of the config seeds.')

    # verify
    verify = subparsers.add_parser('verify', help='Run a randomized property suite.')
    verify.add_argument('--suite', type=str, default='all', choices=SUITES, help='Suite name. Default is all.')
    verify.add_argument('--seed', type=int, default=0, help='Campaign seed. Default is 0.')
    verify.add_argument('--out', type=str, default='results/verify',
                        help='Where a failing instance is dumped. Default is results/verify.')

    # sweep
    sweep = subparsers.add_parser('sweep', help='One run per value of a hyper-parameter axis.')
    sweep.add_argument('--config', type=str, required=True, help='YAML experiment config with a sweep section.')
    sweep.add_argument('--axis', type=str, default=None, choices=SWEEP_AXES,
                       help='Swept parameter. Default is sweep.axis of the config.')
    sweep.add_argument('--out', type=str, default=None, help='Output directory. Default is out_dir of the config.')
    sweep.add_argument('--seed', type=int, default=None, help='Run this single seed instead of the config seeds.')

    return parser.parse_args(argv)


def print_args(run_config):
    bench, method = run_config.benchmark, run_config.method
    msg = '\n[INFO] Benchmark: %s -- tasks: %i' % (bench.kind, bench.n_tasks)
    msg += ' -- train/test samples per task: %s/%s' % (bench.n_train, bench.n_test)
    msg += '\n[INFO] Network: hidden %s -- head: %s -- loss: %s -- bias: %s' % (
        list(bench.hidden), bench.head_mode, bench.loss, bench.use_bias)

    msg += '\n[INFO] Method: %s -- epsilon: %.3f' % (method.method, method.epsilon)
    if method.relaxes:
        msg += ' -- zeta hidden/output: %.2f/%.2f' % (method.relax.zeta_hidden, method.relax.zeta_output)
        msg += ' -- beta: %.2f -- k_g: %i' % (method.beta, method.relax.k_g)
        msg += ' -- searches: every %i epochs, at most %i' % (method.relax.e_t, method.relax.max_search_rounds)

    msg += '\n[INFO] Optimizer: lr: %.2e' % method.lr
    msg += ' -- epochs: %i' % method.epochs
    msg += ' -- batch_size: %i' % method.batch_size
    msg += '\n[INFO] Seeds: %s -- output: %s' % (list(run_config.seeds), run_config.out_dir)
    return msg

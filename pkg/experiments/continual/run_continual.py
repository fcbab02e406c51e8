import os
import sys
import logging
import torch

sys.path.insert(1, os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

from assistive_functions import thread_cap
from config import EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFICATION
from exceptions import ConfigError, FormatError, InvalidInputError, NumericalFailureError, VerificationError
from experiments.continual.arg_parser import argument_parser, print_args
from experiments.continual.run_config import load_run_config
from experiments.continual.runner import cmd_run, cmd_sweep
from experiments.continual.verify_suites import cmd_verify

logger = logging.getLogger('continual')


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format='[%(levelname)s] %(message)s')
    args = argument_parser(argv)
    torch.set_num_threads(thread_cap())

    try:
        if args.command == 'verify':
            cmd_verify(args.suite, args.seed, args.out)
            return EXIT_OK

        run_config = load_run_config(args.config, seed=args.seed, out_dir=args.out)
        print(print_args(run_config))
        if args.command == 'run':
            cmd_run(run_config)
        else:
            cmd_sweep(run_config, args.axis)
    except (ConfigError, FormatError, InvalidInputError, FileNotFoundError) as err:
        logger.error('configuration error: %s', err)
        return EXIT_CONFIG
    except NumericalFailureError as err:
        report = getattr(err, 'report', None)
        logger.error('numerical failure: %s', err)
        if report is not None:
            logger.error('task %i diagnostic: %s', report.task_id + 1, report.to_dict())
        return EXIT_NUMERICAL
    except VerificationError as err:
        logger.error('verification failed: %s', err)
        return EXIT_VERIFICATION
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())

import os
import re
import logging
import yaml
from dataclasses import dataclass, field
from typing import List, Optional
from omegaconf import OmegaConf
from omegaconf.errors import OmegaConfBaseException

from exceptions import ConfigError, InvalidInputError
from projectors.trainer import MethodConfig

logger = logging.getLogger(__name__)

EFFECTIVE_CONFIG_NAME = 'effective_config.yaml'
SWEEP_AXES = ('zeta', 'beta', 'epsilon')


@dataclass
class BenchmarkConfig:
    """
    Args:
        kind:            permuted | split | synthetic.
        data_dir:        directory of the IDX files (permuted and split).
        train_images, train_labels, test_images, test_labels:  IDX file names inside data_dir.
        n_tasks:         tasks in the sequence.
        n_train, n_val, n_test:  samples per task (None keeps all).
        hidden:          hidden layer sizes of the MLP.
        head_mode:       single | multi.
        use_bias:        train biases (never projected).
        loss:            cross_entropy | mse.
        input_dim, block_size, n_classes:  synthetic tasks live on disjoint coordinate blocks of size block_size.
        random_init_offset:  seed offset of the randomly initialized network measuring b_i.
    """
    kind: str = 'permuted'
    data_dir: str = 'data/mnist'
    train_images: str = 'train-images-idx3-ubyte.gz'
    train_labels: str = 'train-labels-idx1-ubyte.gz'
    test_images: str = 't10k-images-idx3-ubyte.gz'
    test_labels: str = 't10k-labels-idx1-ubyte.gz'
    n_tasks: int = 5
    n_train: Optional[int] = 2000
    n_val: int = 0
    n_test: Optional[int] = 500
    hidden: List[int] = field(default_factory=lambda: [100, 100])
    head_mode: str = 'single'
    use_bias: bool = True
    loss: str = 'cross_entropy'
    input_dim: int = 30
    block_size: int = 5
    n_classes: int = 2
    random_init_offset: int = 1000

    def __post_init__(self):
        if self.kind not in ('permuted', 'split', 'synthetic'):
            raise InvalidInputError('benchmark kind must be permuted, split or synthetic, got %s' % self.kind)
        if self.n_tasks < 1:
            raise InvalidInputError('n_tasks must be >= 1')
        if self.kind == 'synthetic' and self.n_tasks * self.block_size > self.input_dim:
            raise InvalidInputError('%i synthetic blocks of size %i do not fit in dimension %i'
                                    % (self.n_tasks, self.block_size, self.input_dim))


@dataclass
class SweepConfig:
    axis: Optional[str] = None
    zeta: List[float] = field(default_factory=list)
    beta: List[float] = field(default_factory=list)
    epsilon: List[float] = field(default_factory=list)

    def values_for(self, axis: str) -> List[float]:
        if axis not in SWEEP_AXES:
            raise InvalidInputError('sweep axis must be one of %s, got %s' % (SWEEP_AXES, axis))
        return list(getattr(self, axis))


@dataclass
class RunConfig:
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    method: MethodConfig = field(default_factory=MethodConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seeds: List[int] = field(default_factory=lambda: [0])
    out_dir: str = 'results'
    checkpoints: bool = False

    def __post_init__(self):
        if len(self.seeds) == 0:
            raise InvalidInputError('at least one seed is required')


def _line_of(path, dotted_key: str) -> Optional[int]:
    """1-based line of the last component of a dotted key, following its parent sections in order."""
    if not dotted_key or not os.path.isfile(path):
        return None
    parts = [p for p in re.split(r'[.\[\]]', dotted_key) if p and not p.isdigit()]
    with open(path) as f:
        lines = f.readlines()
    start, found = 0, None
    for part in parts:
        pattern = re.compile(r'^\s*%s\s*:' % re.escape(part))
        for i in range(start, len(lines)):
            if pattern.match(lines[i]):
                start, found = i + 1, i + 1
                break
        else:
            return found
    return found


def load_run_config(path, seed: Optional[int] = None, out_dir: Optional[str] = None) -> RunConfig:
    """
    Parse a YAML config with sections benchmark / method (with a nested relax section) / sweep
    over the RunConfig defaults. --seed and --out override the file.
    """
    if not os.path.isfile(path):
        raise ConfigError('config file not found', path)
    try:
        file_cfg = OmegaConf.load(path)
    except yaml.YAMLError as err:
        mark = getattr(err, 'problem_mark', None)
        raise ConfigError('cannot parse config: %s' % getattr(err, 'problem', err), path,
                          mark.line + 1 if mark is not None else None) from err

    try:
        cfg = OmegaConf.merge(OmegaConf.structured(RunConfig), file_cfg)
        if seed is not None:
            cfg.seeds = [seed]
        if out_dir is not None:
            cfg.out_dir = out_dir
        run_config = OmegaConf.to_object(cfg)
    except OmegaConfBaseException as err:
        key = getattr(err, 'full_key', None)
        raise ConfigError(str(err).splitlines()[0], path, _line_of(path, key)) from err
    except InvalidInputError as err:
        raise ConfigError(str(err), path) from err
    return run_config


def dump_run_config(run_config: RunConfig) -> str:
    return OmegaConf.to_yaml(OmegaConf.structured(run_config))


def echo_effective_config(run_config: RunConfig, out_dir=None) -> str:
    """Write the fully resolved config next to the results; reloading it yields the same RunConfig."""
    out_dir = out_dir or run_config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, EFFECTIVE_CONFIG_NAME)
    with open(path, 'w') as f:
        f.write(dump_run_config(run_config))
    logger.info('effective config written to %s', path)
    return path

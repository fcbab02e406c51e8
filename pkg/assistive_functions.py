import os
import zlib
import torch
import numpy as np

from config import DTYPE


def to_tensor(x):
    return torch.from_numpy(np.asarray(x)).contiguous().to(DTYPE) if not isinstance(x, torch.Tensor) \
        else x.to(DTYPE)


def substream_seed(master_seed: int, name: str) -> int:
    """
    Seed of the named random substream derived from the master seed.
    Names in use: init, random_init, synthetic_labels, and the per-task or per-round
    batch_order:<t>, permutations:<t>, probe:<t>:<r>, representation:<t>, synthetic:<t>, campaign:<suite>.
    """
    sequence = np.random.SeedSequence([int(master_seed), zlib.crc32(name.encode("utf-8"))])
    return int(sequence.generate_state(1, dtype=np.uint64)[0] & 0x7FFFFFFFFFFFFFFF)


def substream(master_seed: int, name: str) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(substream_seed(master_seed, name))
    return generator


def thread_cap(default: int = 1) -> int:
    """Worker parallelism allowed by ROGO_THREADS (defaults to 1 when unset or invalid)."""
    value = os.environ.get("ROGO_THREADS")
    try:
        return max(1, int(value)) if value is not None else default
    except ValueError:
        return default

from .mlp import Mlp, BatchTrace, finite_diff_check, relative_error, save_checkpoint, load_checkpoint

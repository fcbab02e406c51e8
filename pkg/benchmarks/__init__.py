from .idx_loader import IdxDataset, load_idx, write_idx, IMAGES_MAGIC, LABELS_MAGIC
from .task_sequences import TaskData, TaskSequence, SyntheticSpec, make_permuted_tasks, make_split_tasks, \
    make_synthetic_tasks
from .metrics import AccuracyMatrix, compute_metrics

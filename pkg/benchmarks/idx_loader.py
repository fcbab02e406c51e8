import gzip
import os
import logging
import numpy as np
import torch
from dataclasses import dataclass

from config import DTYPE
from exceptions import FormatError

logger = logging.getLogger(__name__)

# big-endian type codes of the IDX header, unsigned byte payload
IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass
class IdxDataset:
    """
    Args:
        images:  (N, rows * cols) float64 tensor in [0, 1], one flattened image per row.
        labels:  (N,) int64 tensor.
        shape:   (rows, cols) of a single image.
    """
    images: torch.Tensor
    labels: torch.Tensor
    shape: tuple

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, indices):
        return IdxDataset(self.images[indices], self.labels[indices], self.shape)


def _read_bytes(path) -> bytes:
    if not os.path.isfile(path):
        raise FileNotFoundError('IDX file not found: %s' % path)
    opener = gzip.open if str(path).endswith('.gz') else open
    with opener(path, 'rb') as f:
        return f.read()


def _header(raw: bytes, n_dims: int, magic: int, path) -> tuple:
    size = 4 * (1 + n_dims)
    if len(raw) < size:
        raise FormatError('truncated header in %s' % path, len(raw))
    values = np.frombuffer(raw, dtype='>u4', count=1 + n_dims)
    if int(values[0]) != magic:
        raise FormatError('bad magic 0x%08x in %s, expected 0x%08x' % (int(values[0]), path, magic), 0)
    return tuple(int(v) for v in values[1:])


def _payload(raw: bytes, offset: int, count: int, path) -> np.ndarray:
    if count == 0 and len(raw) == offset:
        return np.zeros(0, dtype=np.uint8)
    if len(raw) < offset + count:
        raise FormatError('truncated payload in %s: %i of %i bytes' % (path, len(raw) - offset, count), len(raw))
    if len(raw) > offset + count:
        raise FormatError('trailing bytes in %s' % path, offset + count)
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=offset)


def load_idx(images_path, labels_path) -> IdxDataset:
    """
    Parse a pair of IDX files (plain or gzip). Images: magic, count, rows, cols then
    count*rows*cols unsigned bytes. Labels: magic, count then count unsigned bytes.
    """
    raw_images = _read_bytes(images_path)
    raw_labels = _read_bytes(labels_path)
    n_images, rows, cols = _header(raw_images, 3, IMAGES_MAGIC, images_path)
    (n_labels,) = _header(raw_labels, 1, LABELS_MAGIC, labels_path)
    if n_images != n_labels:
        # both counts sit at byte offset 4 of their files
        raise FormatError('%i images but %i labels' % (n_images, n_labels), 4)

    pixels = _payload(raw_images, 16, n_images * rows * cols, images_path)
    labels = _payload(raw_labels, 8, n_labels, labels_path)
    images = torch.from_numpy(pixels.reshape(n_images, rows * cols).astype(np.float64) / 255.0)
    logger.info('%i images of %ix%i loaded from %s', n_images, rows, cols, images_path)
    return IdxDataset(images.to(DTYPE), torch.from_numpy(labels.astype(np.int64)), (rows, cols))


def write_idx(images_path, labels_path, images, labels, shape=None):
    """
    Write uint8 images (N, rows, cols) or (N, rows*cols) with "shape" given, and uint8 labels (N,).
    Paths ending in .gz are gzip-compressed.
    """
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1)
    if images.ndim == 2:
        if shape is None:
            raise ValueError('shape is required for flattened images')
        images = images.reshape(images.shape[0], *shape)
    assert images.ndim == 3 and images.shape[0] == labels.shape[0]

    header = np.array([IMAGES_MAGIC, *images.shape], dtype='>u4').tobytes()
    _write_bytes(images_path, header + images.tobytes(order='C'))
    header = np.array([LABELS_MAGIC, labels.shape[0]], dtype='>u4').tobytes()
    _write_bytes(labels_path, header + labels.tobytes())


def _write_bytes(path, payload: bytes):
    opener = gzip.open if str(path).endswith('.gz') else open
    with opener(path, 'wb') as f:
        f.write(payload)

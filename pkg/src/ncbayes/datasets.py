"""Dataset ingestion: IDX image files and synthetic draws from a model.

The IDX reader covers the two magics used by the classic digit benchmark
(byte tensors of rank 3 for images, rank 1 for labels).  Pixels come back
scaled to [0, 1]; an optional Bernoulli binarization draws once per pixel
with a seed that is kept on the handle so the exact dataset can be rebuilt.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, ConfigurationError, ShapeError, TruncatedFile
from .graph import ancestral_sample

_IMAGE_MAGIC = 0x00000803
_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class DatasetHandle:
    """A dataset in flat row-major form.

    ``images`` is (count, rows*cols) with values in [0, 1] ({0, 1} after
    binarization); ``labels`` is optional.  Synthetic datasets carry the
    generating parameter vector and a per-node column split so they can be
    fed straight to the learning routines.
    """

    images: np.ndarray | None
    labels: np.ndarray | None
    count: int
    rows: int
    cols: int
    binarize_seed: int | None = None
    theta_true: np.ndarray | None = None
    data: dict | None = None

    def __post_init__(self):
        if self.count < 0 or self.rows < 1 or self.cols < 1:
            raise ShapeError("count must be >= 0 and rows/cols >= 1")
        if self.images is not None:
            if self.images.shape != (self.count, self.rows * self.cols):
                raise ShapeError(
                    f"images shape {self.images.shape} does not match "
                    f"count x rows*cols = "
                    f"({self.count}, {self.rows * self.cols})")
            if self.images.size and (self.images.min() < 0.0
                                     or self.images.max() > 1.0):
                raise ConfigurationError("pixel values escaped [0, 1]")
        if self.labels is not None and self.labels.shape[0] != self.count:
            raise ShapeError("labels length does not match count")


def _read_be32(raw, offset):
    return int.from_bytes(raw[offset:offset + 4], "big")


def load_idx(path, binarize=False, seed=0):
    """Parse one IDX file into a DatasetHandle.

    Big-endian header: a 32-bit magic (0x00000803 for byte image tensors,
    0x00000801 for byte label vectors), then one 32-bit size per dimension,
    then the raw payload.  Trailing bytes beyond the declared sizes are
    ignored; a short payload raises TruncatedFile.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 4:
        raise TruncatedFile("file too short to hold a magic number")
    magic = _read_be32(raw, 0)
    if magic == _IMAGE_MAGIC:
        n_dims = 3
    elif magic == _LABEL_MAGIC:
        n_dims = 1
    else:
        raise BadMagic(f"unsupported magic 0x{magic:08x}")
    header = 4 + 4 * n_dims
    if len(raw) < header:
        raise TruncatedFile("header cut short")
    dims = [_read_be32(raw, 4 + 4 * i) for i in range(n_dims)]
    need = int(np.prod(dims, dtype=np.int64))
    payload = np.frombuffer(raw, dtype=np.uint8, offset=header)
    if payload.size < need:
        raise TruncatedFile(
            f"payload holds {payload.size} bytes but dims {dims} "
            f"need {need}")
    payload = payload[:need]
    if magic == _LABEL_MAGIC:
        return DatasetHandle(images=None, labels=payload.astype(np.int64),
                             count=dims[0], rows=1, cols=1)
    count, rows, cols = dims
    images = payload.reshape(count, rows * cols).astype(np.float64) / 255.0
    used_seed = None
    if binarize:
        used_seed = int(seed)
        rng = np.random.default_rng(used_seed)
        images = (rng.random(images.shape) < images).astype(np.float64)
    return DatasetHandle(images=images, labels=None, count=count,
                         rows=rows, cols=cols, binarize_seed=used_seed)


def synthetic_dataset(model, theta_true, n, rng):
    """Ancestral draws of the observed leaves from a ground-truth model.

    The handle keeps theta_true for recovery checks and a per-node dict
    (``data``) whose columns concatenate, in observed-node order, into the
    flat ``images`` matrix.
    """
    n = int(n)
    if n < 1:
        raise ConfigurationError("need at least one datapoint")
    theta_true = np.asarray(theta_true, dtype=np.float64)
    draw = ancestral_sample(model, theta_true, rng, size=n)
    observed = [i for i in model.nodes
                if model.nodes[i].kind == "observed"]
    data = {i: draw[i] for i in observed}
    images = np.concatenate([data[i] for i in observed], axis=1)
    lo, hi = float(images.min()), float(images.max())
    if lo < 0.0 or hi > 1.0:
        # real-valued leaves fall outside [0,1]; squash affinely for the
        # handle invariant, keeping the untouched columns in ``data``
        images = (images - lo) / (hi - lo) if hi > lo else images * 0.0
    return DatasetHandle(images=images, labels=None, count=n, rows=1,
                         cols=images.shape[1],
                         theta_true=theta_true.copy(), data=data)

"""IDX image/label file I/O (the MNIST container format).

Big-endian throughout. Image files carry magic 0x00000803 (unsigned byte,
3 dims); label files carry 0x00000801. Loading scales pixels to [0, 1];
writing quantizes back to unsigned bytes, so write(load(f)) reproduces f
byte for byte.
"""

import struct
from pathlib import Path

import numpy as np

from nslab.errors import FormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated IDX file while reading {what}", fh.tell())
    return data


def read_idx_raw(path, expected_magic: int) -> np.ndarray:
    with open(path, "rb") as fh:
        (magic,) = struct.unpack(">I", _read_exact(fh, 4, "magic"))
        if magic != expected_magic:
            raise FormatError(
                f"bad IDX magic 0x{magic:08x} in {path}, expected 0x{expected_magic:08x}",
                0,
            )
        ndim = magic & 0xFF
        dims = struct.unpack(f">{ndim}I", _read_exact(fh, 4 * ndim, "dimensions"))
        data = _read_exact(fh, int(np.prod(dims)), "pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(dims)


def load_idx_images(path, labels_path=None, label: int | None = None) -> np.ndarray:
    """Images scaled to [0, 1]; optionally keep only one label's images."""
    images = read_idx_raw(path, IMAGE_MAGIC).astype(np.float64) / 255.0
    if label is not None:
        if labels_path is None:
            raise ValueError("filtering by label requires a labels file")
        labels = read_idx_raw(labels_path, LABEL_MAGIC)
        if labels.shape[0] != images.shape[0]:
            raise FormatError(
                f"label count {labels.shape[0]} != image count {images.shape[0]}", 4
            )
        images = images[labels == label]
    return images


def write_idx_images(path, images) -> None:
    """Write float images in [0, 1] (N, H, W) as an unsigned-byte IDX file."""
    x = np.asarray(images, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected (N, H, W) images, got shape {x.shape}")
    quantized = np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, *quantized.shape))
        fh.write(quantized.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def idx_images_exist(path) -> bool:
    return Path(path).is_file()

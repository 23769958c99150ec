"""Checkpoint container and its binary file format.

Layout (all integers little-endian):
    magic "NSMN" | u16 version | u64 seed | u32 best epoch | f64 val loss
    | u32 descriptor length | descriptor (JSON, architecture only)
    | u32 param count | per param: u16 name length, name, u8 ndim,
      u32 dims..., raw float64 data

Parameters round-trip bit-exactly: they are written as raw little-endian
float64 and never reformatted.
"""

import dataclasses
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from nslab.errors import FormatError

MAGIC = b"NSMN"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    spec: "NetworkSpec"
    params: dict
    seed: int
    epoch: int
    val_loss: float
    history: list = field(default_factory=list)  # (epoch, train_mse, val_mse); not serialized

    def network(self):
        from nslab.engine.network import Network

        return Network(self.spec, {k: v.copy() for k, v in self.params.items()})


def _spec_to_jsonable(spec) -> dict:
    return {
        "setup": spec.setup,
        "input_shape": list(spec.input_shape),
        "layers": [dataclasses.asdict(layer) for layer in spec.layers],
    }


def _spec_from_jsonable(doc: dict):
    from nslab.engine.network import LayerSpec, NetworkSpec

    layers = tuple(LayerSpec(**entry) for entry in doc["layers"])
    return NetworkSpec(layers, setup=doc["setup"], input_shape=tuple(doc["input_shape"]))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HQId", FORMAT_VERSION, ckpt.seed, ckpt.epoch, ckpt.val_loss))
    descriptor = json.dumps(
        _spec_to_jsonable(ckpt.spec), sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    buf.write(struct.pack("<I", len(descriptor)))
    buf.write(descriptor)
    names = sorted(ckpt.params)
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        arr = np.ascontiguousarray(ckpt.params[name], dtype=np.float64)
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.astype("<f8", copy=False).tobytes())
    Path(path).write_bytes(buf.getvalue())


def _read(buf, n: int, what: str) -> bytes:
    out = buf.read(n)
    if len(out) != n:
        raise FormatError(f"truncated checkpoint while reading {what}", buf.tell())
    return out


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if _read(fh, 4, "magic") != MAGIC:
            raise FormatError(f"bad checkpoint magic in {path}", 0)
        version, seed, epoch, val_loss = struct.unpack("<HQId", _read(fh, 22, "header"))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}", 4)
        (desc_len,) = struct.unpack("<I", _read(fh, 4, "descriptor length"))
        spec = _spec_from_jsonable(json.loads(_read(fh, desc_len, "descriptor")))
        (n_params,) = struct.unpack("<I", _read(fh, 4, "param count"))
        params = {}
        for _ in range(n_params):
            (name_len,) = struct.unpack("<H", _read(fh, 2, "param name length"))
            name = _read(fh, name_len, "param name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read(fh, 1, "param ndim"))
            shape = struct.unpack(f"<{ndim}I", _read(fh, 4 * ndim, "param dims"))
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(_read(fh, 8 * count, f"param {name} data"), dtype="<f8")
            params[name] = data.reshape(shape).copy()
    return Checkpoint(spec=spec, params=params, seed=seed, epoch=epoch, val_loss=val_loss)

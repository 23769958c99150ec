"""Drive a trained network over a video frame by frame and record per-node
activation time series at layer boundaries.

Boundaries are named "<layer>:<side>", e.g. "conv2:in" or "pool1:out", using
the per-kind layer names of NetworkSpec.layer_names(). The input of layer i is
the output of layer i-1; "conv1:in" is the raw video.
"""

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from nslab.engine.network import Network
from nslab.errors import FormatError, ShapeError
from nslab.nonsmooth import smp_field
from nslab.synthgen import VideoSequence


@dataclass
class NodeTrace:
    """Scalar activation series of one node across a video."""

    boundary: str
    channel: int
    row: int
    col: int
    values: np.ndarray


@dataclass
class LayerTraceSet:
    """All node traces at selected boundaries: boundary id -> (T, C, H, W)."""

    data: dict
    layer_kind: dict
    delta: float = 1.0

    def boundary_ids(self):
        return list(self.data)

    def get(self, boundary: str) -> np.ndarray:
        if boundary not in self.data:
            raise KeyError(f"unknown boundary {boundary!r}; have {list(self.data)}")
        return self.data[boundary]

    def node(self, boundary: str, channel: int, row: int, col: int) -> NodeTrace:
        series = self.get(boundary)[:, channel, row, col]
        return NodeTrace(boundary, channel, row, col, series)


@dataclass
class SmpMap:
    """SMP value per node (channel, row, col) at one layer boundary."""

    boundary: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ShapeError(f"SMP map must be (C, H, W), got {self.values.shape}")
        if self.values.size and self.values.min() < 0:
            raise ValueError("SMP values must be nonnegative")


def boundary_names(spec) -> list:
    names = []
    for layer in spec.layer_names():
        names.append(f"{layer}:in")
        names.append(f"{layer}:out")
    return names


def _resolve_boundaries(spec, boundaries):
    names = spec.layer_names()
    valid = set(boundary_names(spec))
    selected = list(boundaries) if boundaries is not None else boundary_names(spec)
    resolved = []
    for b in selected:
        if b not in valid:
            raise KeyError(f"unknown boundary {b!r}; valid ids: {sorted(valid)}")
        layer, side = b.split(":")
        idx = names.index(layer)
        resolved.append((b, idx if side == "in" else idx + 1))
    return resolved


def trace_forward(
    net: Network, video: VideoSequence, boundaries=None, chunk_frames: int = 64,
    store: "TraceStore" = None,
) -> LayerTraceSet:
    """Forward every frame in order and collect the activation series at the
    selected boundaries (default: all of them).

    Frames are processed in chunks; with a store, each chunk is appended to
    disk instead of held in memory. Tracing never mutates the network.
    """
    frames = video.frames
    c0, h0, w0 = net.spec.input_shape
    if frames.shape[1:] != (h0, w0) or c0 != 1:
        raise ShapeError(
            f"video frames {frames.shape[1:]} do not match network input "
            f"{net.spec.input_shape}"
        )
    resolved = _resolve_boundaries(net.spec, boundaries)
    names = net.spec.layer_names()
    kind_of = {}
    for b, _ in resolved:
        layer, _side = b.split(":")
        kind_of[b] = net.spec.layers[names.index(layer)].kind

    t = frames.shape[0]
    shapes = net.spec.shapes()
    chunks = {b: [] for b, _ in resolved}
    for lo in range(0, t, chunk_frames):
        batch = frames[lo : lo + chunk_frames, None, :, :]
        acts = net.forward_collect(batch)
        for b, act_idx in resolved:
            if store is not None:
                store.append(b, acts[act_idx])
            else:
                chunks[b].append(acts[act_idx])
    if store is not None:
        store.finalize(
            {b: (t, *shapes[i]) for b, i in resolved}, kind_of, video.delta
        )
        return store.as_trace_set()
    data = {b: np.concatenate(chunks[b], axis=0) for b, _ in resolved}
    return LayerTraceSet(data=data, layer_kind=kind_of, delta=video.delta)


def reconstruct_video(net: Network, video: VideoSequence, chunk_frames: int = 64) -> VideoSequence:
    """Frame-by-frame reconstruction; output channel dimension is squeezed."""
    out = trace_forward(net, video, boundaries=[f"{net.spec.layer_names()[-1]}:out"],
                        chunk_frames=chunk_frames)
    frames = out.get(out.boundary_ids()[0])
    return VideoSequence(frames[:, 0, :, :], delta=video.delta)


def layer_smp_map(traces: LayerTraceSet) -> dict:
    """SMP of every node trace, per boundary: boundary id -> SmpMap."""
    out = {}
    for b in traces.boundary_ids():
        series = traces.get(b)
        if series.shape[0] < 3:
            raise ShapeError(f"boundary {b} has only {series.shape[0]} frames; need >= 3")
        out[b] = SmpMap(b, smp_field(series))
    return out


def channel_mean_smp(smp_map: SmpMap) -> np.ndarray:
    """Arithmetic mean across channels at each (row, col)."""
    if smp_map.values.shape[0] < 1:
        raise ShapeError("SMP map has no channels")
    return smp_map.values.mean(axis=0)


class TraceStore:
    """Disk persistence for trace sets: one raw little-endian float64 block
    per boundary plus a text manifest."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._open = {}

    def _path(self, boundary: str) -> Path:
        return self.directory / (boundary.replace(":", "_") + ".f64")

    def append(self, boundary: str, chunk: np.ndarray) -> None:
        fh = self._open.get(boundary)
        if fh is None:
            fh = self._open[boundary] = open(self._path(boundary), "wb")
        fh.write(np.ascontiguousarray(chunk, dtype="<f8").tobytes())

    def finalize(self, shapes: dict, kinds: dict, delta: float) -> None:
        for fh in self._open.values():
            fh.close()
        self._open.clear()
        lines = [f"delta={delta!r}"]
        for b, shape in shapes.items():
            dims = "x".join(str(d) for d in shape)
            lines.append(f"boundary={b} kind={kinds[b]} dims={dims}")
        (self.directory / "manifest.txt").write_text("\n".join(lines) + "\n")

    def as_trace_set(self) -> LayerTraceSet:
        return load_traces(self.directory)


def load_traces(directory) -> LayerTraceSet:
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if not manifest.is_file():
        raise FormatError(f"no trace manifest in {directory}", 0)
    data, kinds = {}, {}
    delta = 1.0
    for line in manifest.read_text().splitlines():
        if line.startswith("delta="):
            delta = float(line.split("=", 1)[1])
            continue
        m = re.fullmatch(r"boundary=(\S+) kind=(\S+) dims=(\S+)", line)
        if not m:
            raise FormatError(f"bad trace manifest line: {line!r}", 0)
        b, kind, dims = m.group(1), m.group(2), tuple(int(d) for d in m.group(3).split("x"))
        raw = (directory / (b.replace(":", "_") + ".f64")).read_bytes()
        expected = 8 * int(np.prod(dims))
        if len(raw) != expected:
            raise FormatError(f"trace block {b} has {len(raw)} bytes, expected {expected}", 0)
        data[b] = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
        kinds[b] = kind
    return LayerTraceSet(data=data, layer_kind=kinds, delta=delta)

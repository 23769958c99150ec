"""Tracing: shapes, read-only guarantee, SMP maps, disk store round trip."""

import numpy as np
import pytest

from nslab.engine import LayerSpec, Network, NetworkSpec, build_autoencoder
from nslab.errors import ShapeError
from nslab.nonsmooth import smp
from nslab.probe import (
    LayerTraceSet,
    SmpMap,
    TraceStore,
    channel_mean_smp,
    layer_smp_map,
    load_traces,
    reconstruct_video,
    trace_forward,
)
from nslab.synthgen import LightPath, VideoSequence, generate_light_path_video


def identity_network(h=6, w=6):
    spec = NetworkSpec((LayerSpec.act("identity"),), setup="relu_maxpool",
                       input_shape=(1, h, w))
    return Network(spec, {})


def small_video(t=8, h=6, w=6, seed=0):
    frames = np.random.default_rng(seed).uniform(size=(t, h, w))
    return VideoSequence(frames)


class TestTraceForward:
    def test_identity_network_traces_equal_pixels(self):
        video = small_video()
        traces = trace_forward(identity_network(), video)
        np.testing.assert_array_equal(traces.get("act1:out")[:, 0], video.frames)
        np.testing.assert_array_equal(traces.get("act1:in")[:, 0], video.frames)

    def test_constant_video_constant_traces(self):
        video = VideoSequence(np.full((5, 28, 28), 0.3))
        net = Network.initialized(build_autoencoder("relu_maxpool"), 0)
        traces = trace_forward(net, video)
        for b in traces.boundary_ids():
            series = traces.get(b)
            assert np.abs(series - series[:1]).max() < 1e-12

    def test_boundary_shapes_through_autoencoder(self):
        video = small_video(t=3, h=28, w=28)
        net = Network.initialized(build_autoencoder("relu_maxpool"), 1)
        traces = trace_forward(net, video)
        shapes = net.spec.shapes()
        names = net.spec.layer_names()
        assert len(traces.boundary_ids()) == 2 * len(names)
        for i, name in enumerate(names):
            assert traces.get(f"{name}:in").shape == (3, *shapes[i])
            assert traces.get(f"{name}:out").shape == (3, *shapes[i + 1])

    def test_selection_and_unknown_boundary(self):
        video = small_video(t=4, h=28, w=28)
        net = Network.initialized(build_autoencoder("relu_maxpool"), 1)
        traces = trace_forward(net, video, boundaries=["conv2:in", "conv2:out"])
        assert traces.boundary_ids() == ["conv2:in", "conv2:out"]
        with pytest.raises(KeyError):
            trace_forward(net, video, boundaries=["conv9:in"])

    def test_dim_mismatch(self):
        net = Network.initialized(build_autoencoder("relu_maxpool"), 1)
        with pytest.raises(ShapeError):
            trace_forward(net, small_video(h=14, w=14))

    def test_tracing_is_read_only(self):
        net = Network.initialized(build_autoencoder("relu_maxpool"), 2)
        before = {k: v.tobytes() for k, v in net.params.items()}
        trace_forward(net, small_video(t=4, h=28, w=28))
        after = {k: v.tobytes() for k, v in net.params.items()}
        assert before == after

    def test_chunking_matches_single_pass(self):
        video = small_video(t=9, h=28, w=28)
        net = Network.initialized(build_autoencoder("softplus_avepool"), 3)
        a = trace_forward(net, video, chunk_frames=2)
        b = trace_forward(net, video, chunk_frames=100)
        for bid in a.boundary_ids():
            np.testing.assert_array_equal(a.get(bid), b.get(bid))

    def test_output_boundary_reassembles_reconstruction(self):
        video = small_video(t=5, h=28, w=28)
        net = Network.initialized(build_autoencoder("relu_maxpool"), 4)
        traces = trace_forward(net, video, boundaries=["tconv3:out"])
        recon = reconstruct_video(net, video)
        np.testing.assert_array_equal(traces.get("tconv3:out")[:, 0], recon.frames)


class TestSmpMaps:
    def test_constant_video_all_zero_map(self):
        video = VideoSequence(np.full((6, 28, 28), 0.4))
        net = Network.initialized(build_autoencoder("relu_maxpool"), 0)
        maps = layer_smp_map(trace_forward(net, video, boundaries=["conv2:out"]))
        assert maps["conv2:out"].values.max() == 0.0

    def test_smooth_input_has_zero_input_smp(self):
        # exactly affine pixel series: the first conv's input carries no events
        base = np.random.default_rng(0).uniform(0.2, 0.8, size=(28, 28))
        drift = np.random.default_rng(1).uniform(-1, 1, size=(28, 28))
        frames = np.stack([base + 0.001 * t * drift for t in range(50)])
        video = VideoSequence(frames)
        net = Network.initialized(build_autoencoder("relu_maxpool"), 1)
        maps = layer_smp_map(trace_forward(net, video, boundaries=["conv1:in"]))
        assert maps["conv1:in"].values.max() < 1e-14

    def test_injected_kink_yields_single_entry(self):
        t = 60
        traces_arr = np.zeros((t, 2, 3, 3))
        ramp = np.concatenate([np.zeros(30), 0.5 * np.arange(t - 30)])
        traces_arr[:, 1, 2, 0] = ramp
        traces = LayerTraceSet(data={"conv1:out": traces_arr}, layer_kind={"conv1:out": "conv"})
        values = layer_smp_map(traces)["conv1:out"].values
        assert (values > 0).sum() == 1
        assert values[1, 2, 0] == pytest.approx(smp(ramp), abs=1e-12)

    def test_short_video_rejected(self):
        traces = LayerTraceSet(data={"x:out": np.zeros((2, 1, 2, 2))}, layer_kind={})
        with pytest.raises(ShapeError):
            layer_smp_map(traces)

    def test_channel_mean(self):
        m = SmpMap("b:out", np.stack([np.full((2, 2), 0.2), np.full((2, 2), 0.4)]))
        np.testing.assert_allclose(channel_mean_smp(m), np.full((2, 2), 0.3), atol=1e-15)
        single = SmpMap("b:out", np.full((1, 2, 2), 0.7))
        np.testing.assert_array_equal(channel_mean_smp(single), single.values[0])
        zero = SmpMap("b:out", np.zeros((3, 2, 2)))
        assert channel_mean_smp(zero).max() == 0.0

    def test_negative_smp_rejected(self):
        with pytest.raises(ValueError):
            SmpMap("b:out", -np.ones((1, 2, 2)))


class TestTraceStore:
    def test_streamed_store_matches_memory(self, tmp_path):
        video = generate_light_path_video(LightPath((-3, -3, 20), (3, 3, 20), step=0.5))
        net = Network.initialized(build_autoencoder("relu_maxpool"), 5)
        mem = trace_forward(net, video, boundaries=["conv2:in", "pool2:out"])
        store = TraceStore(tmp_path / "traces")
        trace_forward(net, video, boundaries=["conv2:in", "pool2:out"],
                      chunk_frames=3, store=store)
        disk = load_traces(tmp_path / "traces")
        assert disk.layer_kind == mem.layer_kind
        for b in mem.boundary_ids():
            np.testing.assert_array_equal(disk.get(b), mem.get(b))

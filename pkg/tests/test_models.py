import json
import struct

import numpy as np
import numpy.testing as npt
import pytest

from cxrtriage import models, nn
from cxrtriage.errors import BuildError, ModelFormatError


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def shape_trace(net, input_shape):
    """Spatial side length after each layer, for conv/pool stacks."""
    shape = input_shape
    trace = [shape[1]]
    for layer in net.layers:
        shape = layer.out_shape(shape)
        if len(shape) == 3:
            trace.append(shape[1])
    return trace


class TestCustomCnn:
    def test_spatial_trace_and_flatten_width(self):
        net = models.initialize(models.build_custom_cnn(1, 1.0), seed=0)
        trace = shape_trace(net, (1, 90, 90))
        assert trace == [90, 88, 88, 44, 42, 42, 21, 19, 19, 9]
        flatten_at = [i for i, l in enumerate(net.layers)
                      if isinstance(l, nn.Flatten)][0]
        shape = (1, 90, 90)
        for layer in net.layers[:flatten_at + 1]:
            shape = layer.out_shape(shape)
        assert shape == (10368,)

    def test_width_multiplier_quarter(self):
        spec = models.build_custom_cnn(1, 0.25)
        widths = [s.out_channels for s in spec.layers
                  if isinstance(s, models.ConvSpec)]
        assert widths == [8, 16, 32]

    def test_head_is_dense3_softmax(self):
        for wm in (0.25, 0.5, 1.0):
            spec = models.build_custom_cnn(1, wm)
            assert isinstance(spec.layers[-2], models.DenseSpec)
            assert spec.layers[-2].out_features == 3
            assert isinstance(spec.layers[-1], models.SoftmaxSpec)

    def test_batchnorm_sits_between_flatten_and_head(self):
        spec = models.build_custom_cnn(1, 1.0)
        kinds = [s.kind for s in spec.layers]
        assert kinds[-4:] == ["flatten", "batchnorm", "dense", "softmax"]


class TestVgg16Style:
    def test_spatial_trace(self):
        net = models.initialize(models.build_vgg16_style(1, 0.125), seed=0)
        trace = shape_trace(net, (1, 90, 90))
        pooled = [t for prev, t in zip(trace, trace[1:]) if t < prev]
        assert pooled == [45, 22, 11, 5, 2]

    def test_sixteen_weight_layers(self):
        spec = models.build_vgg16_style(1, 0.125)
        convs = sum(isinstance(s, models.ConvSpec) for s in spec.layers)
        denses = sum(isinstance(s, models.DenseSpec) for s in spec.layers)
        assert convs == 13
        assert denses == 3
        assert convs + denses == 16

    def test_width_multiplier_eighth(self):
        spec = models.build_vgg16_style(1, 0.125)
        first = next(s for s in spec.layers if isinstance(s, models.ConvSpec))
        assert first.out_channels == 8

    def test_canonical_block_widths(self):
        spec = models.build_vgg16_style(1, 1.0)
        widths = [s.out_channels for s in spec.layers
                  if isinstance(s, models.ConvSpec)]
        assert widths == [64, 64, 128, 128, 256, 256, 256,
                          512, 512, 512, 512, 512, 512]


class TestInceptionSmall:
    def test_block_channel_sums(self):
        spec = models.build_inception_small(1, 1.0)
        blocks = [s for s in spec.layers
                  if isinstance(s, models.InceptionSpec)]
        assert len(blocks) == 2
        assert blocks[0].b1 + blocks[0].b3 + blocks[0].b5 + blocks[0].bpool == 64
        assert blocks[1].b1 + blocks[1].b3 + blocks[1].b5 + blocks[1].bpool == 128

    def test_spatial_dims_preserved_through_blocks(self):
        net = models.initialize(models.build_inception_small(1, 0.5), seed=0)
        shape = (1, 90, 90)
        for layer in net.layers:
            new = layer.out_shape(shape)
            if isinstance(layer, nn.Inception):
                assert new[1:] == shape[1:]
            shape = new

    def test_full_forward_emits_distribution(self):
        net = models.initialize(models.build_inception_small(1, 0.25), seed=3)
        x = rng(3).random((1, 1, 90, 90), dtype=np.float32)
        probs = net.forward(x)
        assert probs.shape == (1, 3)
        npt.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(probs > 0)


class TestBuilderValidation:
    def test_all_builders_validate_both_channel_counts(self):
        for name in models.ARCHITECTURES:
            for channels in (1, 3):
                net = models.initialize(models.build(name, channels, 0.25),
                                        seed=0)
                assert net.validate((channels, 90, 90)) == (3,)

    def test_width_rounding_to_zero_rejected(self):
        with pytest.raises(BuildError, match="zero"):
            models.build_custom_cnn(1, 0.01)
        with pytest.raises(BuildError):
            models.build_inception_small(1, 0.01)

    def test_unknown_architecture(self):
        with pytest.raises(BuildError, match="unknown architecture"):
            models.build("resnet", 1, 1.0)

    def test_bad_channel_count(self):
        with pytest.raises(BuildError):
            models.build_custom_cnn(2, 1.0)

    def test_parameter_counts_are_pure_functions(self):
        # frozen table, wm=1: independently derived by summing the layer
        # arithmetic (kernels*C*F + F, D*M + M, 2*features)
        expected = {
            ("custom_cnn", 1): 144515,
            ("custom_cnn", 3): 145091,
            ("inception_small", 1): 383843,
            ("inception_small", 3): 384131,
        }
        for (name, channels), want in expected.items():
            spec = models.build(name, channels, 1.0)
            assert models.parameter_count(spec) == want, (name, channels)

    def test_vgg_parameter_count_formula(self):
        # independent arithmetic for the vgg stack at wm=0.125
        wm = 0.125
        widths = [int(64 * wm)] * 2 + [int(128 * wm)] * 2 \
            + [int(256 * wm)] * 3 + [int(512 * wm)] * 6
        total = 0
        c = 1
        for w in widths:
            total += w * c * 9 + w
            c = w
        flat = widths[-1] * 2 * 2
        head = int(256 * wm)
        total += flat * head + head
        total += head * head + head
        total += head * 3 + 3
        spec = models.build_vgg16_style(1, wm)
        assert models.parameter_count(spec) == total


class TestPersistence:
    def _net(self, seed=7):
        return models.initialize(models.build_custom_cnn(1, 0.25), seed=seed)

    def test_roundtrip_bit_identical_predictions(self, tmp_path):
        net = self._net()
        x = rng(8).random((3, 1, 90, 90), dtype=np.float32)
        before = net.forward(x)
        path = tmp_path / "model.cxrm"
        models.save_model(net, path)
        loaded = models.load_model(path)
        npt.assert_array_equal(loaded.forward(x), before)

    def test_roundtrip_preserves_batchnorm_running_stats(self, tmp_path):
        net = self._net()
        x = rng(9).random((8, 1, 90, 90), dtype=np.float32)
        net.forward(x, train=True)  # move stats off their seed values
        path = tmp_path / "model.cxrm"
        models.save_model(net, path)
        loaded = models.load_model(path)
        for a, b in zip(net.layers, loaded.layers):
            if isinstance(a, nn.BatchNorm):
                npt.assert_array_equal(a.running_mean, b.running_mean)
                npt.assert_array_equal(a.running_var, b.running_var)

    def test_save_is_deterministic(self, tmp_path):
        p1, p2 = tmp_path / "a.cxrm", tmp_path / "b.cxrm"
        models.save_model(self._net(), p1)
        models.save_model(self._net(), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_payload_names_byte_counts(self, tmp_path):
        path = tmp_path / "model.cxrm"
        models.save_model(self._net(), path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-100])
        with pytest.raises(ModelFormatError,
                           match=r"expected \d+ bytes, got \d+"):
            models.load_model(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "model.cxrm"
        models.save_model(self._net(), path)
        blob = bytearray(path.read_bytes())
        blob[:5] = b"NOPE1"
        path.write_bytes(bytes(blob))
        with pytest.raises(ModelFormatError, match="magic"):
            models.load_model(path)

    def test_version_mismatch_rejected(self, tmp_path):
        path = tmp_path / "model.cxrm"
        models.save_model(self._net(), path)
        blob = path.read_bytes()
        (hlen,) = struct.unpack("<I", blob[5:9])
        header = json.loads(blob[9:9 + hlen])
        header["version"] = 99
        raw = json.dumps(header, sort_keys=True,
                         separators=(",", ":")).encode()
        path.write_bytes(blob[:5] + struct.pack("<I", len(raw)) + raw
                         + blob[9 + hlen:])
        with pytest.raises(ModelFormatError, match="version"):
            models.load_model(path)

    def test_fingerprint_mismatch_refused(self, tmp_path):
        path = tmp_path / "model.cxrm"
        models.save_model(self._net(), path)
        with pytest.raises(ModelFormatError, match="fingerprint"):
            models.load_model(path, expect_channels=3)

    def test_altered_fingerprint_detected(self, tmp_path):
        path = tmp_path / "model.cxrm"
        models.save_model(self._net(), path)
        blob = path.read_bytes()
        (hlen,) = struct.unpack("<I", blob[5:9])
        header = json.loads(blob[9:9 + hlen])
        header["preprocessing"]["channels"] = 3
        raw = json.dumps(header, sort_keys=True,
                         separators=(",", ":")).encode()
        path.write_bytes(blob[:5] + struct.pack("<I", len(raw)) + raw
                         + blob[9 + hlen:])
        with pytest.raises(ModelFormatError):
            models.load_model(path, expect_channels=1)

    def test_unknown_layer_tag(self, tmp_path):
        path = tmp_path / "model.cxrm"
        models.save_model(self._net(), path)
        blob = path.read_bytes()
        (hlen,) = struct.unpack("<I", blob[5:9])
        header = json.loads(blob[9:9 + hlen])
        header["arch"]["layers"][0]["kind"] = "deconv"
        raw = json.dumps(header, sort_keys=True,
                         separators=(",", ":")).encode()
        path.write_bytes(blob[:5] + struct.pack("<I", len(raw)) + raw
                         + blob[9 + hlen:])
        with pytest.raises(ModelFormatError, match="unknown layer tag"):
            models.load_model(path)

    def test_header_payload_disagreement(self, tmp_path):
        path = tmp_path / "model.cxrm"
        models.save_model(self._net(), path)
        blob = path.read_bytes()
        (hlen,) = struct.unpack("<I", blob[5:9])
        header = json.loads(blob[9:9 + hlen])
        header["payload_bytes"] += 4
        raw = json.dumps(header, sort_keys=True,
                         separators=(",", ":")).encode()
        path.write_bytes(blob[:5] + struct.pack("<I", len(raw)) + raw
                         + blob[9 + hlen:])
        with pytest.raises(ModelFormatError, match="disagreement"):
            models.load_model(path)

    def test_unbuilt_network_refuses_save(self, tmp_path):
        net = nn.Network([nn.Dense(4, 3), nn.Softmax()])
        net.validate((4,))
        with pytest.raises(ModelFormatError, match="descriptor"):
            models.save_model(net, tmp_path / "x.cxrm")

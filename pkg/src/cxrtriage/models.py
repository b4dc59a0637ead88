"""Architecture builders and the sectioned binary model format.

A ModelSpec is a pure structural description (layer list plus input
fingerprint); ``initialize`` turns it into a Network with seeded weights.
Model files carry magic ``CXRM1``, a JSON header (architecture descriptor,
preprocessing fingerprint, parameter manifest) and a little-endian float32
payload, so save -> load -> predict is bit-identical.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import BuildError, ModelFormatError
from .tensor import DTYPE

MODEL_MAGIC = b"CXRM1"
MODEL_VERSION = 1
CLASS_NAMES = ("Normal", "Pneumonia", "Tuberculosis")
INPUT_SIDE = 90
NUM_CLASSES = 3


# --- layer specs -----------------------------------------------------------

@dataclass(frozen=True)
class ConvSpec:
    kind = "conv"
    out_channels: int
    kh: int = 3
    kw: int = 3
    stride: int = 1
    padding: str = nn.VALID


@dataclass(frozen=True)
class PoolSpec:
    kind = "maxpool"
    size: int = 2
    stride: int = 2


@dataclass(frozen=True)
class DenseSpec:
    kind = "dense"
    out_features: int


@dataclass(frozen=True)
class BatchNormSpec:
    kind = "batchnorm"
    epsilon: float = 1e-3
    momentum: float = 0.9


@dataclass(frozen=True)
class ReLUSpec:
    kind = "relu"


@dataclass(frozen=True)
class FlattenSpec:
    kind = "flatten"


@dataclass(frozen=True)
class SoftmaxSpec:
    kind = "softmax"


@dataclass(frozen=True)
class InceptionSpec:
    kind = "inception"
    b1: int = 16
    b3: int = 32
    b5: int = 8
    bpool: int = 8


_SPEC_KINDS = {
    "conv": ConvSpec,
    "maxpool": PoolSpec,
    "dense": DenseSpec,
    "batchnorm": BatchNormSpec,
    "relu": ReLUSpec,
    "flatten": FlattenSpec,
    "softmax": SoftmaxSpec,
    "inception": InceptionSpec,
}


@dataclass(frozen=True)
class ModelSpec:
    """Structural description of one network plus its input fingerprint."""

    name: str
    channels: int
    width_mult: float = 1.0
    height: int = INPUT_SIDE
    width: int = INPUT_SIDE
    num_classes: int = NUM_CLASSES
    layers: tuple = field(default_factory=tuple)

    def input_shape(self) -> tuple:
        return (self.channels, self.height, self.width)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "channels": self.channels,
            "width_mult": self.width_mult,
            "height": self.height,
            "width": self.width,
            "num_classes": self.num_classes,
            "layers": [
                {"kind": s.kind, **dataclasses.asdict(s)} for s in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        layers = []
        for entry in d["layers"]:
            entry = dict(entry)
            kind = entry.pop("kind")
            if kind not in _SPEC_KINDS:
                raise ModelFormatError(f"unknown layer tag {kind!r}")
            layers.append(_SPEC_KINDS[kind](**entry))
        return cls(
            name=d["name"],
            channels=int(d["channels"]),
            width_mult=float(d["width_mult"]),
            height=int(d["height"]),
            width=int(d["width"]),
            num_classes=int(d["num_classes"]),
            layers=tuple(layers),
        )


def _scaled(base: int, width_mult: float) -> int:
    w = int(round(base * width_mult))
    if w < 1:
        raise BuildError(
            f"width {base} * {width_mult} rounds to zero; increase width_mult")
    return w


def _check_channels(channels: int) -> int:
    if channels not in (1, 3):
        raise BuildError(f"channels must be 1 or 3, got {channels}")
    return channels


def build_custom_cnn(channels: int = 1, width_mult: float = 1.0) -> ModelSpec:
    """Three conv+pool blocks, then Flatten -> BatchNorm -> Dense(3) -> Softmax."""
    _check_channels(channels)
    w1, w2, w3 = (_scaled(b, width_mult) for b in (32, 64, 128))
    layers = (
        ConvSpec(w1), ReLUSpec(), PoolSpec(),
        ConvSpec(w2), ReLUSpec(), PoolSpec(),
        ConvSpec(w3), ReLUSpec(), PoolSpec(),
        FlattenSpec(), BatchNormSpec(),
        DenseSpec(NUM_CLASSES), SoftmaxSpec(),
    )
    return ModelSpec("custom_cnn", channels, width_mult, layers=layers)


def build_vgg16_style(channels: int = 1, width_mult: float = 1.0) -> ModelSpec:
    """The 13-conv/5-pool VGG-16 stack scaled by width_mult, with the dense
    head shrunk to two hidden layers of 256*wm (16 weight layers total)."""
    _check_channels(channels)
    blocks = ((64, 2), (128, 2), (256, 3), (512, 3), (512, 3))
    layers = []
    for base, reps in blocks:
        w = _scaled(base, width_mult)
        for _ in range(reps):
            layers += [ConvSpec(w, padding=nn.SAME), ReLUSpec()]
        layers.append(PoolSpec())
    head = _scaled(256, width_mult)
    layers += [
        FlattenSpec(),
        DenseSpec(head), ReLUSpec(),
        DenseSpec(head), ReLUSpec(),
        DenseSpec(NUM_CLASSES), SoftmaxSpec(),
    ]
    return ModelSpec("vgg16_style", channels, width_mult, layers=tuple(layers))


def build_inception_small(channels: int = 1, width_mult: float = 1.0) -> ModelSpec:
    """Stem conv, two inception blocks with a pool between, pooled stem."""
    _check_channels(channels)
    stem = _scaled(16, width_mult)
    b = [_scaled(x, width_mult) for x in (16, 32, 8, 8)]
    b2 = [_scaled(x, width_mult) for x in (32, 64, 16, 16)]
    layers = (
        ConvSpec(stem, padding=nn.SAME), ReLUSpec(), PoolSpec(),
        InceptionSpec(*b), PoolSpec(),
        InceptionSpec(*b2),
        FlattenSpec(), BatchNormSpec(),
        DenseSpec(NUM_CLASSES), SoftmaxSpec(),
    )
    return ModelSpec("inception_small", channels, width_mult, layers=layers)


ARCHITECTURES = {
    "custom_cnn": build_custom_cnn,
    "vgg16_style": build_vgg16_style,
    "inception_small": build_inception_small,
}


def build(name: str, channels: int = 1, width_mult: float = 1.0) -> ModelSpec:
    if name not in ARCHITECTURES:
        raise BuildError(
            f"unknown architecture {name!r}; choose from "
            f"{sorted(ARCHITECTURES)}")
    return ARCHITECTURES[name](channels, width_mult)


# --- instantiation ---------------------------------------------------------

def _make_layer(spec, in_shape, dtype):
    if isinstance(spec, ConvSpec):
        return nn.Conv2d(in_shape[0], spec.out_channels, spec.kh, spec.kw,
                         spec.stride, spec.padding, dtype=dtype)
    if isinstance(spec, PoolSpec):
        return nn.MaxPool2d(spec.size, spec.stride)
    if isinstance(spec, DenseSpec):
        return nn.Dense(in_shape[0], spec.out_features, dtype=dtype)
    if isinstance(spec, BatchNormSpec):
        return nn.BatchNorm(in_shape[0], spec.epsilon, spec.momentum,
                            dtype=dtype)
    if isinstance(spec, ReLUSpec):
        return nn.ReLU()
    if isinstance(spec, FlattenSpec):
        return nn.Flatten()
    if isinstance(spec, SoftmaxSpec):
        return nn.Softmax()
    if isinstance(spec, InceptionSpec):
        return nn.Inception(in_shape[0], spec.b1, spec.b3, spec.b5,
                            spec.bpool, dtype=dtype)
    raise ModelFormatError(f"unknown layer spec {type(spec).__name__}")


def _he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _init_conv(conv: nn.Conv2d, rng, dtype) -> None:
    fan_in = conv.in_channels * conv.kh * conv.kw
    conv.weight.value[...] = _he_uniform(rng, conv.weight.shape, fan_in, dtype)


def initialize(spec: ModelSpec, seed: int = 0, dtype=DTYPE) -> nn.Network:
    """Build a Network from a spec with seeded He/Glorot-uniform weights.

    He-uniform everywhere except the softmax head, which is
    Glorot-uniform; biases zero, batchnorm gamma 1 / beta 0.
    """
    if not spec.layers:
        raise BuildError("model spec has no layers")
    if len(spec.layers) < 2 or not isinstance(spec.layers[-1], SoftmaxSpec) \
            or not isinstance(spec.layers[-2], DenseSpec) \
            or spec.layers[-2].out_features != spec.num_classes:
        raise BuildError(
            "model must end with Dense(num_classes) followed by Softmax")
    rng = np.random.Generator(np.random.PCG64(seed))
    shape = spec.input_shape()
    layers = []
    head_index = len(spec.layers) - 2  # Dense feeding the final Softmax
    for i, lspec in enumerate(spec.layers):
        try:
            layer = _make_layer(lspec, shape, dtype)
            out = layer.out_shape(shape)
        except (BuildError, ModelFormatError):
            raise
        except Exception as exc:
            raise BuildError(f"layer {i} ({lspec.kind}): {exc}") from exc
        if isinstance(layer, nn.Conv2d):
            _init_conv(layer, rng, dtype)
        elif isinstance(layer, nn.Inception):
            for conv in (layer.conv1, layer.conv3, layer.conv5, layer.proj):
                _init_conv(conv, rng, dtype)
        elif isinstance(layer, nn.Dense):
            if i == head_index:
                layer.weight.value[...] = _glorot_uniform(
                    rng, layer.weight.shape, layer.in_features,
                    layer.out_features, dtype)
            else:
                layer.weight.value[...] = _he_uniform(
                    rng, layer.weight.shape, layer.in_features, dtype)
        layers.append(layer)
        shape = out
    net = nn.Network(layers)
    end = net.validate(spec.input_shape())
    if end != (spec.num_classes,):
        raise BuildError(f"network emits {end}, expected ({spec.num_classes},)")
    net.spec = spec
    return net


def parameter_count(spec: ModelSpec) -> int:
    """Learnable parameter count (running stats excluded)."""
    net = initialize(spec, seed=0)
    return int(sum(p.value.size for p in net.params()))


# --- persistence -----------------------------------------------------------

def _layer_tensors(layer) -> list:
    """(name, array) pairs persisted for one layer, in fixed order.
    Batchnorm running statistics ride along with the parameters."""
    if isinstance(layer, nn.Conv2d):
        return [("weight", layer.weight.value), ("bias", layer.bias.value)]
    if isinstance(layer, nn.Dense):
        return [("weight", layer.weight.value), ("bias", layer.bias.value)]
    if isinstance(layer, nn.BatchNorm):
        return [("gamma", layer.gamma.value), ("beta", layer.beta.value),
                ("running_mean", layer.running_mean),
                ("running_var", layer.running_var)]
    if isinstance(layer, nn.Inception):
        out = []
        for prefix, conv in (("b1", layer.conv1), ("b3", layer.conv3),
                             ("b5", layer.conv5), ("bpool", layer.proj)):
            out.append((f"{prefix}.weight", conv.weight.value))
            out.append((f"{prefix}.bias", conv.bias.value))
        return out
    return []


def save_model(net: nn.Network, path: str) -> None:
    spec = getattr(net, "spec", None)
    if spec is None:
        raise ModelFormatError(
            "network lacks an architecture descriptor; build it via "
            "cxrtriage.models before saving")
    manifest = []
    blobs = []
    for i, layer in enumerate(net.layers):
        for name, arr in _layer_tensors(layer):
            blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            manifest.append({"layer": i, "name": name,
                             "shape": list(arr.shape), "bytes": len(blob)})
            blobs.append(blob)
    payload = b"".join(blobs)
    header = {
        "format": "CXRM1",
        "version": MODEL_VERSION,
        "model_name": spec.name,
        "classes": list(CLASS_NAMES),
        "preprocessing": {
            "channels": spec.channels,
            "height": spec.height,
            "width": spec.width,
            "scale": "1/255",
        },
        "arch": spec.to_dict(),
        "params": manifest,
        "payload_bytes": len(payload),
    }
    header_bytes = json.dumps(header, sort_keys=True,
                              separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)


def _read_sections(path: str) -> tuple:
    """(header dict, payload bytes) with magic and length checks."""
    with open(path, "rb") as f:
        blob = f.read(len(MODEL_MAGIC) + 4)
        if len(blob) < len(MODEL_MAGIC) + 4 or blob[:5] != MODEL_MAGIC:
            raise ModelFormatError(
                f"bad magic: expected {MODEL_MAGIC!r}, got {blob[:5]!r}")
        (hlen,) = struct.unpack("<I", blob[5:9])
        header_bytes = f.read(hlen)
        if len(header_bytes) != hlen:
            raise ModelFormatError(
                f"truncated header: expected {hlen} bytes, got "
                f"{len(header_bytes)}")
        try:
            header = json.loads(header_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ModelFormatError(f"unreadable header: {exc}") from exc
        return header, f.read()


def read_header(path: str) -> dict:
    return _read_sections(path)[0]


def load_model(path: str, expect_channels: int | None = None) -> nn.Network:
    header, payload = _read_sections(path)
    if header.get("version") != MODEL_VERSION:
        raise ModelFormatError(
            f"unsupported model version {header.get('version')!r}, "
            f"expected {MODEL_VERSION}")
    fingerprint = header.get("preprocessing", {})
    if expect_channels is not None and fingerprint.get("channels") != expect_channels:
        raise ModelFormatError(
            f"preprocessing fingerprint mismatch: model was trained on "
            f"{fingerprint.get('channels')}-channel input, requested "
            f"{expect_channels}")
    spec = ModelSpec.from_dict(header["arch"])
    net = initialize(spec, seed=0)
    manifest = header["params"]
    declared = sum(int(m["bytes"]) for m in manifest)
    if declared != int(header["payload_bytes"]):
        raise ModelFormatError(
            f"header/payload length disagreement: manifest sums to "
            f"{declared} bytes, header declares {header['payload_bytes']}")
    if len(payload) != declared:
        raise ModelFormatError(
            f"truncated payload: expected {declared} bytes, got {len(payload)}")
    tensors = {}
    for i, layer in enumerate(net.layers):
        for name, arr in _layer_tensors(layer):
            tensors[(i, name)] = arr
    offset = 0
    seen = set()
    for m in manifest:
        key = (int(m["layer"]), m["name"])
        if key not in tensors:
            raise ModelFormatError(
                f"manifest names unknown tensor layer={key[0]} name={key[1]!r}")
        arr = tensors[key]
        if list(arr.shape) != list(m["shape"]):
            raise ModelFormatError(
                f"tensor {key} shape mismatch: file has {m['shape']}, "
                f"architecture needs {list(arr.shape)}")
        nbytes = int(m["bytes"])
        data = np.frombuffer(payload[offset:offset + nbytes], dtype="<f4")
        arr[...] = data.reshape(arr.shape).astype(arr.dtype)
        offset += nbytes
        seen.add(key)
    missing = set(tensors) - seen
    if missing:
        raise ModelFormatError(f"payload missing tensors: {sorted(missing)}")
    for layer in net.layers:
        if isinstance(layer, nn.BatchNorm):
            layer.steps = 1  # file stats are live; don't re-seed on resume
    return net


def file_hash(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

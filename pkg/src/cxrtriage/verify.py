"""Self-contained correctness checks runnable from the CLI.

Each check re-derives its expected values from an independent route
(direct 6-loop convolution, central finite differences, closed forms)
rather than trusting the production path it inspects. ``fast`` keeps
everything under a minute; ``full`` widens seeds, case counts, and adds
the float64 harness.
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import models, nn
from .data import read_archive, synthesize_dataset, write_archive


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float


# --- independent reference implementations ---------------------------------

def naive_conv2d(x, weight, bias, stride=1, padding="valid"):
    """Direct windowed cross-correlation, no im2col."""
    n, c, h, w = x.shape
    f, _, kh, kw = weight.shape
    if padding == "same":
        oh, ow = -(-h // stride), -(-w // stride)
        th = max((oh - 1) * stride + kh - h, 0)
        tw = max((ow - 1) * stride + kw - w, 0)
        x = np.pad(x, ((0, 0), (0, 0), (th // 2, th - th // 2),
                       (tw // 2, tw - tw // 2)))
        h, w = x.shape[2:]
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    out = np.zeros((n, f, oh, ow), dtype=x.dtype)
    for ni in range(n):
        for fi in range(f):
            for i in range(oh):
                for j in range(ow):
                    patch = x[ni, :, i * stride:i * stride + kh,
                              j * stride:j * stride + kw]
                    out[ni, fi, i, j] = (patch * weight[fi]).sum() + bias[fi]
    return out


def relative_error(analytic: float, numeric: float, scale: float) -> float:
    denom = max(abs(analytic) + abs(numeric), scale)
    return abs(analytic - numeric) / max(denom, 1e-30)


def _projection_loss(layer, x, r):
    out = layer.forward(x, train=True)
    return float((out.astype(np.float64) * r.astype(np.float64)).sum())


def _central_diff(f, flat, c, eps):
    old = flat[c]
    flat[c] = old + eps
    lp = f()
    flat[c] = old - eps
    lm = f()
    flat[c] = old
    return (lp - lm) / (2 * eps)


def fd_check_layer(layer, x, rng, eps=1e-3, rtol=1e-2, max_coords=24):
    """Compare layer.backward against central differences on the
    projection loss sum(forward(x) * R). Returns the worst error seen.

    A coordinate that fails is re-probed at eps/4: a ReLU-kink or pool-tie
    crossing shrinks with the step, a genuine gradient bug does not.
    """
    r = rng.standard_normal(layer.forward(x, train=True).shape).astype(x.dtype)
    for p in layer.params():
        p.zero_grad()
    layer.forward(x, train=True)
    dx = layer.backward(r)
    analytic = [("x", x, dx)]
    analytic += [(f"param{i}", p.value, p.grad.copy())
                 for i, p in enumerate(layer.params())]
    worst = 0.0
    for name, arr, grad in analytic:
        scale = float(np.sqrt(np.mean(grad.astype(np.float64) ** 2))) or 1.0
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        n_coords = min(max_coords, flat.size)
        coords = rng.choice(flat.size, size=n_coords, replace=False)
        loss = lambda: _projection_loss(layer, x, r)
        for c in coords:
            numeric = _central_diff(loss, flat, c, eps)
            err = relative_error(float(gflat[c]), numeric, scale)
            for shrink in (4, 16):
                if err <= rtol:
                    break
                numeric = _central_diff(loss, flat, c, eps / shrink)
                err = relative_error(float(gflat[c]), numeric, scale)
            worst = max(worst, err)
            if err > rtol:
                return worst, f"{name}[{c}] err {err:.2e} > {rtol:g}"
    return worst, ""


def _kinkless(x):
    """Push values away from zero so ReLU kinks can't straddle the
    finite-difference probe."""
    s = np.sign(x)
    s[s == 0] = 1.0
    return x + 0.25 * s.astype(x.dtype)


def _spread(rng, shape, dtype):
    """Shuffled evenly-spaced values: no two entries within 2*eps of each
    other, so perturbing one cannot flip a max-pool argmax."""
    size = int(np.prod(shape))
    vals = np.linspace(-1.0, 1.0, size, dtype=dtype)
    return rng.permutation(vals).reshape(shape)


# (name, factory, input shape, relu kinks inside, needs spread inputs)
def _layer_cases(dtype):
    return [
        ("conv 3x3 valid", lambda: nn.Conv2d(3, 4, 3, 3, dtype=dtype),
         (2, 3, 6, 6), False, False),
        ("conv 5x5 same", lambda: nn.Conv2d(2, 3, 5, 5, padding=nn.SAME,
                                            dtype=dtype), (2, 2, 7, 7),
         False, False),
        ("conv 3x3 stride2", lambda: nn.Conv2d(2, 2, 3, 3, stride=2,
                                               dtype=dtype), (1, 2, 7, 7),
         False, False),
        ("maxpool 2x2", lambda: nn.MaxPool2d(2, 2), (2, 2, 6, 6),
         False, True),
        ("maxpool 3x3 stride1 same", lambda: nn.MaxPool2d(3, 1, nn.SAME),
         (1, 2, 5, 5), False, True),
        ("dense", lambda: nn.Dense(7, 5, dtype=dtype), (4, 7), False, False),
        ("batchnorm 2d", lambda: nn.BatchNorm(5, dtype=dtype), (8, 5),
         False, False),
        ("batchnorm 4d", lambda: nn.BatchNorm(4, dtype=dtype), (3, 4, 5, 5),
         False, False),
        ("relu", lambda: nn.ReLU(), (3, 4, 4, 4), True, False),
        ("flatten", lambda: nn.Flatten(), (3, 2, 4, 4), False, False),
        ("softmax", lambda: nn.Softmax(), (3, 5), False, False),
        ("inception", lambda: nn.Inception(4, 2, 3, 2, 2, dtype=dtype),
         (2, 4, 7, 7), True, False),
    ]


def _init_layer_params(layer, rng, dtype):
    for p in layer.params():
        if p.value.ndim > 1:
            p.value[...] = (rng.standard_normal(p.value.shape) * 0.5).astype(dtype)
        else:
            p.value[...] = (rng.standard_normal(p.value.shape) * 0.1).astype(dtype)


def check_layer_gradients(seeds, dtype, rtol) -> list:
    results = []
    width = "float64" if np.dtype(dtype) == np.float64 else "float32"
    for name, factory, shape, kinks, spread in _layer_cases(dtype):
        t0 = time.perf_counter()
        worst = 0.0
        failure = ""
        for seed in seeds:
            rng = np.random.Generator(np.random.PCG64(seed))
            layer = factory()
            _init_layer_params(layer, rng, dtype)
            if spread:
                x = _spread(rng, shape, dtype)
            else:
                x = rng.standard_normal(shape).astype(dtype)
            if kinks:
                x = _kinkless(x)
            err, failure = fd_check_layer(layer, x, rng, rtol=rtol)
            worst = max(worst, err)
            if failure:
                break
        results.append(CheckResult(
            f"gradient {name} ({width})", not failure,
            failure or f"worst rel err {worst:.2e} <= {rtol:g}",
            time.perf_counter() - t0))
    return results


def check_network_gradients(seed, dtype, rtol, n_coords=20) -> CheckResult:
    """End-to-end finite differences on the full custom CNN loss."""
    t0 = time.perf_counter()
    rng = np.random.Generator(np.random.PCG64(seed))
    spec = models.build_custom_cnn(channels=1, width_mult=0.25)
    net = models.initialize(spec, seed=seed, dtype=dtype)
    x = rng.random((2, 1, 90, 90)).astype(dtype)
    onehot = np.zeros((2, 3), dtype=dtype)
    onehot[0, 1] = 1
    onehot[1, 2] = 1

    def loss():
        probs = net.forward(x, train=True)
        return float(-(np.log(np.maximum(
            (probs * onehot).sum(axis=1), 1e-12).astype(np.float64))).mean())

    net.zero_grads()
    probs = net.forward(x, train=True)
    _, dlogits = nn.cross_entropy(probs, onehot)
    net.backward_from_logits(dlogits)
    params = net.params()
    grads = [p.grad.copy() for p in params]
    sizes = np.array([p.value.size for p in params], dtype=np.float64)
    eps = 1e-3
    worst = 0.0
    for _ in range(n_coords):
        pi = int(rng.choice(len(params), p=sizes / sizes.sum()))
        flat = params[pi].value.reshape(-1)
        c = int(rng.integers(flat.size))
        scale = float(np.sqrt(np.mean(grads[pi].astype(np.float64) ** 2))) or 1.0
        numeric = _central_diff(loss, flat, c, eps)
        err = relative_error(float(grads[pi].reshape(-1)[c]), numeric, scale)
        for shrink in (4, 16):
            if err <= rtol:
                break
            numeric = _central_diff(loss, flat, c, eps / shrink)
            err = relative_error(float(grads[pi].reshape(-1)[c]), numeric,
                                 scale)
        worst = max(worst, err)
        if err > rtol:
            return CheckResult(
                f"gradient full custom_cnn ({np.dtype(dtype).name})", False,
                f"param {pi} coord {c}: err {err:.2e} > {rtol:g}",
                time.perf_counter() - t0)
    return CheckResult(
        f"gradient full custom_cnn ({np.dtype(dtype).name})", True,
        f"worst rel err {worst:.2e} <= {rtol:g} over {n_coords} coords",
        time.perf_counter() - t0)


def check_conv_oracle(n_cases: int, seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    for case in range(n_cases):
        kh = kw = int(rng.choice([1, 3, 5]))
        stride = int(rng.choice([1, 1, 2]))
        padding = str(rng.choice([nn.VALID, nn.SAME]))
        n = int(rng.integers(1, 3))
        c = int(rng.integers(1, 4))
        f = int(rng.integers(1, 5))
        h = int(rng.integers(max(kh, 5), 11))
        w = int(rng.integers(max(kw, 5), 11))
        conv = nn.Conv2d(c, f, kh, kw, stride, padding)
        conv.weight.value[...] = rng.standard_normal(
            conv.weight.shape).astype(np.float32)
        conv.bias.value[...] = rng.standard_normal(f).astype(np.float32)
        x = rng.standard_normal((n, c, h, w)).astype(np.float32)
        got = conv.forward(x)
        want = naive_conv2d(x, conv.weight.value, conv.bias.value,
                            stride, padding)
        denom = max(float(np.abs(want).max()), 1e-6)
        err = float(np.abs(got - want).max()) / denom
        worst = max(worst, err)
        if err > 1e-4:
            return CheckResult(
                "conv im2col vs direct", False,
                f"case {case} ({kh}x{kw} s{stride} {padding}): "
                f"rel err {err:.2e} > 1e-4", time.perf_counter() - t0)
    return CheckResult("conv im2col vs direct", True,
                       f"{n_cases} cases, worst rel err {worst:.2e} <= 1e-4",
                       time.perf_counter() - t0)


def check_archive_roundtrip() -> CheckResult:
    t0 = time.perf_counter()
    archive = synthesize_dataset(4, seed=11)
    with tempfile.TemporaryDirectory() as tmp:
        p1 = Path(tmp) / "a.cxra"
        p2 = Path(tmp) / "b.cxra"
        write_archive(archive, p1)
        back = read_archive(p1)
        write_archive(back, p2)
        ok = p1.read_bytes() == p2.read_bytes() \
            and np.array_equal(archive.pixels, back.pixels) \
            and np.array_equal(archive.labels, back.labels)
    return CheckResult("archive write/read roundtrip", ok,
                       "byte-identical" if ok else "bytes differ",
                       time.perf_counter() - t0)


def check_model_roundtrip() -> CheckResult:
    t0 = time.perf_counter()
    spec = models.build_custom_cnn(channels=1, width_mult=0.25)
    net = models.initialize(spec, seed=5)
    rng = np.random.Generator(np.random.PCG64(5))
    x = rng.random((2, 1, 90, 90)).astype(np.float32)
    before = net.forward(x)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "m.cxrm"
        models.save_model(net, path)
        loaded = models.load_model(path)
    after = loaded.forward(x)
    ok = np.array_equal(before, after)
    return CheckResult("model save/load prediction roundtrip", ok,
                       "bit-identical predictions" if ok
                       else f"max diff {np.abs(before - after).max():.2e}",
                       time.perf_counter() - t0)


def check_closed_forms() -> CheckResult:
    t0 = time.perf_counter()
    sm = nn.Softmax()
    probs = sm.forward(np.log(np.array([[1.0, 2.0, 3.0]], dtype=np.float32)))
    ok = np.allclose(probs, [[1 / 6, 2 / 6, 3 / 6]], atol=1e-6)
    uniform = np.full((4, 3), 1 / 3, dtype=np.float32)
    onehot = np.eye(3, dtype=np.float32)[[0, 1, 2, 0]]
    loss, _ = nn.cross_entropy(uniform, onehot)
    ok = ok and abs(loss - np.log(3)) < 1e-6
    return CheckResult("softmax / cross-entropy closed forms", ok,
                       "match" if ok else "closed-form mismatch",
                       time.perf_counter() - t0)


def run(level: str = "fast") -> list:
    if level not in ("fast", "full"):
        raise ValueError(f"level must be fast or full, got {level!r}")
    results = [check_closed_forms()]
    if level == "fast":
        results.append(check_conv_oracle(10))
        results.extend(check_layer_gradients((0, 1), np.float32, 1e-2))
        results.append(check_network_gradients(0, np.float32, 1e-2, 10))
    else:
        results.append(check_conv_oracle(50))
        results.extend(check_layer_gradients(tuple(range(5)), np.float32, 1e-2))
        results.extend(check_layer_gradients(tuple(range(5)), np.float64, 1e-4))
        results.append(check_network_gradients(0, np.float32, 1e-2, 20))
        results.append(check_network_gradients(0, np.float64, 1e-4, 20))
    results.append(check_archive_roundtrip())
    results.append(check_model_roundtrip())
    return results

"""Layers with hand-written forward and backward passes.

Conventions used throughout:
  - image tensors are [N, C, H, W], float32 (float64 in the widened
    gradient-check harness);
  - convolution is cross-correlation (no kernel flip), implemented as
    im2col + GEMM;
  - layers cache activations only during train-mode forward passes, so
    inference-mode forward is read-only and safe for concurrent callers;
  - backward accumulates parameter gradients with +=; the training loop
    zeroes them explicitly.
"""

from __future__ import annotations

import numpy as np

from .errors import BuildError, DomainError, ShapeError
from .tensor import DTYPE

VALID = "valid"
SAME = "same"


class Param:
    """A learnable tensor paired with its gradient accumulator."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)

    def zero_grad(self) -> None:
        self.grad[...] = 0

    @property
    def shape(self):
        return self.value.shape


class Layer:
    """Base layer. Subclasses override forward/backward/out_shape."""

    def params(self) -> list:
        return []

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def out_shape(self, in_shape: tuple) -> tuple:
        raise NotImplementedError

    def _check_dtype(self, x: np.ndarray, dtype) -> None:
        if x.dtype != dtype:
            raise DomainError(
                f"{type(self).__name__} built for {np.dtype(dtype)} got {x.dtype}"
            )


def _pad_amounts(size: int, k: int, stride: int, padding: str) -> tuple:
    """(before, after) zero-pad for one spatial axis."""
    if padding == VALID:
        return 0, 0
    if padding == SAME:
        out = -(-size // stride)  # ceil
        total = max((out - 1) * stride + k - size, 0)
        return total // 2, total - total // 2
    raise ShapeError(f"unknown padding mode {padding!r}")


def _conv_out(size: int, k: int, stride: int, pt: int, pb: int) -> int:
    return (size + pt + pb - k) // stride + 1


def _im2col_sample(cols: np.ndarray, src: np.ndarray, kh: int, kw: int,
                   stride: int, ho: int, wo: int) -> None:
    """Fill a per-sample [C,kh,kw,Ho,Wo] patch buffer from padded [C,Hp,Wp].

    One strided block copy per kernel offset; the buffer is small enough
    to stay cache-resident, which is what makes the GEMM fast."""
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = src[:, i:i + ho * stride:stride,
                                j:j + wo * stride:stride]


def _col2im_sample(dxp_n: np.ndarray, dcols: np.ndarray, kh: int, kw: int,
                   stride: int, ho: int, wo: int) -> None:
    """Scatter-add per-sample patch gradients [C,kh,kw,Ho,Wo] onto [C,Hp,Wp]."""
    for i in range(kh):
        for j in range(kw):
            dxp_n[:, i:i + ho * stride:stride,
                  j:j + wo * stride:stride] += dcols[:, i, j]


class Conv2d(Layer):
    """2D cross-correlation with per-filter bias, im2col + GEMM."""

    def __init__(self, in_channels: int, out_channels: int, kh: int, kw: int,
                 stride: int = 1, padding: str = VALID, dtype=DTYPE):
        if min(in_channels, out_channels, kh, kw, stride) < 1:
            raise BuildError(
                f"conv parameters must be >= 1, got in={in_channels} "
                f"out={out_channels} kernel={kh}x{kw} stride={stride}")
        if padding not in (VALID, SAME):
            raise ShapeError(f"unknown padding mode {padding!r}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kh, self.kw = kh, kw
        self.stride = stride
        self.padding = padding
        self.dtype = np.dtype(dtype)
        self.weight = Param(np.zeros((out_channels, in_channels, kh, kw), dtype))
        self.bias = Param(np.zeros(out_channels, dtype))
        self._cache = None

    def params(self):
        return [self.weight, self.bias]

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"Conv2d expects (C,H,W) input, got {in_shape}")
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(
                f"Conv2d expects {self.in_channels} input channels, got {c}")
        pt, pb = _pad_amounts(h, self.kh, self.stride, self.padding)
        pl, pr = _pad_amounts(w, self.kw, self.stride, self.padding)
        if self.kh > h + pt + pb or self.kw > w + pl + pr:
            raise ShapeError(
                f"kernel {self.kh}x{self.kw} larger than padded input "
                f"{h + pt + pb}x{w + pl + pr}")
        return (self.out_channels,
                _conv_out(h, self.kh, self.stride, pt, pb),
                _conv_out(w, self.kw, self.stride, pl, pr))

    def forward(self, x, train=False):
        self._check_dtype(x, self.dtype)
        n, c, h, w = x.shape
        _, ho, wo = self.out_shape((c, h, w))
        pt, pb = _pad_amounts(h, self.kh, self.stride, self.padding)
        pl, pr = _pad_amounts(w, self.kw, self.stride, self.padding)
        if pt or pb or pl or pr:
            xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        else:
            xp = x
        kh, kw = self.kh, self.kw
        wmat = self.weight.value.reshape(self.out_channels, -1)
        out = np.empty((n, self.out_channels, ho, wo), dtype=self.dtype)
        cols = np.empty((c, kh, kw, ho, wo), dtype=self.dtype)
        cmat = cols.reshape(c * kh * kw, ho * wo)
        for ni in range(n):
            _im2col_sample(cols, xp[ni], kh, kw, self.stride, ho, wo)
            np.matmul(wmat, cmat,
                      out=out[ni].reshape(self.out_channels, ho * wo))
        out += self.bias.value.reshape(1, -1, 1, 1)
        if train:
            self._cache = (xp, x.shape, (pt, pl), (ho, wo))
        return out

    def backward(self, upstream):
        if self._cache is None:
            raise ShapeError("Conv2d.backward before train-mode forward")
        xp, xshape, (pt, pl), (ho, wo) = self._cache
        n, c, h, w = xshape
        if upstream.shape != (n, self.out_channels, ho, wo):
            raise ShapeError(
                f"upstream shape {upstream.shape} does not match forward "
                f"output {(n, self.out_channels, ho, wo)}")
        kh, kw = self.kh, self.kw
        f = self.out_channels
        wmat = self.weight.value.reshape(f, -1)
        dw = np.zeros_like(wmat)
        dxp = np.zeros(xp.shape, dtype=self.dtype)
        cols = np.empty((c, kh, kw, ho, wo), dtype=self.dtype)
        cmat = cols.reshape(c * kh * kw, ho * wo)
        dcols = np.empty_like(cols)
        dcmat = dcols.reshape(c * kh * kw, ho * wo)
        for ni in range(n):
            umat = upstream[ni].reshape(f, ho * wo)
            _im2col_sample(cols, xp[ni], kh, kw, self.stride, ho, wo)
            dw += umat @ cmat.T
            np.matmul(wmat.T, umat, out=dcmat)
            _col2im_sample(dxp[ni], dcols, kh, kw, self.stride, ho, wo)
        self.weight.grad += dw.reshape(self.weight.value.shape)
        self.bias.grad += upstream.sum(axis=(0, 2, 3))
        return np.ascontiguousarray(dxp[:, :, pt:pt + h, pl:pl + w])


class MaxPool2d(Layer):
    """Per-window maximum; gradient routes to each window's argmax
    (ties resolved to the first element in row-major scan order)."""

    def __init__(self, size: int = 2, stride: int | None = None,
                 padding: str = VALID):
        if size < 1:
            raise BuildError(f"pool size must be >= 1, got {size}")
        self.size = size
        self.stride = size if stride is None else stride
        self.padding = padding
        self._cache = None

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"MaxPool2d expects (C,H,W) input, got {in_shape}")
        c, h, w = in_shape
        pt, pb = _pad_amounts(h, self.size, self.stride, self.padding)
        pl, pr = _pad_amounts(w, self.size, self.stride, self.padding)
        if self.size > h + pt + pb or self.size > w + pl + pr:
            raise ShapeError(
                f"pool window {self.size}x{self.size} larger than input {h}x{w}")
        return (c,
                _conv_out(h, self.size, self.stride, pt, pb),
                _conv_out(w, self.size, self.stride, pl, pr))

    def _window_view(self, xp, i, j, ho, wo):
        s = self.stride
        return xp[:, :, i:i + ho * s:s, j:j + wo * s:s]

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        _, ho, wo = self.out_shape((c, h, w))
        pt, pb = _pad_amounts(h, self.size, self.stride, self.padding)
        pl, pr = _pad_amounts(w, self.size, self.stride, self.padding)
        if pt or pb or pl or pr:
            xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)),
                        constant_values=-np.inf)
        else:
            xp = x
        out = self._window_view(xp, 0, 0, ho, wo).copy()
        for i in range(self.size):
            for j in range(self.size):
                if i == 0 and j == 0:
                    continue
                np.maximum(out, self._window_view(xp, i, j, ho, wo), out=out)
        if train:
            self._cache = (xp, out, x.shape, (pt, pl), (ho, wo))
        return out

    def backward(self, upstream):
        if self._cache is None:
            raise ShapeError("MaxPool2d.backward before train-mode forward")
        xp, out, xshape, (pt, pl), (ho, wo) = self._cache
        n, c, h, w = xshape
        if upstream.shape != (n, c, ho, wo):
            raise ShapeError(
                f"upstream shape {upstream.shape} does not match forward "
                f"output {(n, c, ho, wo)}")
        dxp = np.zeros(xp.shape, dtype=upstream.dtype)
        # route to the first window element equal to the max, row-major
        taken = np.zeros(out.shape, dtype=bool)
        for i in range(self.size):
            for j in range(self.size):
                sel = np.equal(self._window_view(xp, i, j, ho, wo), out)
                sel &= ~taken
                self._window_view(dxp, i, j, ho, wo)[...] += \
                    np.where(sel, upstream, 0)
                taken |= sel
        return np.ascontiguousarray(dxp[:, :, pt:pt + h, pl:pl + w])


class Dense(Layer):
    """y = x @ W + b on [N, D] inputs."""

    def __init__(self, in_features: int, out_features: int, dtype=DTYPE):
        if min(in_features, out_features) < 1:
            raise BuildError(
                f"dense features must be >= 1, got {in_features}->{out_features}")
        self.in_features = in_features
        self.out_features = out_features
        self.dtype = np.dtype(dtype)
        self.weight = Param(np.zeros((in_features, out_features), dtype))
        self.bias = Param(np.zeros(out_features, dtype))
        self._cache = None

    def params(self):
        return [self.weight, self.bias]

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.in_features:
            raise ShapeError(
                f"Dense expects ({self.in_features},) input, got {in_shape}")
        return (self.out_features,)

    def forward(self, x, train=False):
        self._check_dtype(x, self.dtype)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                f"Dense expects [N,{self.in_features}] input, got {x.shape}")
        if train:
            self._cache = x
        return x @ self.weight.value + self.bias.value

    def backward(self, upstream):
        if self._cache is None:
            raise ShapeError("Dense.backward before train-mode forward")
        x = self._cache
        if upstream.shape != (x.shape[0], self.out_features):
            raise ShapeError(
                f"upstream shape {upstream.shape} does not match forward "
                f"output {(x.shape[0], self.out_features)}")
        self.weight.grad += x.T @ upstream
        self.bias.grad += upstream.sum(axis=0)
        return upstream @ self.weight.value.T


class BatchNorm(Layer):
    """Per-channel batch normalization with running statistics.

    Accepts [N, C] or [N, C, H, W]; statistics reduce over every axis but
    the channel axis. The first train-mode batch seeds the running stats
    directly (a cold 0/1 start never catches up within a short training
    budget); afterwards they update as
    running = momentum * running + (1 - momentum) * batch_stat.
    """

    def __init__(self, num_features: int, epsilon: float = 1e-3,
                 momentum: float = 0.9, dtype=DTYPE):
        if num_features < 1:
            raise BuildError(f"num_features must be >= 1, got {num_features}")
        if not 0.0 < momentum < 1.0:
            raise BuildError(f"momentum must be in (0,1), got {momentum}")
        if epsilon <= 0:
            raise BuildError(f"epsilon must be positive, got {epsilon}")
        self.num_features = num_features
        self.epsilon = epsilon
        self.momentum = momentum
        self.dtype = np.dtype(dtype)
        self.gamma = Param(np.ones(num_features, dtype))
        self.beta = Param(np.zeros(num_features, dtype))
        self.running_mean = np.zeros(num_features, dtype)
        self.running_var = np.ones(num_features, dtype)
        self.steps = 0  # train batches seen; 0 means stats are unseeded
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def out_shape(self, in_shape):
        if in_shape[0] != self.num_features:
            raise ShapeError(
                f"BatchNorm expects {self.num_features} channels, got {in_shape}")
        return tuple(in_shape)

    def _axes_and_view(self, x):
        if x.ndim == 2:
            return (0,), (1, self.num_features)
        if x.ndim == 4:
            return (0, 2, 3), (1, self.num_features, 1, 1)
        raise ShapeError(f"BatchNorm expects rank 2 or 4 input, got {x.shape}")

    def forward(self, x, train=False):
        self._check_dtype(x, self.dtype)
        axes, view = self._axes_and_view(x)
        if x.shape[1] != self.num_features:
            raise ShapeError(
                f"BatchNorm expects {self.num_features} channels, got {x.shape}")
        gamma = self.gamma.value.reshape(view)
        beta = self.beta.value.reshape(view)
        if train:
            m = int(np.prod([x.shape[a] for a in axes]))
            if m <= 1:
                raise ShapeError(
                    "batch normalization in train mode needs more than one "
                    f"element per channel, got population {m}")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            inv_std = 1.0 / np.sqrt(var + self.dtype.type(self.epsilon))
            xhat = (x - mean.reshape(view)) * inv_std.reshape(view)
            if self.steps == 0:
                self.running_mean = mean.copy()
                self.running_var = var.copy()
            else:
                mom = self.dtype.type(self.momentum)
                self.running_mean = mom * self.running_mean + (1 - mom) * mean
                self.running_var = mom * self.running_var + (1 - mom) * var
            self.steps += 1
            self._cache = (xhat, inv_std, axes, view, m)
            return gamma * xhat + beta
        inv_std = 1.0 / np.sqrt(self.running_var + self.dtype.type(self.epsilon))
        xhat = (x - self.running_mean.reshape(view)) * inv_std.reshape(view)
        return gamma * xhat + beta

    def backward(self, upstream):
        if self._cache is None:
            raise ShapeError("BatchNorm.backward before train-mode forward")
        xhat, inv_std, axes, view, m = self._cache
        if upstream.shape != xhat.shape:
            raise ShapeError(
                f"upstream shape {upstream.shape} does not match forward "
                f"output {xhat.shape}")
        self.gamma.grad += (upstream * xhat).sum(axis=axes)
        self.beta.grad += upstream.sum(axis=axes)
        g = self.gamma.value.reshape(view)
        du = upstream * g
        du_sum = du.sum(axis=axes).reshape(view)
        duxhat_sum = (du * xhat).sum(axis=axes).reshape(view)
        scale = inv_std.reshape(view) / self.dtype.type(m)
        return scale * (m * du - du_sum - xhat * duxhat_sum)


class ReLU(Layer):
    def __init__(self):
        self._mask = None

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x, train=False):
        if train:
            self._mask = x > 0
        return np.maximum(x, x.dtype.type(0))

    def backward(self, upstream):
        if self._mask is None:
            raise ShapeError("ReLU.backward before train-mode forward")
        return upstream * self._mask


class Flatten(Layer):
    def __init__(self):
        self._shape = None

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False):
        if train:
            self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, upstream):
        if self._shape is None:
            raise ShapeError("Flatten.backward before train-mode forward")
        return upstream.reshape(self._shape)


class Softmax(Layer):
    """Row softmax with max-subtraction. Valid only as the final layer."""

    def __init__(self):
        self._probs = None

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] < 2:
            raise ShapeError(f"Softmax expects (K,) with K >= 2, got {in_shape}")
        return tuple(in_shape)

    def forward(self, x, train=False):
        if x.ndim != 2:
            raise ShapeError(f"Softmax expects [N,K] logits, got {x.shape}")
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=1, keepdims=True)
        if train:
            self._probs = probs
        return probs

    def backward(self, upstream):
        if self._probs is None:
            raise ShapeError("Softmax.backward before train-mode forward")
        p = self._probs
        if upstream.shape != p.shape:
            raise ShapeError(
                f"upstream shape {upstream.shape} does not match forward "
                f"output {p.shape}")
        dot = (upstream * p).sum(axis=1, keepdims=True)
        return p * (upstream - dot)


class Inception(Layer):
    """Parallel 1x1 / 3x3 / 5x5 convolutions plus a pooled 1x1 projection,
    concatenated along channels in that order. All branches same-padded,
    stride 1, each conv followed by ReLU."""

    def __init__(self, in_channels: int, b1: int, b3: int, b5: int,
                 bpool: int, dtype=DTYPE):
        if min(b1, b3, b5, bpool) < 1:
            raise BuildError(
                f"inception branch widths must be >= 1, got "
                f"{b1}/{b3}/{b5}/{bpool}")
        self.in_channels = in_channels
        self.widths = (b1, b3, b5, bpool)
        self.conv1 = Conv2d(in_channels, b1, 1, 1, padding=SAME, dtype=dtype)
        self.conv3 = Conv2d(in_channels, b3, 3, 3, padding=SAME, dtype=dtype)
        self.conv5 = Conv2d(in_channels, b5, 5, 5, padding=SAME, dtype=dtype)
        self.pool = MaxPool2d(3, stride=1, padding=SAME)
        self.proj = Conv2d(in_channels, bpool, 1, 1, padding=SAME, dtype=dtype)
        self.relus = [ReLU(), ReLU(), ReLU(), ReLU()]

    def params(self):
        out = []
        for conv in (self.conv1, self.conv3, self.conv5, self.proj):
            out.extend(conv.params())
        return out

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"Inception expects (C,H,W) input, got {in_shape}")
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(
                f"Inception expects {self.in_channels} input channels, got {c}")
        shapes = [conv.out_shape(in_shape)
                  for conv in (self.conv1, self.conv3, self.conv5)]
        shapes.append(self.proj.out_shape(self.pool.out_shape(in_shape)))
        spatial = {s[1:] for s in shapes}
        if spatial != {(h, w)}:
            raise ShapeError(
                f"inception branch spatial mismatch: {sorted(spatial)} "
                f"(padding bug)")
        return (sum(self.widths), h, w)

    def forward(self, x, train=False):
        outs = [
            self.relus[0].forward(self.conv1.forward(x, train), train),
            self.relus[1].forward(self.conv3.forward(x, train), train),
            self.relus[2].forward(self.conv5.forward(x, train), train),
            self.relus[3].forward(
                self.proj.forward(self.pool.forward(x, train), train), train),
        ]
        spatial = {o.shape[2:] for o in outs}
        if len(spatial) != 1 or spatial != {x.shape[2:]}:
            raise ShapeError(
                f"inception branch spatial mismatch: {sorted(spatial)} "
                f"(padding bug)")
        return np.concatenate(outs, axis=1)

    def backward(self, upstream):
        b1, b3, b5, bp = self.widths
        if upstream.shape[1] != sum(self.widths):
            raise ShapeError(
                f"upstream has {upstream.shape[1]} channels, inception "
                f"produced {sum(self.widths)}")
        edges = np.cumsum([0, b1, b3, b5, bp])
        ups = [np.ascontiguousarray(upstream[:, edges[i]:edges[i + 1]])
               for i in range(4)]
        dx = self.conv1.backward(self.relus[0].backward(ups[0]))
        dx = dx + self.conv3.backward(self.relus[1].backward(ups[1]))
        dx = dx + self.conv5.backward(self.relus[2].backward(ups[2]))
        dpool = self.proj.backward(self.relus[3].backward(ups[3]))
        dx = dx + self.pool.backward(dpool)
        return dx


def cross_entropy(probs: np.ndarray, onehot: np.ndarray,
                  sample_weights: np.ndarray | None = None):
    """Mean negative log-likelihood plus the gradient w.r.t. the logits
    that produced ``probs`` through a softmax (the fused form).

    Returns (loss, dlogits). Probabilities are clamped at 1e-12 inside the
    log. With uniform weights dlogits == (probs - onehot) / N.
    """
    if probs.shape != onehot.shape:
        raise ShapeError(
            f"probs shape {probs.shape} != onehot shape {onehot.shape}")
    if probs.ndim != 2:
        raise ShapeError(f"cross_entropy expects [N,K], got {probs.shape}")
    ok = np.isin(onehot, (0, 1)).all() and np.all(onehot.sum(axis=1) == 1)
    if not ok:
        raise DomainError("malformed one-hot row: entries must be 0/1 with a "
                          "single 1 per row")
    n = probs.shape[0]
    if sample_weights is None:
        w = np.ones(n, dtype=probs.dtype)
    else:
        w = np.asarray(sample_weights, dtype=probs.dtype)
        if w.shape != (n,):
            raise ShapeError(f"sample_weights shape {w.shape} != ({n},)")
    p_true = (probs * onehot).sum(axis=1)
    p_true = np.maximum(p_true, probs.dtype.type(1e-12))
    wsum = w.sum()
    loss = float(-(w * np.log(p_true)).sum() / wsum)
    dlogits = (probs - onehot) * (w / wsum)[:, None]
    return loss, dlogits


def cross_entropy_probs_grad(probs: np.ndarray, onehot: np.ndarray) -> np.ndarray:
    """dLoss/dprobs for the unfused path (pushed through Softmax.backward
    this reproduces the fused logits gradient analytically)."""
    n = probs.shape[0]
    clamped = np.maximum(probs, probs.dtype.type(1e-12))
    return -onehot / (clamped * probs.dtype.type(n))


class Network:
    """An ordered layer pipeline with cached-activation reverse traversal."""

    def __init__(self, layers):
        layers = list(layers)
        if not layers:
            raise BuildError("a network needs at least one layer")
        self.layers = layers
        self.input_shape = None  # set by validate()

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def zero_grads(self):
        for p in self.params():
            p.zero_grad()

    def validate(self, input_shape: tuple) -> tuple:
        """Chase shapes through the stack; raises BuildError naming the
        first layer whose input does not fit."""
        shape = tuple(int(s) for s in input_shape)
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Softmax) and i != len(self.layers) - 1:
                raise BuildError(
                    f"layer {i}: Softmax is only valid as the final layer")
            try:
                shape = layer.out_shape(shape)
            except ShapeError as exc:
                raise BuildError(
                    f"layer {i} ({type(layer).__name__}): {exc}") from exc
        self.input_shape = tuple(int(s) for s in input_shape)
        return shape

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        """Full reverse traversal from the gradient of the final output."""
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def backward_from_logits(self, dlogits: np.ndarray) -> np.ndarray:
        """Reverse traversal that starts below a final Softmax, for use
        with the fused softmax/cross-entropy gradient."""
        if not isinstance(self.layers[-1], Softmax):
            raise BuildError("backward_from_logits needs a final Softmax layer")
        dout = dlogits
        for layer in reversed(self.layers[:-1]):
            dout = layer.backward(dout)
        return dout

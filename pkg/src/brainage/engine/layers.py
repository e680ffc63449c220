"""Layers for the 3D regression CNN, with explicit forward/backward passes.

Tensors are numpy arrays shaped (N, C, D, H, W) for volumetric layers and
(N, F) after flattening. float32 is the working precision; layers accept
dtype=np.float64 for gradient checking. backward() consumes the cache left
by the most recent forward(training=True) call.
"""

from __future__ import annotations

from itertools import product

import numpy as np

from ..errors import ValidationError

# kernel tap (a, b, c) reads input voxel (d+a-1, h+b-1, w+c-1): pad-1 "same"
_CONV_OFFSETS = tuple(product(range(3), repeat=3))


class Parameter:
    """A trainable array with an accumulated gradient buffer."""

    __slots__ = ("name", "data", "grad")

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.data = data
        self.grad = np.zeros_like(data)

    def zero_grad(self) -> None:
        self.grad[...] = 0


class Layer:
    """Base class: parameters() feeds the optimizer, buffers() the checkpoint."""

    def parameters(self) -> list[Parameter]:
        return []

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return []

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _need_cache(self, name: str = "_cache"):
        cache = getattr(self, name, None)
        if cache is None:
            raise ValidationError(
                f"{type(self).__name__}.backward called without a "
                "forward(training=True) pass"
            )
        return cache


def _he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Conv3d(Layer):
    """3x3x3 convolution, stride 1, zero padding 1 (spatial dims preserved)."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        fan_in = self.in_channels * 27
        self.weight = Parameter(
            "weight",
            _he_normal(rng, (self.out_channels, self.in_channels, 3, 3, 3), fan_in, dtype),
        )
        self.bias = Parameter("bias", np.zeros(self.out_channels, dtype=dtype))
        self._cache = None

    def parameters(self):
        return [self.weight, self.bias]

    def _tap_matrix(self) -> np.ndarray:
        """Weights as (cout, 27*cin), columns ordered tap-major to match
        the im2col row layout."""
        return np.ascontiguousarray(
            self.weight.data.reshape(self.out_channels, self.in_channels, 27)
            .transpose(0, 2, 1)
        ).reshape(self.out_channels, 27 * self.in_channels)

    def _scratch(self, name: str, shape, dtype) -> np.ndarray:
        # im2col buffers are large (hundreds of MB at 32^3); reusing them
        # across calls avoids repaying page faults every batch
        buf = getattr(self, name, None)
        if buf is None or buf.shape != shape or buf.dtype != dtype:
            buf = np.empty(shape, dtype=dtype)
            setattr(self, name, buf)
        return buf

    def forward(self, x, training=False):
        if x.ndim != 5 or x.shape[1] != self.in_channels:
            raise ValidationError(
                f"conv3d expects (N, {self.in_channels}, D, H, W), got {x.shape}"
            )
        n, _, d, h, w = x.shape
        cin, cout = self.in_channels, self.out_channels
        dtype = x.dtype
        v = n * d * h * w

        # channel-first padded copy, then one im2col: row block o holds the
        # input shifted by tap o, so conv is a single (cout, 27*cin) GEMM
        xp = np.zeros((cin, n, d + 2, h + 2, w + 2), dtype=dtype)
        xp[:, :, 1:-1, 1:-1, 1:-1] = x.transpose(1, 0, 2, 3, 4)
        cols = self._scratch("_cols", (27 * cin, v), dtype)
        for o, (a, b, c) in enumerate(_CONV_OFFSETS):
            cols[o * cin:(o + 1) * cin] = \
                xp[:, :, a:a + d, b:b + h, c:c + w].reshape(cin, v)

        acc = self._tap_matrix() @ cols
        acc += self.bias.data[:, None]

        self._cache = (n, d, h, w) if training else None
        return acc.reshape(cout, n, d, h, w).transpose(1, 0, 2, 3, 4)

    def backward(self, grad_out):
        n, d, h, w = self._need_cache()
        cin, cout = self.in_channels, self.out_channels
        dtype = grad_out.dtype
        v = n * d * h * w
        cols = self._cols

        dy = np.ascontiguousarray(
            grad_out.transpose(1, 0, 2, 3, 4)
        ).reshape(cout, v)
        dwk = (cols @ dy.T).T  # (cout, 27*cin); this orientation is fastest
        self.weight.grad += np.ascontiguousarray(
            dwk.reshape(cout, 27, cin).transpose(0, 2, 1)
        ).reshape(self.weight.data.shape)
        self.bias.grad += dy.sum(axis=1)

        # dW consumed cols, so the same buffer can hold the column gradients
        np.matmul(self._tap_matrix().T, dy, out=cols)
        dxp = np.zeros((cin, n, d + 2, h + 2, w + 2), dtype=dtype)
        for o, (a, b, c) in enumerate(_CONV_OFFSETS):
            dxp[:, :, a:a + d, b:b + h, c:c + w] += \
                cols[o * cin:(o + 1) * cin].reshape(cin, n, d, h, w)
        self._cache = None  # cols now holds gradients, not activations
        return dxp[:, :, 1:-1, 1:-1, 1:-1].transpose(1, 0, 2, 3, 4)


class ReLU(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x, training=False):
        self._cache = (x > 0) if training else None
        return np.maximum(x, 0)

    def backward(self, grad_out):
        mask = self._need_cache()
        return grad_out * mask


class BatchNorm3d(Layer):
    """Per-channel batch normalization over (N, D, H, W).

    Biased batch variance, eps 1e-5, running stats updated with rate 0.1.
    """

    EPS = 1e-5
    UPDATE_RATE = 0.1

    def __init__(self, channels: int, dtype=np.float32):
        self.channels = int(channels)
        self.gamma = Parameter("gamma", np.ones(self.channels, dtype=dtype))
        self.beta = Parameter("beta", np.zeros(self.channels, dtype=dtype))
        self.running_mean = np.zeros(self.channels, dtype=dtype)
        self.running_var = np.ones(self.channels, dtype=dtype)
        self._cache = None

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def _shape_check(self, x):
        if x.ndim != 5 or x.shape[1] != self.channels:
            raise ValidationError(
                f"batchnorm3d expects (N, {self.channels}, D, H, W), got {x.shape}"
            )

    def forward(self, x, training=False):
        self._shape_check(x)
        axes = (0, 2, 3, 4)
        bshape = (1, self.channels, 1, 1, 1)
        if training:
            n, _, d, h, w = x.shape
            m = n * d * h * w
            if m < 2:
                raise ValidationError(
                    "batchnorm3d train mode needs at least 2 elements per channel"
                )
            mean = x.mean(axis=axes, dtype=np.float64).astype(x.dtype)
            var = x.var(axis=axes, dtype=np.float64).astype(x.dtype)
            ivar = 1.0 / np.sqrt(var + self.EPS)
            xhat = (x - mean.reshape(bshape)) * ivar.reshape(bshape)
            r = self.UPDATE_RATE
            self.running_mean = ((1 - r) * self.running_mean + r * mean).astype(x.dtype)
            self.running_var = ((1 - r) * self.running_var + r * var).astype(x.dtype)
            self._cache = (xhat, ivar, m)
        else:
            ivar = 1.0 / np.sqrt(self.running_var + self.EPS)
            xhat = (x - self.running_mean.reshape(bshape)) * ivar.reshape(bshape)
            self._cache = None
        return self.gamma.data.reshape(bshape) * xhat + self.beta.data.reshape(bshape)

    def backward(self, grad_out):
        xhat, ivar, m = self._need_cache()
        axes = (0, 2, 3, 4)
        bshape = (1, self.channels, 1, 1, 1)
        dgamma = (grad_out * xhat).sum(axis=axes)
        dbeta = grad_out.sum(axis=axes)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        scale = (self.gamma.data * ivar).reshape(bshape)
        return scale * (
            grad_out
            - (dbeta / m).reshape(bshape)
            - xhat * (dgamma / m).reshape(bshape)
        )


class MaxPool3d(Layer):
    """2x2x2 max pooling, stride 2; odd trailing slices are dropped.

    Backward routes each upstream gradient to the first maximum in the
    window's (dz, dy, dx) scan order.
    """

    def __init__(self):
        self._cache = None

    @staticmethod
    def _windows(x):
        n, c, d, h, w = x.shape
        do, ho, wo = d // 2, h // 2, w // 2
        xc = x[:, :, : 2 * do, : 2 * ho, : 2 * wo]
        win = xc.reshape(n, c, do, 2, ho, 2, wo, 2)
        return win.transpose(0, 1, 2, 4, 6, 3, 5, 7).reshape(n, c, do, ho, wo, 8)

    def forward(self, x, training=False):
        if x.ndim != 5:
            raise ValidationError(f"maxpool3d expects 5-D input, got {x.shape}")
        if min(x.shape[2:]) < 2:
            raise ValidationError(
                f"maxpool3d needs every spatial dim >= 2, got {x.shape[2:]}"
            )
        win = self._windows(x)
        if training:
            self._cache = (x.shape, win.argmax(axis=-1))
        return win.max(axis=-1)

    def backward(self, grad_out):
        in_shape, argmax = self._need_cache()
        n, c, d, h, w = in_shape
        do, ho, wo = d // 2, h // 2, w // 2
        dwin = np.zeros((n, c, do, ho, wo, 8), dtype=grad_out.dtype)
        np.put_along_axis(dwin, argmax[..., None], grad_out[..., None], axis=-1)
        dcrop = dwin.reshape(n, c, do, ho, wo, 2, 2, 2).transpose(0, 1, 2, 5, 3, 6, 4, 7)
        dx = np.zeros(in_shape, dtype=grad_out.dtype)
        dx[:, :, : 2 * do, : 2 * ho, : 2 * wo] = dcrop.reshape(
            n, c, 2 * do, 2 * ho, 2 * wo
        )
        return dx


class Flatten(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x, training=False):
        self._cache = x.shape if training else None
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._need_cache())


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.weight = Parameter(
            "weight",
            _he_normal(rng, (self.out_features, self.in_features), self.in_features, dtype),
        )
        self.bias = Parameter("bias", np.zeros(self.out_features, dtype=dtype))
        self._cache = None

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValidationError(
                f"linear expects (N, {self.in_features}), got {x.shape}"
            )
        self._cache = x if training else None
        return x @ self.weight.data.T + self.bias.data

    def backward(self, grad_out):
        x = self._need_cache()
        self.weight.grad += grad_out.T @ x
        self.bias.grad += grad_out.sum(axis=0)
        return grad_out @ self.weight.data


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        return [
            (f"layers.{i}.{p.name}", p)
            for i, layer in enumerate(self.layers)
            for p in layer.parameters()
        ]

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        return [
            (f"layers.{i}.{name}", buf)
            for i, layer in enumerate(self.layers)
            for name, buf in layer.buffers()
        ]

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training=training)
        return x

    def backward(self, grad_out):
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

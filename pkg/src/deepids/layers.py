"""Layer objects: parameters, gradient buffers, and forward/backward caches.

Each layer wraps the matching kernel from :mod:`deepids.ops`. Parameters and
their gradient buffers are plain float64 arrays mutated in place, so optimizer
steps and checkpoint loads never re-bind references.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import StateError


@dataclass
class Param:
    """A named parameter array with its gradient buffer."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform fan-in scaled init, the usual choice under ReLU."""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Minimal interface all layers share."""

    def params(self) -> list[Param]:
        return []

    def state(self) -> list[tuple[str, np.ndarray]]:
        """Every persistent array (parameters plus non-trainable statistics)."""
        return [(p.name, p.value) for p in self.params()]

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad[...] = 0.0

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError


class Conv1d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        fan_in = in_channels * kernel_size
        self.weight = Param("weight", he_uniform(rng, (out_channels, in_channels, kernel_size), fan_in))
        self.bias = Param("bias", np.zeros(out_channels))
        self._cache = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, train=False):
        self._cache = x
        return ops.conv1d(x, self.weight.value, self.bias.value)

    def backward(self, grad_out):
        if self._cache is None:
            raise StateError("conv1d backward called before forward")
        dx, dw, db = ops.conv1d_backward(grad_out, self._cache, self.weight.value)
        self.weight.grad += dw
        self.bias.grad += db
        return dx

    def spec(self):
        return {"kind": "conv1d", "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel_size": self.kernel_size}


class BatchNorm1d(Layer):
    """Per-channel batch normalization over ``[N, C, L]``.

    ``frozen=True`` pins the layer to its running statistics even when the
    surrounding network runs in train mode (used when fine-tuning with frozen
    branches); gradients then treat the normalization as a fixed affine map.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Param("gamma", np.ones(channels))
        self.beta = Param("beta", np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.frozen = False
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def state(self):
        return [("gamma", self.gamma.value), ("beta", self.beta.value),
                ("running_mean", self.running_mean), ("running_var", self.running_var)]

    def forward(self, x, train=False):
        if train and not self.frozen:
            out, cache = ops.batchnorm_train(x, self.gamma.value, self.beta.value, self.eps)
            xhat, inv_std, mean, var = cache
            self.running_mean[...] = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var[...] = self.momentum * self.running_var + (1 - self.momentum) * var
            self._cache = ("train", xhat, inv_std)
            return out
        out, xhat = ops.batchnorm_infer(x, self.gamma.value, self.beta.value,
                                        self.running_mean, self.running_var, self.eps)
        self._cache = ("infer", xhat) if train else None
        return out

    def backward(self, grad_out):
        if self._cache is None:
            raise StateError("batchnorm backward called before a train-mode forward")
        if self._cache[0] == "train":
            _, xhat, inv_std = self._cache
            dx, dgamma, dbeta = ops.batchnorm_train_backward(grad_out, (xhat, inv_std, None, None),
                                                             self.gamma.value)
        else:
            _, xhat = self._cache
            dx, dgamma, dbeta = ops.batchnorm_infer_backward(grad_out, xhat, self.gamma.value,
                                                             self.running_var, self.eps)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        return dx

    def spec(self):
        return {"kind": "batchnorm", "channels": self.channels}


class ReLU(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x, train=False):
        self._cache = x
        return ops.relu(x)

    def backward(self, grad_out):
        if self._cache is None:
            raise StateError("relu backward called before forward")
        return ops.relu_backward(grad_out, self._cache)

    def spec(self):
        return {"kind": "relu"}


class GlobalAveragePool(Layer):
    def __init__(self):
        self._length = None

    def forward(self, x, train=False):
        self._length = x.shape[-1]
        return ops.global_average_pool(x)

    def backward(self, grad_out):
        if self._length is None:
            raise StateError("pool backward called before forward")
        return ops.global_average_pool_backward(grad_out, self._length)

    def spec(self):
        return {"kind": "gap"}


class Flatten(Layer):
    def __init__(self):
        self._shape = None

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        if self._shape is None:
            raise StateError("flatten backward called before forward")
        return grad_out.reshape(self._shape)

    def spec(self):
        return {"kind": "flatten"}


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Param("weight", he_uniform(rng, (out_features, in_features), in_features))
        self.bias = Param("bias", np.zeros(out_features))
        self._cache = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, train=False):
        self._cache = x
        return ops.dense(x, self.weight.value, self.bias.value)

    def backward(self, grad_out):
        if self._cache is None:
            raise StateError("dense backward called before forward")
        dx, dw, db = ops.dense_backward(grad_out, self._cache, self.weight.value)
        self.weight.grad += dw
        self.bias.grad += db
        return dx

    def spec(self):
        return {"kind": "dense", "in_features": self.in_features, "out_features": self.out_features}

"""Dense-tensor kernels: forward and backward passes for every layer type.

All kernels are pure functions over float64 numpy arrays. Convolution means
cross-correlation with "same" zero padding split floor((K-1)/2) left and
ceil((K-1)/2) right, so output length always equals input length. Sequence
kernels accept either a single sample ``[C, L]`` or a batch ``[N, C, L]``
and return the matching rank.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateBatchError, ShapeError
from .validation import as_tensor, check_same_shape


def same_padding(kernel_size: int) -> tuple[int, int]:
    """Left/right zero padding that preserves length for a given kernel."""
    return (kernel_size - 1) // 2, kernel_size // 2


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x[np.newaxis], True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"expected [C, L] or [N, C, L], got shape {x.shape}")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv1d(x, weights, bias) -> np.ndarray:
    """Same-padded 1-d cross-correlation.

    ``x`` is ``[C_in, L]`` or ``[N, C_in, L]``, ``weights`` is
    ``[C_out, C_in, K]``, ``bias`` is ``[C_out]``.
    """
    x = as_tensor(x, "input")
    weights = as_tensor(weights, "weights", ndim=3)
    bias = as_tensor(bias, "bias", ndim=1)
    x3, squeeze = _batched(x)
    n, c_in, length = x3.shape
    c_out, kc_in, k = weights.shape
    if kc_in != c_in:
        raise ShapeError(f"input has {c_in} channels but kernel expects {kc_in}")
    if bias.shape[0] != c_out:
        raise ShapeError(f"bias length {bias.shape[0]} != {c_out} output channels")
    if length < 1 or k < 1:
        raise ShapeError("kernel and input lengths must be >= 1")

    cols = _im2col(x3, k)                                   # [N*L, C_in*K]
    out = cols @ weights.reshape(c_out, c_in * k).T + bias  # [N*L, C_out]
    out = out.reshape(n, length, c_out).transpose(0, 2, 1)
    out = np.ascontiguousarray(out)
    return out[0] if squeeze else out


def conv1d_backward(grad_out, x, weights):
    """Gradients of conv1d w.r.t. input, weights, and bias.

    ``x`` is the cached forward input. Returns ``(dx, dw, db)`` with shapes
    matching ``x``, ``weights``, and the bias.
    """
    grad_out = as_tensor(grad_out, "grad_out")
    x = as_tensor(x, "input")
    weights = as_tensor(weights, "weights", ndim=3)
    g3, g_squeeze = _batched(grad_out)
    x3, x_squeeze = _batched(x)
    if g_squeeze != x_squeeze:
        raise ShapeError("grad_out and cached input must have the same rank")
    n, c_in, length = x3.shape
    c_out, _, k = weights.shape
    if g3.shape != (n, c_out, length):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match forward output")

    cols = _im2col(x3, k)                                   # [N*L, C_in*K]
    g2 = g3.transpose(0, 2, 1).reshape(n * length, c_out)   # [N*L, C_out]
    dw = (g2.T @ cols).reshape(c_out, c_in, k)
    db = g2.sum(axis=0)

    pad_left, pad_right = same_padding(k)
    dxp = np.zeros((n, c_in, length + pad_left + pad_right))
    for kk in range(k):
        # scatter the k-th tap of each kernel back onto the padded input
        dxp[:, :, kk:kk + length] += np.tensordot(g3, weights[:, :, kk], axes=([1], [0])).transpose(0, 2, 1)
    dx = np.ascontiguousarray(dxp[:, :, pad_left:pad_left + length])
    return (dx[0] if x_squeeze else dx), dw, db


def _im2col(x3: np.ndarray, k: int) -> np.ndarray:
    """Unfold padded sliding windows into a ``[N*L, C_in*K]`` matrix."""
    n, c_in, length = x3.shape
    pad_left, pad_right = same_padding(k)
    xp = np.pad(x3, ((0, 0), (0, 0), (pad_left, pad_right)))
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # [N, C, L, K]
    return win.transpose(0, 2, 1, 3).reshape(n * length, c_in * k)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def batchnorm_train(x, gamma, beta, eps: float = 1e-5):
    """Normalize ``[N, C, L]`` per channel with batch statistics.

    Returns ``(out, cache)`` where cache carries what the backward pass and
    the running-statistics update need: ``(xhat, inv_std, batch_mean,
    batch_var)``. Variance is the biased (population) estimate.
    """
    x = as_tensor(x, "input", ndim=3)
    n, c, length = x.shape
    if n * length < 2:
        raise DegenerateBatchError("batch norm needs at least 2 values per channel in train mode")
    _check_bn_params(gamma, beta, c)
    mean = x.mean(axis=(0, 2))
    var = x.var(axis=(0, 2))
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    out = gamma[None, :, None] * xhat + beta[None, :, None]
    return out, (xhat, inv_std, mean, var)


def batchnorm_train_backward(grad_out, cache, gamma):
    """Backward through train-mode batch norm; returns ``(dx, dgamma, dbeta)``."""
    xhat, inv_std, _, _ = cache
    grad_out = as_tensor(grad_out, "grad_out", ndim=3)
    check_same_shape(grad_out, xhat, "grad_out vs cached activations")
    m = xhat.shape[0] * xhat.shape[2]
    dgamma = (grad_out * xhat).sum(axis=(0, 2))
    dbeta = grad_out.sum(axis=(0, 2))
    dx = (gamma * inv_std)[None, :, None] * (
        grad_out
        - dbeta[None, :, None] / m
        - xhat * dgamma[None, :, None] / m
    )
    return dx, dgamma, dbeta


def batchnorm_infer(x, gamma, beta, running_mean, running_var, eps: float = 1e-5):
    """Normalize with stored running statistics; returns ``(out, xhat)``."""
    x = as_tensor(x, "input", ndim=3)
    _check_bn_params(gamma, beta, x.shape[1])
    inv_std = 1.0 / np.sqrt(running_var + eps)
    xhat = (x - running_mean[None, :, None]) * inv_std[None, :, None]
    return gamma[None, :, None] * xhat + beta[None, :, None], xhat


def batchnorm_infer_backward(grad_out, xhat, gamma, running_var, eps: float = 1e-5):
    """Backward when normalization statistics are fixed (frozen layers)."""
    inv_std = 1.0 / np.sqrt(running_var + eps)
    dgamma = (grad_out * xhat).sum(axis=(0, 2))
    dbeta = grad_out.sum(axis=(0, 2))
    dx = grad_out * (gamma * inv_std)[None, :, None]
    return dx, dgamma, dbeta


def _check_bn_params(gamma, beta, channels: int) -> None:
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f"gamma/beta must have shape ({channels},)")


# ---------------------------------------------------------------------------
# pointwise and pooling kernels
# ---------------------------------------------------------------------------

def relu(x) -> np.ndarray:
    return np.maximum(as_tensor(x), 0.0)


def relu_backward(grad_out, x) -> np.ndarray:
    """Subgradient at 0 is 0: only strictly positive inputs pass gradient."""
    grad_out = as_tensor(grad_out)
    x = as_tensor(x)
    check_same_shape(grad_out, x, "grad_out vs cached input")
    return grad_out * (x > 0.0)


def global_average_pool(x) -> np.ndarray:
    """Mean over the length axis: ``[C, L] -> [C]`` or ``[N, C, L] -> [N, C]``."""
    x = as_tensor(x)
    x3, squeeze = _batched(x)
    if x3.shape[2] < 1:
        raise ShapeError("cannot pool a zero-length series")
    out = x3.mean(axis=2)
    return out[0] if squeeze else out


def global_average_pool_backward(grad_out, length: int) -> np.ndarray:
    grad_out = as_tensor(grad_out)
    if length < 1:
        raise ShapeError("length must be >= 1")
    return np.repeat(grad_out[..., np.newaxis] / length, length, axis=-1)


def dense(x, weights, bias) -> np.ndarray:
    """Affine map ``W @ x + b`` for ``x`` of shape ``[F]`` or ``[N, F]``."""
    x = as_tensor(x)
    weights = as_tensor(weights, "weights", ndim=2)
    bias = as_tensor(bias, "bias", ndim=1)
    f_out, f_in = weights.shape
    if x.shape[-1] != f_in:
        raise ShapeError(f"input features {x.shape[-1]} != weight columns {f_in}")
    if bias.shape[0] != f_out:
        raise ShapeError(f"bias length {bias.shape[0]} != {f_out} output features")
    return x @ weights.T + bias


def dense_backward(grad_out, x, weights):
    grad_out = as_tensor(grad_out)
    x = as_tensor(x)
    if grad_out.ndim != x.ndim:
        raise ShapeError("grad_out and cached input must have the same rank")
    g2 = np.atleast_2d(grad_out)
    x2 = np.atleast_2d(x)
    dw = g2.T @ x2
    db = g2.sum(axis=0)
    dx = grad_out @ weights
    return dx, dw, db


def residual_add(a, b) -> np.ndarray:
    """Elementwise sum of two same-shaped tensors (the skip-connection join).

    Backward is the identity into both branches, so callers simply reuse the
    incoming gradient for each.
    """
    a = as_tensor(a, "a")
    b = as_tensor(b, "b")
    check_same_shape(a, b, "residual operands")
    return a + b


# ---------------------------------------------------------------------------
# softmax and loss
# ---------------------------------------------------------------------------

def softmax(logits) -> np.ndarray:
    """Max-subtracted softmax along the last axis."""
    z = as_tensor(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or (labels.size and labels.max() >= num_classes):
        raise ShapeError(f"labels must lie in [0, {num_classes})")
    out = np.zeros(labels.shape + (num_classes,))
    np.put_along_axis(out, labels[..., np.newaxis], 1.0, axis=-1)
    return out


def softmax_cross_entropy(logits, target_one_hot):
    """Single-sample categorical cross entropy.

    Returns ``(loss, probs, grad_logits)`` with ``grad_logits = probs - one_hot``.
    """
    z = as_tensor(logits, "logits", ndim=1)
    t = as_tensor(target_one_hot, "target", ndim=1)
    if z.shape[0] < 2:
        raise ShapeError("need at least 2 classes")
    check_same_shape(z, t, "logits vs target")
    if not (np.count_nonzero(t) == 1 and np.isclose(t.sum(), 1.0)):
        raise ShapeError("target must be a one-hot vector with exactly one label set")
    label = int(np.argmax(t))
    m = z.max()
    shifted = z - m
    log_norm = np.log(np.exp(shifted).sum())
    probs = np.exp(shifted - log_norm)
    loss = float(log_norm - shifted[label])
    return loss, probs, probs - t


def softmax_cross_entropy_batch(logits, labels, class_weights=None):
    """Mean categorical cross entropy over a batch.

    ``logits`` is ``[N, C]``, ``labels`` an int vector. Optional
    ``class_weights`` (length C) rescale each sample's loss and gradient.
    Returns ``(mean_loss, probs, grad_logits)`` where the gradient is of the
    mean loss (already divided by N).
    """
    z = as_tensor(logits, "logits", ndim=2)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = z.shape
    if c < 2:
        raise ShapeError("need at least 2 classes")
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch of {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise ShapeError(f"labels must lie in [0, {c})")
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(shifted - log_norm)
    per_sample = log_norm[:, 0] - shifted[np.arange(n), labels]
    weights = np.ones(n) if class_weights is None else np.asarray(class_weights, dtype=np.float64)[labels]
    loss = float((per_sample * weights).sum() / n)
    grad = (probs - one_hot(labels, c)) * weights[:, np.newaxis] / n
    return loss, probs, grad

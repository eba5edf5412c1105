"""Dense 4-D tensors and the non-convolutional primitives.

Tensors are plain C-contiguous ``numpy.ndarray`` objects of shape
(N, C, H, W), float32 unless a caller explicitly works in float64 (the
gradient and density oracles do).
"""
from dataclasses import dataclass

import numpy as np

DTYPE = np.float32


def as_tensor(data, shape=None, dtype=DTYPE):
    """Build a 4-D tensor, optionally from flat row-major data."""
    arr = np.asarray(data, dtype=dtype)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if arr.size != int(np.prod(shape)):
            raise ValueError(f"data length {arr.size} does not match shape {shape}")
        arr = arr.reshape(shape)
    if arr.ndim != 4:
        raise ValueError(f"expected a 4-D (N, C, H, W) tensor, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def check_tensor(x, name="x"):
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        raise ValueError(f"{name} must be a 4-D (N, C, H, W) array")
    return x


@dataclass
class LinearParams:
    weight: np.ndarray  # (out_features, in_features)
    bias: np.ndarray  # (out_features,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight)
        self.bias = np.asarray(self.bias)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ValueError("linear weight must be 2-D and bias 1-D")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ValueError("weight row count must equal bias length")

    @property
    def in_features(self):
        return self.weight.shape[1]

    @property
    def out_features(self):
        return self.weight.shape[0]

    @classmethod
    def zeros(cls, out_features, in_features, dtype=DTYPE):
        return cls(np.zeros((out_features, in_features), dtype), np.zeros(out_features, dtype))


def global_avg_pool(x):
    """Mean over the spatial axes, keeping a (N, C, 1, 1) shape."""
    check_tensor(x)
    if x.shape[2] * x.shape[3] == 0:
        raise ValueError("empty pooling region")
    return x.mean(axis=(2, 3), keepdims=True, dtype=np.float64).astype(x.dtype)


def global_avg_pool_backward(grad_out, in_hw):
    h, w = in_hw
    g = grad_out / (h * w)
    return np.broadcast_to(g, grad_out.shape[:2] + (h, w)).astype(grad_out.dtype)


def linear(x, p):
    """``weight @ x + bias`` for a vector, or row-wise for an (N, in) batch."""
    x = np.asarray(x)
    if x.shape[-1] != p.in_features:
        raise ValueError(f"linear expects {p.in_features} input features, got {x.shape[-1]}")
    return x @ p.weight.T + p.bias


def linear_backward(x, p, grad_out):
    """Return (grad_x, grad_weight, grad_bias) for a batched linear layer."""
    x2 = np.atleast_2d(x)
    g2 = np.atleast_2d(grad_out)
    gw = (g2.T.astype(np.float64) @ x2.astype(np.float64)).astype(p.weight.dtype)
    gb = g2.sum(axis=0, dtype=np.float64).astype(p.bias.dtype)
    gx = (g2 @ p.weight).reshape(np.shape(x))
    return gx, gw, gb


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. ``logits`` (N, P)."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), (grad / n).astype(logits.dtype)


def sgd_step(params, grads, lr, momentum=0.0, weight_decay=0.0, state=None):
    """One momentum-SGD update on flat arrays.

    ``v <- momentum * v + grad + weight_decay * param``;
    ``param <- param - lr * v``. Returns ``(new_params, new_state)``.
    """
    params = np.asarray(params)
    grads = np.asarray(grads)
    if params.shape != grads.shape:
        raise ValueError(f"params {params.shape} and grads {grads.shape} differ in shape")
    if state is None:
        state = np.zeros_like(params)
    elif np.shape(state) != params.shape:
        raise ValueError("velocity state has the wrong shape")
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if not 0 <= momentum < 1:
        raise ValueError("momentum must lie in [0, 1)")
    if weight_decay < 0:
        raise ValueError("weight decay must be non-negative")
    v = momentum * state + grads + weight_decay * params
    return (params - lr * v).astype(params.dtype), v.astype(params.dtype)

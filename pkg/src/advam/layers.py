"""Building blocks: dense, strided conv and transposed-conv layers, activations,
dropout and channel concatenation."""
from dataclasses import dataclass
import math

import numpy as np

from . import numerics as nx
from .numerics import ShapeError, Tensor

ACTIVATIONS = ("leaky_relu", "relu", "linear", "softmax")
DEFAULT_SLOPE = 0.2


@dataclass
class LayerParams:
    kind: str  # "conv" | "tconv" | "dense"
    weights: Tensor
    bias: Tensor
    activation: str = "linear"
    dropout_rate: float = 0.0
    stride: tuple = (1, 1)
    padding: str = "same"

    def __post_init__(self):
        if self.kind not in ("conv", "tconv", "dense"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")
        if self.bias.shape != (self.out_units,):
            raise ShapeError(f"bias {self.bias.shape} does not match {self.out_units} outputs")

    @property
    def out_units(self):
        if self.kind == "dense":
            return self.weights.shape[1]
        if self.kind == "conv":
            return self.weights.shape[0]
        return self.weights.shape[1]

    @property
    def in_units(self):
        if self.kind == "dense":
            return self.weights.shape[0]
        if self.kind == "conv":
            return self.weights.shape[1]
        return self.weights.shape[0]

    def parameters(self):
        return [self.weights, self.bias]


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_dense(rng, n_in, n_out, activation="linear", dropout_rate=0.0):
    w = glorot_uniform(rng, (n_in, n_out), n_in, n_out)
    return LayerParams(
        "dense",
        Tensor(w, requires_grad=True),
        Tensor(np.zeros(n_out), requires_grad=True),
        activation,
        dropout_rate,
    )


def init_conv(rng, c_in, c_out, kernel=(3, 3), stride=(1, 1), activation="leaky_relu"):
    kh, kw = kernel
    w = glorot_uniform(rng, (c_out, c_in, kh, kw), c_in * kh * kw, c_out * kh * kw)
    return LayerParams(
        "conv",
        Tensor(w, requires_grad=True),
        Tensor(np.zeros(c_out), requires_grad=True),
        activation,
        stride=tuple(stride),
    )


def init_tconv(rng, c_in, c_out, kernel=(3, 3), stride=(1, 1), activation="leaky_relu"):
    kh, kw = kernel
    # stored as (C_in, C_out, kh, kw): the filters of the conv this layer inverts
    w = glorot_uniform(rng, (c_in, c_out, kh, kw), c_in * kh * kw, c_out * kh * kw)
    return LayerParams(
        "tconv",
        Tensor(w, requires_grad=True),
        Tensor(np.zeros(c_out), requires_grad=True),
        activation,
        stride=tuple(stride),
    )


def leaky_relu(x, slope=DEFAULT_SLOPE):
    if not 0.0 < slope < 1.0:
        raise ValueError(f"LeakyReLU slope must lie in (0, 1), got {slope}")
    return nx.leaky_relu(x, slope)


def softmax(logits):
    """Posterior over the last axis. Raises NumericError on NaN/Inf input."""
    return nx.softmax(logits if isinstance(logits, Tensor) else Tensor(logits))


def dropout_mask(shape, rate, rng):
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x, rate, mode, rng=None):
    """Inverted dropout: survivors are scaled by 1/(1-rate) so eval is a no-op."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x
    return nx.mul(x, Tensor._wrap(dropout_mask(x.shape, rate, rng)))


def concat_channels(a, b):
    axis = 0 if a.ndim == 3 else 1
    if a.ndim != b.ndim or a.ndim not in (3, 4):
        raise ShapeError(f"concat_channels: shapes {a.shape} and {b.shape}")
    if a.shape[axis + 1:] != b.shape[axis + 1:] or a.shape[:axis] != b.shape[:axis]:
        raise ShapeError(f"concat_channels: spatial shapes {a.shape} and {b.shape} differ")
    return nx.concat([a, b], axis=axis)


def activate(x, activation, slope=DEFAULT_SLOPE):
    if activation == "leaky_relu":
        return leaky_relu(x, slope)
    if activation == "relu":
        return nx.relu(x)
    if activation == "softmax":
        return softmax(x)
    return x


def apply_layer(p, x, mode="eval", rng=None, slope=DEFAULT_SLOPE, output_size=None):
    """Affine map of ``p`` followed by its activation and dropout."""
    w, b = p.weights, p.bias
    if p.kind == "dense":
        z = nx.add_bias(nx.matmul(x, w), b)
    elif p.kind == "conv":
        z = nx.add_bias(nx.conv2d(x, w, p.stride, p.padding), b)
    else:
        z = nx.add_bias(nx.conv2d_transpose(x, w, p.stride, p.padding, output_size), b)
    y = activate(z, p.activation, slope)
    if p.dropout_rate > 0.0:
        y = dropout(y, p.dropout_rate, mode, rng)
    return y

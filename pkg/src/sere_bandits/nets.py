"""Minimal dense ReLU networks with activation capture.

Scalar-output feedforward nets trained by plain SGD on squared loss.
Hidden activations from the last forward pass are kept around so that
per-unit contribution utilities can be computed, and the final hidden
layer doubles as the feature map for linear (shallow) exploration.
"""

from dataclasses import dataclass
import struct

import numpy as np


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkShape:
    """Layer widths [d_in, n_1, ..., n_L, 1]; ReLU hidden, linear output."""

    widths: tuple

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 3:
            raise NetworkError(f"need input, >=1 hidden and output layer, got {widths}")
        if any(w < 1 for w in widths):
            raise NetworkError(f"all widths must be >= 1, got {widths}")
        if widths[-1] != 1:
            raise NetworkError(f"output width must be 1, got {widths[-1]}")

    @property
    def d_in(self):
        return self.widths[0]

    @property
    def hidden(self):
        return self.widths[1:-1]

    @property
    def n_hidden_layers(self):
        return len(self.widths) - 2


@dataclass
class ForwardTrace:
    """Post-activation outputs of each hidden layer plus the prediction."""

    hidden: list
    prediction: float


class Network:
    """Feedforward net; weights[l][i, j] connects unit i of layer l to unit j of layer l+1."""

    def __init__(self, shape, weights, biases):
        self.shape = shape
        self.weights = weights
        self.biases = biases
        self._check_dims()

    def _check_dims(self):
        w = self.shape.widths
        if len(self.weights) != len(w) - 1 or len(self.biases) != len(w) - 1:
            raise NetworkError("layer count mismatch")
        for l, (wm, bv) in enumerate(zip(self.weights, self.biases)):
            if wm.shape != (w[l], w[l + 1]) or bv.shape != (w[l + 1],):
                raise NetworkError(f"layer {l}: weight {wm.shape} / bias {bv.shape} "
                                   f"do not match widths {w}")

    def copy(self):
        return Network(self.shape,
                       [w.copy() for w in self.weights],
                       [b.copy() for b in self.biases])

    def assert_finite(self):
        for arr in self.weights + self.biases:
            if not np.all(np.isfinite(arr)):
                raise NetworkError("non-finite parameter encountered")


def kaiming_bound(fan_in):
    return np.sqrt(6.0 / fan_in)


def init_kaiming(shape, seed):
    """Kaiming-uniform weights (U(-sqrt(6/n_in), +sqrt(6/n_in))), zero biases."""
    if not isinstance(shape, NetworkShape):
        shape = NetworkShape(tuple(shape))
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    w = shape.widths
    for l in range(len(w) - 1):
        bound = kaiming_bound(w[l])
        weights.append(rng.uniform(-bound, bound, size=(w[l], w[l + 1])))
        biases.append(np.zeros(w[l + 1]))
    return Network(shape, weights, biases)


def forward(net, x):
    """Run one input through the net, recording every hidden activation."""
    x = np.asarray(x, dtype=float)
    if x.shape != (net.shape.d_in,):
        raise NetworkError(f"input shape {x.shape} != ({net.shape.d_in},)")
    h = x
    hidden = []
    last = len(net.weights) - 1
    for l, (wm, bv) in enumerate(zip(net.weights, net.biases)):
        z = h @ wm + bv
        if l < last:
            h = np.maximum(z, 0.0)
            hidden.append(h)
        else:
            h = z
    return ForwardTrace(hidden=hidden, prediction=float(h[0]))


def forward_batch(net, X):
    """Batched forward: returns (predictions (n,), last hidden activations (n, n_L))."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != net.shape.d_in:
        raise NetworkError(f"batch shape {X.shape} incompatible with d_in={net.shape.d_in}")
    h = X
    last = len(net.weights) - 1
    for l, (wm, bv) in enumerate(zip(net.weights, net.biases)):
        z = h @ wm + bv
        if l < last:
            h = np.maximum(z, 0.0)
            feats = h
        else:
            out = z
    return out[:, 0], feats


def last_hidden_features(net, x):
    """Final hidden layer activations, the representation used for exploration."""
    return forward(net, x).hidden[-1]


def backprop(net, x, target, trace=None):
    """Gradients of 0.5*(prediction - target)^2 w.r.t. all weights and biases."""
    x = np.asarray(x, dtype=float)
    if trace is None:
        trace = forward(net, x)
    layers_in = [x] + trace.hidden            # inputs to each weight matrix
    delta = np.array([trace.prediction - float(target)])
    g_w = [None] * len(net.weights)
    g_b = [None] * len(net.biases)
    for l in range(len(net.weights) - 1, -1, -1):
        g_w[l] = np.outer(layers_in[l], delta)
        g_b[l] = delta
        if l > 0:
            # ReLU subgradient: active where the recorded activation is positive
            delta = (net.weights[l] @ delta) * (trace.hidden[l - 1] > 0.0)
    return g_w, g_b, trace


def sgd_step(net, x, target, lr):
    """One in-place gradient step on 0.5*(forward(x) - target)^2.

    Returns the pre-update forward trace (activations at the old parameters).
    Raises NetworkError on a non-finite gradient so the caller can abort the round.
    """
    if lr <= 0:
        raise NetworkError(f"lr must be > 0, got {lr}")
    g_w, g_b, trace = backprop(net, x, target)
    for g in g_w + g_b:
        if not np.all(np.isfinite(g)):
            raise NetworkError("non-finite gradient")
    for l in range(len(net.weights)):
        net.weights[l] -= lr * g_w[l]
        net.biases[l] -= lr * g_b[l]
    return trace


def last_layer_delta(net_a, net_b):
    """l2 norm of the difference of the final (hidden -> output) weight matrices."""
    if net_a.shape.widths != net_b.shape.widths:
        raise NetworkError("shape mismatch")
    return float(np.linalg.norm(net_a.weights[-1] - net_b.weights[-1]))


_MAGIC = b"SBN1"


def save_network(net, path):
    """Flat binary checkpoint: magic, layer count, widths (int64), then per
    layer the row-major float64 weight matrix followed by the bias vector."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        widths = net.shape.widths
        f.write(struct.pack("<I", len(widths)))
        f.write(np.asarray(widths, dtype="<i8").tobytes())
        for wm, bv in zip(net.weights, net.biases):
            f.write(np.ascontiguousarray(wm, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(bv, dtype="<f8").tobytes())


def load_network(path):
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise NetworkError(f"{path}: not a network checkpoint")
        (n,) = struct.unpack("<I", f.read(4))
        widths = tuple(np.frombuffer(f.read(8 * n), dtype="<i8").tolist())
        shape = NetworkShape(widths)
        weights, biases = [], []
        for l in range(n - 1):
            wm = np.frombuffer(f.read(8 * widths[l] * widths[l + 1]), dtype="<f8")
            weights.append(wm.reshape(widths[l], widths[l + 1]).copy())
            biases.append(np.frombuffer(f.read(8 * widths[l + 1]), dtype="<f8").copy())
    return Network(shape, weights, biases)

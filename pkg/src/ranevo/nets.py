"""Fixed-topology feedforward networks with a flat-vector genome codec.

Every network is a plain ReLU multilayer perceptron whose parameters can be
serialized losslessly into a single float64 vector (the "genome") and back.
The genome ordering is a cross-module contract:

    for each layer l (input to output):
        weight matrix W_l of shape (fan_out, fan_in), flattened row-major,
        then bias vector b_l of length fan_out.

Forward convention is ``y = W x + b`` per layer, ReLU between hidden layers,
and either a linear or a softmax output head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

HIDDEN_ACTIVATION = "relu"
OUTPUT_HEADS = ("linear", "softmax")


@dataclass(frozen=True)
class NetTopology:
    """Layer widths plus the output head kind for one fixed network blueprint."""

    layer_sizes: tuple[int, ...]
    output_head: str = "linear"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("topology needs at least an input and an output layer")
        if any(s < 1 for s in sizes):
            raise ValueError(f"every layer width must be >= 1, got {sizes}")
        if self.output_head not in OUTPUT_HEADS:
            raise ValueError(f"unknown output head {self.output_head!r}")

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    def to_dict(self) -> dict:
        return {"layer_sizes": list(self.layer_sizes), "output_head": self.output_head}

    @staticmethod
    def from_dict(d: dict) -> "NetTopology":
        return NetTopology(tuple(d["layer_sizes"]), d["output_head"])


def genome_length(topology: NetTopology) -> int:
    """Number of genes needed to encode every weight and bias of the topology."""
    sizes = topology.layer_sizes
    return sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1))


@dataclass(frozen=True)
class Genome:
    """Flat float64 vector directly encoding all parameters of one topology."""

    values: np.ndarray
    topology: NetTopology

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1:
            raise ValueError("genome values must be a flat vector")
        expected = genome_length(self.topology)
        if vals.shape[0] != expected:
            raise ValueError(
                f"genome length {vals.shape[0]} does not match topology length {expected}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("genome values must all be finite")

    def copy(self) -> "Genome":
        return Genome(self.values.copy(), self.topology)


@dataclass
class NeuralNet:
    """ReLU MLP with per-layer weight matrices (fan_out, fan_in) and bias vectors."""

    topology: NetTopology
    weights: list[np.ndarray] = field(repr=False)
    biases: list[np.ndarray] = field(repr=False)

    @staticmethod
    def zeros(topology: NetTopology) -> "NeuralNet":
        sizes = topology.layer_sizes
        weights = [np.zeros((sizes[i + 1], sizes[i])) for i in range(len(sizes) - 1)]
        biases = [np.zeros(sizes[i + 1]) for i in range(len(sizes) - 1)]
        return NeuralNet(topology, weights, biases)

    @staticmethod
    def init_random(topology: NetTopology, rng: np.random.Generator) -> "NeuralNet":
        """Fresh net: weights uniform in +-1/sqrt(fan_in), biases zero."""
        net = NeuralNet.zeros(topology)
        for l, w in enumerate(net.weights):
            bound = 1.0 / np.sqrt(w.shape[1])
            net.weights[l] = rng.uniform(-bound, bound, size=w.shape)
        return net

    def copy(self) -> "NeuralNet":
        return NeuralNet(
            self.topology,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def param_count(self) -> int:
        return genome_length(self.topology)


def flatten(net: NeuralNet) -> Genome:
    """Serialize a net into its genome (canonical layer-major ordering)."""
    parts = []
    for w, b in zip(net.weights, net.biases):
        parts.append(w.ravel())
        parts.append(b.ravel())
    return Genome(np.concatenate(parts), net.topology)


def unflatten(genome: Genome, topology: NetTopology | None = None) -> NeuralNet:
    """Rebuild a net from a genome; rejects length mismatches."""
    topo = topology if topology is not None else genome.topology
    expected = genome_length(topo)
    vals = genome.values
    if vals.shape[0] != expected:
        raise ValueError(
            f"genome length {vals.shape[0]} does not match topology length {expected}"
        )
    sizes = topo.layer_sizes
    weights, biases, off = [], [], 0
    for i in range(len(sizes) - 1):
        n_out, n_in = sizes[i + 1], sizes[i]
        weights.append(vals[off : off + n_out * n_in].reshape(n_out, n_in).copy())
        off += n_out * n_in
        biases.append(vals[off : off + n_out].copy())
        off += n_out
    return NeuralNet(topo, weights, biases)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(net: NeuralNet, x: np.ndarray) -> np.ndarray:
    """Single-input forward pass; applies the topology's output head."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.topology.input_size,):
        raise ValueError(
            f"input shape {x.shape} does not match input width {net.topology.input_size}"
        )
    out = _forward_batch(net, x[None, :])[0][-1][0]
    return out


def _forward_batch(net: NeuralNet, x: np.ndarray):
    """Batched forward pass keeping every layer's post-activation (for backprop).

    Returns (activations, pre_acts): activations[0] is the input, activations[-1]
    the head output; pre_acts[l] is the affine output of layer l.
    """
    acts = [x]
    pres = []
    h = x
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        pres.append(z)
        if l < last:
            h = np.maximum(z, 0.0)
        elif net.topology.output_head == "softmax":
            h = _softmax(z)
        else:
            h = z
        acts.append(h)
    return acts, pres


def _backward_from_logits(net: NeuralNet, acts, pres, dlogits: np.ndarray):
    """Propagate a gradient at the final affine output back to all parameters."""
    d_weights = [np.empty_like(w) for w in net.weights]
    d_biases = [np.empty_like(b) for b in net.biases]
    delta = dlogits
    for l in range(len(net.weights) - 1, -1, -1):
        d_weights[l] = delta.T @ acts[l]
        d_biases[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ net.weights[l]) * (pres[l - 1] > 0.0)
    return d_weights, d_biases


def q_loss_gradients(net: NeuralNet, states, actions, targets):
    """MSE over the selected actions' Q-values: mean (Q(s)[a] - y)^2.

    Returns (loss, d_weights, d_biases). The head must be linear.
    """
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    n = states.shape[0]
    acts, pres = _forward_batch(net, states)
    q = acts[-1]
    picked = q[np.arange(n), actions]
    err = picked - targets
    loss = float(np.mean(err**2))
    dlogits = np.zeros_like(q)
    dlogits[np.arange(n), actions] = 2.0 * err / n
    dw, db = _backward_from_logits(net, acts, pres, dlogits)
    return loss, dw, db


def policy_loss_gradients(net: NeuralNet, states, actions, advantages):
    """Policy-gradient loss mean(-log pi(a|s) * advantage), advantage constant.

    The head must be softmax; the logit gradient is adv * (pi - onehot) / n.
    """
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.int64)
    advantages = np.asarray(advantages, dtype=np.float64)
    n = states.shape[0]
    acts, pres = _forward_batch(net, states)
    logits = pres[-1]
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    pi = np.exp(log_probs)
    picked_logp = log_probs[np.arange(n), actions]
    loss = float(np.mean(-picked_logp * advantages))
    onehot = np.zeros_like(pi)
    onehot[np.arange(n), actions] = 1.0
    dlogits = (advantages[:, None] * (pi - onehot)) / n
    dw, db = _backward_from_logits(net, acts, pres, dlogits)
    return loss, dw, db


def value_loss_gradients(net: NeuralNet, states, targets):
    """Scalar-head MSE: mean (V(s) - y)^2 with fixed targets."""
    states = np.asarray(states, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = states.shape[0]
    acts, pres = _forward_batch(net, states)
    v = acts[-1][:, 0]
    err = v - targets
    loss = float(np.mean(err**2))
    dlogits = np.zeros_like(acts[-1])
    dlogits[:, 0] = 2.0 * err / n
    dw, db = _backward_from_logits(net, acts, pres, dlogits)
    return loss, dw, db


def sgd_step(net: NeuralNet, d_weights, d_biases, lr: float) -> NeuralNet:
    """In-place plain gradient descent: w <- w - lr * g. Returns the same net."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for w, dw in zip(net.weights, d_weights):
        w -= lr * dw
    for b, db in zip(net.biases, d_biases):
        b -= lr * db
    return net


def param_digest(net: NeuralNet) -> bytes:
    """Stable byte digest of all parameters, for change-detection assertions."""
    import hashlib

    h = hashlib.sha256()
    for w, b in zip(net.weights, net.biases):
        h.update(np.ascontiguousarray(w).tobytes())
        h.update(np.ascontiguousarray(b).tobytes())
    return h.digest()

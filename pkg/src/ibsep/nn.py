"""Dense-tensor reverse-mode autodiff, MLPs, losses, and SGD with momentum.

A deliberately small engine: values are float64 numpy arrays wrapped in
:class:`Node`, every operation records a vector-Jacobian product, and
``backward`` walks the graph once in reverse topological order. That is
enough to train the small stochastic encoders and recurrent filters in
this library while staying simple enough to check against central finite
differences.

Shape conventions: activations are 2-D ``(batch, features)``; weight
matrices are ``(d_in, d_out)`` and act on the right (``x @ W + b``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "Node",
    "constant",
    "parameter",
    "matmul",
    "concat",
    "relu_n",
    "log_softmax_n",
    "gather_logprob",
    "clip_n",
    "detach",
    "MLP",
    "OptimizerState",
    "TrainingDiverged",
    "relu",
    "softmax",
    "cross_entropy",
    "ClampedLogLoss",
    "init_mlp",
    "forward",
    "backward",
    "sgd_step",
    "minibatch_sample",
]

_PROB_FLOOR = 1e-300


class TrainingDiverged(RuntimeError):
    """Raised when a training loss becomes non-finite; carries the step."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"training loss non-finite at step {step}")


class ClampedLogLoss(float):
    """A cross-entropy value where the predicted probability was floored.

    ``clamped`` marks that the true probability at the label was zero and
    the floor 1e-300 was substituted to keep the loss finite.
    """

    clamped = True


# ---------------------------------------------------------------------------
# graph nodes
# ---------------------------------------------------------------------------


class Node:
    """One vertex of the computation graph.

    Holds the cached forward value, references to parent nodes, and one
    vector-Jacobian product per parent. After ``backward`` the ``grad``
    field of every reachable node is populated.
    """

    __slots__ = ("value", "parents", "vjps", "grad", "op", "name")

    def __init__(self, value, parents=(), vjps=(), op="leaf", name=None):
        self.value = np.asarray(value, dtype=float)
        self.parents = tuple(parents)
        self.vjps = tuple(vjps)
        self.grad = None
        self.op = op
        self.name = name

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape}, name={self.name})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return _binary(self, other, np.add, "add",
                       lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, np.subtract, "sub",
                       lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, other):
        return _wrap(other) - self

    def __mul__(self, other):
        return _binary(self, other, np.multiply, "mul",
                       lambda g, a, b: g * b, lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __neg__(self):
        return Node(-self.value, (self,), (lambda g: -g,), op="neg")

    def exp(self):
        out_val = np.exp(self.value)
        return Node(out_val, (self,), (lambda g: g * out_val,), op="exp")

    def log(self):
        val = self.value
        return Node(np.log(val), (self,), (lambda g: g / val,), op="log")

    def square(self):
        return self * self

    def sum(self):
        val = self.value
        return Node(val.sum(), (self,),
                    (lambda g: np.broadcast_to(g, val.shape).copy(),),
                    op="sum")

    def mean(self):
        val = self.value
        n = val.size
        return Node(val.mean(), (self,),
                    (lambda g: np.broadcast_to(g / n, val.shape).copy(),),
                    op="mean")

    def __getitem__(self, key):
        val = self.value

        def vjp(g, key=key, shape=val.shape):
            full = np.zeros(shape)
            full[key] = g
            return full

        return Node(val[key], (self,), (vjp,), op="slice")


def _wrap(x):
    return x if isinstance(x, Node) else Node(np.asarray(x, dtype=float))


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary(a, b, fn, op, vjp_a, vjp_b):
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    out = fn(av, bv)
    return Node(
        out,
        (a, b),
        (
            lambda g: _unbroadcast(vjp_a(g, av, bv), av.shape),
            lambda g: _unbroadcast(vjp_b(g, av, bv), bv.shape),
        ),
        op=op,
    )


def constant(value) -> Node:
    return Node(value, op="const")


def parameter(value, name=None) -> Node:
    return Node(value, op="param", name=name)


def detach(node: Node) -> Node:
    """Copy of ``node``'s value with no graph history (stops gradients)."""
    return Node(node.value.copy(), op="const")


def matmul(a: Node, b: Node) -> Node:
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    return Node(
        av @ bv,
        (a, b),
        (lambda g: g @ bv.T, lambda g: av.T @ g),
        op="matmul",
    )


def concat(nodes, axis=-1) -> Node:
    nodes = [_wrap(n) for n in nodes]
    vals = [n.value for n in nodes]
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        def vjp(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(index)]

        return vjp

    return Node(out, tuple(nodes), tuple(make_vjp(i) for i in range(len(nodes))),
                op="concat")


def relu_n(x: Node) -> Node:
    x = _wrap(x)
    val = x.value
    mask = val > 0
    return Node(np.where(mask, val, 0.0), (x,), (lambda g: g * mask,), op="relu")


def log_softmax_n(x: Node) -> Node:
    """Numerically stable log-softmax along the last axis (fused path)."""
    x = _wrap(x)
    val = x.value
    shifted = val - val.max(axis=-1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    out = shifted - logz
    soft = np.exp(out)

    def vjp(g):
        return g - soft * g.sum(axis=-1, keepdims=True)

    return Node(out, (x,), (vjp,), op="log_softmax")


def gather_logprob(logp: Node, labels) -> Node:
    """Pick ``logp[i, labels[i]]`` for each row; used by batched losses."""
    logp = _wrap(logp)
    labels = np.asarray(labels, dtype=int)
    rows = np.arange(logp.value.shape[0])
    picked = logp.value[rows, labels]

    def vjp(g, shape=logp.value.shape):
        full = np.zeros(shape)
        full[rows, labels] = g
        return full

    return Node(picked, (logp,), (vjp,), op="gather")


def clip_n(x: Node, lo: float, hi: float) -> Node:
    """Hard clip; gradient passes only where the input is inside [lo, hi]."""
    x = _wrap(x)
    val = x.value
    mask = (val >= lo) & (val <= hi)
    return Node(np.clip(val, lo, hi), (x,), (lambda g: g * mask,), op="clip")


def _toposort(root: Node):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order  # parents before children


def backward(output: Node) -> dict:
    """Reverse-mode gradients of a scalar node.

    Returns a dict mapping each reachable named parameter node's name to
    its gradient array; every reachable node also gets its ``grad`` field
    populated.
    """
    if output.value.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.value.shape}")
    order = _toposort(output)
    for node in order:
        node.grad = None
    output.grad = np.ones_like(output.value)
    for node in reversed(order):
        if node.grad is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            contrib = vjp(node.grad)
            if parent.grad is None:
                parent.grad = np.array(contrib, dtype=float, copy=True)
            else:
                parent.grad = parent.grad + contrib
    grads = {}
    for node in order:
        if node.op == "param" and node.name is not None:
            grads[node.name] = (
                np.zeros_like(node.value) if node.grad is None else node.grad
            )
    return grads


# ---------------------------------------------------------------------------
# plain-array ops (no graph)
# ---------------------------------------------------------------------------


def relu(x):
    """Elementwise max(0, x)."""
    return np.maximum(np.asarray(x, dtype=float), 0.0)


def softmax(v):
    """Softmax of a 1-D vector with max-subtraction for stability."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("softmax expects a non-empty 1-D vector")
    shifted = np.exp(v - v.max())
    return shifted / shifted.sum()


def cross_entropy(predicted, label):
    """-log(predicted[label]) in nats.

    ``predicted`` must sum to 1 within 1e-9. A zero probability at the
    label is floored at 1e-300 and the returned float carries a
    ``clamped`` flag (:class:`ClampedLogLoss`).
    """
    p = np.asarray(predicted, dtype=float)
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"predicted probabilities sum to {p.sum()!r}, not 1")
    label = int(label)
    if not 0 <= label < p.size:
        raise IndexError(f"label {label} out of range for {p.size} classes")
    prob = p[label]
    if prob <= 0.0:
        return ClampedLogLoss(-math.log(_PROB_FLOOR))
    return float(-math.log(prob))


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------

_NONLINEARITIES = ("relu", "softmax", "identity")


@dataclass(frozen=True)
class MLP:
    """Feedforward network: widths d_0..d_K, weights (d_{k-1} x d_k), biases.

    ``activations[k]`` names the nonlinearity applied after layer k+1;
    softmax may only appear at the output.
    """

    widths: tuple
    weights: tuple  # of ndarray (d_in, d_out)
    biases: tuple  # of ndarray (d_out,)
    activations: tuple  # of str

    def __post_init__(self):
        K = len(self.widths) - 1
        if not (len(self.weights) == len(self.biases) == len(self.activations) == K):
            raise ValueError("layer count mismatch")
        for k in range(K):
            if self.weights[k].shape != (self.widths[k], self.widths[k + 1]):
                raise ValueError(f"weight {k} has shape {self.weights[k].shape}")
            if self.biases[k].shape != (self.widths[k + 1],):
                raise ValueError(f"bias {k} has shape {self.biases[k].shape}")
            if self.activations[k] not in _NONLINEARITIES:
                raise ValueError(f"unknown nonlinearity {self.activations[k]!r}")
            if self.activations[k] == "softmax" and k != K - 1:
                raise ValueError("softmax is only allowed on the final layer")

    def params(self) -> dict:
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{k}"] = w
            out[f"b{k}"] = b
        return out

    def with_params(self, params: dict) -> "MLP":
        K = len(self.widths) - 1
        weights = tuple(params[f"W{k}"] for k in range(K))
        biases = tuple(params[f"b{k}"] for k in range(K))
        return replace(self, weights=weights, biases=biases)


def init_mlp(widths, activations, rng, prefix="") -> MLP:
    """Seeded init: weights uniform in ±sqrt(6/(d_in+d_out)), biases zero.

    ``prefix`` is prepended to parameter names when several networks are
    trained jointly.
    """
    widths = tuple(int(w) for w in widths)
    weights, biases = [], []
    for d_in, d_out in zip(widths[:-1], widths[1:]):
        bound = math.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    mlp = MLP(widths, tuple(weights), tuple(biases), tuple(activations))
    if prefix:
        object.__setattr__(mlp, "_prefix", prefix)
    return mlp


def forward(mlp: MLP, x, param_nodes=None) -> Node:
    """Run the network, recording the graph.

    ``x`` may be 1-D (a single input; output is 1-D) or 2-D ``(batch, d_0)``.
    ``param_nodes`` lets callers supply existing parameter nodes (e.g. when
    weights are themselves computed by the graph); by default fresh named
    parameter leaves are created from the MLP's arrays.
    """
    x_arr = x.value if isinstance(x, Node) else np.asarray(x, dtype=float)
    single = x_arr.ndim == 1
    if x_arr.shape[-1] != mlp.widths[0]:
        raise ValueError(
            f"input has {x_arr.shape[-1]} features, expected {mlp.widths[0]}"
        )
    h = x if isinstance(x, Node) else constant(np.atleast_2d(x_arr))
    if single and isinstance(x, Node):
        raise ValueError("node inputs must be batched (2-D)")
    if param_nodes is None:
        param_nodes = {
            name: parameter(value, name=name) for name, value in mlp.params().items()
        }
    for k, act in enumerate(mlp.activations):
        h = matmul(h, param_nodes[f"W{k}"]) + param_nodes[f"b{k}"]
        if act == "relu":
            h = relu_n(h)
        elif act == "softmax":
            h = log_softmax_n(h).exp()
        # identity: nothing
    if single:
        h = h[0, :]
    return h


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    """Heavy-ball SGD state.

    ``schedule`` maps the (0-based) step counter to a positive learning
    rate; a bare float is treated as a constant schedule. ``nesterov``
    switches to Nesterov's variant of the momentum update.
    """

    schedule: object = 0.01
    momentum: float = 0.0
    nesterov: bool = False
    step: int = 0
    buffers: dict = field(default_factory=dict)

    def learning_rate(self) -> float:
        lr = self.schedule(self.step) if callable(self.schedule) else self.schedule
        lr = float(lr)
        if not lr > 0:
            raise ValueError(f"learning rate must be positive, got {lr!r}")
        return lr


def sgd_step(params: dict, grads: dict, state: OptimizerState):
    """One descent step: buffer ← momentum·buffer + grad; param ← param − η·buffer.

    Functional: returns ``(new_params, new_state)`` without touching the
    inputs. With ``nesterov`` the parameter moves along
    ``grad + momentum·buffer_new`` instead of the buffer alone.
    """
    lr = state.learning_rate()
    new_params, new_buffers = {}, {}
    for name, value in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(value)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        buf = state.buffers.get(name)
        buf = g.copy() if buf is None else state.momentum * buf + g
        step_dir = g + state.momentum * buf if state.nesterov else buf
        new_params[name] = value - lr * step_dir
        new_buffers[name] = buf
    new_state = OptimizerState(
        schedule=state.schedule,
        momentum=state.momentum,
        nesterov=state.nesterov,
        step=state.step + 1,
        buffers=new_buffers,
    )
    return new_params, new_state


def minibatch_sample(dataset, b, rng, scheme="uniform"):
    """Draw b (y, z) pairs from ``dataset = (ys, zs)``.

    scheme="uniform" samples without replacement, so over many draws every
    index is included equally often. scheme="contiguous" picks a random
    start i ~ uniform{0..t-b} and returns the block [i, i+b) — the random
    contiguous subset used when the data comes as a stream.
    """
    ys, zs = dataset
    ys = np.asarray(ys)
    zs = np.asarray(zs)
    t = ys.shape[0]
    if t == 0:
        raise ValueError("empty dataset")
    if not 0 < b <= t:
        raise ValueError(f"batch size {b} not in 1..{t}")
    if scheme == "uniform":
        idx = rng.choice(t, size=b, replace=False)
    elif scheme == "contiguous":
        start = int(rng.integers(0, t - b + 1))
        idx = np.arange(start, start + b)
    else:
        raise ValueError(f"unknown sampling scheme {scheme!r}")
    return ys[idx], zs[idx]

"""Minimal reverse-mode autodiff over dense float64 arrays.

Everything the model needs and nothing more: a tape-free Node graph over
numpy arrays, MLP and attention-pool forward passes, Adam with bias
correction, and a central-finite-difference gradient checker.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import erf

Array = np.ndarray

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class GraphError(ValueError):
    """Raised on malformed graph inputs (shape mismatches, non-scalar loss)."""


class Node:
    """One value in the computation graph.

    Leaves are created directly from arrays; interior nodes carry a closure
    that routes the output adjoint back to their parents.
    """

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents: tuple = (), backward: Callable | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Array | None = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def _accum(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _unbroadcast(g: Array, shape: tuple) -> Array:
    """Reduce a broadcast gradient back to its original shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = Node(a.value + b.value, (a, b))

    def backward(g):
        a._accum(_unbroadcast(g, a.value.shape))
        b._accum(_unbroadcast(g, b.value.shape))

    out._backward = backward
    return out


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = Node(a.value - b.value, (a, b))

    def backward(g):
        a._accum(_unbroadcast(g, a.value.shape))
        b._accum(_unbroadcast(-g, b.value.shape))

    out._backward = backward
    return out


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = Node(a.value * b.value, (a, b))

    def backward(g):
        a._accum(_unbroadcast(g * b.value, a.value.shape))
        b._accum(_unbroadcast(g * a.value, b.value.shape))

    out._backward = backward
    return out


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    out = Node(av @ bv, (a, b))

    def backward(g):
        if av.ndim == 2 and bv.ndim == 2:
            a._accum(g @ bv.T)
            b._accum(av.T @ g)
        elif av.ndim == 1 and bv.ndim == 2:
            a._accum(bv @ g)
            b._accum(np.outer(av, g))
        elif av.ndim == 2 and bv.ndim == 1:
            a._accum(np.outer(g, bv))
            b._accum(av.T @ g)
        else:  # vector dot vector -> scalar
            a._accum(g * bv)
            b._accum(g * av)

    out._backward = backward
    return out


def ssum(a) -> Node:
    a = as_node(a)
    out = Node(a.value.sum(), (a,))

    def backward(g):
        a._accum(np.full_like(a.value, float(g)))

    out._backward = backward
    return out


def square(a) -> Node:
    a = as_node(a)
    out = Node(a.value * a.value, (a,))

    def backward(g):
        a._accum(2.0 * g * a.value)

    out._backward = backward
    return out


def log(a) -> Node:
    a = as_node(a)
    out = Node(np.log(a.value), (a,))

    def backward(g):
        a._accum(g / a.value)

    out._backward = backward
    return out


def sigmoid(a) -> Node:
    a = as_node(a)
    s = 1.0 / (1.0 + np.exp(-a.value))
    out = Node(s, (a,))

    def backward(g):
        a._accum(g * s * (1.0 - s))

    out._backward = backward
    return out


def gelu(a) -> Node:
    a = as_node(a)
    x = a.value
    phi = 0.5 * (1.0 + erf(x / _SQRT2))
    out = Node(x * phi, (a,))

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        a._accum(g * (phi + x * pdf))

    out._backward = backward
    return out


def clip(a, lo: float, hi: float) -> Node:
    """Clamp values; gradient is passed through only inside the bounds."""
    a = as_node(a)
    out = Node(np.clip(a.value, lo, hi), (a,))

    def backward(g):
        inside = (a.value > lo) & (a.value < hi)
        a._accum(g * inside)

    out._backward = backward
    return out


def softmax(a) -> Node:
    """Softmax over a 1-D score vector."""
    a = as_node(a)
    if a.value.ndim != 1:
        raise GraphError(f"softmax expects a 1-D score vector, got shape {a.value.shape}")
    z = a.value - a.value.max()
    w = np.exp(z)
    w /= w.sum()
    out = Node(w, (a,))

    def backward(g):
        a._accum(w * (g - np.dot(g, w)))

    out._backward = backward
    return out


def concat(parts: Sequence, axis: int = -1) -> Node:
    nodes = [as_node(p) for p in parts]
    out = Node(np.concatenate([n.value for n in nodes], axis=axis), tuple(nodes))
    sizes = [n.value.shape[axis] for n in nodes]

    def backward(g):
        offset = 0
        for n, s in zip(nodes, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis if axis >= 0 else g.ndim + axis] = slice(offset, offset + s)
            n._accum(g[tuple(idx)])
            offset += s

    out._backward = backward
    return out


def stack_rows(parts: Sequence) -> Node:
    """Stack 1-D vectors into a (K, d) matrix."""
    nodes = [as_node(p) for p in parts]
    out = Node(np.stack([n.value for n in nodes], axis=0), tuple(nodes))

    def backward(g):
        for i, n in enumerate(nodes):
            n._accum(g[i])

    out._backward = backward
    return out


def tile_rows(a, n: int) -> Node:
    """Repeat a 1-D vector as n identical rows."""
    a = as_node(a)
    out = Node(np.tile(a.value, (n, 1)), (a,))

    def backward(g):
        a._accum(g.sum(axis=0))

    out._backward = backward
    return out


def backward(loss: Node, seed: float = 1.0) -> None:
    """Reverse sweep from a scalar loss, accumulating .grad on every node."""
    if loss.value.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.value.shape}")
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss._accum(np.full_like(loss.value, seed))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def wrap_params(params: Mapping[str, Array]) -> dict[str, Node]:
    return {k: Node(v) for k, v in params.items()}


def grads_of(params: Mapping[str, Node]) -> dict[str, Array]:
    return {
        k: (n.grad if n.grad is not None else np.zeros_like(n.value))
        for k, n in params.items()
    }


def subparams(params: Mapping, prefix: str) -> dict:
    """Select keys under `prefix.` and strip the prefix."""
    cut = len(prefix) + 1
    return {k[cut:]: v for k, v in params.items() if k.startswith(prefix + ".")}


# ---------------------------------------------------------------------------
# MLP


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    output_squash: str = "none"  # "none" | "unit_interval"
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise GraphError("all MLP dimensions must be >= 1")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise GraphError("dropout_rate must be in [0, 1)")
        if self.output_squash not in ("none", "unit_interval"):
            raise GraphError(f"unknown output_squash {self.output_squash!r}")


def init_mlp(spec: MlpSpec, rng: np.random.Generator, gain: float = 1.0) -> dict[str, Array]:
    """Gaussian init with std = gain / sqrt(fan_in); biases zero."""
    params: dict[str, Array] = {}
    dims = [spec.input_dim, *spec.hidden_dims, spec.output_dim]
    for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"w{i}"] = rng.normal(0.0, gain / math.sqrt(din), size=(din, dout))
        params[f"b{i}"] = np.zeros(dout)
    return params


def mlp_forward(
    spec: MlpSpec,
    params: Mapping[str, Node | Array],
    x,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Node:
    x = as_node(x)
    if x.value.shape[-1] != spec.input_dim:
        raise GraphError(
            f"input width {x.value.shape[-1]} != expected {spec.input_dim}"
        )
    h = x
    n_layers = len(spec.hidden_dims) + 1
    for i in range(n_layers):
        h = add(matmul(h, as_node(params[f"w{i}"])), as_node(params[f"b{i}"]))
        if i < n_layers - 1:
            h = gelu(h)
            if training and spec.dropout_rate > 0.0:
                if rng is None:
                    raise GraphError("training with dropout requires an rng")
                keep = 1.0 - spec.dropout_rate
                mask = (rng.random(h.value.shape) < keep) / keep
                h = mul(h, mask)
    if spec.output_squash == "unit_interval":
        h = sigmoid(h)
    return h


# ---------------------------------------------------------------------------
# Attention pooling


def init_attention(
    d_in: int, d_att: int, d_val: int, rng: np.random.Generator, gain: float = 1.0
) -> dict[str, Array]:
    sk = gain / math.sqrt(d_in)
    return {
        # zero query -> uniform pooling at init; the query learns any
        # departure from mean-pooling from data
        "query": np.zeros(d_att),
        "wk": rng.normal(0.0, sk, size=(d_in, d_att)),
        "bk": np.zeros(d_att),
        "wv": rng.normal(0.0, sk, size=(d_in, d_val)),
        "bv": np.zeros(d_val),
    }


def attention_pool(query_params: Mapping[str, Node | Array], tokens) -> tuple[Node, Node]:
    """Scaled dot-product pooling with one learned query vector.

    Tokens may be a (K, d) matrix or a sequence of 1-D vectors. Returns the
    weighted context vector and the weight distribution over tokens.
    """
    if isinstance(tokens, (list, tuple)):
        if len(tokens) == 0:
            raise GraphError("attention_pool requires at least one token")
        tokens = stack_rows(tokens)
    else:
        tokens = as_node(tokens)
        if tokens.value.ndim != 2 or tokens.value.shape[0] == 0:
            raise GraphError("attention_pool expects a non-empty (K, d) token matrix")
    q = as_node(query_params["query"])
    keys = add(matmul(tokens, as_node(query_params["wk"])), as_node(query_params["bk"]))
    scores = mul(matmul(keys, q), 1.0 / math.sqrt(q.value.shape[0]))
    weights = softmax(scores)
    values = add(matmul(tokens, as_node(query_params["wv"])), as_node(query_params["bv"]))
    context = matmul(weights, values)
    return context, weights


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, Array] = field(default_factory=dict)
    second_moment: dict[str, Array] = field(default_factory=dict)


def init_adam(params: Mapping[str, Array], learning_rate: float, **kw) -> AdamState:
    state = AdamState(learning_rate=learning_rate, **kw)
    state.first_moment = {k: np.zeros_like(v) for k, v in params.items()}
    state.second_moment = {k: np.zeros_like(v) for k, v in params.items()}
    return state


def adam_step(
    state: AdamState, params: dict[str, Array], grads: Mapping[str, Array]
) -> tuple[dict[str, Array], AdamState]:
    """In-place Adam update with bias correction."""
    for k, p in params.items():
        if grads[k].shape != p.shape or state.first_moment[k].shape != p.shape:
            raise GraphError(f"shape mismatch for parameter {k!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for k, p in params.items():
        g = grads[k]
        m = state.first_moment[k]
        v = state.second_moment[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state


# ---------------------------------------------------------------------------
# Gradient checking


def finite_diff_check(
    loss_fn: Callable[[Mapping[str, Node]], Node],
    params: Mapping[str, Array],
    step: float = 1e-5,
    max_coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max over checked coordinates of |analytic - numeric| / max(1, |numeric|).

    When `max_coords_per_param` is set, a random subset of coordinates per
    parameter is probed; otherwise every coordinate is.
    """
    if step <= 0:
        raise GraphError("step must be positive")
    nodes = wrap_params(params)
    loss = loss_fn(nodes)
    backward(loss)
    analytic = grads_of(nodes)

    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def eval_loss() -> float:
        out = loss_fn(wrap_params(work))
        val = float(out.value)
        return val

    worst = 0.0
    for name, arr in work.items():
        flat = arr.reshape(-1)
        idxs = np.arange(flat.size)
        if max_coords_per_param is not None and flat.size > max_coords_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            idxs = rng.choice(flat.size, size=max_coords_per_param, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + step
            up = eval_loss()
            flat[i] = orig - step
            dn = eval_loss()
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(dn)):
                raise GraphError(f"non-finite loss while probing parameter {name!r}")
            numeric = (up - dn) / (2.0 * step)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst

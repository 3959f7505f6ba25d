"""The student network: a small MLP with manual backprop and Adam.

Layers before ``repr_boundary`` form the representation ``psi``; the rest
form the predictor head. All parameters live in one flat float64 buffer
(layer weights and biases are views into it) so the optimizer can update
them with a single fused kernel call.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _backend
from .errors import (DimensionMismatch, EmptyDataset, InvalidInput,
                     NonDistributionTarget, NonFiniteGradient)
from .numerics import Rng

NET_FORMAT = "fwl-student"
NET_VERSION = 1
LOG_CLIP = 1e-12

ACTIVATIONS = ("tanh", "relu", "identity")


def _act(kind, z):
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(kind, z, a, upstream):
    if kind == "tanh":
        return upstream * (1.0 - a * a)
    if kind == "relu":
        return upstream * (z > 0.0)
    return upstream


@dataclass
class Layer:
    weights: np.ndarray  # (fan_in, fan_out) view into the parameter buffer
    bias: np.ndarray
    activation: str


class StudentNet:
    """Feed-forward net ``phi(psi(x))`` over a flat parameter buffer."""

    def __init__(self, sizes: Sequence[int], activations: Sequence[str],
                 repr_boundary: int, params: np.ndarray | None = None):
        sizes = [int(s) for s in sizes]
        activations = list(activations)
        if len(sizes) < 2 or len(activations) != len(sizes) - 1:
            raise InvalidInput("need len(activations) == len(sizes) - 1 >= 1")
        for a in activations:
            if a not in ACTIVATIONS:
                raise InvalidInput(f"unknown activation {a!r}")
        n_layers = len(activations)
        if n_layers > 1 and not 1 <= repr_boundary <= n_layers - 1:
            raise InvalidInput(f"repr_boundary must be in [1, {n_layers - 1}]")
        self.sizes = sizes
        self.activations = activations
        self.repr_boundary = int(repr_boundary)
        n_params = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
        if params is None:
            params = np.zeros(n_params)
        params = np.ascontiguousarray(params, dtype=np.float64)
        if params.shape != (n_params,):
            raise DimensionMismatch(f"expected {n_params} parameters, got {params.shape}")
        self.params = params
        self.layers = []
        off = 0
        for (i, o), act in zip(zip(sizes[:-1], sizes[1:]), activations):
            w = params[off:off + i * o].reshape(i, o)
            off += i * o
            b = params[off:off + o]
            off += o
            self.layers.append(Layer(w, b, act))

    @classmethod
    def mlp(cls, n_in: int, hidden: Sequence[int], n_out: int, rng: Rng,
            activation: str = "tanh", repr_boundary: int | None = None) -> "StudentNet":
        """Fresh MLP with fan-in scaled uniform init; psi defaults to all hidden layers."""
        sizes = [n_in, *hidden, n_out]
        acts = [activation] * len(hidden) + ["identity"]
        if repr_boundary is None:
            repr_boundary = max(1, len(hidden))
        net = cls(sizes, acts, repr_boundary)
        for layer in net.layers:
            limit = np.sqrt(3.0 / layer.weights.shape[0])
            layer.weights[...] = rng.uniform(-limit, limit, layer.weights.shape)
            layer.bias[...] = rng.uniform(-limit, limit, layer.bias.shape)
        return net

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    @property
    def repr_dim(self) -> int:
        return self.sizes[self.repr_boundary]

    def copy(self) -> "StudentNet":
        return StudentNet(self.sizes, self.activations, self.repr_boundary, self.params.copy())

    def architecture(self) -> dict:
        return {"sizes": self.sizes, "activations": self.activations,
                "repr_boundary": self.repr_boundary}

    def forward_batch(self, x):
        """Outputs for the rows of ``x`` plus the cache needed by ``backward``."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None] if self.n_in == 1 else x[None, :]
        if x.shape[1] != self.n_in:
            raise DimensionMismatch(f"input dim {x.shape[1]} != {self.n_in}")
        pre, post = [], [x]
        a = x
        for layer in self.layers:
            z = a @ layer.weights + layer.bias
            a = _act(layer.activation, z)
            pre.append(z)
            post.append(a)
        return a, (pre, post)

    def predict(self, x) -> np.ndarray:
        return self.forward_batch(x)[0]

    def represent(self, x) -> np.ndarray:
        """``psi`` for each row of ``x``."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None] if self.n_in == 1 else x[None, :]
        if x.shape[1] != self.n_in:
            raise DimensionMismatch(f"input dim {x.shape[1]} != {self.n_in}")
        a = x
        for layer in self.layers[:self.repr_boundary]:
            a = _act(layer.activation, a @ layer.weights + layer.bias)
        return a

    def backward(self, cache, d_out: np.ndarray) -> np.ndarray:
        """Flat gradient of ``sum(d_out * output)`` w.r.t. the parameters."""
        pre, post = cache
        grad = np.empty_like(self.params)
        g = d_out
        off = self.params.size
        for li in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[li]
            dz = _act_grad(layer.activation, pre[li], post[li + 1], g)
            nb = layer.bias.size
            nw = layer.weights.size
            grad[off - nb:off] = dz.sum(axis=0)
            grad[off - nb - nw:off - nb] = (post[li].T @ dz).reshape(-1)
            off -= nb + nw
            if li:
                g = dz @ layer.weights.T
        return grad


def forward(net: StudentNet, x):
    """Single-sample pass: (output, representation, cache)."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    out, cache = net.forward_batch(x)
    rep = cache[1][net.repr_boundary]
    return out[0], rep[0], cache


@dataclass(frozen=True)
class LossSpec:
    kind: str = "mse"  # "mse" | "cross_entropy"
    l2: float = 0.0

    def __post_init__(self):
        if self.kind not in ("mse", "cross_entropy"):
            raise InvalidInput(f"unknown loss {self.kind!r}")
        if not self.l2 >= 0:
            raise InvalidInput("l2 coefficient must be >= 0")


def _check_targets(spec: LossSpec, targets: np.ndarray):
    if spec.kind == "cross_entropy":
        if np.any(targets < -1e-12) or np.any(np.abs(targets.sum(axis=1) - 1.0) > 1e-6):
            raise NonDistributionTarget("cross-entropy targets must be probability vectors")


def per_sample_loss(spec: LossSpec, out: np.ndarray, y: np.ndarray):
    """Per-row data loss and its gradient w.r.t. the network output."""
    if spec.kind == "mse":
        r = out - y
        return np.mean(r * r, axis=1), (2.0 / out.shape[1]) * r
    z = out - out.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    live = p > LOG_CLIP
    logp = np.log(np.where(live, p, LOG_CLIP))
    loss = -np.sum(y * logp, axis=1)
    dl_dp = np.where(live, -y / np.where(live, p, 1.0), 0.0)
    d_out = p * (dl_dp - np.sum(p * dl_dp, axis=1, keepdims=True))
    return loss, d_out


def batch_loss_and_grad(net: StudentNet, x, y, spec: LossSpec, weights=None):
    """Mean per-sample loss (plus L2) and the weighted mean gradient.

    With ``weights`` w_i the gradient is ``mean_i(w_i * (grad l_i + grad R))``;
    the returned loss is the unweighted mean.
    """
    y = np.asarray(y, dtype=np.float64)
    out, cache = net.forward_batch(x)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape != out.shape:
        raise DimensionMismatch(f"target shape {y.shape} != output shape {out.shape}")
    _check_targets(spec, y)
    losses, d_out = per_sample_loss(spec, out, y)
    b = out.shape[0]
    if weights is None:
        d_out = d_out / b
        w_mean = 1.0
    else:
        d_out = d_out * (np.asarray(weights, dtype=np.float64)[:, None] / b)
        w_mean = float(np.mean(weights))
    grad = net.backward(cache, d_out)
    loss = float(np.mean(losses))
    if spec.l2:
        loss += spec.l2 * float(net.params @ net.params)
        grad += (2.0 * spec.l2 * w_mean) * net.params
    return loss, grad


def loss_and_grad(net: StudentNet, x, target, spec: LossSpec):
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    target = np.asarray(target, dtype=np.float64).reshape(1, -1)
    if target.shape[1] != net.n_out:
        raise DimensionMismatch(f"target dim {target.shape[1]} != output dim {net.n_out}")
    return batch_loss_and_grad(net, x, target, spec)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0

    @classmethod
    def for_net(cls, net: StudentNet, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros_like(net.params), np.zeros_like(net.params), lr, **kw)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.lr, self.beta1,
                         self.beta2, self.eps, self.t)


def adam_step(net: StudentNet, state: AdamState, grads: np.ndarray, fidelity: float = 1.0):
    """One Adam update in place; the resulting delta is scaled by ``fidelity``.

    Moments see the unscaled gradient.
    """
    grads = np.ascontiguousarray(grads, dtype=np.float64)
    if grads.shape != net.params.shape:
        raise DimensionMismatch("gradient does not match parameter layout")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradient("gradient has non-finite entries")
    if not 0.0 <= fidelity <= 1.0:
        raise InvalidInput(f"fidelity must be in [0, 1], got {fidelity}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    _backend.adam_update(net.params, grads, state.m, state.v, state.lr,
                         state.beta1, state.beta2, state.eps, bc1, bc2, float(fidelity))
    return net, state


BatchPlan = Callable[[Rng, int], list]


def shuffled_batches(n: int, batch_size: int) -> BatchPlan:
    def plan(rng: Rng, epoch: int):
        perm = rng.permutation(n)
        return [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    return plan


def weighted_batches(probs, batch_size: int, n_batches: int) -> BatchPlan:
    """Batches drawn with replacement, each index with probability ``probs[i]``."""
    probs = np.asarray(probs, dtype=np.float64)

    def plan(rng: Rng, epoch: int):
        draws = rng.choice(probs.size, size=n_batches * batch_size, replace=True, p=probs)
        return list(draws.reshape(n_batches, batch_size))
    return plan


@dataclass
class TrainResult:
    net: StudentNet
    state: AdamState
    losses: list[float] = field(default_factory=list)


def train_epochs(net: StudentNet, x, y, spec: LossSpec, state: AdamState,
                 fidelities=None, epochs: int = 1, batch_size: int = 32,
                 rng: Rng | None = None, plan: BatchPlan | None = None) -> TrainResult:
    """Minibatch Adam on a copy of ``net``.

    Per batch with fidelities f_i and batch mean f: the gradient is the
    mean of ``(f_i / f) * grad_i`` and the Adam delta is scaled by ``f``.
    Under plain SGD this equals applying each sample at its own step size
    ``lr * f_i``; with a single sample it reduces to ``adam_step(.., f_i)``.
    A batch whose fidelities are all zero leaves net and state untouched.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise EmptyDataset("training set is empty")
    if fidelities is not None:
        fidelities = np.broadcast_to(np.asarray(fidelities, dtype=np.float64), (n,))
        if np.any(fidelities < 0) or np.any(fidelities > 1):
            raise InvalidInput("fidelities must lie in [0, 1]")
        if np.all(fidelities == 1.0):
            fidelities = None
    rng = rng if rng is not None else Rng(0)
    plan = plan if plan is not None else shuffled_batches(n, batch_size)
    net = net.copy()
    losses = []
    for epoch in range(epochs):
        total, count = 0.0, 0
        for idx in plan(rng, epoch):
            if fidelities is None:
                loss, grad = batch_loss_and_grad(net, x[idx], y[idx], spec)
                adam_step(net, state, grad)
            else:
                f = fidelities[idx]
                f_mean = float(np.mean(f))
                if f_mean == 0.0:
                    out = net.predict(x[idx])
                    loss = float(np.mean(per_sample_loss(spec, out, y[idx].reshape(out.shape))[0]))
                else:
                    loss, grad = batch_loss_and_grad(net, x[idx], y[idx], spec, f / f_mean)
                    adam_step(net, state, grad, min(f_mean, 1.0))
            total += loss * len(idx)
            count += len(idx)
        losses.append(total / count)
    return TrainResult(net, state, losses)


def save_net(path, net: StudentNet) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, format=np.array(NET_FORMAT), version=np.array(NET_VERSION),
                 architecture=np.array(json.dumps(net.architecture())),
                 params=net.params)


def load_net(path) -> StudentNet:
    with np.load(Path(path), allow_pickle=False) as data:
        if str(data["format"]) != NET_FORMAT:
            raise InvalidInput(f"{path} is not a student checkpoint")
        if int(data["version"]) != NET_VERSION:
            raise InvalidInput(f"unsupported checkpoint version {int(data['version'])}")
        arch = json.loads(str(data["architecture"]))
        return StudentNet(arch["sizes"], arch["activations"], arch["repr_boundary"],
                          data["params"].copy())

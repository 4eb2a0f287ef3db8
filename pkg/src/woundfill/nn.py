"""Shared MLPs, Adam, the step-decay schedule and a finite-difference checker."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor

ACTIVATIONS = ("relu", "none", "sigmoid")
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class MlpLayer:
    weight: Tensor
    bias: Tensor
    activation: str = "relu"
    # optional batch-style normalization applied before the activation
    norm_scale: Tensor | None = None
    norm_shift: Tensor | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class MlpParams:
    layers: list[MlpLayer] = field(default_factory=list)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        for i, layer in enumerate(self.layers):
            yield f"{i}.weight", layer.weight
            yield f"{i}.bias", layer.bias
            if layer.norm_scale is not None:
                yield f"{i}.norm_scale", layer.norm_scale
                yield f"{i}.norm_shift", layer.norm_shift

    def buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, layer in enumerate(self.layers):
            if layer.running_mean is not None:
                yield f"{i}.running_mean", layer.running_mean
                yield f"{i}.running_var", layer.running_var


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float64) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out)).astype(dtype)


def init_mlp(
    rng: np.random.Generator,
    dims: Sequence[int],
    activations: Sequence[str] | str = "relu",
    norm: bool = False,
    dtype=np.float64,
) -> MlpParams:
    """Build an MLP with layer sizes ``dims`` (input first).

    ``activations`` is either one tag for every layer or one tag per layer.
    """
    n_layers = len(dims) - 1
    if n_layers < 1:
        raise ValueError("an MLP needs at least one layer")
    if isinstance(activations, str):
        activations = [activations] * n_layers
    if len(activations) != n_layers:
        raise ValueError("one activation tag per layer expected")
    layers = []
    for d_in, d_out, act in zip(dims[:-1], dims[1:], activations):
        if act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {act!r}")
        layer = MlpLayer(
            weight=Tensor(glorot_uniform(rng, d_in, d_out, dtype), requires_grad=True),
            bias=Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True),
            activation=act,
        )
        if norm:
            layer.norm_scale = Tensor(np.ones(d_out, dtype=dtype), requires_grad=True)
            layer.norm_shift = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)
            layer.running_mean = np.zeros(d_out, dtype=dtype)
            layer.running_var = np.ones(d_out, dtype=dtype)
        layers.append(layer)
    return MlpParams(layers)


def _normalize(layer: MlpLayer, h: Tensor, training: bool) -> Tensor:
    if training:
        flat = ag.reshape(h, (-1, h.shape[-1]))
        mu = ag.mean(flat, axis=0)
        centered = flat - mu
        var = ag.mean(centered * centered, axis=0)
        normed = ag.reshape(centered / ag.sqrt(var + BN_EPS), h.shape)
        layer.running_mean *= 1.0 - BN_MOMENTUM
        layer.running_mean += BN_MOMENTUM * mu.data
        layer.running_var *= 1.0 - BN_MOMENTUM
        layer.running_var += BN_MOMENTUM * var.data
    else:
        normed = (h - layer.running_mean) / np.sqrt(layer.running_var + BN_EPS).astype(h.dtype)
    return normed * layer.norm_scale + layer.norm_shift


def mlp_apply(params: MlpParams, x: Tensor, training: bool = False) -> Tensor:
    """Apply the same MLP to every row (last axis) of ``x``."""
    x = ag.as_tensor(x)
    if x.shape[-1] != params.in_dim:
        raise ValueError(f"MLP expects width {params.in_dim}, got {x.shape[-1]}")
    h = x
    for layer in params.layers:
        h = ag.matmul(h, layer.weight) + layer.bias
        if layer.norm_scale is not None:
            h = _normalize(layer, h, training)
        if layer.activation == "relu":
            h = ag.relu(h)
        elif layer.activation == "sigmoid":
            h = ag.sigmoid(h)
    return h


# optimisation ----------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            **hyper,
        )


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("parameter/gradient/state counts differ")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p -= step.astype(p.dtype, copy=False)


def lr_at_epoch(base_lr: float, epoch: int, factor: float = 0.5, period: int = 20) -> float:
    if epoch < 1:
        raise ValueError("epochs are counted from 1")
    return base_lr * factor ** ((epoch - 1) // period)


# verification --------------------------------------------------------------

def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


def grad_check(fn: Callable[[Tensor], Tensor], point, h: float = 1e-5) -> float:
    """Max relative error between the tape gradient of scalar ``fn`` and central differences."""
    base = np.array(point, dtype=np.float64)
    x = Tensor(base.copy(), requires_grad=True)
    out = fn(x)
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("function is not finite at the check point")
    out.backward()
    analytic = x.grad if x.grad is not None else np.zeros_like(base)
    numeric = np.empty_like(base)
    flat = numeric.reshape(-1)
    for i in range(base.size):
        probe = base.copy().reshape(-1)
        probe[i] += h
        f_plus = float(fn(Tensor(probe.reshape(base.shape))).data)
        probe[i] -= 2 * h
        f_minus = float(fn(Tensor(probe.reshape(base.shape))).data)
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise FloatingPointError(f"non-finite evaluation at coordinate {i}")
        flat[i] = (f_plus - f_minus) / (2 * h)
    return _relative_error(analytic, numeric)


def grad_check_params(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Like :func:`grad_check` but perturbs the given parameter tensors in place.

    ``loss_fn`` must rebuild the graph from the current parameter values on
    every call.
    """
    for p in params:
        p.zero_grad()
    out = loss_fn()
    out.backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = np.empty_like(p.data)
        flat_p = p.data.reshape(-1)
        flat_n = numeric.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + h
            f_plus = float(loss_fn().data)
            flat_p[i] = orig - h
            f_minus = float(loss_fn().data)
            flat_p[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise FloatingPointError(f"non-finite evaluation in {p.name or 'parameter'}[{i}]")
            flat_n[i] = (f_plus - f_minus) / (2 * h)
        worst = max(worst, _relative_error(analytic, numeric))
    return worst

"""Dense network with hand-written reverse-mode gradients.

Parameters are stored float32. The compute dtype is a parameter: training
uses float32 matmuls for speed, while gradient checking upcasts everything
to float64 so central differences are limited by truncation error rather
than rounding. Scalar reductions (losses, finite differences) always
accumulate in float64.
"""

from __future__ import annotations

import dataclasses
import struct
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DimensionMismatch, NonFiniteGradient, ParseError

CHECKPOINT_MAGIC = b"CHIM"
CHECKPOINT_VERSION = 1
_ACTIVATION_TAG = b"silu"


@dataclasses.dataclass
class DenseNet:
    """SiLU hidden layers, identity output. weights[i] has shape (out, in)."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @staticmethod
    def init(layer_dims: list[int], seed: int) -> "DenseNet":
        """Kaiming-uniform fan-in init, biases zero, seeded."""
        if len(layer_dims) < 2:
            raise ValueError("need at least input and output dims")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(np.float32))
            biases.append(np.zeros(fan_out, dtype=np.float32))
        return DenseNet(layer_dims=list(layer_dims), weights=weights, biases=biases)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "DenseNet":
        return DenseNet(
            layer_dims=list(self.layer_dims),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


@dataclasses.dataclass
class Tape:
    """Activations cached by forward, consumed by backward."""

    activations: list[np.ndarray]  # inputs to each layer, then the output
    pre_activations: list[np.ndarray]
    squeezed: bool
    dtype: np.dtype


@dataclasses.dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def any_nonfinite(self) -> bool:
        return any(not np.all(np.isfinite(g)) for g in self.weights + self.biases)

    def scaled(self, factor: float) -> "Gradients":
        return Gradients(
            weights=[factor * g for g in self.weights],
            biases=[factor * g for g in self.biases],
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(net: DenseNet, x: np.ndarray, dtype: type = np.float32) -> tuple[np.ndarray, Tape]:
    """Run the network; returns the output and the tape for backward."""
    x = np.asarray(x, dtype=dtype)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.layer_dims[0]:
        raise DimensionMismatch(f"input shape {x.shape} does not match first layer dim {net.layer_dims[0]}")
    activations = [x]
    pre_activations = []
    h = x
    for i in range(net.n_layers):
        z = h @ net.weights[i].T.astype(dtype) + net.biases[i].astype(dtype)
        pre_activations.append(z)
        h = z * _sigmoid(z) if i < net.n_layers - 1 else z
        activations.append(h)
    y = h[0] if squeezed else h
    return y, Tape(activations, pre_activations, squeezed, np.dtype(dtype))


def backward(net: DenseNet, tape: Tape, dloss_dy: np.ndarray) -> tuple[Gradients, np.ndarray]:
    """Exact gradients of the scalar loss whose output-gradient is given.

    Returns (parameter gradients, dloss/dx). Gradients come back in the
    tape's compute dtype.
    """
    dtype = tape.dtype
    delta = np.asarray(dloss_dy, dtype=dtype)
    if tape.squeezed:
        delta = delta[None, :]
    if delta.shape != tape.activations[-1].shape:
        raise DimensionMismatch(f"output gradient shape {delta.shape} does not match forward output {tape.activations[-1].shape}")
    grad_w: list[np.ndarray] = [np.empty(0)] * net.n_layers
    grad_b: list[np.ndarray] = [np.empty(0)] * net.n_layers
    for i in range(net.n_layers - 1, -1, -1):
        grad_w[i] = delta.T @ tape.activations[i]
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            dx = delta @ net.weights[i].astype(dtype)
            z = tape.pre_activations[i - 1]
            s = _sigmoid(z)
            # d/dz of z*sigmoid(z)
            delta = dx * (s * (1.0 + z * (1.0 - s)))
    dinput = delta @ net.weights[0].astype(dtype)
    if tape.squeezed:
        dinput = dinput[0]
    return Gradients(weights=grad_w, biases=grad_b), dinput


@dataclasses.dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m_weights: list[np.ndarray] = dataclasses.field(default_factory=list)
    v_weights: list[np.ndarray] = dataclasses.field(default_factory=list)
    m_biases: list[np.ndarray] = dataclasses.field(default_factory=list)
    v_biases: list[np.ndarray] = dataclasses.field(default_factory=list)

    @staticmethod
    def init(net: DenseNet, lr: float = 1e-3) -> "AdamState":
        return AdamState(
            lr=lr,
            m_weights=[np.zeros_like(w) for w in net.weights],
            v_weights=[np.zeros_like(w) for w in net.weights],
            m_biases=[np.zeros_like(b) for b in net.biases],
            v_biases=[np.zeros_like(b) for b in net.biases],
        )


def adam_step(net: DenseNet, grads: Gradients, state: AdamState, lr: float | None = None) -> None:
    """One bias-corrected Adam update in place. Rejects non-finite gradients."""
    if grads.any_nonfinite():
        raise NonFiniteGradient(f"non-finite gradient at optimizer step {state.step + 1}")
    if lr is None:
        lr = state.lr
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for params, gs, ms, vs in (
        (net.weights, grads.weights, state.m_weights, state.v_weights),
        (net.biases, grads.biases, state.m_biases, state.v_biases),
    ):
        for i in range(len(params)):
            g = gs[i].astype(np.float32)
            ms[i] = state.beta1 * ms[i] + (1.0 - state.beta1) * g
            vs[i] = state.beta2 * vs[i] + (1.0 - state.beta2) * g * g
            m_hat = ms[i] / c1
            v_hat = vs[i] / c2
            params[i] -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(np.float32)


def grad_check(
    net: DenseNet,
    loss_fn: Callable[[DenseNet], tuple[float, Gradients]],
    probes: int,
    h: float = 1e-3,
    seed: int = 0,
) -> float:
    """Max relative error between loss_fn's gradients and central differences.

    loss_fn must be deterministic and return (scalar loss, Gradients). Each
    probe perturbs one randomly chosen parameter. The perturbed values are
    rounded to float32 storage, so the finite difference divides by the step
    that was actually applied rather than the nominal 2h.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    rng = np.random.default_rng(seed)
    _, grads = loss_fn(net)
    worst = 0.0
    for _ in range(probes):
        layer = int(rng.integers(net.n_layers))
        use_bias = bool(rng.integers(2))
        tensor = net.biases[layer] if use_bias else net.weights[layer]
        grad = grads.biases[layer] if use_bias else grads.weights[layer]
        flat = int(rng.integers(tensor.size))
        idx = np.unravel_index(flat, tensor.shape)
        original = tensor[idx]
        plus = np.float32(float(original) + h)
        minus = np.float32(float(original) - h)
        tensor[idx] = plus
        loss_plus, _ = loss_fn(net)
        tensor[idx] = minus
        loss_minus, _ = loss_fn(net)
        tensor[idx] = original
        actual_step = float(plus) - float(minus)
        fd = (loss_plus - loss_minus) / actual_step
        bp = float(grad[idx])
        err = abs(fd - bp) / max(1.0, abs(fd), abs(bp))
        worst = max(worst, err)
    return worst


def save_checkpoint(net: DenseNet, path: str | Path, adam: AdamState | None = None) -> None:
    """Binary layout: magic, version, activation tag, dims, float32 parameter
    blobs per layer (W then b), then the optional Adam state."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(_ACTIVATION_TAG)
        fh.write(struct.pack("<I", len(net.layer_dims)))
        fh.write(struct.pack(f"<{len(net.layer_dims)}I", *net.layer_dims))
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())
        if adam is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            fh.write(struct.pack("<Qdddd", adam.step, adam.lr, adam.beta1, adam.beta2, adam.eps))
            for group in (adam.m_weights, adam.v_weights, adam.m_biases, adam.v_biases):
                for tensor in group:
                    fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[DenseNet, AdamState | None]:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise ParseError(f"cannot read checkpoint {path}: {exc}") from exc
    with fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ParseError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ParseError(f"{path}: unsupported checkpoint version {version}")
        tag = fh.read(4)
        if tag != _ACTIVATION_TAG:
            raise ParseError(f"{path}: unknown activation tag {tag!r}")
        (n_dims,) = struct.unpack("<I", fh.read(4))
        dims = list(struct.unpack(f"<{n_dims}I", fh.read(4 * n_dims)))
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = np.frombuffer(fh.read(4 * fan_out * fan_in), dtype="<f4").reshape(fan_out, fan_in).copy()
            b = np.frombuffer(fh.read(4 * fan_out), dtype="<f4").copy()
            weights.append(w)
            biases.append(b)
        net = DenseNet(layer_dims=dims, weights=weights, biases=biases)
        (has_adam,) = struct.unpack("<B", fh.read(1))
        if not has_adam:
            return net, None
        step, lr, beta1, beta2, eps = struct.unpack("<Qdddd", fh.read(8 + 32))
        adam = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=step)
        for group_name in ("m_weights", "v_weights", "m_biases", "v_biases"):
            group = []
            shapes = [w.shape for w in weights] if "weights" in group_name else [b.shape for b in biases]
            for shape in shapes:
                size = int(np.prod(shape))
                group.append(np.frombuffer(fh.read(4 * size), dtype="<f4").reshape(shape).copy())
            setattr(adam, group_name, group)
        return net, adam

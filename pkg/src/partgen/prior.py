"""Part-conditioned prior: denoising and flow-matching objectives over the
synthetic embedding world, plus the samplers that invert them.

The network always sees one flat input vector: the state, a 16-dim
sinusoidal encoding of time, four zero-padded condition slots, and a 4-bit
slot mask (dimension 5d + 20). The denoising objective predicts the clean
composite from its noised version; the flow objective predicts the straight
path velocity target - x0. Condition dropout zeroes both the slots and the
mask of an item, which trains the unconditional branch used by
classifier-free guidance.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteLoss, ValidationError
from .hashing import combine_seed
from .nn import AdamState, DenseNet, Gradients, adam_step, backward, forward
from .world import SLOT_COUNT, ConditionSet

TIME_ENC_DIM = 16
_TIME_FREQS = 10000.0 ** (-np.arange(TIME_ENC_DIM // 2) / (TIME_ENC_DIM // 2 - 1))
FLOW_TIME_SCALE = 1000.0

OBJECTIVES = ("rectified_flow", "diffusion_prior")
DEFAULT_HIDDEN_DIMS = [256, 256, 256]


def input_dim(d: int) -> int:
    return d + TIME_ENC_DIM + SLOT_COUNT * d + SLOT_COUNT


def default_layer_dims(d: int) -> list[int]:
    return [input_dim(d)] + DEFAULT_HIDDEN_DIMS + [d]


@dataclasses.dataclass
class NoiseSchedule:
    """Linear beta schedule. alpha_bar(0) is defined as 1; alpha_bar(1) is
    alpha_1, and the product decays strictly from there."""

    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self) -> None:
        self.betas = np.linspace(self.beta_start, self.beta_end, self.T)
        if not (np.all(self.betas > 0) and np.all(self.betas < 1)):
            raise ValidationError("betas must lie strictly inside (0, 1)")
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)

    def alpha_bar(self, t: int | np.ndarray) -> float | np.ndarray:
        t = np.asarray(t)
        out = np.where(t >= 1, self.alpha_bars[np.maximum(t, 1) - 1], 1.0)
        return float(out) if out.ndim == 0 else out


def time_encoding(tau: np.ndarray) -> np.ndarray:
    """16 sinusoidal features of the scaled time in [0, 1000]."""
    tau = np.atleast_1d(np.asarray(tau, dtype=np.float64))
    angles = tau[:, None] * _TIME_FREQS[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def condition_features(conds: Sequence[ConditionSet], d: int) -> tuple[np.ndarray, np.ndarray]:
    """Zero-padded slot blocks (B, 4d) and presence masks (B, 4)."""
    blocks = np.zeros((len(conds), SLOT_COUNT * d))
    masks = np.zeros((len(conds), SLOT_COUNT))
    for row, cond in enumerate(conds):
        for i in range(cond.k):
            blocks[row, i * d:(i + 1) * d] = cond.embeddings[i]
            masks[row, i] = 1.0
    return blocks, masks


def build_inputs(states: np.ndarray, taus: np.ndarray, blocks: np.ndarray, masks: np.ndarray) -> np.ndarray:
    return np.concatenate([states, time_encoding(taus), blocks, masks], axis=1)


def q_sample(e: np.ndarray, t: int | np.ndarray, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Forward noising: sqrt(abar_t) e + sqrt(1 - abar_t) eps."""
    ab = np.asarray(sched.alpha_bar(t))
    if ab.ndim == 1:
        ab = ab[:, None]
    return np.sqrt(ab) * e + np.sqrt(1.0 - ab) * eps


@dataclasses.dataclass
class FlowDraws:
    t: np.ndarray      # (B,) in [0, 1)
    x0: np.ndarray     # (B, d)
    drop: np.ndarray   # (B,) bool


@dataclasses.dataclass
class DiffusionDraws:
    t: np.ndarray      # (B,) integers in [1, T]
    eps: np.ndarray    # (B, d)
    drop: np.ndarray   # (B,) bool


def make_flow_draws(rng: np.random.Generator, batch_size: int, d: int, cond_dropout: float) -> FlowDraws:
    return FlowDraws(
        t=rng.random(batch_size),
        x0=rng.standard_normal((batch_size, d)),
        drop=rng.random(batch_size) < cond_dropout,
    )


def make_diffusion_draws(
    rng: np.random.Generator, batch_size: int, d: int, sched: NoiseSchedule, cond_dropout: float
) -> DiffusionDraws:
    return DiffusionDraws(
        t=rng.integers(1, sched.T + 1, size=batch_size),
        eps=rng.standard_normal((batch_size, d)),
        drop=rng.random(batch_size) < cond_dropout,
    )


def _batch_arrays(batch: Sequence[tuple[ConditionSet, np.ndarray]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    d = batch[0][1].size
    targets = np.stack([target for _, target in batch])
    blocks, masks = condition_features([cond for cond, _ in batch], d)
    return targets, blocks, masks


def _apply_dropout(blocks: np.ndarray, masks: np.ndarray, drop: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    blocks = blocks.copy()
    masks = masks.copy()
    blocks[drop] = 0.0
    masks[drop] = 0.0
    return blocks, masks


def _regression_loss(
    net: DenseNet,
    inputs: np.ndarray,
    targets: np.ndarray,
    want_grads: bool,
    predictor: Callable[[np.ndarray], np.ndarray] | None,
    dtype: type,
) -> tuple[float, Gradients | None]:
    if predictor is not None:
        pred = np.asarray(predictor(inputs))
        tape = None
    else:
        pred, tape = forward(net, inputs, dtype=dtype)
    diff = pred.astype(np.float64) - targets
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    if not np.isfinite(loss):
        raise NonFiniteLoss("loss evaluated to a non-finite value")
    if not want_grads:
        return loss, None
    if predictor is not None:
        raise ValueError("gradients require the network path, not a predictor override")
    dy = (2.0 / inputs.shape[0]) * diff
    grads, _ = backward(net, tape, dy.astype(dtype))
    return loss, grads


def loss_rectified_flow(
    net: DenseNet,
    batch: Sequence[tuple[ConditionSet, np.ndarray]],
    rng: np.random.Generator | None = None,
    cond_dropout: float = 0.0,
    draws: FlowDraws | None = None,
    want_grads: bool = True,
    predictor: Callable[[np.ndarray], np.ndarray] | None = None,
    dtype: type = np.float32,
) -> tuple[float, Gradients | None]:
    """Mean squared error against the straight-path velocity target e - x0.

    Draws (t, x0, dropout coins) come from ``rng`` unless an explicit
    ``draws`` bundle pins them, which is how tests and gradient checks keep
    the loss deterministic. ``predictor`` replaces the network for oracle
    evaluations and disables gradients.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    targets, blocks, masks = _batch_arrays(batch)
    d = targets.shape[1]
    if draws is None:
        if rng is None:
            raise ValueError("either rng or draws is required")
        draws = make_flow_draws(rng, len(batch), d, cond_dropout)
    blocks, masks = _apply_dropout(blocks, masks, draws.drop)
    x_t = (1.0 - draws.t)[:, None] * draws.x0 + draws.t[:, None] * targets
    v_star = targets - draws.x0
    inputs = build_inputs(x_t, FLOW_TIME_SCALE * draws.t, blocks, masks)
    return _regression_loss(net, inputs, v_star, want_grads, predictor, dtype)


def loss_diffusion_prior(
    net: DenseNet,
    batch: Sequence[tuple[ConditionSet, np.ndarray]],
    sched: NoiseSchedule,
    rng: np.random.Generator | None = None,
    cond_dropout: float = 0.0,
    draws: DiffusionDraws | None = None,
    want_grads: bool = True,
    predictor: Callable[[np.ndarray], np.ndarray] | None = None,
    dtype: type = np.float32,
) -> tuple[float, Gradients | None]:
    """Mean squared error of the clean-composite prediction from e_t."""
    if not batch:
        raise ValueError("batch must be non-empty")
    targets, blocks, masks = _batch_arrays(batch)
    d = targets.shape[1]
    if draws is None:
        if rng is None:
            raise ValueError("either rng or draws is required")
        draws = make_diffusion_draws(rng, len(batch), d, sched, cond_dropout)
    blocks, masks = _apply_dropout(blocks, masks, draws.drop)
    e_t = q_sample(targets, draws.t, draws.eps, sched)
    inputs = build_inputs(e_t, draws.t.astype(np.float64), blocks, masks)
    return _regression_loss(net, inputs, targets, want_grads, predictor, dtype)


@dataclasses.dataclass
class TrainConfig:
    objective: str = "rectified_flow"
    lr: float = 1e-3
    batch_size: int = 64
    steps: int = 20000
    cond_dropout: float = 0.1
    cfg_scale: float = 1.0
    seed: int = 0
    cosine_lr_decay: bool = True
    hidden_dims: list[int] = dataclasses.field(default_factory=lambda: list(DEFAULT_HIDDEN_DIMS))

    def __post_init__(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ValidationError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if not (0.0 <= self.cond_dropout < 1.0):
            raise ValidationError("cond_dropout must be in [0, 1)")
        if self.steps < 1:
            raise ValidationError("steps must be >= 1")


@dataclasses.dataclass
class TrainResult:
    net: DenseNet
    adam: AdamState
    losses: list[float]  # one entry per optimizer step, pre-update


def train(
    config: TrainConfig,
    dataset: Sequence[tuple[ConditionSet, np.ndarray]],
    sched: NoiseSchedule | None = None,
) -> TrainResult:
    """Seeded single-threaded training; identical config gives identical curves.

    The learning rate follows a half-cosine from config.lr to zero unless
    cosine_lr_decay is off. A non-finite loss aborts with the step index.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    if config.objective == "diffusion_prior" and sched is None:
        sched = NoiseSchedule()
    d = dataset[0][1].size
    net = DenseNet.init([input_dim(d)] + list(config.hidden_dims) + [d], seed=config.seed)
    adam = AdamState.init(net, lr=config.lr)
    rng = np.random.default_rng(combine_seed(config.seed, 0xA11))
    targets = np.stack([t for _, t in dataset])
    blocks, masks = condition_features([c for c, _ in dataset], d)
    losses: list[float] = []
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(dataset), size=config.batch_size)
        batch_targets = targets[idx]
        if config.objective == "rectified_flow":
            draws = make_flow_draws(rng, config.batch_size, d, config.cond_dropout)
            b, m = _apply_dropout(blocks[idx], masks[idx], draws.drop)
            x_t = (1.0 - draws.t)[:, None] * draws.x0 + draws.t[:, None] * batch_targets
            reg_targets = batch_targets - draws.x0
            inputs = build_inputs(x_t, FLOW_TIME_SCALE * draws.t, b, m)
        else:
            draws = make_diffusion_draws(rng, config.batch_size, d, sched, config.cond_dropout)
            b, m = _apply_dropout(blocks[idx], masks[idx], draws.drop)
            e_t = q_sample(batch_targets, draws.t, draws.eps, sched)
            reg_targets = batch_targets
            inputs = build_inputs(e_t, draws.t.astype(np.float64), b, m)
        try:
            loss, grads = _regression_loss(net, inputs, reg_targets, True, None, np.float32)
        except NonFiniteLoss as exc:
            raise NonFiniteLoss(f"{exc} at training step {step}") from exc
        losses.append(loss)
        lr = config.lr
        if config.cosine_lr_decay:
            lr = config.lr * 0.5 * (1.0 + np.cos(np.pi * step / config.steps))
        adam_step(net, grads, adam, lr=lr)
    return TrainResult(net=net, adam=adam, losses=losses)


def write_loss_csv(losses: Sequence[float], path) -> None:
    """Rows for step 1 and every 100th step, header 'step,loss'."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for step, loss in enumerate(losses, start=1):
            if step == 1 or step % 100 == 0:
                fh.write(f"{step},{loss:.10g}\n")


def _predict(net, inputs: np.ndarray, x: np.ndarray, tau: np.ndarray, blocks: np.ndarray, masks: np.ndarray) -> np.ndarray:
    if isinstance(net, DenseNet):
        out, _ = forward(net, inputs)
        return out.astype(np.float64)
    return np.asarray(net(x, tau, blocks, masks), dtype=np.float64)


def _guided(net, x: np.ndarray, tau: np.ndarray, blocks: np.ndarray, masks: np.ndarray, cfg_scale: float) -> np.ndarray:
    """Conditional prediction, CFG-extrapolated when cfg_scale != 1.

    cfg_scale == 1 never builds the unconditional branch, so that setting is
    bitwise identical to a plain conditional call.
    """
    inputs = build_inputs(x, tau, blocks, masks)
    cond_out = _predict(net, inputs, x, tau, blocks, masks)
    if cfg_scale == 1.0:
        return cond_out
    zero_blocks = np.zeros_like(blocks)
    zero_masks = np.zeros_like(masks)
    uncond_inputs = build_inputs(x, tau, zero_blocks, zero_masks)
    uncond_out = _predict(net, uncond_inputs, x, tau, zero_blocks, zero_masks)
    return uncond_out + cfg_scale * (cond_out - uncond_out)


def sample_flow_batch(
    net,
    conds: Sequence[ConditionSet],
    d: int,
    n_steps: int = 50,
    cfg_scale: float = 1.0,
    seed: int = 0,
) -> np.ndarray:
    """Euler integration of the learned velocity field from seeded noise.

    Per-sample noise comes from a stream keyed by the sample index, so any
    sub-batch reproduces the full batch's rows. Outputs are unit-norm.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    blocks, masks = condition_features(conds, d)
    x = np.stack([np.random.default_rng(combine_seed(seed, i)).standard_normal(d) for i in range(len(conds))])
    h = 1.0 / n_steps
    for s in range(n_steps):
        t = s * h
        tau = np.full(len(conds), FLOW_TIME_SCALE * t)
        v = _guided(net, x, tau, blocks, masks, cfg_scale)
        x = x + h * v
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def sample_flow(
    net,
    cond: ConditionSet,
    d: int,
    n_steps: int = 50,
    cfg_scale: float = 1.0,
    seed: int = 0,
) -> np.ndarray:
    return sample_flow_batch(net, [cond], d, n_steps=n_steps, cfg_scale=cfg_scale, seed=seed)[0]


def sample_diffusion_batch(
    net,
    conds: Sequence[ConditionSet],
    d: int,
    sched: NoiseSchedule | None = None,
    n_steps: int = 50,
    cfg_scale: float = 1.0,
    seed: int = 0,
) -> np.ndarray:
    """Deterministic reverse loop (eta = 0) over a strided timestep subset.

    The network predicts the clean composite; each step converts that to the
    implied noise and re-noises to the previous timestep. The final step
    lands on alpha_bar(0) = 1, so a perfect predictor returns the target
    exactly. Outputs are unit-norm.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    sched = sched or NoiseSchedule()
    timesteps = np.unique(np.linspace(1, sched.T, min(n_steps, sched.T)).round().astype(int))[::-1]
    blocks, masks = condition_features(conds, d)
    x = np.stack([np.random.default_rng(combine_seed(seed, i)).standard_normal(d) for i in range(len(conds))])
    for j, t in enumerate(timesteps):
        tau = np.full(len(conds), float(t))
        e_hat = _guided(net, x, tau, blocks, masks, cfg_scale)
        ab_t = sched.alpha_bar(int(t))
        eps_hat = (x - np.sqrt(ab_t) * e_hat) / np.sqrt(1.0 - ab_t)
        t_prev = int(timesteps[j + 1]) if j + 1 < len(timesteps) else 0
        ab_prev = sched.alpha_bar(t_prev)
        x = np.sqrt(ab_prev) * e_hat + np.sqrt(1.0 - ab_prev) * eps_hat
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def sample_diffusion(
    net,
    cond: ConditionSet,
    d: int,
    sched: NoiseSchedule | None = None,
    n_steps: int = 50,
    cfg_scale: float = 1.0,
    seed: int = 0,
) -> np.ndarray:
    return sample_diffusion_batch(net, [cond], d, sched=sched, n_steps=n_steps, cfg_scale=cfg_scale, seed=seed)[0]

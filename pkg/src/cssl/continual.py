"""Incremental scenarios, vector-data augmentation, and the training loop.

A task sequence freezes the previous model at every boundary and optimizes
the configured objective on the new task only. The first task always runs in
the fine-tuning regime because no previous model exists yet.

Randomness: every consumer derives its own stream from the root seed
(``Rng(seed).derive(tag)``). The per-task augmentation/shuffle stream is
re-seeded at every epoch, so each epoch replays the same batch order and the
same two-view draws; with a zero learning rate the per-epoch loss trace is
therefore exactly constant.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .embedding_queue import DEFAULT_CAPACITY, EmbeddingQueue
from .errors import (
    DivergenceDetected,
    IndivisibleClasses,
    ShapeMismatch,
    TooFewSamples,
)
from .losses import (
    CONTRASTIVE_METHODS,
    ContrastiveViews,
    LossResult,
    Method,
    PnrConfig,
    Regime,
    total_loss,
)
from .model import (
    EncoderStack,
    FrozenStack,
    ForwardResult,
    OptimizerState,
    StackGrads,
    TargetNetwork,
    backward,
    ema_update,
    forward,
    init_stack,
    mlp_forward,
    sgd_step,
    snapshot_frozen,
    target_forward,
)
from .numerics import Rng, as_matrix, row_l2_normalize, row_l2_normalize_backward

logger = logging.getLogger(__name__)


@dataclass
class LabeledDataset:
    """Samples (M x input dim) with labels used only for evaluation."""

    x: np.ndarray
    y: np.ndarray
    domain_id: int | None = None
    source_indices: np.ndarray | None = None

    def __post_init__(self):
        self.x = as_matrix(self.x, "dataset x")
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.y.ndim != 1 or self.y.shape[0] != self.x.shape[0]:
            raise ShapeMismatch(
                f"labels {self.y.shape} vs samples {self.x.shape[0]}")
        if self.y.size and self.y.min() < 0:
            raise ValueError("labels must be non-negative")

    @property
    def num_samples(self) -> int:
        return self.x.shape[0]

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]

    def label_set(self) -> set[int]:
        return set(int(c) for c in np.unique(self.y))


class Scenario:
    CLASS_IL = "class_il"
    DATA_IL = "data_il"
    DOMAIN_IL = "domain_il"
    ALL = (CLASS_IL, DATA_IL, DOMAIN_IL)


@dataclass
class TaskStream:
    scenario: str
    tasks: list[LabeledDataset]

    def __post_init__(self):
        if self.scenario not in Scenario.ALL:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if not self.tasks:
            raise ValueError("empty task stream")
        if self.scenario == Scenario.CLASS_IL:
            seen: set[int] = set()
            for k, t in enumerate(self.tasks):
                labels = t.label_set()
                if labels & seen:
                    raise ValueError(f"task {k} reuses classes {labels & seen}")
                seen |= labels
        elif self.scenario == Scenario.DATA_IL:
            full = self.tasks[0].label_set()
            for k, t in enumerate(self.tasks[1:], 1):
                if t.label_set() != full:
                    logger.warning("data_il task %d label set differs from task 0", k)
        else:
            base = self.tasks[0].label_set()
            for k, t in enumerate(self.tasks):
                if t.label_set() != base:
                    raise ValueError(f"domain_il task {k} changes the label set")

    @property
    def T(self) -> int:
        return len(self.tasks)


@dataclass
class AugmentConfig:
    """Vector-data stand-in for image augmentation: per-sample random
    scaling, additive Gaussian noise, then random coordinate zeroing."""

    noise_std: float = 0.5
    dropout_p: float = 0.3
    scale_range: tuple[float, float] = (0.6, 1.4)

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0.0 < lo <= hi):
            raise ValueError("scale_range must satisfy 0 < lo <= hi")
        if not (0.0 <= self.dropout_p < 1.0) and self.dropout_p != 1.0:
            raise ValueError("dropout_p must be in [0, 1]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


@dataclass
class TrainConfig:
    """Per-task optimization settings plus the model geometry."""

    epochs_per_task: int = 100
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-3
    ema_momentum: float = 0.99
    seed: int = 1
    loss: PnrConfig = field(default_factory=PnrConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    encoder_dims: list[int] = field(default_factory=lambda: [32, 32, 8])
    projector_dims: list[int] = field(default_factory=lambda: [8, 8])
    predictor_dims: list[int] = field(default_factory=lambda: [8, 8])
    queue_capacity: int = DEFAULT_CAPACITY

    def __post_init__(self):
        for name in ("epochs_per_task", "batch_size", "queue_capacity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("optimizer settings must be non-negative")
        if not (0.0 <= self.ema_momentum < 1.0):
            raise ValueError("ema_momentum must be in [0, 1)")


@dataclass
class TrainLog:
    epoch_losses: list[float]
    steps: int


def build_class_il(ds: LabeledDataset, T: int) -> TaskStream:
    """Partition classes into T contiguous groups by class index."""
    classes = np.unique(ds.y)
    C = classes.size
    if T < 1 or C % T != 0:
        raise IndivisibleClasses(f"{C} classes not divisible into {T} tasks")
    per = C // T
    tasks = []
    for k in range(T):
        group = set(int(c) for c in classes[k * per:(k + 1) * per])
        mask = np.isin(ds.y, sorted(group))
        idx = np.flatnonzero(mask)
        tasks.append(LabeledDataset(ds.x[idx], ds.y[idx],
                                    source_indices=idx))
    return TaskStream(Scenario.CLASS_IL, tasks)


def build_data_il(ds: LabeledDataset, T: int, seed: int) -> TaskStream:
    """Seeded shuffle of the whole dataset, split into T near-equal chunks.

    A soft check logs a warning when a task's empirical label distribution
    strays more than three binomial sigmas from the global one.
    """
    M = ds.num_samples
    if M < T:
        raise TooFewSamples(f"{M} samples cannot form {T} tasks")
    perm = Rng(seed).derive("data-il-shuffle").permutation(M)
    sizes = [M // T + (1 if k < M % T else 0) for k in range(T)]
    tasks, pos = [], 0
    global_freq = {int(c): float(np.mean(ds.y == c)) for c in np.unique(ds.y)}
    for k, size in enumerate(sizes):
        idx = perm[pos:pos + size]
        pos += size
        tasks.append(LabeledDataset(ds.x[idx], ds.y[idx], source_indices=idx))
        for c, p in global_freq.items():
            phat = float(np.mean(tasks[-1].y == c))
            sigma = np.sqrt(max(p * (1 - p), 1e-12) / size)
            if abs(phat - p) > 3.0 * sigma:
                logger.warning(
                    "data_il task %d class %d freq %.3f vs global %.3f "
                    "(>3 sigma)", k, c, phat, p)
    return TaskStream(Scenario.DATA_IL, tasks)


def random_orthogonal(rng: Rng, d: int) -> np.ndarray:
    """Seeded orthogonal matrix via QR with a deterministic sign fix."""
    g = rng.gaussian_matrix(d, d)
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs[None, :]


def build_domain_il(ds: LabeledDataset, T: int, seed: int,
                    bias_scale: float = 1.0) -> TaskStream:
    """Task 1 is the base dataset unchanged; task k >= 2 applies a fixed
    seeded orthogonal rotation plus bias shift to a fresh bootstrap resample
    of the base data. Labels travel with their samples."""
    if ds.input_dim < 2:
        raise ValueError("domain_il needs input dim >= 2")
    tasks = [LabeledDataset(ds.x.copy(), ds.y.copy(), domain_id=0)]
    M = ds.num_samples
    root = Rng(seed)
    for k in range(1, T):
        rng = root.derive(f"domain-{k}")
        rot = random_orthogonal(rng, ds.input_dim)
        bias = rng.gaussian(ds.input_dim, 0.0, bias_scale)
        draw = rng.uniform(M)
        idx = np.minimum((draw * M).astype(np.int64), M - 1)
        x = ds.x[idx] @ rot.T + bias
        tasks.append(LabeledDataset(x, ds.y[idx], domain_id=k))
    return TaskStream(Scenario.DOMAIN_IL, tasks)


def domain_transforms(ds: LabeledDataset, T: int, seed: int,
                      bias_scale: float = 1.0
                      ) -> list[tuple[np.ndarray, np.ndarray]]:
    """The (rotation, bias) pair of every task; task 1 is (identity, zero)."""
    out = [(np.eye(ds.input_dim), np.zeros(ds.input_dim))]
    root = Rng(seed)
    for k in range(1, T):
        rng = root.derive(f"domain-{k}")
        out.append((random_orthogonal(rng, ds.input_dim),
                    rng.gaussian(ds.input_dim, 0.0, bias_scale)))
    return out


def _one_view(x: np.ndarray, cfg: AugmentConfig, rng: Rng) -> np.ndarray:
    n, d = x.shape
    lo, hi = cfg.scale_range
    if (lo, hi) != (1.0, 1.0):
        scale = rng.uniform(n) * (hi - lo) + lo
        out = x * scale[:, None]
    else:
        out = x.copy()
    if cfg.noise_std > 0:
        out += rng.gaussian(n * d, 0.0, cfg.noise_std).reshape(n, d)
    if cfg.dropout_p > 0:
        keep = rng.uniform(n * d).reshape(n, d) >= cfg.dropout_p
        out *= keep
    return out


def two_views(x: np.ndarray, cfg: AugmentConfig, rng: Rng
              ) -> tuple[np.ndarray, np.ndarray]:
    """Two independent augmentations of the same batch."""
    return _one_view(x, cfg, rng), _one_view(x, cfg, rng)


@dataclass
class ViewEncodings:
    """Everything the loss needs for one batch, plus backward caches."""

    views: ContrastiveViews
    xA: np.ndarray
    xB: np.ndarray
    fwdA: ForwardResult
    fwdB: ForwardResult


def _maybe_normalize(m: np.ndarray, normalized: bool) -> np.ndarray:
    return row_l2_normalize(m) if normalized else m


def encode_views(stack: EncoderStack, xA: np.ndarray, xB: np.ndarray,
                 frozen: FrozenStack | None, cfg: PnrConfig,
                 target: TargetNetwork | None = None,
                 extra_neg_cur: np.ndarray | None = None,
                 extra_neg_prev: np.ndarray | None = None) -> ViewEncodings:
    """Forward both views through the live stack (and the frozen model and
    EMA target where the method needs them) and package the loss inputs.

    Contrastive methods and BYOL put embeddings on the unit sphere; VICReg
    and Barlow consume raw projections.
    """
    normalized = cfg.method in CONTRASTIVE_METHODS or cfg.method == Method.BYOL
    effective = cfg.regime if frozen is not None else Regime.FT
    # The predictor feeds the distillation term (and BYOL's native loss);
    # plain fine-tuning of the other methods never reads it.
    need_pred = cfg.method == Method.BYOL or effective != Regime.FT
    fwdA = forward(stack, xA, want_pred=need_pred)
    fwdB = forward(stack, xB, want_pred=need_pred)
    zA = _maybe_normalize(fwdA.proj, normalized)
    zB = _maybe_normalize(fwdB.proj, normalized)
    gA = _maybe_normalize(fwdA.pred, normalized) if need_pred else None
    gB = _maybe_normalize(fwdB.pred, normalized) if need_pred else None
    if frozen is not None:
        zpA = _maybe_normalize(forward(frozen, xA).proj, normalized)
        zpB = _maybe_normalize(forward(frozen, xB).proj, normalized)
    else:
        # Placeholder block; FT never reads it and sends no gradients there.
        zpA = zA.copy()
        zpB = zB.copy()
    tA = tB = None
    if cfg.method == Method.BYOL:
        if target is None:
            raise ValueError("BYOL training needs a target network")
        tA = row_l2_normalize(target_forward(target, xA))
        tB = row_l2_normalize(target_forward(target, xB))
    views = ContrastiveViews(
        zA_t=zA, zB_t=zB, zA_prev=zpA, zB_prev=zpB, gA_t=gA, gB_t=gB,
        zA_target=tA, zB_target=tB,
        extra_neg_cur=extra_neg_cur, extra_neg_prev=extra_neg_prev)
    return ViewEncodings(views, xA, xB, fwdA, fwdB)


def backprop_views(stack: EncoderStack, enc: ViewEncodings, cfg: PnrConfig,
                   res: LossResult) -> StackGrads:
    """Chain loss gradients through normalization and the stack parameters."""
    normalized = cfg.method in CONTRASTIVE_METHODS or cfg.method == Method.BYOL
    grads = None
    for x, fwd, gz, gg in ((enc.xA, enc.fwdA, res.grad_zA_t, res.grad_gA_t),
                           (enc.xB, enc.fwdB, res.grad_zB_t, res.grad_gB_t)):
        grad_proj = grad_pred = None
        if gz is not None:
            grad_proj = (row_l2_normalize_backward(fwd.proj, gz)
                         if normalized else gz)
        if gg is not None:
            grad_pred = (row_l2_normalize_backward(fwd.pred, gg)
                         if normalized else gg)
        if grad_proj is None and grad_pred is None:
            continue
        part = backward(stack, x, grad_proj, grad_pred, fwd=fwd)
        if grads is None:
            grads = part
        else:
            grads.add_(part)
    if grads is None:
        raise ValueError("loss produced no gradients")
    return grads


def _effective_cfg(cfg: PnrConfig, frozen: FrozenStack | None) -> PnrConfig:
    if frozen is None and cfg.regime != Regime.FT:
        return replace(cfg, regime=Regime.FT)
    return cfg


def train_task(stack: EncoderStack, frozen_prev: FrozenStack | None,
               task: LabeledDataset, cfg: TrainConfig, *,
               task_index: int = 1) -> tuple[EncoderStack, TrainLog]:
    """Train the live stack on one task; the frozen model is never touched.

    Runs ``epochs_per_task`` sweeps of two-view SGD steps; MoCo queues are
    created fresh for the task and BYOL's target starts as a copy of the
    online network. Raises DivergenceDetected on a NaN/Inf loss.
    """
    loss_cfg = _effective_cfg(cfg.loss, frozen_prev)
    method = loss_cfg.method
    opt = OptimizerState.for_stack(stack, cfg.lr, cfg.momentum,
                                   cfg.weight_decay)
    proj_dim = stack.projector.out_dim
    cur_queue = prev_queue = None
    if method == Method.MOCO:
        cur_queue = EmbeddingQueue(cfg.queue_capacity, proj_dim)
        prev_queue = EmbeddingQueue(cfg.queue_capacity, proj_dim)
    target = None
    if method == Method.BYOL:
        target = TargetNetwork.from_online(stack, cfg.ema_momentum)

    base = Rng(cfg.seed).derive(f"task-{task_index}")
    epoch_seed = base.derive("epoch-stream").seed
    M = task.num_samples
    epoch_losses: list[float] = []
    steps = 0
    for _epoch in range(cfg.epochs_per_task):
        rng = Rng(epoch_seed)  # identical stream every epoch (see module doc)
        order = rng.permutation(M)
        batch_losses: list[float] = []
        for lo in range(0, M, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            if idx.size < 2 and method in (Method.VICREG, Method.BARLOW):
                continue
            xb = task.x[idx]
            xA, xB = two_views(xb, cfg.augment, rng)
            enc = encode_views(
                stack, xA, xB, frozen_prev, loss_cfg, target=target,
                extra_neg_cur=(cur_queue.snapshot() if cur_queue else None),
                extra_neg_prev=(prev_queue.snapshot() if prev_queue else None))
            res = total_loss(enc.views, loss_cfg)
            if not np.isfinite(res.value):
                raise DivergenceDetected(
                    f"loss {res.value} at task {task_index}")
            grads = backprop_views(stack, enc, loss_cfg, res)
            sgd_step(stack, grads, opt)
            if method == Method.MOCO:
                cur_queue.enqueue(enc.views.zB_t)
                if frozen_prev is not None:
                    prev_queue.enqueue(enc.views.zB_prev)
            if method == Method.BYOL:
                ema_update(target, stack)
            batch_losses.append(res.value)
            steps += 1
        epoch_losses.append(float(np.mean(batch_losses)))
    return stack, TrainLog(epoch_losses, steps)


@dataclass
class SequenceResult:
    """Checkpoints after every task plus the single-task FT references."""

    checkpoints: list[FrozenStack]
    ft_checkpoints: list[FrozenStack]
    task_logs: list[TrainLog]
    ft_logs: list[TrainLog]


def run_sequence(stream: TaskStream, cfg: TrainConfig,
                 with_ft_refs: bool = True) -> SequenceResult:
    """Train tasks 1..T sequentially, snapshotting at each boundary, then
    train T independent single-task models for the FT_i baselines."""
    root = Rng(cfg.seed)
    stack = init_stack(root.derive("init"), cfg.encoder_dims,
                       cfg.projector_dims, cfg.predictor_dims)
    frozen: FrozenStack | None = None
    checkpoints: list[FrozenStack] = []
    task_logs: list[TrainLog] = []
    for t, task in enumerate(stream.tasks, 1):
        stack, log = train_task(stack, frozen, task, cfg, task_index=t)
        frozen = snapshot_frozen(stack)
        checkpoints.append(frozen)
        task_logs.append(log)
    ft_checkpoints: list[FrozenStack] = []
    ft_logs: list[TrainLog] = []
    if with_ft_refs:
        ft_cfg = replace(cfg, loss=replace(cfg.loss, regime=Regime.FT))
        for t, task in enumerate(stream.tasks, 1):
            ft_stack = init_stack(root.derive(f"ft-init-{t}"),
                                  cfg.encoder_dims, cfg.projector_dims,
                                  cfg.predictor_dims)
            ft_stack, log = train_task(ft_stack, None, task, ft_cfg,
                                       task_index=t)
            ft_checkpoints.append(snapshot_frozen(ft_stack))
            ft_logs.append(log)
    return SequenceResult(checkpoints, ft_checkpoints, task_logs, ft_logs)


def encoder_features(stack: EncoderStack, x: np.ndarray) -> np.ndarray:
    """Frozen-encoder features for probing."""
    return mlp_forward(stack.encoder, x)

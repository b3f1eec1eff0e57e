"""The trainable stack: MLP encoder, projector and predictor.

Forward passes, exact reverse-mode parameter gradients, SGD with momentum and
weight decay, EMA target updates, and frozen snapshots. ReLU on every layer
except the last of each MLP; the subgradient at exactly zero is zero.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import BadDims, ShapeMismatch
from .numerics import Rng, check_finite


@dataclass
class MlpParams:
    """Weights (out x in) and biases (out) for a plain ReLU MLP."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise BadDims("weights/biases length mismatch or empty MLP")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise BadDims(f"layer {k}: weight {w.shape} vs bias {b.shape}")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise BadDims(
                    f"layer {k}: in dim {w.shape[1]} != previous out "
                    f"{self.weights[k - 1].shape[0]}")
            check_finite(w, f"layer {k} weight")
            check_finite(b, f"layer {k} bias")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def clone(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])


@dataclass
class EncoderStack:
    """Online network: encoder h, projector m, predictor g.

    The predictor maps projection space onto itself (square input/output).
    """

    encoder: MlpParams
    projector: MlpParams
    predictor: MlpParams

    def __post_init__(self):
        if self.projector.in_dim != self.encoder.out_dim:
            raise BadDims("projector input does not chain with encoder output")
        d = self.projector.out_dim
        if self.predictor.in_dim != d or self.predictor.out_dim != d:
            raise BadDims(
                f"predictor must map projection space ({d}) to itself, got "
                f"{self.predictor.in_dim} -> {self.predictor.out_dim}")

    def clone(self) -> "EncoderStack":
        return EncoderStack(self.encoder.clone(), self.projector.clone(),
                            self.predictor.clone())


# A frozen snapshot is structurally an EncoderStack; the alias documents intent.
FrozenStack = EncoderStack


@dataclass
class MlpGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def add_(self, other: "MlpGrads") -> None:
        for w, ow in zip(self.weights, other.weights):
            w += ow
        for b, ob in zip(self.biases, other.biases):
            b += ob


@dataclass
class StackGrads:
    encoder: MlpGrads
    projector: MlpGrads
    predictor: MlpGrads

    def add_(self, other: "StackGrads") -> None:
        self.encoder.add_(other.encoder)
        self.projector.add_(other.projector)
        self.predictor.add_(other.predictor)


def zero_grads_like(stack: EncoderStack) -> StackGrads:
    def z(p: MlpParams) -> MlpGrads:
        return MlpGrads([np.zeros_like(w) for w in p.weights],
                        [np.zeros_like(b) for b in p.biases])
    return StackGrads(z(stack.encoder), z(stack.projector), z(stack.predictor))


@dataclass
class OptimizerState:
    """SGD with momentum and weight decay; buffers mirror parameter shapes."""

    lr: float
    momentum: float
    weight_decay: float
    buffers: StackGrads

    @classmethod
    def for_stack(cls, stack: EncoderStack, lr: float, momentum: float = 0.9,
                  weight_decay: float = 0.0) -> "OptimizerState":
        if lr < 0:
            raise ValueError("lr must be non-negative")
        return cls(lr, momentum, weight_decay, zero_grads_like(stack))


@dataclass
class TargetNetwork:
    """EMA shadow of encoder + projector; the predictor stays online-only."""

    encoder: MlpParams
    projector: MlpParams
    ema_momentum: float

    @classmethod
    def from_online(cls, stack: EncoderStack, ema_momentum: float) -> "TargetNetwork":
        if not 0.0 <= ema_momentum < 1.0:
            raise ValueError("ema_momentum must be in [0, 1)")
        return cls(stack.encoder.clone(), stack.projector.clone(), ema_momentum)


def init_mlp(rng: Rng, dims: list[int]) -> MlpParams:
    """He-initialized weights (Gaussian, std sqrt(2/fan_in)), zero biases."""
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise BadDims(f"bad layer size list {dims}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        std = float(np.sqrt(2.0 / fan_in))
        weights.append(rng.gaussian_matrix(fan_out, fan_in, 0.0, std))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def init_stack(rng: Rng, encoder_dims: list[int], projector_dims: list[int],
               predictor_dims: list[int]) -> EncoderStack:
    """Deterministic per seed: encoder layers are drawn first, then projector,
    then predictor, each row-major."""
    return EncoderStack(
        init_mlp(rng, encoder_dims),
        init_mlp(rng, projector_dims),
        init_mlp(rng, predictor_dims),
    )


def mlp_forward(p: MlpParams, x: np.ndarray, cache: list | None = None) -> np.ndarray:
    """ReLU on all layers except the last. Optionally records (input, pre)
    pairs per layer into ``cache`` for the backward pass."""
    if x.ndim != 2 or x.shape[1] != p.in_dim:
        raise ShapeMismatch(f"mlp forward: input {x.shape} vs in_dim {p.in_dim}")
    out = x
    last = len(p.weights) - 1
    for k, (w, b) in enumerate(zip(p.weights, p.biases)):
        pre = out @ w.T + b
        if cache is not None:
            cache.append((out, pre))
        out = pre if k == last else np.maximum(pre, 0.0)
    return out


def mlp_backward(p: MlpParams, cache: list, grad_out: np.ndarray
                 ) -> tuple[MlpGrads, np.ndarray]:
    """Exact reverse-mode gradients given d(loss)/d(output) and the forward cache."""
    gw: list[np.ndarray] = [None] * len(p.weights)  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * len(p.biases)   # type: ignore[list-item]
    last = len(p.weights) - 1
    g = grad_out
    for k in range(last, -1, -1):
        inp, pre = cache[k]
        g_pre = g if k == last else g * (pre > 0.0)
        gw[k] = g_pre.T @ inp
        gb[k] = g_pre.sum(axis=0)
        g = g_pre @ p.weights[k]
    return MlpGrads(gw, gb), g


@dataclass
class ForwardResult:
    features: np.ndarray
    proj: np.ndarray
    pred: np.ndarray | None
    _caches: dict = field(default_factory=dict, repr=False)


def forward(stack: EncoderStack, x: np.ndarray, want_pred: bool = False
            ) -> ForwardResult:
    """features = h(x); proj = m(features); pred = g(proj) if requested.

    Outputs are unnormalized; callers decide whether to put them on the
    sphere. The result carries the layer caches needed by :func:`backward`.
    """
    enc_cache: list = []
    proj_cache: list = []
    feats = mlp_forward(stack.encoder, x, enc_cache)
    proj = mlp_forward(stack.projector, feats, proj_cache)
    caches = {"encoder": enc_cache, "projector": proj_cache}
    pred = None
    if want_pred:
        pred_cache: list = []
        pred = mlp_forward(stack.predictor, proj, pred_cache)
        caches["predictor"] = pred_cache
    return ForwardResult(feats, proj, pred, caches)


def backward(stack: EncoderStack, x: np.ndarray,
             grad_proj: np.ndarray | None,
             grad_pred: np.ndarray | None = None,
             fwd: ForwardResult | None = None) -> StackGrads:
    """Parameter gradients given embedding-space gradients.

    ``grad_proj`` is d(loss)/d(projection), ``grad_pred`` d(loss)/d(predictor
    output); either may be None. Recomputes the forward pass when no cached
    ForwardResult is supplied.
    """
    if fwd is None:
        fwd = forward(stack, x, want_pred=grad_pred is not None)
    if grad_pred is not None and "predictor" not in fwd._caches:
        raise ShapeMismatch("grad_pred given but forward ran without predictor")

    total_grad_proj = np.zeros_like(fwd.proj)
    if grad_pred is not None:
        if grad_pred.shape != fwd.pred.shape:  # type: ignore[union-attr]
            raise ShapeMismatch("grad_pred shape mismatch")
        pred_grads, g_into_proj = mlp_backward(
            stack.predictor, fwd._caches["predictor"], grad_pred)
        total_grad_proj += g_into_proj
    else:
        pred_grads = MlpGrads(
            [np.zeros_like(w) for w in stack.predictor.weights],
            [np.zeros_like(b) for b in stack.predictor.biases])
    if grad_proj is not None:
        if grad_proj.shape != fwd.proj.shape:
            raise ShapeMismatch("grad_proj shape mismatch")
        total_grad_proj += grad_proj

    proj_grads, g_into_feat = mlp_backward(
        stack.projector, fwd._caches["projector"], total_grad_proj)
    enc_grads, _ = mlp_backward(stack.encoder, fwd._caches["encoder"], g_into_feat)
    return StackGrads(enc_grads, proj_grads, pred_grads)


def _sgd_mlp(p: MlpParams, g: MlpGrads, buf: MlpGrads,
             lr: float, momentum: float, weight_decay: float) -> None:
    for w, gw, vw in zip(p.weights, g.weights, buf.weights):
        vw *= momentum
        vw += gw + weight_decay * w
        w -= lr * vw
    for b, gb, vb in zip(p.biases, g.biases, buf.biases):
        vb *= momentum
        vb += gb + weight_decay * b
        b -= lr * vb


def sgd_step(stack: EncoderStack, grads: StackGrads, opt: OptimizerState) -> EncoderStack:
    """v <- momentum*v + grad + wd*param; param <- param - lr*v. In place."""
    _sgd_mlp(stack.encoder, grads.encoder, opt.buffers.encoder,
             opt.lr, opt.momentum, opt.weight_decay)
    _sgd_mlp(stack.projector, grads.projector, opt.buffers.projector,
             opt.lr, opt.momentum, opt.weight_decay)
    _sgd_mlp(stack.predictor, grads.predictor, opt.buffers.predictor,
             opt.lr, opt.momentum, opt.weight_decay)
    return stack


def ema_update(target: TargetNetwork, online: EncoderStack) -> TargetNetwork:
    """target <- m*target + (1-m)*online for encoder and projector params."""
    m = target.ema_momentum
    for tp, op in ((target.encoder, online.encoder),
                   (target.projector, online.projector)):
        if len(tp.weights) != len(op.weights):
            raise ShapeMismatch("target/online layer counts differ")
        for tw, ow in zip(tp.weights, op.weights):
            if tw.shape != ow.shape:
                raise ShapeMismatch("target/online weight shapes differ")
            tw *= m
            tw += (1.0 - m) * ow
        for tb, ob in zip(tp.biases, op.biases):
            tb *= m
            tb += (1.0 - m) * ob
    return target


def target_forward(target: TargetNetwork, x: np.ndarray) -> np.ndarray:
    """Projection through the EMA shadow network (no gradients ever flow here)."""
    return mlp_forward(target.projector, mlp_forward(target.encoder, x))


def snapshot_frozen(stack: EncoderStack) -> FrozenStack:
    """Deep copy; later training of the live stack never touches the snapshot."""
    return copy.deepcopy(stack)


def stack_bytes(stack: EncoderStack) -> bytes:
    """Canonical byte serialization (shape table + raw little-endian floats).

    Used for isolation checks and determinism hashing; the on-disk checkpoint
    format in :mod:`cssl.datastore` embeds the same payload.
    """
    chunks: list[bytes] = []
    for mlp in (stack.encoder, stack.projector, stack.predictor):
        chunks.append(np.uint32(len(mlp.weights)).tobytes())
        for w, b in zip(mlp.weights, mlp.biases):
            chunks.append(np.uint32(w.shape[0]).tobytes())
            chunks.append(np.uint32(w.shape[1]).tobytes())
            chunks.append(w.astype("<f8").tobytes())
            chunks.append(b.astype("<f8").tobytes())
    return b"".join(chunks)


def get_flat_params(stack: EncoderStack) -> np.ndarray:
    """All parameters as one vector (encoder, projector, predictor order)."""
    parts = []
    for mlp in (stack.encoder, stack.projector, stack.predictor):
        for w, b in zip(mlp.weights, mlp.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
    return np.concatenate(parts)


def set_flat_params(stack: EncoderStack, vec: np.ndarray) -> None:
    """Inverse of :func:`get_flat_params`; writes into the existing arrays."""
    pos = 0
    for mlp in (stack.encoder, stack.projector, stack.predictor):
        for w, b in zip(mlp.weights, mlp.biases):
            n = w.size
            w[...] = vec[pos:pos + n].reshape(w.shape)
            pos += n
            n = b.size
            b[...] = vec[pos:pos + n]
            pos += n
    if pos != vec.size:
        raise ShapeMismatch(f"flat vector length {vec.size}, stack needs {pos}")


def flat_grads(grads: StackGrads) -> np.ndarray:
    parts = []
    for mlp in (grads.encoder, grads.projector, grads.predictor):
        for w, b in zip(mlp.weights, mlp.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
    return np.concatenate(parts)

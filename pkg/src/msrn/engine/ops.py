"""Layer primitives: forward computation plus tape-recorded backward closures.

Activation layout is ``[n, h, w, b, c]`` (sample, row, col, band, channel)
and a convolution kernel bank is ``[kh, kw, kb, c_in, c_out]``.  Convolutions
are evaluated as one matrix product per kernel offset, which keeps the hot
path inside BLAS while staying bit-reproducible run to run.

Every op takes an optional ``tape``; passing None runs pure inference.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigError, DataError, ShapeError
from .tensor import Tape, Tensor, check_finite

SAME = "SAME"
VALID = "VALID"

_AXIS_NAMES = ("height", "width", "band")


@dataclass(frozen=True)
class Conv3dSpec:
    """Static description of a 3-D convolution."""

    kernel: Tuple[int, int, int]
    stride: Tuple[int, int, int]
    padding: str
    in_channels: int
    out_channels: int

    def __post_init__(self):
        if any(k < 1 for k in self.kernel):
            raise ConfigError(f"kernel extents must be >= 1, got {self.kernel}")
        if any(s < 1 for s in self.stride):
            raise ConfigError(f"strides must be >= 1, got {self.stride}")
        if self.padding not in (SAME, VALID):
            raise ConfigError(f"padding must be SAME or VALID, got {self.padding!r}")
        if self.padding == SAME and self.stride != (1, 1, 1):
            raise ConfigError("SAME padding is only defined for stride (1, 1, 1)")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be >= 1")

    @property
    def weight_shape(self) -> Tuple[int, ...]:
        return self.kernel + (self.in_channels, self.out_channels)

    def output_extents(self, extents: Sequence[int]) -> Tuple[int, int, int]:
        """Spatial/band output extents for the given input extents."""
        out = []
        for axis, (n_in, k, s) in enumerate(zip(extents, self.kernel, self.stride)):
            if self.padding == SAME:
                out.append(n_in)
            else:
                if k > n_in:
                    raise ShapeError(
                        f"kernel extent {k} exceeds input extent {n_in} "
                        f"on {_AXIS_NAMES[axis]} axis (VALID padding)")
                out.append((n_in - k) // s + 1)
        return tuple(out)


def _pad_amounts(spec: Conv3dSpec) -> list[tuple[int, int]]:
    if spec.padding == VALID:
        return [(0, 0)] * 3
    # zero padding split floor/ceil on the low/high side
    return [((k - 1) // 2, k // 2) for k in spec.kernel]


def conv3d(x: Tensor, spec: Conv3dSpec, weights: Tensor, bias: Tensor,
           tape: Optional[Tape] = None) -> Tensor:
    """3-D convolution over the (h, w, b) axes.

    VALID output extent per axis is floor((in - k) / s) + 1; SAME keeps the
    input extents (stride 1 only) via zero padding.
    """
    if x.data.ndim != 5:
        raise ShapeError(f"conv3d input must be 5-d [n,h,w,b,c], got {x.shape}")
    if x.shape[4] != spec.in_channels:
        raise ShapeError(
            f"conv3d input has {x.shape[4]} channels, spec expects {spec.in_channels}")
    if weights.shape != spec.weight_shape:
        raise ShapeError(
            f"conv3d weights shape {weights.shape} does not match spec {spec.weight_shape}")
    if bias.shape != (spec.out_channels,):
        raise ShapeError(
            f"conv3d bias shape {bias.shape} must be ({spec.out_channels},)")

    n = x.shape[0]
    oh, ow, ob = spec.output_extents(x.shape[1:4])
    kh, kw, kb = spec.kernel
    sh, sw, sb = spec.stride
    ci, co = spec.in_channels, spec.out_channels

    pads = _pad_amounts(spec)
    if spec.padding == SAME:
        xp = np.pad(x.data, [(0, 0)] + pads + [(0, 0)])
    else:
        xp = x.data

    w = weights.data
    acc = np.zeros((n * oh * ow * ob, co))
    for a in range(kh):
        for b in range(kw):
            for c in range(kb):
                sl = xp[:, a:a + oh * sh:sh, b:b + ow * sw:sw, c:c + ob * sb:sb, :]
                acc += np.ascontiguousarray(sl).reshape(-1, ci) @ w[a, b, c]
    out = Tensor((acc + bias.data).reshape(n, oh, ow, ob, co), name="conv3d")

    if tape is not None:
        def backward(g: np.ndarray):
            gf = g.reshape(-1, co)
            db = gf.sum(axis=0)
            dw = np.empty_like(w)
            dxp = np.zeros_like(xp)
            for a in range(kh):
                for b in range(kw):
                    for c in range(kb):
                        view = (slice(None), slice(a, a + oh * sh, sh),
                                slice(b, b + ow * sw, sw), slice(c, c + ob * sb, sb),
                                slice(None))
                        sl = np.ascontiguousarray(xp[view]).reshape(-1, ci)
                        dw[a, b, c] = sl.T @ gf
                        dxp[view] += (gf @ w[a, b, c].T).reshape(n, oh, ow, ob, ci)
            if spec.padding == SAME:
                (pl0, ph0), (pl1, ph1), (pl2, ph2) = pads
                dx = dxp[:, pl0:xp.shape[1] - ph0, pl1:xp.shape[2] - ph1,
                         pl2:xp.shape[3] - ph2, :]
                dx = np.ascontiguousarray(dx)
            else:
                dx = dxp
            return dx, dw, db

        tape.record("conv3d", out, (x, weights, bias), backward)
    return out


class BatchNormState:
    """Per-channel affine learnables plus running statistics."""

    def __init__(self, gamma: Tensor, beta: Tensor, running_mean: Tensor,
                 running_var: Tensor, momentum: float = 0.9, epsilon: float = 1e-5):
        c = gamma.size
        for name, t in (("beta", beta), ("running_mean", running_mean),
                        ("running_var", running_var)):
            if t.shape != (c,):
                raise ShapeError(f"batchnorm {name} must have shape ({c},), got {t.shape}")
        if not 0.0 < momentum < 1.0:
            raise ConfigError(f"batchnorm momentum must be in (0, 1), got {momentum}")
        if epsilon <= 0.0:
            raise ConfigError(f"batchnorm epsilon must be positive, got {epsilon}")
        if np.any(running_var.data < 0):
            raise DataError("running_var must be nonnegative")
        self.gamma = gamma
        self.beta = beta
        self.running_mean = running_mean
        self.running_var = running_var
        self.momentum = momentum
        self.epsilon = epsilon

    @classmethod
    def create(cls, channels: int, momentum: float = 0.9, epsilon: float = 1e-5,
               name: str = "bn") -> "BatchNormState":
        return cls(
            gamma=Tensor(np.ones(channels), requires_grad=True, name=f"{name}.gamma"),
            beta=Tensor(np.zeros(channels), requires_grad=True, name=f"{name}.beta"),
            running_mean=Tensor(np.zeros(channels), name=f"{name}.running_mean"),
            running_var=Tensor(np.ones(channels), name=f"{name}.running_var"),
            momentum=momentum, epsilon=epsilon)


def batchnorm(x: Tensor, state: BatchNormState, mode: str,
              tape: Optional[Tape] = None) -> Tensor:
    """Normalize over all non-channel axes (channel axis last).

    TRAIN uses batch statistics and folds them into the running estimates
    via running <- momentum*running + (1-momentum)*batch; EVAL applies the
    running statistics only.
    """
    c = x.shape[-1]
    if state.gamma.size != c:
        raise ShapeError(
            f"batchnorm state has {state.gamma.size} channels, input has {c}")
    axes = tuple(range(x.data.ndim - 1))
    gamma, beta = state.gamma, state.beta

    if mode == "TRAIN":
        count = int(np.prod([x.shape[i] for i in axes])) if axes else 1
        if count < 2:
            raise ShapeError(
                f"TRAIN batchnorm needs >= 2 elements per channel, got {count}")
        mu = x.data.mean(axis=axes)
        centered = x.data - mu
        var = np.mean(centered * centered, axis=axes)
        inv_std = 1.0 / np.sqrt(var + state.epsilon)
        xhat = centered * inv_std
        out = Tensor(gamma.data * xhat + beta.data, name="batchnorm")
        m = state.momentum
        state.running_mean.data[...] = m * state.running_mean.data + (1 - m) * mu
        state.running_var.data[...] = m * state.running_var.data + (1 - m) * var

        if tape is not None:
            def backward(g: np.ndarray):
                dgamma = (g * xhat).sum(axis=axes)
                dbeta = g.sum(axis=axes)
                g_mean = g.mean(axis=axes)
                gx_mean = (g * xhat).mean(axis=axes)
                dx = gamma.data * inv_std * (g - g_mean - xhat * gx_mean)
                return dx, dgamma, dbeta

            tape.record("batchnorm", out, (x, gamma, beta), backward)
        return out

    if mode == "EVAL":
        inv_std = 1.0 / np.sqrt(state.running_var.data + state.epsilon)
        xhat = (x.data - state.running_mean.data) * inv_std
        out = Tensor(gamma.data * xhat + beta.data, name="batchnorm")
        if tape is not None:
            def backward(g: np.ndarray):
                return (g * gamma.data * inv_std,
                        (g * xhat).sum(axis=axes),
                        g.sum(axis=axes))

            tape.record("batchnorm", out, (x, gamma, beta), backward)
        return out

    raise ConfigError(f"batchnorm mode must be TRAIN or EVAL, got {mode!r}")


def relu(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Elementwise max(x, 0); the subgradient at 0 is 0."""
    out = Tensor(np.maximum(x.data, 0.0), name="relu")
    if tape is not None:
        mask = x.data > 0

        def backward(g: np.ndarray):
            return (g * mask,)

        tape.record("relu", out, (x,), backward)
    return out


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], mode: str,
            tape: Optional[Tape] = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-p) so EVAL is the identity."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must satisfy 0 <= p < 1, got {p}")
    if mode == "EVAL" or p == 0.0:
        return x
    if mode != "TRAIN":
        raise ConfigError(f"dropout mode must be TRAIN or EVAL, got {mode!r}")
    if rng is None:
        raise ConfigError("TRAIN dropout with p > 0 requires a seeded generator")
    scaled_mask = (rng.random(x.shape) >= p) / (1.0 - p)
    out = Tensor(x.data * scaled_mask, name="dropout")
    if tape is not None:
        def backward(g: np.ndarray):
            return (g * scaled_mask,)

        tape.record("dropout", out, (x,), backward)
    return out


def global_avg_pool(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Mean over the (h, w, b) volume per sample and channel: [n,h,w,b,c] -> [n,c]."""
    if x.data.ndim != 5:
        raise ShapeError(f"global_avg_pool input must be 5-d, got {x.shape}")
    n, h, w, b, c = x.shape
    volume = h * w * b
    if volume < 1:
        raise ShapeError(f"empty pooling volume in shape {x.shape}")
    out = Tensor(x.data.mean(axis=(1, 2, 3)), name="global_avg_pool")
    if tape is not None:
        def backward(g: np.ndarray):
            dx = np.broadcast_to(g[:, None, None, None, :] / volume, x.shape)
            return (np.ascontiguousarray(dx),)

        tape.record("global_avg_pool", out, (x,), backward)
    return out


def dense(x: Tensor, weights: Tensor, bias: Tensor,
          tape: Optional[Tape] = None) -> Tensor:
    """Affine map x @ W + bias for x: [n, f], W: [f, k], bias: [k]."""
    if x.data.ndim != 2 or weights.data.ndim != 2:
        raise ShapeError(
            f"dense expects 2-d input and weights, got {x.shape} and {weights.shape}")
    if x.shape[1] != weights.shape[0]:
        raise ShapeError(
            f"dense inner dimensions disagree: input {x.shape} vs weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(
            f"dense bias shape {bias.shape} must be ({weights.shape[1]},)")
    out = Tensor(x.data @ weights.data + bias.data, name="dense")
    if tape is not None:
        def backward(g: np.ndarray):
            return g @ weights.data.T, x.data.T @ g, g.sum(axis=0)

        tape.record("dense", out, (x, weights, bias), backward)
    return out


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray,
                          tape: Optional[Tape] = None) -> Tuple[Tensor, Tensor]:
    """Mean cross-entropy of softmax(logits) against integer class labels.

    Computed with per-row max subtraction for stability.  Returns
    (scalar loss, probabilities); the probabilities are detached from the
    tape, only the loss participates in backprop.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be [n, k], got {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(
            f"labels must lie in [0, {k}), got range "
            f"[{labels.min()}, {labels.max()}]")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    probs = exp / total
    log_probs = shifted - np.log(total)
    loss_value = -log_probs[np.arange(n), labels].mean()
    loss = Tensor(loss_value, name="softmax_cross_entropy")
    probs_t = Tensor(probs, name="softmax_probs")

    if tape is not None:
        onehot = np.zeros((n, k))
        onehot[np.arange(n), labels] = 1.0

        def backward(g: np.ndarray):
            return (float(g) * (probs - onehot) / n,)

        tape.record("softmax_cross_entropy", loss, (logits,), backward)
    return loss, probs_t


def add(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Elementwise sum of two same-shape tensors (the residual join)."""
    if a.shape != b.shape:
        raise ShapeError(f"add requires matching shapes, got {a.shape} and {b.shape}")
    out = Tensor(a.data + b.data, name="add")
    if tape is not None:
        def backward(g: np.ndarray):
            return g, g.copy()

        tape.record("add", out, (a, b), backward)
    return out


def concat_channels(parts: Sequence[Tensor], tape: Optional[Tape] = None) -> Tensor:
    """Concatenate along the trailing channel axis."""
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    base = parts[0].shape[:-1]
    for t in parts[1:]:
        if t.shape[:-1] != base:
            raise ShapeError(
                f"concat_channels non-channel extents differ: {t.shape} vs {parts[0].shape}")
    out = Tensor(np.concatenate([t.data for t in parts], axis=-1), name="concat")
    if tape is not None:
        widths = [t.shape[-1] for t in parts]
        splits = np.cumsum(widths)[:-1]

        def backward(g: np.ndarray):
            return [np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=-1)]

        tape.record("concat", out, tuple(parts), backward)
    return out


def reduce_sum(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = Tensor(x.data.sum(), name="reduce_sum")
    if tape is not None:
        def backward(g: np.ndarray):
            return (np.full_like(x.data, float(g)),)

        tape.record("reduce_sum", out, (x,), backward)
    return out


def scale(x: Tensor, factor, tape: Optional[Tape] = None) -> Tensor:
    """Multiply elementwise by a constant scalar or same-shape array.

    The factor is a constant, not a differentiable input.
    """
    factor = np.asarray(factor, dtype=np.float64)
    if factor.ndim != 0 and factor.shape != x.shape:
        raise ShapeError(
            f"scale factor must be scalar or of shape {x.shape}, got {factor.shape}")
    check_finite("scale", factor)
    out = Tensor(x.data * factor, name="scale")
    if tape is not None:
        def backward(g: np.ndarray):
            return (g * factor,)

        tape.record("scale", out, (x,), backward)
    return out

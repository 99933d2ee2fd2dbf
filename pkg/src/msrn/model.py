"""Network assembly: multi-scale spectral/spatial residual blocks on 3-D convs.

The network runs stem conv (1x1x7, band stride 2) -> spectral residual block
(parallel 1x1x{3,5,7} branches) -> two bridge convs that collapse the band
axis and seed spatial features -> spatial residual block (parallel
{1,3,5}x{1,3,5}x1 branches) -> global average pooling -> dropout -> dense
logits.  Each conv is followed by batch normalization; branch convs also get
ReLU, fusion convs do not, and there is no activation after a residual add
so a zeroed fusion path leaves the block an exact identity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .engine import (
    BatchNormState,
    Conv3dSpec,
    Tape,
    Tensor,
    add,
    batchnorm,
    concat_channels,
    conv3d,
    dense,
    dropout,
    global_avg_pool,
    relu,
)
from .errors import ConfigError, ShapeError

STEM_KERNEL = (1, 1, 7)
STEM_STRIDE = (1, 1, 2)
SPECTRAL_BRANCH_EXTENTS = (3, 5, 7)
SPATIAL_BRANCH_EXTENTS = (1, 3, 5)


@dataclass(frozen=True)
class ModelSpec:
    """Declarative architecture: all extents are derivable from these fields."""

    patch_size: int
    bands: int
    classes: int
    kernel_count: int = 24
    dropout_p: float = 0.3
    bn_momentum: float = 0.9
    bn_epsilon: float = 1e-5

    def __post_init__(self):
        if self.patch_size % 2 == 0 or self.patch_size < 5:
            raise ConfigError(
                f"patch_size must be odd and >= 5, got {self.patch_size}")
        if self.bands < STEM_KERNEL[2]:
            raise ConfigError(
                f"bands must be >= {STEM_KERNEL[2]} (stem kernel spans 7 bands), "
                f"got {self.bands}")
        if self.classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.classes}")
        if self.kernel_count < 1:
            raise ConfigError(f"kernel_count must be >= 1, got {self.kernel_count}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def stem_band_extent(self) -> int:
        """Band extent after the stem conv: floor((B - 7) / 2) + 1."""
        return (self.bands - STEM_KERNEL[2]) // STEM_STRIDE[2] + 1

    @property
    def input_shape(self) -> Tuple[int, int, int, int]:
        return (self.patch_size, self.patch_size, self.bands, 1)

    def to_dict(self) -> dict:
        return {
            "patch_size": self.patch_size, "bands": self.bands,
            "classes": self.classes, "kernel_count": self.kernel_count,
            "dropout_p": self.dropout_p, "bn_momentum": self.bn_momentum,
            "bn_epsilon": self.bn_epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


class ParameterSet:
    """Flat ordered registry of named tensors; the order is the wire order."""

    def __init__(self):
        self._items: List[Tuple[str, Tensor]] = []
        self._by_name = {}

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._by_name:
            raise ConfigError(f"duplicate parameter name {name!r}")
        tensor.name = name
        self._items.append((name, tensor))
        self._by_name[name] = tensor
        return tensor

    def items(self) -> List[Tuple[str, Tensor]]:
        return list(self._items)

    def learnables(self) -> List[Tuple[str, Tensor]]:
        return [(n, t) for n, t in self._items if t.requires_grad]

    def __getitem__(self, name: str) -> Tensor:
        return self._by_name[name]

    def __len__(self) -> int:
        return len(self._items)


def _he_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class ConvUnit:
    """conv3d -> batchnorm [-> relu], with registered parameters."""

    def __init__(self, name: str, spec: Conv3dSpec, params: ParameterSet,
                 rng: np.random.Generator, model_spec: ModelSpec,
                 activation: bool):
        self.spec = spec
        self.activation = activation
        kh, kw, kb = spec.kernel
        fan_in = kh * kw * kb * spec.in_channels
        self.weight = params.register(
            f"{name}.conv.weight",
            Tensor(_he_init(rng, spec.weight_shape, fan_in), requires_grad=True))
        self.bias = params.register(
            f"{name}.conv.bias",
            Tensor(np.zeros(spec.out_channels), requires_grad=True))
        self.bn = BatchNormState.create(
            spec.out_channels, momentum=model_spec.bn_momentum,
            epsilon=model_spec.bn_epsilon, name=f"{name}.bn")
        for part in ("gamma", "beta", "running_mean", "running_var"):
            params.register(f"{name}.bn.{part}", getattr(self.bn, part))

    def forward(self, x: Tensor, mode: str, tape: Optional[Tape]) -> Tensor:
        out = conv3d(x, self.spec, self.weight, self.bias, tape=tape)
        out = batchnorm(out, self.bn, mode, tape=tape)
        if self.activation:
            out = relu(out, tape=tape)
        return out


class MultiScaleResidualBlock:
    """Residual unit with parallel different-extent conv branches.

    Output is x + fuse(concat(branches(x))): each branch is conv->BN->ReLU at
    its own kernel extent, the concatenation carries 3k channels, and a
    1x1x1 fusion conv (followed by BN, no activation) reduces back to k so
    the skip connection is well-formed.
    """

    def __init__(self, name: str, branch_kernels: List[Tuple[int, int, int]],
                 channels: int, params: ParameterSet, rng: np.random.Generator,
                 model_spec: ModelSpec):
        self.channels = channels
        self.branches = []
        for kernel in branch_kernels:
            kh, kw, kb = kernel
            spec = Conv3dSpec(kernel, (1, 1, 1), "SAME", channels, channels)
            self.branches.append(ConvUnit(
                f"{name}.branch{kh}x{kw}x{kb}", spec, params, rng, model_spec,
                activation=True))
        fusion_spec = Conv3dSpec((1, 1, 1), (1, 1, 1), "SAME",
                                 len(branch_kernels) * channels, channels)
        self.fusion = ConvUnit(f"{name}.fusion", fusion_spec, params, rng,
                               model_spec, activation=False)

    def forward(self, x: Tensor, mode: str, tape: Optional[Tape]) -> Tensor:
        if x.shape[-1] != self.channels:
            raise ShapeError(
                f"block expects {self.channels} channels, got {x.shape[-1]}")
        branch_outputs = [unit.forward(x, mode, tape) for unit in self.branches]
        merged = concat_channels(branch_outputs, tape=tape)
        fused = self.fusion.forward(merged, mode, tape)
        return add(x, fused, tape=tape)


def spectral_block(name: str, channels: int, params: ParameterSet,
                   rng: np.random.Generator, model_spec: ModelSpec) -> MultiScaleResidualBlock:
    kernels = [(1, 1, m) for m in SPECTRAL_BRANCH_EXTENTS]
    return MultiScaleResidualBlock(name, kernels, channels, params, rng, model_spec)


def spatial_block(name: str, channels: int, params: ParameterSet,
                  rng: np.random.Generator, model_spec: ModelSpec) -> MultiScaleResidualBlock:
    kernels = [(r, r, 1) for r in SPATIAL_BRANCH_EXTENTS]
    return MultiScaleResidualBlock(name, kernels, channels, params, rng, model_spec)


class Model:
    """The assembled network with its parameter registry."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        self.spec = spec
        self.params = ParameterSet()
        k = spec.kernel_count

        self.stem = ConvUnit(
            "stem", Conv3dSpec(STEM_KERNEL, STEM_STRIDE, "VALID", 1, k),
            self.params, rng, spec, activation=True)
        self.spectral = spectral_block("spectral", k, self.params, rng, spec)
        self.bridge_band = ConvUnit(
            "bridge_band",
            Conv3dSpec((1, 1, spec.stem_band_extent), (1, 1, 1), "VALID", k, k),
            self.params, rng, spec, activation=True)
        self.bridge_spatial = ConvUnit(
            "bridge_spatial", Conv3dSpec((3, 3, 1), (1, 1, 1), "SAME", k, k),
            self.params, rng, spec, activation=True)
        self.spatial = spatial_block("spatial", k, self.params, rng, spec)

        self.head_weight = self.params.register(
            "head.dense.weight",
            Tensor(_he_init(rng, (k, spec.classes), k), requires_grad=True))
        self.head_bias = self.params.register(
            "head.dense.bias",
            Tensor(np.zeros(spec.classes), requires_grad=True))

    def forward(self, batch: Tensor, mode: str, tape: Optional[Tape] = None,
                rng: Optional[np.random.Generator] = None) -> Tensor:
        """Logits for a batch shaped [n, s, s, B, 1]."""
        expected = self.spec.input_shape
        if batch.data.ndim != 5 or batch.shape[1:] != expected:
            raise ShapeError(
                f"batch shape {batch.shape} does not match model input "
                f"[n, {expected[0]}, {expected[1]}, {expected[2]}, {expected[3]}]")
        x = self.stem.forward(batch, mode, tape)
        x = self.spectral.forward(x, mode, tape)
        x = self.bridge_band.forward(x, mode, tape)
        x = self.bridge_spatial.forward(x, mode, tape)
        x = self.spatial.forward(x, mode, tape)
        pooled = global_avg_pool(x, tape=tape)
        dropped = dropout(pooled, self.spec.dropout_p, rng, mode, tape=tape)
        return dense(dropped, self.head_weight, self.head_bias, tape=tape)

    def learnable_count(self) -> int:
        return sum(t.size for _, t in self.params.learnables())

    def zero_fusion_paths(self) -> None:
        """Silence both blocks' fusion paths, making each an identity map."""
        for block in (self.spectral, self.spatial):
            block.fusion.weight.data[...] = 0.0
            block.fusion.bias.data[...] = 0.0
            block.fusion.bn.beta.data[...] = 0.0
            block.fusion.bn.running_mean.data[...] = 0.0


def build_model(spec: ModelSpec, rng: np.random.Generator) -> Model:
    """Construct the network with He-Gaussian conv/dense init, BN at (1, 0)."""
    return Model(spec, rng)

"""Detection network blocks: receptive-field attention convolution, shared-kernel
multi-dilation enhancement (plain and C3-embedded), multi-scale exponential
channel attention, fast spatial pyramid pooling, and a toy-scale detector
composition that produces head maps at strides 8/16/32.

Blocks are plain parameter dataclasses plus pure forward functions; parameters
are immutable after construction, so forwards are safe to run concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .tensor import (
    ConvSpec,
    ShapeError,
    Tensor,
    add,
    batchnorm_infer,
    concat,
    conv2d,
    default_dtype,
    exp,
    global_avg_pool,
    load_tensor,
    max_pool,
    mul,
    pick,
    relu,
    reshape,
    save_tensor,
    sigmoid,
    softmax,
    tensor_sum,
)


def _param(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    scale = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _bias(rng: np.random.Generator, n: int) -> Tensor:
    # Small nonzero init keeps rectifier pre-activations off their kinks,
    # which finite-difference verification needs.
    return Tensor(rng.uniform(-0.1, 0.1, size=n), requires_grad=True)


# ---------------------------------------------------------------------------
# Receptive-field attention convolution
# ---------------------------------------------------------------------------


@dataclass
class RfaParams:
    """Receptive-field attention convolution over an (N,C,H,W) map.

    The transform path is a grouped kxk convolution (groups = C) expanding each
    channel into its k^2 receptive-field features, normalized and rectified;
    the attention path is a 1x1 convolution producing k^2 logits per location,
    softmax-normalized over the k^2 positions. The output contracts the two:
    a convex combination of each channel's receptive-field features.
    """

    channels: int
    kernel: int
    stride: int
    transform_weight: Tensor      # (C*k^2, 1, k, k), groups = C
    transform_bias: Tensor        # (C*k^2,)
    attention_weight: Tensor      # (k^2, C, 1, 1)
    attention_bias: Tensor        # (k^2,)
    norm_scale: Tensor            # (C*k^2,)
    norm_shift: Tensor
    norm_mean: Tensor
    norm_var: Tensor

    def __post_init__(self):
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ShapeError(f"attention conv kernel must be odd, got {self.kernel}")
        k2 = self.kernel * self.kernel
        if self.attention_weight.shape[0] != k2:
            raise ShapeError(
                f"attention projection must emit k^2={k2} logits, "
                f"got {self.attention_weight.shape[0]}"
            )

    @classmethod
    def init(cls, channels: int, kernel: int = 3, stride: int = 1, seed: int = 0) -> "RfaParams":
        rng = np.random.default_rng(seed)
        k2 = kernel * kernel
        ck2 = channels * k2
        return cls(
            channels=channels,
            kernel=kernel,
            stride=stride,
            transform_weight=_param(rng, (ck2, 1, kernel, kernel), kernel * kernel),
            transform_bias=_bias(rng, ck2),
            attention_weight=_param(rng, (k2, channels, 1, 1), channels),
            attention_bias=_bias(rng, k2),
            norm_scale=Tensor(np.ones(ck2), requires_grad=True),
            norm_shift=_zeros(ck2),
            norm_mean=Tensor(np.zeros(ck2)),
            norm_var=Tensor(np.ones(ck2)),
        )

    def hyperparams(self) -> dict:
        return {"channels": self.channels, "kernel": self.kernel, "stride": self.stride}

    def named_tensors(self) -> dict[str, Tensor]:
        return {
            "transform_weight": self.transform_weight,
            "transform_bias": self.transform_bias,
            "attention_weight": self.attention_weight,
            "attention_bias": self.attention_bias,
            "norm_scale": self.norm_scale,
            "norm_shift": self.norm_shift,
            "norm_mean": self.norm_mean,
            "norm_var": self.norm_var,
        }


def rfaconv_attention(params: RfaParams, x: Tensor) -> Tensor:
    """Attention coefficients (N, k^2, H', W'); positive, summing to 1 over axis 1."""
    logits = conv2d(
        x, params.attention_weight, params.attention_bias, ConvSpec(1, stride=params.stride)
    )
    return softmax(logits, axis=1)


def rfaconv_forward(params: RfaParams, x: Tensor) -> Tensor:
    """Reweight each channel's k^2 receptive-field features by shared attention.

    Output shape (N, C, H', W') with H' = floor((H-1)/stride) + 1 ("same"
    padding on the transform path).
    """
    if x.ndim != 4:
        raise ShapeError(f"expected rank-4 input, got rank {x.ndim}")
    n, c, _, _ = x.shape
    if c != params.channels:
        raise ShapeError(f"input has {c} channels, block expects {params.channels}")
    k = params.kernel
    transform = conv2d(
        x,
        params.transform_weight,
        params.transform_bias,
        ConvSpec(k, stride=params.stride, groups=c),
    )
    features = relu(
        batchnorm_infer(
            transform, params.norm_scale, params.norm_shift, params.norm_mean, params.norm_var
        )
    )
    attn = rfaconv_attention(params, x)
    _, _, h_out, w_out = features.shape
    per_position = reshape(features, (n, c, k * k, h_out, w_out))
    weights = reshape(attn, (n, 1, k * k, h_out, w_out))
    return tensor_sum(mul(per_position, weights), axis=2)


# ---------------------------------------------------------------------------
# Shared-kernel multi-dilation receptive-field enhancement
# ---------------------------------------------------------------------------


@dataclass
class RfeParams:
    """Four-branch dilated enhancement: one shared 3x3 kernel at dilations
    1/2/3 plus a pointwise branch, softmax-weighted, projected, and added back
    onto the input (spatial extent and channel count preserved)."""

    channels: int
    dilated_weight: Tensor        # (C, C, 3, 3), shared by the 3 dilated branches
    dilated_bias: Tensor          # (C,)
    branch_logits: Tensor         # (4,) softmax-normalized aggregation weights
    pointwise_weight: Tensor      # (C, C, 1, 1), fourth branch
    pointwise_bias: Tensor
    project_weight: Tensor        # (C, C, 1, 1), post-aggregation mixing
    project_bias: Tensor

    DILATIONS = (1, 2, 3)
    MIN_EXTENT = 7                # largest dilated 3x3 footprint

    @classmethod
    def init(cls, channels: int, seed: int = 0) -> "RfeParams":
        rng = np.random.default_rng(seed)
        eye = np.eye(channels).reshape(channels, channels, 1, 1)
        return cls(
            channels=channels,
            dilated_weight=_param(rng, (channels, channels, 3, 3), channels * 9),
            dilated_bias=_bias(rng, channels),
            branch_logits=_zeros(4),
            pointwise_weight=Tensor(eye, requires_grad=True),
            pointwise_bias=_bias(rng, channels),
            project_weight=Tensor(eye, requires_grad=True),
            project_bias=_bias(rng, channels),
        )

    def hyperparams(self) -> dict:
        return {"channels": self.channels}

    def named_tensors(self) -> dict[str, Tensor]:
        return {
            "dilated_weight": self.dilated_weight,
            "dilated_bias": self.dilated_bias,
            "branch_logits": self.branch_logits,
            "pointwise_weight": self.pointwise_weight,
            "pointwise_bias": self.pointwise_bias,
            "project_weight": self.project_weight,
            "project_bias": self.project_bias,
        }


def rfe_forward(params: RfeParams, x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"expected rank-4 input, got rank {x.ndim}")
    n, c, h, w = x.shape
    if c != params.channels:
        raise ShapeError(f"input has {c} channels, block expects {params.channels}")
    if h < RfeParams.MIN_EXTENT or w < RfeParams.MIN_EXTENT:
        raise ShapeError(
            f"spatial extent {h}x{w} too small; the dilation-3 branch needs >= "
            f"{RfeParams.MIN_EXTENT}"
        )
    weights = softmax(params.branch_logits, axis=0)
    branches = [
        conv2d(x, params.dilated_weight, params.dilated_bias, ConvSpec(3, dilation=d))
        for d in RfeParams.DILATIONS
    ]
    branches.append(conv2d(x, params.pointwise_weight, params.pointwise_bias, ConvSpec(1)))
    aggregate = mul(branches[0], pick(weights, 0))
    for i in (1, 2, 3):
        aggregate = add(aggregate, mul(branches[i], pick(weights, i)))
    projected = conv2d(aggregate, params.project_weight, params.project_bias, ConvSpec(1))
    return add(x, projected)


# ---------------------------------------------------------------------------
# C3 skeleton with enhancement bottlenecks
# ---------------------------------------------------------------------------


@dataclass
class C3Bottleneck:
    mix_weight: Tensor            # (c, c, 1, 1)
    mix_bias: Tensor
    residual: bool
    rfe: Optional[RfeParams]      # multi-dilation inner transform...
    plain_weight: Optional[Tensor]  # ...or a plain 3x3 conv for small maps
    plain_bias: Optional[Tensor]


@dataclass
class C3RfemParams:
    """Split-transform-merge block: two pointwise paths, one stacked with
    bottlenecks whose inner 3x3 transform is the multi-dilation enhancement,
    concatenated and fused back to ``out_channels``."""

    in_channels: int
    out_channels: int
    use_rfe: bool
    cv1_weight: Tensor
    cv1_bias: Tensor
    cv2_weight: Tensor
    cv2_bias: Tensor
    cv3_weight: Tensor
    cv3_bias: Tensor
    bottlenecks: list[C3Bottleneck] = field(default_factory=list)

    @classmethod
    def init(
        cls,
        in_channels: int,
        out_channels: int,
        bottleneck_count: int = 1,
        use_rfe: bool = True,
        seed: int = 0,
    ) -> "C3RfemParams":
        rng = np.random.default_rng(seed)
        hidden = max(out_channels // 2, 1)
        params = cls(
            in_channels=in_channels,
            out_channels=out_channels,
            use_rfe=use_rfe,
            cv1_weight=_param(rng, (hidden, in_channels, 1, 1), in_channels),
            cv1_bias=_bias(rng, hidden),
            cv2_weight=_param(rng, (hidden, in_channels, 1, 1), in_channels),
            cv2_bias=_bias(rng, hidden),
            cv3_weight=_param(rng, (out_channels, 2 * hidden, 1, 1), 2 * hidden),
            cv3_bias=_bias(rng, out_channels),
        )
        for i in range(bottleneck_count):
            inner_seed = int(rng.integers(0, 2**31))
            if use_rfe:
                inner = RfeParams.init(hidden, seed=inner_seed)
                plain_w = plain_b = None
            else:
                inner = None
                plain_w = _param(rng, (hidden, hidden, 3, 3), hidden * 9)
                plain_b = _bias(rng, hidden)
            params.bottlenecks.append(
                C3Bottleneck(
                    mix_weight=_param(rng, (hidden, hidden, 1, 1), hidden),
                    mix_bias=_bias(rng, hidden),
                    residual=True,  # in/out channels always match inside the stack
                    rfe=inner,
                    plain_weight=plain_w,
                    plain_bias=plain_b,
                )
            )
        return params

    @property
    def hidden_channels(self) -> int:
        return self.cv1_weight.shape[0]

    def hyperparams(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "bottleneck_count": len(self.bottlenecks),
            "use_rfe": self.use_rfe,
        }

    def named_tensors(self) -> dict[str, Tensor]:
        out = {
            "cv1_weight": self.cv1_weight, "cv1_bias": self.cv1_bias,
            "cv2_weight": self.cv2_weight, "cv2_bias": self.cv2_bias,
            "cv3_weight": self.cv3_weight, "cv3_bias": self.cv3_bias,
        }
        for i, bn in enumerate(self.bottlenecks):
            out[f"bottleneck{i}.mix_weight"] = bn.mix_weight
            out[f"bottleneck{i}.mix_bias"] = bn.mix_bias
            if bn.rfe is not None:
                for name, t in bn.rfe.named_tensors().items():
                    out[f"bottleneck{i}.rfe.{name}"] = t
            else:
                out[f"bottleneck{i}.plain_weight"] = bn.plain_weight
                out[f"bottleneck{i}.plain_bias"] = bn.plain_bias
        return out


def c3rfem_forward(params: C3RfemParams, x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"expected rank-4 input, got rank {x.ndim}")
    if x.shape[1] != params.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, block expects {params.in_channels}")
    main = relu(conv2d(x, params.cv1_weight, params.cv1_bias, ConvSpec(1)))
    side = relu(conv2d(x, params.cv2_weight, params.cv2_bias, ConvSpec(1)))
    for bn in params.bottlenecks:
        mixed = relu(conv2d(main, bn.mix_weight, bn.mix_bias, ConvSpec(1)))
        if bn.rfe is not None:
            inner = rfe_forward(bn.rfe, mixed)
        else:
            inner = conv2d(mixed, bn.plain_weight, bn.plain_bias, ConvSpec(3))
        main = add(main, inner) if bn.residual else inner
    fused = concat([main, side], axis=1)
    return relu(conv2d(fused, params.cv3_weight, params.cv3_bias, ConvSpec(1)))


# ---------------------------------------------------------------------------
# Multi-scale exponential channel attention
# ---------------------------------------------------------------------------


@dataclass
class SeamParams:
    """Channel attention with multi-scale patch heads.

    Each scale p patch-embeds the input with a stride-p depthwise conv, runs a
    shared depthwise+pointwise mix with residual, pools globally, and pushes
    the pooled vector through a two-layer bottleneck; sigmoid then exp map the
    per-channel score into (1, e). Per-scale attention vectors are fused by
    arithmetic mean and applied multiplicatively to the ORIGINAL input.
    """

    channels: int
    kernel: int
    reduction: int
    patch_scales: tuple[int, ...]
    patch_weights: list[Tensor]   # per scale: (C, 1, p, p) depthwise, stride p
    patch_biases: list[Tensor]
    dw_weight: Tensor             # (C, 1, k, k) depthwise, shared across scales
    dw_bias: Tensor
    pw_weight: Tensor             # (C, C, 1, 1)
    pw_bias: Tensor
    fc1_weight: Tensor            # (hidden, C, 1, 1)
    fc1_bias: Tensor
    fc2_weight: Tensor            # (C, hidden, 1, 1)
    fc2_bias: Tensor

    def __post_init__(self):
        if not self.patch_scales:
            raise ShapeError("patch_scales must be non-empty")
        if any(p < 1 for p in self.patch_scales):
            raise ShapeError(f"patch scales must be positive, got {self.patch_scales}")

    @classmethod
    def init(
        cls,
        channels: int,
        kernel: int = 3,
        reduction: int = 16,
        patch_scales: tuple[int, ...] = (1, 2, 4),
        seed: int = 0,
    ) -> "SeamParams":
        rng = np.random.default_rng(seed)
        hidden = cls.bottleneck_width(channels, reduction)
        patch_w, patch_b = [], []
        for p in patch_scales:
            patch_w.append(_param(rng, (channels, 1, p, p), p * p))
            patch_b.append(_bias(rng, channels))
        return cls(
            channels=channels,
            kernel=kernel,
            reduction=reduction,
            patch_scales=tuple(patch_scales),
            patch_weights=patch_w,
            patch_biases=patch_b,
            dw_weight=_param(rng, (channels, 1, kernel, kernel), kernel * kernel),
            dw_bias=_bias(rng, channels),
            pw_weight=_param(rng, (channels, channels, 1, 1), channels),
            pw_bias=_bias(rng, channels),
            fc1_weight=_param(rng, (hidden, channels, 1, 1), channels),
            fc1_bias=_bias(rng, hidden),
            fc2_weight=_param(rng, (channels, hidden, 1, 1), hidden),
            fc2_bias=_bias(rng, channels),
        )

    @staticmethod
    def bottleneck_width(channels: int, reduction: int) -> int:
        # floor(C/r), held at >= 4 so tiny blocks keep a usable bottleneck
        return max(channels // reduction, 4)

    def hyperparams(self) -> dict:
        return {
            "channels": self.channels,
            "kernel": self.kernel,
            "reduction": self.reduction,
            "patch_scales": list(self.patch_scales),
        }

    def named_tensors(self) -> dict[str, Tensor]:
        out = {
            "dw_weight": self.dw_weight, "dw_bias": self.dw_bias,
            "pw_weight": self.pw_weight, "pw_bias": self.pw_bias,
            "fc1_weight": self.fc1_weight, "fc1_bias": self.fc1_bias,
            "fc2_weight": self.fc2_weight, "fc2_bias": self.fc2_bias,
        }
        for p, w, b in zip(self.patch_scales, self.patch_weights, self.patch_biases):
            out[f"patch{p}_weight"] = w
            out[f"patch{p}_bias"] = b
        return out


def multiseam_forward(params: SeamParams, x: Tensor) -> tuple[Tensor, Tensor]:
    """Returns (reweighted input, attention) with attention shaped (N,C,1,1).

    Every attention value lies strictly inside (1, e); the output is that
    per-channel scaling applied to the original input, never to the convolved
    intermediates.
    """
    if x.ndim != 4:
        raise ShapeError(f"expected rank-4 input, got rank {x.ndim}")
    n, c, h, w = x.shape
    if c != params.channels:
        raise ShapeError(f"input has {c} channels, block expects {params.channels}")
    per_scale = []
    for scale, pe_w, pe_b in zip(params.patch_scales, params.patch_weights, params.patch_biases):
        if h % scale or w % scale:
            raise ShapeError(f"patch scale {scale} does not divide spatial extent {h}x{w}")
        embedded = conv2d(x, pe_w, pe_b, ConvSpec(scale, stride=scale, padding=0, groups=c))
        depth = conv2d(embedded, params.dw_weight, params.dw_bias,
                       ConvSpec(params.kernel, groups=c))
        mixed = add(conv2d(depth, params.pw_weight, params.pw_bias, ConvSpec(1)), embedded)
        pooled = global_avg_pool(mixed)
        squeezed = relu(conv2d(pooled, params.fc1_weight, params.fc1_bias, ConvSpec(1)))
        score = sigmoid(conv2d(squeezed, params.fc2_weight, params.fc2_bias, ConvSpec(1)))
        per_scale.append(exp(score))
    attention = per_scale[0]
    for a in per_scale[1:]:
        attention = add(attention, a)
    attention = mul(attention, 1.0 / len(per_scale))
    return mul(attention, x), attention


# ---------------------------------------------------------------------------
# Fast spatial pyramid pooling
# ---------------------------------------------------------------------------


@dataclass
class SppfParams:
    """Pointwise reduce, three chained 5x5 stride-1 max pools, concat, fuse."""

    in_channels: int
    out_channels: int
    pool_kernel: int
    cv1_weight: Tensor
    cv1_bias: Tensor
    cv2_weight: Tensor
    cv2_bias: Tensor

    @classmethod
    def init(
        cls, in_channels: int, out_channels: int, pool_kernel: int = 5, seed: int = 0
    ) -> "SppfParams":
        rng = np.random.default_rng(seed)
        hidden = max(in_channels // 2, 1)
        return cls(
            in_channels=in_channels,
            out_channels=out_channels,
            pool_kernel=pool_kernel,
            cv1_weight=_param(rng, (hidden, in_channels, 1, 1), in_channels),
            cv1_bias=_bias(rng, hidden),
            cv2_weight=_param(rng, (out_channels, 4 * hidden, 1, 1), 4 * hidden),
            cv2_bias=_bias(rng, out_channels),
        )

    def hyperparams(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "pool_kernel": self.pool_kernel,
        }

    def named_tensors(self) -> dict[str, Tensor]:
        return {
            "cv1_weight": self.cv1_weight, "cv1_bias": self.cv1_bias,
            "cv2_weight": self.cv2_weight, "cv2_bias": self.cv2_bias,
        }


def sppf_forward(params: SppfParams, x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"expected rank-4 input, got rank {x.ndim}")
    if x.shape[1] != params.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, block expects {params.in_channels}")
    k = params.pool_kernel
    reduced = relu(conv2d(x, params.cv1_weight, params.cv1_bias, ConvSpec(1)))
    p1 = max_pool(reduced, k, 1, k // 2)
    p2 = max_pool(p1, k, 1, k // 2)
    p3 = max_pool(p2, k, 1, k // 2)
    stacked = concat([reduced, p1, p2, p3], axis=1)
    return relu(conv2d(stacked, params.cv2_weight, params.cv2_bias, ConvSpec(1)))


# ---------------------------------------------------------------------------
# Toy-scale detector composition (shape-checked, strides 8/16/32)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToyNetConfig:
    """Invented stage layout for shape verification only.

    Five stride-2 stages; enhancement blocks after the stride-8 and stride-32
    stages (plain C3 at stride 16), pyramid pooling at stride 32, and a
    channel-attention + attention-conv head at each of the three scales.
    Stages fall back to plain convolutions where a flag disables a block, and
    enhancement bottlenecks fall back to plain 3x3 convs on maps narrower
    than the dilation-3 footprint.
    """

    input_size: int = 64
    in_channels: int = 3
    widths: tuple[int, ...] = (8, 16, 24, 32, 48)
    use_rfaconv: bool = True
    use_c3rfem: bool = True
    use_multiseam: bool = True

    HEAD_STRIDES = (8, 16, 32)

    def __post_init__(self):
        if self.input_size % 32:
            raise ShapeError(f"input extent {self.input_size} is not a multiple of 32")
        if len(self.widths) != 5:
            raise ShapeError(f"expected 5 stage widths, got {len(self.widths)}")

    def head_extents(self) -> tuple[int, int, int]:
        return tuple(self.input_size // s for s in self.HEAD_STRIDES)

    def seam_scales(self, extent: int) -> tuple[int, ...]:
        return tuple(p for p in (1, 2, 4) if p <= extent and extent % p == 0)


@dataclass
class _ToyStage:
    expand_weight: Tensor
    expand_bias: Tensor
    rfa: Optional[RfaParams]
    down_weight: Optional[Tensor]
    down_bias: Optional[Tensor]


@dataclass
class ToyNetParams:
    config: ToyNetConfig
    stages: list[_ToyStage]
    c3_blocks: dict[int, C3RfemParams]       # keyed by stage index 2/3/4
    sppf: SppfParams
    seams: list[Optional[SeamParams]]        # one per head scale
    heads: list[RfaParams]

    def named_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, st in enumerate(self.stages):
            out[f"stage{i}.expand_weight"] = st.expand_weight
            out[f"stage{i}.expand_bias"] = st.expand_bias
            if st.rfa is not None:
                for name, t in st.rfa.named_tensors().items():
                    out[f"stage{i}.rfa.{name}"] = t
            else:
                out[f"stage{i}.down_weight"] = st.down_weight
                out[f"stage{i}.down_bias"] = st.down_bias
        for idx, block in self.c3_blocks.items():
            for name, t in block.named_tensors().items():
                out[f"c3_{idx}.{name}"] = t
        for name, t in self.sppf.named_tensors().items():
            out[f"sppf.{name}"] = t
        for i, seam in enumerate(self.seams):
            if seam is not None:
                for name, t in seam.named_tensors().items():
                    out[f"seam{i}.{name}"] = t
        for i, head in enumerate(self.heads):
            for name, t in head.named_tensors().items():
                out[f"head{i}.{name}"] = t
        return out


def parameter_count(params) -> int:
    """Total number of scalar parameters (deterministic for a fixed config)."""
    return sum(t.size for t in params.named_tensors().values())


def build_toy_net(config: ToyNetConfig, seed: int = 0) -> ToyNetParams:
    rng = np.random.default_rng(seed)

    def next_seed() -> int:
        return int(rng.integers(0, 2**31))

    stages = []
    prev = config.in_channels
    for width in config.widths:
        expand_w = _param(rng, (width, prev, 1, 1), prev)
        expand_b = _bias(rng, width)
        if config.use_rfaconv:
            stage = _ToyStage(expand_w, expand_b, RfaParams.init(width, 3, 2, next_seed()),
                              None, None)
        else:
            stage = _ToyStage(expand_w, expand_b, None,
                              _param(rng, (width, width, 3, 3), width * 9), _bias(rng, width))
        stages.append(stage)
        prev = width

    c3_blocks = {}
    for stage_idx in (2, 3, 4):
        width = config.widths[stage_idx]
        extent = config.input_size // (2 ** (stage_idx + 1))
        # C3RFEM replaces the stride-8 and stride-32 blocks only; RFE needs
        # extent >= 7, so narrower maps keep the plain-conv bottleneck.
        wants_rfe = config.use_c3rfem and stage_idx in (2, 4)
        use_rfe = wants_rfe and extent >= RfeParams.MIN_EXTENT
        c3_blocks[stage_idx] = C3RfemParams.init(width, width, 1, use_rfe, next_seed())

    sppf = SppfParams.init(config.widths[4], config.widths[4], 5, next_seed())

    seams: list[Optional[SeamParams]] = []
    heads: list[RfaParams] = []
    head_widths = (config.widths[2], config.widths[3], config.widths[4])
    for width, extent in zip(head_widths, config.head_extents()):
        if config.use_multiseam:
            seams.append(SeamParams.init(width, 3, 16, config.seam_scales(extent), next_seed()))
        else:
            seams.append(None)
        heads.append(RfaParams.init(width, 3, 1, next_seed()))
    return ToyNetParams(config, stages, c3_blocks, sppf, seams, heads)


def toy_net_forward(
    config: ToyNetConfig, params: ToyNetParams, x: Tensor
) -> tuple[Tensor, Tensor, Tensor]:
    """Run the toy detector; returns head maps at strides 8, 16, 32."""
    if x.ndim != 4:
        raise ShapeError(f"expected rank-4 input, got rank {x.ndim}")
    if x.shape[2] % 32 or x.shape[3] % 32:
        raise ShapeError(f"input extent {x.shape[2]}x{x.shape[3]} is not a multiple of 32")
    if x.shape[1] != config.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, config expects {config.in_channels}")

    features = []
    y = x
    for idx, stage in enumerate(params.stages):
        y = relu(conv2d(y, stage.expand_weight, stage.expand_bias, ConvSpec(1)))
        if stage.rfa is not None:
            y = rfaconv_forward(stage.rfa, y)
        else:
            y = relu(conv2d(y, stage.down_weight, stage.down_bias, ConvSpec(3, stride=2)))
        if idx in params.c3_blocks:
            y = c3rfem_forward(params.c3_blocks[idx], y)
        if idx == 4:
            y = sppf_forward(params.sppf, y)
        features.append(y)

    outputs = []
    for head_idx, feat in enumerate((features[2], features[3], features[4])):
        seam = params.seams[head_idx]
        if seam is not None:
            feat, _ = multiseam_forward(seam, feat)
        outputs.append(rfaconv_forward(params.heads[head_idx], feat))
    return tuple(outputs)


# ---------------------------------------------------------------------------
# Parameter persistence: fixture files plus a plain-text manifest
# ---------------------------------------------------------------------------

_BLOCK_INITS = {
    "rfaconv": RfaParams.init,
    "rfe": RfeParams.init,
    "c3rfem": C3RfemParams.init,
    "multiseam": SeamParams.init,
    "sppf": SppfParams.init,
}

BLOCK_KINDS = tuple(_BLOCK_INITS)


def save_block_params(directory: Union[str, Path], kind: str, params) -> None:
    """Write one fixture file per tensor plus a manifest naming kind and hyperparameters."""
    if kind not in _BLOCK_INITS:
        raise ValueError(f"unknown block kind {kind!r}; expected one of {BLOCK_KINDS}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"kind {kind}"]
    for key, value in sorted(params.hyperparams().items()):
        lines.append(f"param {key} {json.dumps(value)}")
    for name, tensor in sorted(params.named_tensors().items()):
        filename = name.replace(".", "__") + ".tnsr"
        save_tensor(directory / filename, tensor)
        lines.append(f"tensor {name} {filename}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="ascii")


def load_block_params(directory: Union[str, Path]):
    """Rebuild (kind, params) from a directory written by save_block_params."""
    directory = Path(directory)
    kind = None
    hyper: dict = {}
    tensor_files: dict[str, str] = {}
    for lineno, raw in enumerate(
        (directory / "manifest.txt").read_text(encoding="ascii").splitlines(), start=1
    ):
        line = raw.strip()
        if not line:
            continue
        tag, _, rest = line.partition(" ")
        if tag == "kind":
            kind = rest.strip()
        elif tag == "param":
            key, _, value = rest.partition(" ")
            hyper[key] = json.loads(value)
        elif tag == "tensor":
            name, _, filename = rest.partition(" ")
            tensor_files[name] = filename.strip()
        else:
            raise ValueError(f"manifest line {lineno}: unknown tag {tag!r}")
    if kind not in _BLOCK_INITS:
        raise ValueError(f"manifest names unknown block kind {kind!r}")
    if "patch_scales" in hyper:
        hyper["patch_scales"] = tuple(hyper["patch_scales"])
    params = _BLOCK_INITS[kind](**hyper)
    tensors = params.named_tensors()
    if set(tensors) != set(tensor_files):
        missing = set(tensors) ^ set(tensor_files)
        raise ValueError(f"manifest tensor set does not match block structure: {sorted(missing)}")
    for name, filename in tensor_files.items():
        arr = load_tensor(directory / filename)
        target = tensors[name]
        if arr.shape != target.shape:
            raise ShapeError(f"tensor {name}: stored shape {arr.shape} != expected {target.shape}")
        target.data = np.ascontiguousarray(arr.astype(default_dtype()))
    return kind, params

"""Convolution family: conv2d, unfold, and max pooling on (N,C,H,W) tensors.

The fast path lowers every convolution to a patch-gather ("im2col") followed
by one batched matmul per group; the same gather indices drive the scatter-add
in the backward pass. Padding value is 0 for convolution and unfold, and -inf
for max pooling (so padding never wins a window).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ArrayLike, ShapeError, Tensor, as_tensor


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one convolution: kernel, stride, padding, dilation, groups.

    ``padding=None`` selects "same" mode, p = dilation * (kernel - 1) // 2,
    which preserves spatial extent at stride 1 and requires an odd kernel.
    Even kernels are accepted with explicit padding (window extraction for
    unfold/pooling uses them).
    """

    kernel: int
    stride: int = 1
    padding: Optional[int] = None
    dilation: int = 1
    groups: int = 1

    def __post_init__(self):
        if self.kernel < 1:
            raise ShapeError(f"kernel must be positive, got {self.kernel}")
        if self.padding is None and self.kernel % 2 == 0:
            raise ShapeError(f"'same' padding requires an odd kernel, got {self.kernel}")
        if self.stride < 1:
            raise ShapeError(f"stride must be positive, got {self.stride}")
        if self.dilation < 1:
            raise ShapeError(f"dilation must be positive, got {self.dilation}")
        if self.groups < 1:
            raise ShapeError(f"groups must be positive, got {self.groups}")
        if self.padding is not None and self.padding < 0:
            raise ShapeError(f"padding must be non-negative, got {self.padding}")

    @property
    def pad(self) -> int:
        if self.padding is not None:
            return self.padding
        return self.dilation * (self.kernel - 1) // 2

    def out_extent(self, extent: int) -> int:
        span = extent + 2 * self.pad - self.dilation * (self.kernel - 1) - 1
        out = span // self.stride + 1
        if out < 1:
            raise ShapeError(
                f"non-positive output extent for input extent {extent} with {self}"
            )
        return out


def _gather_indices(cin_g: int, spec: ConvSpec, h_out: int, w_out: int):
    """Index arrays mapping (row, column) of the patch matrix onto the padded input.

    Row index r = c*k*k + ky*k + kx; column index l = oy*w_out + ox.
    """
    k = spec.kernel
    c_idx = np.repeat(np.arange(cin_g), k * k)
    ky = np.tile(np.repeat(np.arange(k), k), cin_g)
    kx = np.tile(np.arange(k), k * cin_g)
    oy = np.repeat(np.arange(h_out), w_out)
    ox = np.tile(np.arange(w_out), h_out)
    iy = ky[:, None] * spec.dilation + oy[None, :] * spec.stride
    ix = kx[:, None] * spec.dilation + ox[None, :] * spec.stride
    return c_idx, iy, ix


def conv2d(
    x: ArrayLike,
    weight: ArrayLike,
    bias: Optional[ArrayLike],
    spec: ConvSpec,
) -> Tensor:
    """2-D cross-correlation with zero padding, stride, dilation, and groups.

    ``weight`` has shape (C_out, C_in/groups, k, k); output is
    (N, C_out, H', W') per the ConvSpec arithmetic.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    bias_t = as_tensor(bias) if bias is not None else None
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input, got rank {x.ndim}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 weight, got rank {weight.ndim}")
    n, c_in, h, w = x.shape
    c_out, cin_g, kh, kw = weight.shape
    g = spec.groups
    if kh != spec.kernel or kw != spec.kernel:
        raise ShapeError(f"weight kernel {kh}x{kw} does not match spec kernel {spec.kernel}")
    if c_in % g or c_out % g:
        raise ShapeError(f"groups={g} must divide C_in={c_in} and C_out={c_out}")
    if cin_g != c_in // g:
        raise ShapeError(f"weight expects {cin_g} channels per group, input provides {c_in // g}")
    if bias_t is not None and bias_t.shape != (c_out,):
        raise ShapeError(f"bias shape {bias_t.shape} does not match C_out={c_out}")
    h_out, w_out = spec.out_extent(h), spec.out_extent(w)
    p = spec.pad
    cog = c_out // g

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    xg = xp.reshape(n, g, cin_g, xp.shape[2], xp.shape[3])
    c_idx, iy, ix = _gather_indices(cin_g, spec, h_out, w_out)
    cols = xg[:, :, c_idx[:, None], iy, ix]                     # (n, g, R, L)
    wmat = weight.data.reshape(g, cog, cin_g * kh * kw)
    out = np.matmul(wmat, cols)                                 # (n, g, cog, L)
    data = np.ascontiguousarray(out.reshape(n, c_out, h_out, w_out))
    if bias_t is not None:
        data = data + bias_t.data.reshape(1, c_out, 1, 1)

    def vjp(grad: np.ndarray):
        gm = grad.reshape(n, g, cog, h_out * w_out)
        gw = np.einsum("ngol,ngrl->gor", gm, cols).reshape(weight.shape)
        gcols = np.matmul(wmat.transpose(0, 2, 1), gm)          # (n, g, R, L)
        gxp = np.zeros_like(xg)
        np.add.at(
            gxp,
            (
                np.arange(n)[:, None, None, None],
                np.arange(g)[None, :, None, None],
                c_idx[None, None, :, None],
                iy[None, None],
                ix[None, None],
            ),
            gcols,
        )
        gx = gxp.reshape(xp.shape)[:, :, p : p + h, p : p + w]
        gb = grad.sum(axis=(0, 2, 3)) if bias_t is not None else None
        if bias_t is None:
            return np.ascontiguousarray(gx), gw
        return np.ascontiguousarray(gx), gw, gb

    parents = (x, weight) if bias_t is None else (x, weight, bias_t)
    return Tensor._node(data, parents, vjp, "conv2d")


def unfold(x: ArrayLike, spec: ConvSpec) -> Tensor:
    """Materialize every kxk receptive field as k^2 feature planes per channel.

    Output shape (N, C*k^2, H', W'); plane c*k^2 + j holds, at each output
    location, the j-th element (row-major within the window) of channel c's
    receptive field. Groups are ignored (unfold is per-channel by nature).
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"unfold expects rank-4 input, got rank {x.ndim}")
    n, c, h, w = x.shape
    h_out, w_out = spec.out_extent(h), spec.out_extent(w)
    p = spec.pad
    k = spec.kernel

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    c_idx, iy, ix = _gather_indices(c, spec, h_out, w_out)
    cols = xp[:, c_idx[:, None], iy, ix]                        # (n, C*k*k, L)
    data = np.ascontiguousarray(cols.reshape(n, c * k * k, h_out, w_out))

    def vjp(grad: np.ndarray):
        gcols = grad.reshape(n, c * k * k, h_out * w_out)
        gxp = np.zeros_like(xp)
        np.add.at(
            gxp,
            (np.arange(n)[:, None, None], c_idx[None, :, None], iy[None], ix[None]),
            gcols,
        )
        return (np.ascontiguousarray(gxp[:, :, p : p + h, p : p + w]),)

    return Tensor._node(data, (x,), vjp, "unfold")


def max_pool(x: ArrayLike, kernel: int, stride: int, padding: int = 0) -> Tensor:
    """Window-wise maximum; padded positions hold -inf and never win.

    Gradient routes to the first maximal element of each window (row-major),
    which keeps the backward pass deterministic under ties.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"max_pool expects rank-4 input, got rank {x.ndim}")
    if kernel < 1 or stride < 1 or padding < 0:
        raise ShapeError(f"invalid pooling geometry k={kernel} s={stride} p={padding}")
    n, c, h, w = x.shape
    if kernel > h + 2 * padding or kernel > w + 2 * padding:
        raise ShapeError(f"pooling window {kernel} exceeds padded extent")
    h_out = (h + 2 * padding - kernel) // stride + 1
    w_out = (w + 2 * padding - kernel) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError("non-positive output extent for max_pool")

    xp = np.pad(
        x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
        constant_values=-np.inf,
    )
    ky = np.repeat(np.arange(kernel), kernel)
    kx = np.tile(np.arange(kernel), kernel)
    oy = np.repeat(np.arange(h_out), w_out)
    ox = np.tile(np.arange(w_out), h_out)
    iy = ky[:, None] + oy[None, :] * stride                     # (k*k, L)
    ix = kx[:, None] + ox[None, :] * stride
    windows = xp[:, :, iy, ix]                                  # (n, c, k*k, L)
    best = windows.argmax(axis=2)                               # first max wins
    data = np.ascontiguousarray(
        np.take_along_axis(windows, best[:, :, None, :], axis=2)[:, :, 0, :]
        .reshape(n, c, h_out, w_out)
    )

    def vjp(grad: np.ndarray):
        gl = grad.reshape(n, c, h_out * w_out)
        sel_iy = iy[best, np.arange(h_out * w_out)[None, None, :]]
        sel_ix = ix[best, np.arange(h_out * w_out)[None, None, :]]
        gxp = np.zeros(xp.shape, dtype=grad.dtype)
        np.add.at(
            gxp,
            (
                np.arange(n)[:, None, None],
                np.arange(c)[None, :, None],
                sel_iy,
                sel_ix,
            ),
            gl,
        )
        return (np.ascontiguousarray(gxp[:, :, padding : padding + h, padding : padding + w]),)

    return Tensor._node(data, (x,), vjp, "max_pool")

"""Differentiable numerical core: 2D convolution, PReLU, Adam, gradient checks.

Tensors follow the (batch, channels, height, width) convention in the
public API. Convolutions are 3x3, size-preserving (zero padding of 1) and
use the cross-correlation convention (no kernel flip); learned filters
make the distinction immaterial, but the backward pass and all oracles
assume it.

Internally activations live in a flat spatial-major buffer of shape
(batch * padded_height * padded_width, channels) whose border rows are
kept at zero. In that layout every kernel tap is one BLAS GEMM that
accumulates into a contiguous row-slice, which is what makes CPU training
tractable; see ``conv_forward_flat``. All reductions run in a fixed
sequential order so identical runs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg.blas import dgemm, sgemm

from .errors import DivergenceError, InvalidParametersError, ShapeMismatchError
from .rng import Stream

KERNEL = 3


def ensure_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(f"{what} contains non-finite values")


@dataclass(frozen=True)
class ConvLayer:
    """One 3x3 convolution layer, optionally followed by PReLU.

    weights      (out_ch, in_ch, 3, 3)
    bias         (out_ch,)
    prelu_slope  (out_ch,) learned negative-side slopes, or None for a
                 linear (final) layer
    """

    weights: np.ndarray
    bias: np.ndarray
    prelu_slope: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.weights)
        b = np.asarray(self.bias)
        if w.ndim != 4 or w.shape[2:] != (KERNEL, KERNEL):
            raise ShapeMismatchError(f"conv weights must be (out, in, 3, 3), got {w.shape}")
        if b.shape != (w.shape[0],):
            raise ShapeMismatchError(f"bias must be ({w.shape[0]},), got {b.shape}")
        if self.prelu_slope is not None:
            s = np.asarray(self.prelu_slope)
            if s.shape != (w.shape[0],):
                raise ShapeMismatchError(f"prelu_slope must be ({w.shape[0]},), got {s.shape}")
            ensure_finite(s, "prelu_slope")
        ensure_finite(w, "conv weights")
        ensure_finite(b, "conv bias")

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def dtype(self) -> np.dtype:
        return self.weights.dtype

    def astype(self, dtype) -> "ConvLayer":
        return ConvLayer(
            weights=self.weights.astype(dtype),
            bias=self.bias.astype(dtype),
            prelu_slope=None if self.prelu_slope is None else self.prelu_slope.astype(dtype),
        )


def init_conv_layer(rng: Stream, in_ch: int, out_ch: int, with_prelu: bool,
                    dtype=np.float32) -> ConvLayer:
    """Zero-mean Gaussian weights with std sqrt(2 / (in_ch * 9)), zero bias.

    PReLU slopes start at 0.25 per channel.
    """
    std = np.sqrt(2.0 / (in_ch * KERNEL * KERNEL))
    w = (rng.normals((out_ch, in_ch, KERNEL, KERNEL)) * std).astype(dtype)
    b = np.zeros(out_ch, dtype=dtype)
    s = np.full(out_ch, 0.25, dtype=dtype) if with_prelu else None
    return ConvLayer(weights=w, bias=b, prelu_slope=s)


# ---------------------------------------------------------------------------
# flat spatial-major buffers


@dataclass(frozen=True)
class FlatGrid:
    """Geometry of a zero-padded (batch, H+2, W+2) grid flattened row-major."""

    batch: int
    height: int
    width: int

    @property
    def hp(self) -> int:
        return self.height + 2

    @property
    def wp(self) -> int:
        return self.width + 2

    @property
    def rows(self) -> int:
        return self.batch * self.hp * self.wp

    @property
    def start(self) -> int:
        # flat index of interior pixel (batch 0, row 1, col 1)
        return self.wp + 1

    @property
    def span(self) -> int:
        # contiguous flat run covering every interior pixel (plus border
        # positions between rows, which are kept at zero / ignored)
        return (self.batch - 1) * self.hp * self.wp + (self.height - 1) * self.wp + self.width


def embed_nchw(x: np.ndarray) -> tuple[np.ndarray, FlatGrid]:
    """Pack an NCHW tensor into a flat zero-bordered buffer (rows, channels)."""
    if x.ndim != 4:
        raise ShapeMismatchError(f"expected NCHW tensor, got ndim={x.ndim}")
    b, c, h, w = x.shape
    grid = FlatGrid(batch=b, height=h, width=w)
    buf = np.zeros((grid.rows, c), dtype=x.dtype)
    view = buf.reshape(b, grid.hp, grid.wp, c)
    view[:, 1:h + 1, 1:w + 1, :] = np.moveaxis(x, 1, -1)
    return buf, grid


def extract_nchw(buf: np.ndarray, grid: FlatGrid) -> np.ndarray:
    """Interior of a flat buffer as an NCHW tensor."""
    c = buf.shape[1]
    view = buf.reshape(grid.batch, grid.hp, grid.wp, c)
    return np.ascontiguousarray(
        np.moveaxis(view[:, 1:grid.height + 1, 1:grid.width + 1, :], -1, 1)
    )


def zero_border(buf: np.ndarray, grid: FlatGrid) -> None:
    """Clear every non-interior row of a flat buffer in place."""
    view = buf.reshape(grid.batch, grid.hp, grid.wp, -1)
    view[:, 0, :, :] = 0
    view[:, grid.height + 1:, :, :] = 0
    view[:, :, 0, :] = 0
    view[:, :, grid.width + 1:, :] = 0


def _gemm_acc(a: np.ndarray, b: np.ndarray, out: np.ndarray) -> None:
    """out += a @ b for C-contiguous row-major operands, without copies.

    Row-major X (m,k) is the BLAS view of column-major X^T, so the update
    out^T += b^T a^T runs directly on transposed views.
    """
    gemm = sgemm if a.dtype == np.float32 else dgemm
    res = gemm(1.0, b.T, a.T, beta=1.0, c=out.T, overwrite_c=True)
    if res.base is not out and res.base is not out.base:  # pragma: no cover
        out += res.T - out  # BLAS fell back to a copy; keep semantics


def _taps(grid: FlatGrid):
    for dy in range(KERNEL):
        for dx in range(KERNEL):
            yield dy * KERNEL + dx, (dy - 1) * grid.wp + (dx - 1)


def conv_forward_flat(xbuf: np.ndarray, grid: FlatGrid, layer: ConvLayer) -> np.ndarray:
    """3x3 same-convolution on a flat buffer; returns a flat pre-activation buffer.

    The nine taps accumulate W_t^T-weighted, tap-shifted row-slices of the
    input; border junk is cleared afterwards so the invariant "non-interior
    rows are zero" holds for the output.
    """
    if xbuf.shape[1] != layer.in_channels:
        raise ShapeMismatchError(
            f"input has {xbuf.shape[1]} channels, layer expects {layer.in_channels}")
    if xbuf.dtype != layer.dtype:
        raise ShapeMismatchError(f"dtype mismatch: input {xbuf.dtype}, weights {layer.dtype}")
    q0, span = grid.start, grid.span
    # tap-major weights: (3*3, in, out)
    w9 = np.ascontiguousarray(layer.weights.transpose(2, 3, 1, 0).reshape(9, layer.in_channels, -1))
    ybuf = np.zeros((grid.rows, layer.out_channels), dtype=xbuf.dtype)
    target = ybuf[q0:q0 + span]
    for t, delta in _taps(grid):
        _gemm_acc(xbuf[q0 + delta:q0 + delta + span], w9[t], target)
    target += layer.bias[None, :]
    zero_border(ybuf, grid)
    return ybuf


def conv_backward_flat(xbuf: np.ndarray, grid: FlatGrid, layer: ConvLayer,
                       gybuf: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of <gy, conv(x)> w.r.t. x, weights and bias, in flat layout.

    ``gybuf`` must be zero on non-interior rows (the chain maintains this).
    """
    q0, span = grid.start, grid.span
    cin, cout = layer.in_channels, layer.out_channels
    w9 = np.ascontiguousarray(layer.weights.transpose(2, 3, 1, 0).reshape(9, cin, cout))
    gy = gybuf[q0:q0 + span]
    gxbuf = np.zeros((grid.rows, cin), dtype=xbuf.dtype)
    gw9 = np.zeros_like(w9)
    for t, delta in _taps(grid):
        # dL/dx picks up gy through tap t shifted the opposite way
        _gemm_acc(gy, w9[t].T.copy(), gxbuf[q0 + delta:q0 + delta + span])
        # dL/dW_t correlates the tap-shifted input with gy
        xs = xbuf[q0 + delta:q0 + delta + span]
        gemm = sgemm if xbuf.dtype == np.float32 else dgemm
        gw9[t] = gemm(1.0, gy.T, xs.T, trans_a=0, trans_b=1).T
    zero_border(gxbuf, grid)
    gw = np.ascontiguousarray(gw9.reshape(KERNEL, KERNEL, cin, cout).transpose(3, 2, 0, 1))
    gb = gybuf.sum(axis=0)
    return gxbuf, gw, gb


# ---------------------------------------------------------------------------
# public NCHW operations


def conv2d_same(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Size-preserving 3x3 cross-correlation with zero padding of 1."""
    xbuf, grid = embed_nchw(np.asarray(x))
    ybuf = conv_forward_flat(xbuf, grid, layer)
    return extract_nchw(ybuf, grid)


def conv2d_backward(x: np.ndarray, layer: ConvLayer,
                    grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the scalar sum <grad_out, conv2d_same(x, layer)>."""
    x = np.asarray(x)
    grad_out = np.asarray(grad_out)
    if grad_out.shape != (x.shape[0], layer.out_channels, x.shape[2], x.shape[3]):
        raise ShapeMismatchError(
            f"grad_out shape {grad_out.shape} inconsistent with forward output")
    xbuf, grid = embed_nchw(x)
    gybuf, _ = embed_nchw(grad_out)
    gxbuf, gw, gb = conv_backward_flat(xbuf, grid, layer, gybuf)
    return extract_nchw(gxbuf, grid), gw, gb


def prelu_forward(x: np.ndarray, slope: np.ndarray, axis: int = 1) -> np.ndarray:
    """y = x where x >= 0 else slope * x, slope broadcast on ``axis``."""
    s = _broadcast_slope(x, slope, axis)
    return np.where(x >= 0, x, s * x)


def prelu_backward(x: np.ndarray, slope: np.ndarray, grad_out: np.ndarray,
                   axis: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Gradients w.r.t. input and slope; derivative at x = 0 is taken as 1."""
    if x.shape != grad_out.shape:
        raise ShapeMismatchError(f"x {x.shape} vs grad_out {grad_out.shape}")
    s = _broadcast_slope(x, slope, axis)
    neg = x < 0
    grad_x = np.where(neg, s * grad_out, grad_out)
    reduce_axes = tuple(a for a in range(x.ndim) if a != (axis % x.ndim))
    grad_slope = np.where(neg, grad_out * x, 0).sum(axis=reduce_axes)
    return grad_x, grad_slope.astype(slope.dtype)


def _broadcast_slope(x: np.ndarray, slope: np.ndarray, axis: int) -> np.ndarray:
    shape = [1] * x.ndim
    shape[axis % x.ndim] = -1
    return np.asarray(slope).reshape(shape)


# ---------------------------------------------------------------------------
# Adam


@dataclass(frozen=True)
class AdamState:
    """Adam moment accumulators and hyperparameters."""

    m: tuple[np.ndarray, ...]
    v: tuple[np.ndarray, ...]
    t: int
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: list[np.ndarray], lr: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        m=tuple(np.zeros_like(p) for p in params),
        v=tuple(np.zeros_like(p) for p in params),
        t=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState) -> tuple[list[np.ndarray], AdamState]:
    """One Adam update. Pure: returns fresh parameter and state arrays."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatchError("params, grads and state must align")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in parameter tensor {i}")
    t = state.t + 1
    b1c = 1.0 - state.beta1 ** t
    b2c = 1.0 - state.beta2 ** t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        step = state.lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)
        new_params.append(p - step)
        new_m.append(m)
        new_v.append(v)
    return new_params, replace(state, m=tuple(new_m), v=tuple(new_v), t=t)


# ---------------------------------------------------------------------------
# finite differences


def finite_diff_check(f, params: list[np.ndarray], h: float,
                      coords_per_tensor: int | None = None,
                      rng: Stream | None = None) -> float:
    """Worst relative error of analytic vs central-difference gradients.

    ``f(params) -> (scalar, grads)`` supplies the analytic gradients; the
    check perturbs one coordinate at a time. With ``coords_per_tensor`` a
    fixed random subset of coordinates per tensor is checked instead of a
    full sweep (every tensor is still covered), which is what makes checks
    of large parameter sets affordable. Relative error uses denominator
    max(|analytic|, |numeric|, 1e-12).
    """
    if h <= 0:
        raise InvalidParametersError(f"step size h must be > 0, got {h}")
    _, grads = f(params)
    worst = 0.0
    for ti, p in enumerate(params):
        flat = p.reshape(-1)
        n = flat.size
        if coords_per_tensor is None or coords_per_tensor >= n:
            coords = range(n)
        else:
            if rng is None:
                raise InvalidParametersError("coordinate sampling needs an rng stream")
            coords = sorted(set(int(i) for i in rng.integers_below(n, coords_per_tensor)))
        for ci in coords:
            orig = flat[ci]
            flat[ci] = orig + h
            lo_plus = f(params)[0]
            flat[ci] = orig - h
            lo_minus = f(params)[0]
            flat[ci] = orig
            numeric = (lo_plus - lo_minus) / (2.0 * h)
            analytic = float(grads[ti].reshape(-1)[ci])
            denom = max(abs(analytic), abs(numeric), 1e-12)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst

"""Differentiable ops.

Spatial ops take ``(N, C, H, W)`` batches; a bare ``(C, H, W)`` map is treated
as a batch of one and returned without the batch axis. Elementwise ops accept
same-shape tensors or a python scalar on either side; there is no broadcasting.
"""

from __future__ import annotations

from typing import Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .tensor import Tensor, as_tensor, check_finite, make_node

Scalar = Union[int, float]


# ---------------------------------------------------------------------------
# shape helpers


def reshape(x: Tensor, shape) -> Tensor:
    in_shape = x.shape
    out = x.data.reshape(shape)
    return make_node(out, "reshape", (x,), lambda g: (g.reshape(in_shape),))


def flatten(x: Tensor) -> Tensor:
    """Keep the leading batch axis, flatten everything else."""
    if x.ndim < 2:
        return x
    return reshape(x, (x.shape[0], -1))


def _unbatched(fn):
    def wrapper(x: Tensor, *args, **kwargs):
        if x.ndim == 3:
            y = fn(reshape(x, (1,) + x.shape), *args, **kwargs)
            return reshape(y, y.shape[1:])
        if x.ndim != 4:
            raise ValueError(f"{fn.__name__}: expected (N,C,H,W) or (C,H,W), got shape {x.shape}")
        return fn(x, *args, **kwargs)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _out_dim(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


# ---------------------------------------------------------------------------
# convolution


@_unbatched
def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0,
           groups: int = 1, name: str = "conv2d") -> Tensor:
    """Cross-correlation of ``x`` with ``w`` plus per-channel bias.

    ``w`` has shape ``(C_out, C_in // groups, k, k)``. Implemented as an
    im2col copy followed by one GEMM per group; the column matrix is rebuilt
    in backward rather than kept alive.
    """
    N, C, H, W = x.shape
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ValueError(f"{name}: weight must be (C_out, C_in/groups, k, k), got {w.shape}")
    Co, Cg, k, _ = w.shape
    if k < 1 or stride < 1 or padding < 0:
        raise ValueError(f"{name}: bad kernel/stride/padding ({k}, {stride}, {padding})")
    if groups < 1 or C % groups or Co % groups:
        raise ValueError(f"{name}: channels ({C} in, {Co} out) not divisible by groups={groups}")
    if Cg != C // groups:
        raise ValueError(f"{name}: weight expects {Cg * groups} input channels, input has {C}")
    if b is not None and b.shape != (Co,):
        raise ValueError(f"{name}: bias shape {b.shape} != ({Co},)")
    Ho, Wo = _out_dim(H, k, stride, padding), _out_dim(W, k, stride, padding)
    if Ho < 1 or Wo < 1:
        raise ValueError(f"{name}: non-positive output size {Ho}x{Wo} for input {H}x{W}")

    if kernels.get_backend() == "torch":
        out, backward = _conv_torch(x, w, b, stride, padding, groups)
    elif groups == 1:
        out, backward = _conv_dense(x, w, b, stride, padding, Ho, Wo)
    else:
        out, backward = _conv_grouped(x, w, b, stride, padding, groups, Ho, Wo)
    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, name, parents, backward)


def _conv_torch(x, w, b, stride, padding, groups):
    out, tback = kernels.torch_conv2d(x.data, w.data, None if b is None else b.data,
                                      stride, padding, groups)

    def backward(g: np.ndarray):
        return tback(g, x.requires_grad, w.requires_grad)

    return out, backward


def _nhwc_cols(xp: np.ndarray, k: int, stride: int, Ho: int, Wo: int) -> np.ndarray:
    """im2col on a padded NHWC array; rows are (n, ho, wo), columns (i, j, c)."""
    N, C = xp.shape[0], xp.shape[3]
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :Ho, :Wo]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(N * Ho * Wo, k * k * C)


def _pad_nhwc(x_nchw: np.ndarray, p: int) -> np.ndarray:
    xh = x_nchw.transpose(0, 2, 3, 1)
    if p:
        return np.pad(xh, ((0, 0), (p, p), (p, p), (0, 0)))
    return np.ascontiguousarray(xh)


def _conv_dense(x, w, b, stride, padding, Ho, Wo):
    # channels-last internally: (M, K) @ (K, C_out) is the GEMM shape BLAS handles best here
    N, C, H, W = x.shape
    Co, _, k, _ = w.shape
    M = N * Ho * Wo
    xp = _pad_nhwc(x.data, padding)
    wm = w.data.transpose(0, 2, 3, 1).reshape(Co, k * k * C)
    cols = _nhwc_cols(xp, k, stride, Ho, Wo)
    out = cols @ wm.T
    del cols
    if b is not None:
        out += b.data
    out = np.ascontiguousarray(out.reshape(N, Ho, Wo, Co).transpose(0, 3, 1, 2))

    def backward(g: np.ndarray):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(M, Co)
        gb = gm.sum(axis=0) if b is not None else None
        gw = gx = None
        if w.requires_grad:
            cols = _nhwc_cols(xp, k, stride, Ho, Wo)
            gw = (gm.T @ cols).reshape(Co, k, k, C).transpose(0, 3, 1, 2)
            gw = np.ascontiguousarray(gw, dtype=g.dtype)
            del cols
        if x.requires_grad:
            if stride == 1 and padding <= k - 1:
                # input grad as a full correlation of g with the flipped kernel
                gp = _pad_nhwc(g, k - 1 - padding)
                wf = w.data[:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(k * k * Co, C)
                gx = _nhwc_cols(gp, k, 1, H, W) @ wf
                gx = np.ascontiguousarray(gx.reshape(N, H, W, C).transpose(0, 3, 1, 2))
            else:
                gcols = (gm @ wm).reshape(N, Ho, Wo, k, k, C)
                gxp = np.zeros(xp.shape, dtype=g.dtype)
                hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
                for i in range(k):
                    for j in range(k):
                        gxp[:, i:i + hs:stride, j:j + ws:stride, :] += gcols[:, :, :, i, j, :]
                gxp = gxp[:, padding:padding + H, padding:padding + W, :]
                gx = np.ascontiguousarray(gxp.transpose(0, 3, 1, 2))
        return gx, gw, gb

    return out, backward


def _conv_grouped(x, w, b, stride, padding, groups, Ho, Wo):
    N, C, H, W = x.shape
    Co, Cg, k, _ = w.shape
    G, Cog = groups, Co // groups
    K = Cg * k * k
    M = N * Ho * Wo
    xd = x.data
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd

    # K-major columns (C*k*k, M) so each group is a contiguous row block
    def im2col() -> np.ndarray:
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
        return win.transpose(1, 4, 5, 0, 2, 3).reshape(G, K, M)

    wg = w.data.reshape(G, Cog, K)
    out = np.matmul(wg, im2col()).reshape(Co, M)
    if b is not None:
        out += b.data[:, None]
    out = np.ascontiguousarray(out.reshape(Co, N, Ho, Wo).transpose(1, 0, 2, 3))

    def backward(g: np.ndarray):
        gm = g.transpose(1, 0, 2, 3).reshape(G, Cog, M)
        gb = gm.reshape(Co, M).sum(axis=1) if b is not None else None
        gx = gw = None
        if w.requires_grad:
            gw = np.matmul(gm, im2col().transpose(0, 2, 1)).reshape(w.shape)
        if x.requires_grad:
            gcols = np.matmul(wg.transpose(0, 2, 1), gm).reshape(C, k, k, N, Ho, Wo)
            gxp = np.zeros((C, N) + xp.shape[2:], dtype=g.dtype)
            hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + hs:stride, j:j + ws:stride] += gcols[:, i, j]
            gxp = gxp.transpose(1, 0, 2, 3)
            gx = np.ascontiguousarray(gxp[:, :, padding:padding + H, padding:padding + W])
        return gx, gw, gb

    return out, backward


# ---------------------------------------------------------------------------
# pooling


@_unbatched
def maxpool2d(x: Tensor, k: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    """Windowed max. Ties send the gradient to the first element in row-major order."""
    N, C, H, W = x.shape
    Ho, Wo = _out_dim(H, k, stride, padding), _out_dim(W, k, stride, padding)
    if Ho < 1 or Wo < 1:
        raise ValueError(f"maxpool2d: non-positive output size {Ho}x{Wo} for input {H}x{W}")
    xd = x.data
    if kernels.get_backend() == "torch":
        out, tback = kernels.torch_maxpool2d(xd, k, stride, padding)
        return make_node(out, "maxpool2d", (x,), lambda g: (tback(g),))
    if padding:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                    constant_values=-np.inf)
    else:
        xp = xd
    hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
    out = xp[:, :, 0:hs:stride, 0:ws:stride].copy()
    idx = np.zeros(out.shape, dtype=np.int8)
    for t in range(1, k * k):
        i, j = divmod(t, k)
        cand = xp[:, :, i:i + hs:stride, j:j + ws:stride]
        better = cand > out  # strict: ties keep the earlier row-major element
        np.copyto(out, cand, where=better)
        np.copyto(idx, t, where=better)

    def backward(g: np.ndarray):
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for t in range(k * k):
            i, j = divmod(t, k)
            gxp[:, :, i:i + hs:stride, j:j + ws:stride] += g * (idx == t)
        return (gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp,)

    return make_node(out, "maxpool2d", (x,), backward)


def _bins(size: int, n: int) -> list[tuple[int, int]]:
    return [((i * size) // n, ((i + 1) * size) // n) for i in range(n)]


def _check_adaptive(op: str, x: Tensor, n: int, m: int) -> None:
    H, W = x.shape[2:]
    if not (1 <= n <= H and 1 <= m <= W):
        raise ValueError(f"{op}: output ({n}, {m}) out of range for input {H}x{W}")


@_unbatched
def adaptive_avg_pool(x: Tensor, n: int = 1, m: int = 1) -> Tensor:
    """Average over an n x m partition of the spatial grid.

    Rows are split into ``n`` contiguous bins ``[floor(i*H/n), floor((i+1)*H/n))``
    whose sizes differ by at most one; columns likewise. ``n = m = 1`` is GAP.
    """
    _check_adaptive("adaptive_avg_pool", x, n, m)
    N, C, H, W = x.shape
    xd = x.data
    if n == 1 and m == 1:
        out = xd.mean(axis=(2, 3), dtype=np.float64).astype(xd.dtype)[:, :, None, None]

        def backward(g: np.ndarray):
            return (np.broadcast_to(g / (H * W), xd.shape).astype(g.dtype),)

        return make_node(out, "adaptive_avg_pool", (x,), backward)

    rows, colsb = _bins(H, n), _bins(W, m)
    out = np.empty((N, C, n, m), dtype=xd.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(colsb):
            out[:, :, i, j] = xd[:, :, r0:r1, c0:c1].mean(axis=(2, 3), dtype=np.float64)

    def backward(g: np.ndarray):
        gx = np.zeros(xd.shape, dtype=g.dtype)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(colsb):
                area = (r1 - r0) * (c1 - c0)
                gx[:, :, r0:r1, c0:c1] += (g[:, :, i, j] / area)[:, :, None, None]
        return (gx,)

    return make_node(out, "adaptive_avg_pool", (x,), backward)


@_unbatched
def adaptive_max_pool(x: Tensor, n: int = 1, m: int = 1) -> Tensor:
    """Max over the same bin partition as :func:`adaptive_avg_pool`."""
    _check_adaptive("adaptive_max_pool", x, n, m)
    N, C, H, W = x.shape
    xd = x.data
    rows, colsb = _bins(H, n), _bins(W, m)
    out = np.empty((N, C, n, m), dtype=xd.dtype)
    arg = {}
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(colsb):
            block = xd[:, :, r0:r1, c0:c1].reshape(N, C, -1)
            a = block.argmax(axis=-1)
            arg[i, j] = a
            out[:, :, i, j] = np.take_along_axis(block, a[..., None], axis=-1)[..., 0]

    def backward(g: np.ndarray):
        gx = np.zeros(xd.shape, dtype=g.dtype)
        nn_, cc = np.meshgrid(np.arange(N), np.arange(C), indexing="ij")
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(colsb):
                bw = c1 - c0
                a = arg[i, j]
                gx[nn_, cc, r0 + a // bw, c0 + a % bw] += g[:, :, i, j]
        return (gx,)

    return make_node(out, "adaptive_max_pool", (x,), backward)


# ---------------------------------------------------------------------------
# dense layers and activations


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None, name: str = "linear") -> Tensor:
    """``x @ w.T + b`` for ``x`` of shape ``(N_in,)`` or ``(N, N_in)``."""
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ValueError(f"{name}: input features {x.shape[-1:]} do not match weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ValueError(f"{name}: bias shape {b.shape} != ({w.shape[0]},)")
    single = x.ndim == 1
    xd = x.data[None, :] if single else x.data
    out = xd @ w.data.T
    if b is not None:
        out += b.data

    def backward(g: np.ndarray):
        g2 = g[None, :] if single else g
        gx = g2 @ w.data if x.requires_grad else None
        if gx is not None and single:
            gx = gx[0]
        gw = g2.T @ xd if w.requires_grad else None
        gb = g2.sum(axis=0) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out[0] if single else out, name, parents, backward)


def relu(x: Tensor) -> Tensor:
    xd = x.data
    mask = xd > 0
    return make_node(np.maximum(xd, xd.dtype.type(0)), "relu", (x,), lambda g: (g * mask,))


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis, stabilised by subtracting the row max."""
    xd = x.data
    e = np.exp(xd - xd.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return make_node(s, "softmax", (x,), backward)


def log_softmax(x: Tensor) -> Tensor:
    xd = x.data
    shifted = xd - xd.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def backward(g: np.ndarray):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return make_node(out, "log_softmax", (x,), backward)


class Categorical:
    """Categorical distribution over the last axis of ``logits``."""

    def __init__(self, logits: Tensor):
        check_finite(logits.data, "categorical logits")
        self.logits = logits
        self.log_probs = log_softmax(logits)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs.data)

    def log_prob(self, actions) -> Tensor:
        return gather(self.log_probs, np.asarray(actions))

    def entropy(self) -> Tensor:
        p = exp(self.log_probs)
        return neg(sum(mul(p, self.log_probs), axis=-1))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Inverse-CDF sampling; one uniform draw per distribution."""
        p = self.probs.astype(np.float64)
        squeeze = p.ndim == 1
        p2 = p[None, :] if squeeze else p
        u = rng.random(p2.shape[0])
        cdf = np.cumsum(p2, axis=-1)
        cdf /= cdf[:, -1:]
        a = (cdf <= u[:, None]).sum(axis=-1)
        # guard against landing on a trailing zero-probability action
        last = p2.shape[1] - 1 - np.argmax(p2[:, ::-1] > 0, axis=-1)
        a = np.minimum(a, last)
        return a[0] if squeeze else a

    def mode(self) -> np.ndarray:
        return self.logits.data.argmax(axis=-1)


# ---------------------------------------------------------------------------
# elementwise arithmetic and reductions used by the losses


def _pair(a, b, op: str) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
        return a, b
    if isinstance(a, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    return Tensor(np.asarray(a, dtype=b.dtype)), b


def _reduce_like(g: np.ndarray, t: Tensor) -> np.ndarray:
    if t.shape == g.shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(t.shape)


def add(a, b) -> Tensor:
    a, b = _pair(a, b, "add")
    return make_node(a.data + b.data, "add", (a, b),
                     lambda g: (_reduce_like(g, a), _reduce_like(g, b)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b, "sub")
    return make_node(a.data - b.data, "sub", (a, b),
                     lambda g: (_reduce_like(g, a), _reduce_like(-g, b)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b, "mul")
    ad, bd = a.data, b.data
    return make_node(ad * bd, "mul", (a, b),
                     lambda g: (_reduce_like(g * bd, a), _reduce_like(g * ad, b)))


def neg(a: Tensor) -> Tensor:
    return make_node(-a.data, "neg", (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_node(out, "exp", (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return make_node(np.log(ad), "log", (a,), lambda g: (g / ad,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return make_node(ad * ad, "square", (a,), lambda g: (2 * g * ad,))


def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001 - mirrors numpy
    out = np.asarray(a.data.sum(axis=axis), dtype=a.dtype)

    def backward(g: np.ndarray):
        gg = g if axis is None else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).astype(a.dtype),)

    return make_node(out, "sum", (a,), backward)


def mean(a: Tensor) -> Tensor:
    n = a.size
    out = np.asarray(a.data.mean(dtype=np.float64), dtype=a.dtype)
    return make_node(out, "mean", (a,), lambda g: (np.full(a.shape, g / n, dtype=a.dtype),))


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient goes to ``a``."""
    a, b = _pair(a, b, "maximum")
    pick_a = a.data >= b.data
    return make_node(np.where(pick_a, a.data, b.data), "maximum", (a, b),
                     lambda g: (_reduce_like(g * pick_a, a), _reduce_like(g * ~pick_a, b)))


def minimum(a, b) -> Tensor:
    """Elementwise min; on ties the gradient goes to ``a``."""
    a, b = _pair(a, b, "minimum")
    pick_a = a.data <= b.data
    return make_node(np.where(pick_a, a.data, b.data), "minimum", (a, b),
                     lambda g: (_reduce_like(g * pick_a, a), _reduce_like(g * ~pick_a, b)))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return make_node(np.clip(ad, lo, hi), "clip", (a,), lambda g: (g * inside,))


def gather(a: Tensor, index: np.ndarray) -> Tensor:
    """``a[..., index]`` picked row-wise along the last axis."""
    index = np.asarray(index, dtype=np.int64)
    if index.shape != a.shape[:-1]:
        raise ValueError(f"gather: index shape {index.shape} != {a.shape[:-1]}")
    out = np.take_along_axis(a.data, index[..., None], axis=-1)[..., 0]

    def backward(g: np.ndarray):
        ga = np.zeros(a.shape, dtype=g.dtype)
        np.put_along_axis(ga, index[..., None], g[..., None], axis=-1)
        return (ga,)

    return make_node(out, "gather", (a,), backward)


def huber(a: Tensor, delta: float = 1.0) -> Tensor:
    """Elementwise Huber penalty of ``a`` (quadratic inside ``|a| <= delta``)."""
    ad = a.data
    small = np.abs(ad) <= delta
    out = np.where(small, 0.5 * ad * ad, delta * (np.abs(ad) - 0.5 * delta)).astype(ad.dtype)
    return make_node(out, "huber", (a,),
                     lambda g: (g * np.where(small, ad, delta * np.sign(ad)).astype(ad.dtype),))


def detach(a: Tensor) -> Tensor:
    return as_tensor(a.data)

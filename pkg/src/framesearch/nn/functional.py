"""Differentiable layer primitives and losses."""

import numpy as np

from .. import kernels
from ..errors import NonFiniteError, ShapeError
from .tensor import Tensor, _as_tensor, make

BCE_CLIP = 1e-7


_CHUNK_ELEMENTS = 1 << 18


def _chunk_images(k, pixels):
    """Images per im2col chunk, sized so the patch matrix stays cache resident."""
    return max(1, _CHUNK_ELEMENTS // max(1, k * pixels))


def conv2d(x, weight, bias=None, stride=1):
    """Same-padded 2-D convolution (cross-correlation) on NCHW input."""
    n, c, h, w = x.shape
    f, kc, kh, kw = weight.shape
    if c != kc:
        raise ShapeError(f"conv2d: input shape {x.shape} has {c} channels but kernel shape "
                         f"{weight.shape} expects {kc}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel extents must be odd, got {weight.shape}")
    pad = kh // 2
    if kw // 2 != pad:
        raise ShapeError("conv2d: non-square kernels are not supported")
    oh = (h - 1) // stride + 1
    ow = (w - 1) // stride + 1
    w2 = weight.data.reshape(f, -1)
    xdata = x.data
    xshape = x.shape
    step = _chunk_images(c * kh * kw, oh * ow)
    out = np.empty((n, oh, ow, f), dtype=np.result_type(xdata, w2))
    for s in range(0, n, step):
        cols = kernels.im2col(xdata[s:s + step], kh, kw, stride, pad)
        out[s:s + step] = (cols @ w2.T).reshape(-1, oh, ow, f)
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
        want_w = weight.requires_grad
        gx = gw = gb = None
        if want_w:
            gw = np.zeros_like(w2)
        if bias is not None and bias.requires_grad:
            flat = gt.reshape(-1, f)
            gb = np.ones(flat.shape[0], dtype=flat.dtype) @ flat
        if x.requires_grad:
            gx = np.empty(xshape, dtype=gt.dtype)
        for s in range(0, n, step):
            g2 = gt[s:s + step].reshape(-1, f)
            if want_w:
                # patches are recomputed per chunk rather than kept alive
                cols = kernels.im2col(xdata[s:s + step], kh, kw, stride, pad)
                gw += g2.T @ cols
            if gx is not None:
                gx[s:s + step] = kernels.col2im(g2 @ w2, gx[s:s + step].shape, kh, kw, stride, pad)
        if gw is not None:
            gw = gw.reshape(weight.shape)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(out, parents, backward)


def dense(x, weight, bias=None):
    """Fully connected layer: ``x @ weight.T + bias``."""
    if x.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"dense: input shape {x.shape} incompatible with weight shape {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(out, parents, backward)


def relu(x):
    mask = x.data > 0
    return make(np.maximum(x.data, 0), (x,), lambda g: (g * mask,))


def _stable_sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    s = _stable_sigmoid(x.data)
    return make(s, (x,), lambda g: (g * s * (1 - s),))


def exp(x):
    e = np.exp(x.data)
    return make(e, (x,), lambda g: (g * e,))


def sqrt(x):
    r = np.sqrt(x.data)
    return make(r, (x,), lambda g: (g * 0.5 / r,))


def square(x):
    d = x.data
    return make(d * d, (x,), lambda g: (2 * g * d,))


def downsample2(x):
    """Keep every second row and column; spatial extents must be even."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"downsample2 needs even spatial extents, got {x.shape}")
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[:, :, ::2, ::2] = g
        return (gx,)

    return make(np.ascontiguousarray(x.data[:, :, ::2, ::2]), (x,), backward)


def upsample2(x):
    """Nearest-neighbour upsampling by 2 in both spatial axes."""
    n, c, h, w = x.shape
    out = np.broadcast_to(x.data[:, :, :, None, :, None], (n, c, h, 2, w, 2)).reshape(n, c, 2 * h, 2 * w)
    return make(out, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),))


def flatten(x):
    return x.reshape(x.shape[0], -1)


def unflatten(x, shape):
    return x.reshape((x.shape[0],) + tuple(shape))


def crop2d(x, h, w):
    """Centre crop of the spatial extents to ``(h, w)``."""
    _, _, H, W = x.shape
    if (H, W) == (h, w):
        return x
    top, left = (H - h) // 2, (W - w) // 2
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[:, :, top:top + h, left:left + w] = g
        return (gx,)

    return make(np.ascontiguousarray(x.data[:, :, top:top + h, left:left + w]), (x,), backward)


def row_distance(a, b, eps=0.0):
    """Euclidean distance between matching rows of two (N, D) tensors."""
    diff = a - b
    sq = (diff * diff).sum(axis=1)
    if eps:
        sq = sq + eps
    return sqrt(sq)


# losses -----------------------------------------------------------------

def bce_loss(prediction, target):
    """Mean binary cross-entropy; predictions are clipped to [1e-7, 1 - 1e-7]."""
    p = _as_tensor(prediction)
    t = _as_tensor(target, p.dtype)
    if p.shape != t.shape:
        raise ShapeError(f"bce_loss: prediction shape {p.shape} != target shape {t.shape}")
    if np.isnan(p.data).any() or np.isnan(t.data).any():
        raise NonFiniteError("bce_loss: NaN in inputs")
    pc = np.clip(p.data, BCE_CLIP, 1 - BCE_CLIP)
    td = t.data
    size = p.data.size
    lp, l1p = np.log(pc), np.log1p(-pc)
    loss = -(td * lp + (1 - td) * l1p).mean()
    inside = (p.data >= BCE_CLIP) & (p.data <= 1 - BCE_CLIP)

    def backward(g):
        gp = gt = None
        if p.requires_grad:
            gp = g * inside * (pc - td) / (pc * (1 - pc)) / size
        if t.requires_grad:
            gt = g * (l1p - lp) / size
        return gp, gt

    return make(np.asarray(loss, dtype=p.dtype), (p, t), backward)


def kl_unit_normal(mu, log_var):
    """KL(N(mu, exp(log_var)) || N(0, I)) summed over dims, averaged over the batch."""
    if mu.shape != log_var.shape:
        raise ShapeError(f"kl_unit_normal: mu shape {mu.shape} != log_var shape {log_var.shape}")
    if not np.isfinite(log_var.data).all():
        raise NonFiniteError("kl_unit_normal: non-finite log_var")
    m, lv = mu.data, log_var.data
    n = m.shape[0] if m.ndim > 1 else 1
    var = np.exp(lv)
    loss = 0.5 * (m * m + var - 1.0 - lv).sum() / n

    def backward(g):
        return g * m / n, g * 0.5 * (var - 1.0) / n

    return make(np.asarray(loss, dtype=mu.dtype), (mu, log_var), backward)


def contrastive_loss(d, y, margin=1.0):
    """Mean of ``(1-y) d^2 / 2 + y max(0, margin - d)^2 / 2``; y=0 marks a similar pair."""
    d = _as_tensor(d)
    y = np.asarray(y, dtype=d.dtype)
    if margin <= 0:
        raise ValueError("contrastive_loss: margin must be positive")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("contrastive_loss: labels must be 0 (similar) or 1 (dissimilar)")
    if (d.data < 0).any():
        raise ValueError("contrastive_loss: distances must be nonnegative")
    dd = d.data
    hinge = np.maximum(0.0, margin - dd)
    per = (1 - y) * 0.5 * dd * dd + y * 0.5 * hinge * hinge
    size = max(per.size, 1)

    def backward(g):
        return (g * ((1 - y) * dd - y * hinge) / size,)

    return make(np.asarray(per.mean(), dtype=d.dtype), (d,), backward)

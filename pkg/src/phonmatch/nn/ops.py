"""Differentiable operations used by the keyword-matching graph.

Sequence ops take ``[B, T, C]`` inputs; a 2-D ``[T, C]`` input is treated as a
batch of one and returned without the batch axis.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor, as_tensor, make

MASK_VALUE = -1e9
BCE_CLAMP = 1e-7


def _sum_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return make(out, (a, b), lambda g: (_sum_to(g, a.shape), _sum_to(g, b.shape)), "add")


def mul(x: Tensor, c) -> Tensor:
    """Multiply by a constant array (masks, weights); no gradient flows into ``c``."""
    x = as_tensor(x)
    c = np.asarray(c, dtype=x.dtype)
    return make(x.data * c, (x,), lambda g: (_sum_to(g * c, x.shape),), "mul")


def total(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return make(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    on = x.data > 0
    return make(np.where(on, x.data, 0).astype(x.dtype), (x,), lambda g: (g * on,), "relu")


def _sigmoid(a: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0, -a)).astype(a.dtype)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return make(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def fc(x: Tensor, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map over the last axis: ``x @ W.T + b`` with ``W`` of shape [out, in]."""
    x, W = as_tensor(x), as_tensor(W)
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"fc: input has {x.shape[-1]} features, weight expects {W.shape[1]}")
    out = x.data @ W.data.T
    if b is not None:
        if b.shape != (W.shape[0],):
            raise ValueError(f"fc: bias shape {b.shape} != ({W.shape[0]},)")
        out = out + b.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.shape[-1])
        grads = [g @ W.data, g2.T @ x2]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return grads

    parents = (x, W) if b is None else (x, W, b)
    return make(out, parents, backward, "fc")


def _batched(x: Tensor) -> tuple:
    if x.data.ndim == 2:
        return x.data[None], True
    if x.data.ndim != 3:
        raise ValueError(f"expected [T, C] or [B, T, C], got shape {x.shape}")
    return x.data, False


def conv1d(x: Tensor, K: Tensor, b: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """'Same'-padded strided convolution; ``K`` has shape [k, Cin, Cout], output length ceil(T/stride)."""
    x, K = as_tensor(x), as_tensor(K)
    xd, squeeze = _batched(x)
    k, cin, cout = K.shape
    if k % 2 == 0:
        raise ValueError("conv1d: kernel size must be odd")
    B, T, C = xd.shape
    if T == 0:
        raise ValueError("conv1d: empty input sequence")
    if C != cin:
        raise ValueError(f"conv1d: input has {C} channels, kernel expects {cin}")
    pad = (k - 1) // 2
    t_out = -(-T // stride)
    xp = np.zeros((B, T + 2 * pad, C), dtype=xd.dtype)
    xp[:, pad:pad + T] = xd
    span = stride * (t_out - 1) + 1
    out = np.zeros((B, t_out, cout), dtype=xd.dtype)
    for j in range(k):
        out += xp[:, j:j + span:stride] @ K.data[j]
    if b is not None:
        out += b.data

    def backward(g):
        g = g[None] if squeeze else g
        gxp = np.zeros_like(xp)
        gK = np.empty_like(K.data)
        g2 = g.reshape(-1, cout)
        for j in range(k):
            gxp[:, j:j + span:stride] += g @ K.data[j].T
            gK[j] = xp[:, j:j + span:stride].reshape(-1, cin).T @ g2
        gx = gxp[:, pad:pad + T]
        grads = [gx[0] if squeeze else gx, gK]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return grads

    parents = (x, K) if b is None else (x, K, b)
    return make(out[0] if squeeze else out, parents, backward, "conv1d")


def tconv1d(x: Tensor, K: Tensor, b: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """Transposed convolution; ``K`` has shape [k, Cout, Cin], output length (T-1)*stride + k."""
    x, K = as_tensor(x), as_tensor(K)
    xd, squeeze = _batched(x)
    k, cout, cin = K.shape
    B, T, C = xd.shape
    if T < 1:
        raise ValueError("tconv1d: empty input sequence")
    if C != cin:
        raise ValueError(f"tconv1d: input has {C} channels, kernel expects {cin}")
    t_out = (T - 1) * stride + k
    span = stride * (T - 1) + 1
    out = np.zeros((B, t_out, cout), dtype=xd.dtype)
    for j in range(k):
        out[:, j:j + span:stride] += xd @ K.data[j].T
    if b is not None:
        out += b.data

    def backward(g):
        g = g[None] if squeeze else g
        gx = np.zeros_like(xd)
        gK = np.empty_like(K.data)
        x2 = xd.reshape(-1, cin)
        for j in range(k):
            gj = g[:, j:j + span:stride]
            gx += gj @ K.data[j]
            gK[j] = gj.reshape(-1, cout).T @ x2
        grads = [gx[0] if squeeze else gx, gK]
        if b is not None:
            grads.append(g.reshape(-1, cout).sum(axis=0))
        return grads

    parents = (x, K) if b is None else (x, K, b)
    return make(out[0] if squeeze else out, parents, backward, "tconv1d")


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
              running_var: np.ndarray, training: bool, mask: Optional[np.ndarray] = None,
              momentum: float = 0.99, eps: float = 1e-5) -> Tensor:
    """Batch normalization over every axis but the last.

    ``mask`` (shape ``x.shape[:-1]``) excludes padded positions from the
    batch statistics; masked outputs are exactly zero. In training mode the
    running statistics are updated in place.
    """
    x = as_tensor(x)
    if x.shape[-1] != gamma.shape[0]:
        raise ValueError(f"batchnorm: input has {x.shape[-1]} channels, scale has {gamma.shape[0]}")
    m = np.ones(x.shape[:-1], dtype=x.dtype) if mask is None else np.asarray(mask, dtype=x.dtype)
    m = m[..., None]
    axes = tuple(range(x.data.ndim - 1))
    n = float(m.sum())
    if training:
        if n < 2:
            raise ValueError("batchnorm: training mode needs at least 2 samples per channel")
        mean = (x.data * m).sum(axis=axes) / n
        centred = (x.data - mean) * m
        var = (centred ** 2).sum(axis=axes) / n
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
        centred = (x.data - mean) * m
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = centred * inv_std
    out = (xhat * gamma.data + beta.data) * m

    def backward(g):
        gm = g * m
        g_gamma = (gm * xhat).sum(axis=axes)
        g_beta = gm.sum(axis=axes)
        gxhat = gm * gamma.data
        if training:
            s1 = gxhat.sum(axis=axes)
            s2 = (gxhat * xhat).sum(axis=axes)
            gx = m * inv_std / n * (n * gxhat - s1 - xhat * s2)
        else:
            gx = gxhat * inv_std
        return gx, g_gamma, g_beta

    return make(out, (x, gamma, beta), backward, "batchnorm")


def gru(x: Tensor, W: Tensor, U: Tensor, b: Tensor, h0: Optional[Tensor] = None,
        mask: Optional[np.ndarray] = None) -> Tensor:
    """Run a GRU over ``x`` and return all hidden states.

    Gate blocks in ``W`` [3H, in], ``U`` [3H, H] and ``b`` [3H] are ordered
    update, reset, candidate::

        z = sigmoid(W_z x + U_z h + b_z)
        r = sigmoid(W_r x + U_r h + b_r)
        c = tanh(W_c x + U_c (r * h) + b_c)
        h' = (1 - z) * h + z * c

    Where ``mask[b, t]`` is 0 the state is carried through unchanged, so
    the final row of the output is the state after each item's last valid
    step.
    """
    x, W, U, b = (as_tensor(t) for t in (x, W, U, b))
    xd, squeeze = _batched(x)
    B, T, D = xd.shape
    H = U.shape[1]
    if W.shape != (3 * H, D) or U.shape != (3 * H, H) or b.shape != (3 * H,):
        raise ValueError(f"gru: weight shapes {W.shape}, {U.shape}, {b.shape} do not fit input dim {D}, hidden {H}")
    dtype = xd.dtype
    if h0 is None:
        h_init = np.zeros((B, H), dtype=dtype)
    else:
        h_init = h0.data.reshape(B, H) if h0.data.ndim == 2 else np.broadcast_to(h0.data, (B, H))
        if h0.data.shape[-1] != H:
            raise ValueError("gru: h0 size does not match hidden size")
    m = np.ones((B, T), dtype=dtype) if mask is None else np.asarray(mask, dtype=dtype).reshape(B, T)

    Uz, Ur, Uc = U.data[:H], U.data[H:2 * H], U.data[2 * H:]
    xproj = xd @ W.data.T + b.data  # [B, T, 3H]
    hs = np.empty((B, T, H), dtype=dtype)
    zs, rs, cs = np.empty_like(hs), np.empty_like(hs), np.empty_like(hs)
    h = h_init
    for t in range(T):
        xz, xr, xc = xproj[:, t, :H], xproj[:, t, H:2 * H], xproj[:, t, 2 * H:]
        z = _sigmoid(xz + h @ Uz.T)
        r = _sigmoid(xr + h @ Ur.T)
        c = np.tanh(xc + (r * h) @ Uc.T)
        mt = m[:, t, None]
        h = mt * ((1 - z) * h + z * c) + (1 - mt) * h
        zs[:, t], rs[:, t], cs[:, t], hs[:, t] = z, r, c, h

    def backward(g):
        g = g[None] if squeeze else g
        da = np.zeros((B, T, 3 * H), dtype=dtype)
        gU = np.zeros_like(U.data)
        dh = np.zeros((B, H), dtype=dtype)
        for t in range(T - 1, -1, -1):
            dh = dh + g[:, t]
            h_prev = hs[:, t - 1] if t > 0 else h_init
            z, r, c = zs[:, t], rs[:, t], cs[:, t]
            mt = m[:, t, None]
            dnew = mt * dh
            dprev = (1 - mt) * dh + dnew * (1 - z)
            dz = dnew * (c - h_prev)
            dac = dnew * z * (1 - c * c)
            drh = dac @ Uc
            dar = drh * h_prev * r * (1 - r)
            daz = dz * z * (1 - z)
            dprev += drh * r + daz @ Uz + dar @ Ur
            gU[:H] += daz.T @ h_prev
            gU[H:2 * H] += dar.T @ h_prev
            gU[2 * H:] += dac.T @ (r * h_prev)
            da[:, t, :H], da[:, t, H:2 * H], da[:, t, 2 * H:] = daz, dar, dac
            dh = dprev
        da2 = da.reshape(-1, 3 * H)
        gx = da @ W.data
        gW = da2.T @ xd.reshape(-1, D)
        gb = da2.sum(axis=0)
        grads = [gx[0] if squeeze else gx, gW, gU, gb]
        if h0 is not None:
            grads.append(dh.reshape(h0.shape) if h0.data.ndim == 2 else _sum_to(dh, h0.shape))
        return grads

    parents = (x, W, U, b) if h0 is None else (x, W, U, b, h0)
    return make(hs[0] if squeeze else hs, parents, backward, "gru")


def last_step(x: Tensor) -> Tensor:
    """Select the final time step of a [B, T, C] (or [T, C]) sequence."""
    x = as_tensor(x)
    out = x.data[..., -1, :]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[..., -1, :] = g
        return (gx,)

    return make(out.copy(), (x,), backward, "last_step")


def causal_mask(n: int) -> np.ndarray:
    """Additive lower-triangular mask: 0 on/below the diagonal, MASK_VALUE above."""
    return np.triu(np.full((n, n), MASK_VALUE), k=1)


def attention_weights(Q: np.ndarray, K: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    d = Q.shape[-1]
    logits = Q @ np.swapaxes(K, -1, -2) / math.sqrt(d)
    if mask is not None:
        mask = np.asarray(mask)
        if (mask <= MASK_VALUE / 2).all(axis=-1).any():
            raise ValueError("attention: a query row has every key masked")
        logits = logits + mask
    logits = logits - logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    return (w / w.sum(axis=-1, keepdims=True)).astype(Q.dtype)


def attention(Q: Tensor, K: Tensor, V: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Scaled dot-product attention ``softmax(Q K^T / sqrt(d) + mask) V``."""
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    if Q.shape[-1] != K.shape[-1] or K.shape[:-1] != V.shape[:-1]:
        raise ValueError(f"attention: incompatible shapes {Q.shape}, {K.shape}, {V.shape}")
    scale = 1.0 / math.sqrt(Q.shape[-1])
    A = attention_weights(Q.data, K.data, mask)
    out = A @ V.data

    def backward(g):
        gV = np.swapaxes(A, -1, -2) @ g
        gA = g @ np.swapaxes(V.data, -1, -2)
        gS = A * (gA - (gA * A).sum(axis=-1, keepdims=True))
        gQ = gS @ K.data * scale
        gK = np.swapaxes(gS, -1, -2) @ Q.data * scale
        return gQ, gK, gV

    return make(out, (Q, K, V), backward, "attention")


def bce(p: Tensor, y, mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean binary cross-entropy; ``mask`` restricts the mean to selected elements."""
    p = as_tensor(p)
    y = np.asarray(y, dtype=p.dtype)
    if y.shape != p.shape:
        raise ValueError(f"bce: prediction shape {p.shape} != label shape {y.shape}")
    m = np.ones_like(p.data) if mask is None else np.asarray(mask, dtype=p.dtype)
    n = m.sum()
    if n == 0:
        raise ValueError("bce: no elements selected")
    inside = (p.data > BCE_CLAMP) & (p.data < 1 - BCE_CLAMP)
    pc = np.clip(p.data, BCE_CLAMP, 1 - BCE_CLAMP)
    terms = -(y * np.log(pc) + (1 - y) * np.log(1 - pc))
    out = np.asarray((terms * m).sum() / n, dtype=p.dtype)

    def backward(g):
        dp = (-(y / pc) + (1 - y) / (1 - pc)) * m / n
        return (g * dp * inside,)

    return make(out, (p,), backward, "bce")


def embedding(ids: np.ndarray, table: Tensor) -> Tensor:
    ids = np.asarray(ids)
    table = as_tensor(table)

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return make(table.data[ids], (table,), backward, "embedding")


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """``out[b, n] = x[b, index[b, n]]``; an index of -1 yields a zero row."""
    x = as_tensor(x)
    index = np.asarray(index)
    B = x.shape[0]
    valid = (index >= 0)[..., None]
    rows = np.arange(B)[:, None]
    safe = np.where(index >= 0, index, 0)
    out = x.data[rows, safe] * valid

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (np.broadcast_to(rows, safe.shape), safe), g * valid)
        return (gx,)

    return make(out, (x,), backward, "gather_rows")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return np.split(g, bounds, axis=axis)

    return make(out, tensors, backward, "concat")


def reshape(x: Tensor, shape: tuple) -> Tensor:
    x = as_tensor(x)
    return make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")

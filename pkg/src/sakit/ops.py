"""Layer kernels in NCHW layout, each a forward/backward pair over ndarrays.

Convolution is cross-correlation via patch gathering and one matmul; its
input gradient is reconstructed with a k*k tap loop of strided slice adds
(collision-free per tap), which keeps backward vectorized and deterministic.
Pooling backward uses the same tap-loop idea, masked by the stored argmax.
"""

import numpy as np


def conv2d_forward(x, w, stride=1, dilation=1, pad=0):
    """Cross-correlate x (N,Cin,H,W) with w (Cout,Cin,k,k).

    Output dims: floor((H + 2*pad - dilation*(k-1) - 1)/stride) + 1.
    Returns (y, cache). 1x1 stride-1 convs take a patch-free channel-mix path.
    """
    n, cin, h, wd = x.shape
    cout, cin_w, k, _ = w.shape
    if cin != cin_w:
        raise ValueError(f"conv expects {cin_w} input channels, got {cin}")
    eff = dilation * (k - 1) + 1
    ho = (h + 2 * pad - eff) // stride + 1
    wo = (wd + 2 * pad - eff) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"non-positive conv output dims {ho}x{wo}")
    if k == 1 and stride == 1 and pad == 0:
        y = np.tensordot(w[:, :, 0, 0], x, axes=([1], [1])).transpose(1, 0, 2, 3)
        cache = ("1x1", x, w.shape)
        return np.ascontiguousarray(y), cache
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    rows = np.arange(ho)[:, None] * stride + np.arange(k)[None, :] * dilation
    cols = np.arange(wo)[:, None] * stride + np.arange(k)[None, :] * dilation
    # patches: (N, Cin, Ho, k, Wo, k) -> (N*Ho*Wo, Cin*k*k)
    patches = xp[:, :, rows[:, :, None, None], cols[None, None, :, :]]
    patches = patches.transpose(0, 2, 4, 1, 3, 5).reshape(n * ho * wo, cin * k * k)
    y = patches @ w.reshape(cout, -1).T
    y = y.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    cache = ("im2col", patches, x.shape, w.shape, stride, dilation, pad, (ho, wo))
    return np.ascontiguousarray(y), cache


def conv2d_backward(dy, w, cache):
    """Gradients (dx, dw) for conv2d_forward."""
    if cache[0] == "1x1":
        _, x, w_shape = cache
        w2 = w[:, :, 0, 0]
        dx = np.tensordot(w2.T, dy, axes=([1], [1])).transpose(1, 0, 2, 3)
        dw = np.tensordot(dy, x, axes=([0, 2, 3], [0, 2, 3])).reshape(w_shape)
        return np.ascontiguousarray(dx), dw
    _, patches, x_shape, w_shape, stride, dilation, pad, (ho, wo) = cache
    n, cin, h, wd = x_shape
    cout, _, k, _ = w_shape
    dyf = dy.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
    dw = (dyf.T @ patches).reshape(w_shape)
    dpatch = dyf @ w.reshape(cout, -1)
    dpatch = dpatch.reshape(n, ho, wo, cin, k, k).transpose(0, 3, 1, 2, 4, 5)
    dxp = np.zeros((n, cin, h + 2 * pad, wd + 2 * pad), dtype=dy.dtype)
    hs, ws = ho * stride, wo * stride
    for a in range(k):
        ra = a * dilation
        for b in range(k):
            cb = b * dilation
            dxp[:, :, ra:ra + hs:stride, cb:cb + ws:stride] += dpatch[:, :, :, :, a, b]
    dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
    return dx, dw


def _pool_geometry(x_shape, k, stride, pad, ceil_mode):
    h, w = x_shape[2], x_shape[3]
    span_h, span_w = h + 2 * pad - k, w + 2 * pad - k
    if ceil_mode:
        # windows may extend past the input; every window must still touch
        # at least one real or explicitly padded cell
        ho, wo = max(-(-span_h // stride), 0) + 1, max(-(-span_w // stride), 0) + 1
        if (ho - 1) * stride >= h + 2 * pad or (wo - 1) * stride >= w + 2 * pad:
            raise ValueError(f"pool window {k} stride {stride} leaves an empty "
                             f"window on {h}x{w} input")
    else:
        if span_h < 0 or span_w < 0:
            raise ValueError(f"pool window {k} exceeds padded input {h}x{w}")
        ho, wo = span_h // stride + 1, span_w // stride + 1
    return (ho, wo), ((ho - 1) * stride + k, (wo - 1) * stride + k)


def _padded(x, pad, need_h, need_w, fill):
    n, c, h, w = x.shape
    if pad == 0 and (need_h, need_w) == (h, w):
        return x
    # floor mode can discard a tail, so the buffer must still hold the input
    ph, pw = max(need_h, h + 2 * pad), max(need_w, w + 2 * pad)
    xp = np.full((n, c, ph, pw), fill, dtype=x.dtype)
    xp[:, :, pad:pad + h, pad:pad + w] = x
    return xp


def maxpool2d_forward(x, k, stride, pad=0, ceil_mode=False):
    """Max over k*k windows; ceil_mode rounds output dims up, padding with -inf.

    Argmax ties break at the first index in row-major window order, tracked
    tap by tap so backward can route gradient to the winners only.
    """
    (ho, wo), (need_h, need_w) = _pool_geometry(x.shape, k, stride, pad, ceil_mode)
    xp = _padded(x, pad, need_h, need_w, -np.inf)
    buf_hw = xp.shape[2:]
    hs, ws = ho * stride, wo * stride
    y = None
    arg = None
    for t in range(k * k):
        a, b = divmod(t, k)
        tap = xp[:, :, a:a + hs:stride, b:b + ws:stride]
        if y is None:
            y = tap.copy()
            arg = np.zeros(y.shape, dtype=np.int16)
        else:
            wins = tap > y
            np.copyto(y, tap, where=wins)
            arg[wins] = t
    cache = (arg, x.shape, k, stride, pad, (ho, wo), buf_hw)
    return y, cache


def maxpool2d_backward(dy, cache):
    """Route gradient to the argmax cell of each window only."""
    arg, x_shape, k, stride, pad, (ho, wo), (ph, pw) = cache
    n, c, h, w = x_shape
    dxp = np.zeros((n, c, ph, pw), dtype=dy.dtype)
    hs, ws = ho * stride, wo * stride
    for t in range(k * k):
        a, b = divmod(t, k)
        contrib = np.where(arg == t, dy, 0)
        dxp[:, :, a:a + hs:stride, b:b + ws:stride] += contrib
    return dxp[:, :, pad:pad + h, pad:pad + w]


def avgpool2d_forward(x, k, stride, pad=0, ceil_mode=False):
    """Mean over k*k windows; partial (ceil-mode or padded) windows average
    only cells that overlap the unpadded input."""
    (ho, wo), (need_h, need_w) = _pool_geometry(x.shape, k, stride, pad, ceil_mode)
    n, c, h, w = x.shape
    xp = _padded(x, pad, need_h, need_w, 0.0)
    buf_h, buf_w = xp.shape[2:]
    valid = np.zeros((1, 1, buf_h, buf_w), dtype=x.dtype)
    valid[:, :, pad:pad + h, pad:pad + w] = 1
    hs, ws = ho * stride, wo * stride
    total = np.zeros((n, c, ho, wo), dtype=x.dtype)
    counts = np.zeros((1, 1, ho, wo), dtype=x.dtype)
    for a in range(k):
        for b in range(k):
            total += xp[:, :, a:a + hs:stride, b:b + ws:stride]
            counts += valid[:, :, a:a + hs:stride, b:b + ws:stride]
    if np.any(counts == 0):
        raise ValueError("average pool window with no valid cells")
    y = total / counts
    cache = (counts[0, 0], x.shape, k, stride, pad, (ho, wo), (buf_h, buf_w))
    return y, cache


def avgpool2d_backward(dy, cache):
    counts, x_shape, k, stride, pad, (ho, wo), (ph, pw) = cache
    n, c, h, w = x_shape
    dxp = np.zeros((n, c, ph, pw), dtype=dy.dtype)
    share = dy / counts
    hs, ws = ho * stride, wo * stride
    for a in range(k):
        for b in range(k):
            dxp[:, :, a:a + hs:stride, b:b + ws:stride] += share
    return dxp[:, :, pad:pad + h, pad:pad + w]


def resize_nearest_forward(x, out_h, out_w):
    """Nearest-neighbor resize: output[i,j] = input[floor(i*H/out_h), floor(j*W/out_w)].

    Exact identity when target dims equal input dims.
    """
    n, c, h, w = x.shape
    if out_h < 1 or out_w < 1:
        raise ValueError("resize target dims must be >= 1")
    src_r = (np.arange(out_h) * h) // out_h
    src_c = (np.arange(out_w) * w) // out_w
    y = x[:, :, src_r[:, None], src_c[None, :]]
    return np.ascontiguousarray(y), (x.shape, src_r, src_c)


def resize_nearest_backward(dy, cache):
    """Scatter-add each output cell's gradient back onto its source pixel."""
    (n, c, h, w), src_r, src_c = cache
    out_h, out_w = dy.shape[2], dy.shape[3]
    if h <= out_h and w <= out_w:
        # upsampling: every source row/col owns a contiguous output segment
        row_starts = np.searchsorted(src_r, np.arange(h), side="left")
        col_starts = np.searchsorted(src_c, np.arange(w), side="left")
        tmp = np.add.reduceat(dy, row_starts, axis=2)
        return np.add.reduceat(tmp, col_starts, axis=3)
    dx = np.zeros((n, c, h, w), dtype=dy.dtype)
    rr = np.broadcast_to(src_r[:, None], (out_h, out_w))
    cc = np.broadcast_to(src_c[None, :], (out_h, out_w))
    np.add.at(dx, (slice(None), slice(None), rr, cc), dy)
    return dx


def batchnorm2d_forward(x, gamma, beta, running_mean, running_var, eps=1e-5,
                        momentum=0.1, training=True):
    """Per-channel batch normalization with affine scale/shift.

    Training normalizes with current-batch statistics (biased variance) and
    blends them into the running stats; inference uses the running stats.
    Returns (y, cache, new_running_mean, new_running_var).
    """
    n, c, h, w = x.shape
    if training:
        if n * h * w < 2:
            raise ValueError("batchnorm training needs >= 2 elements per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        new_mean = (1 - momentum) * running_mean + momentum * mean
        new_var = (1 - momentum) * running_var + momentum * var
    else:
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    cache = (xhat, inv_std, gamma, training)
    return y, cache, new_mean, new_var


def batchnorm2d_backward(dy, cache):
    """Gradients (dx, dgamma, dbeta); training mode backpropagates through
    the batch statistics."""
    xhat, inv_std, gamma, training = cache
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    scale = (gamma * inv_std)[None, :, None, None]
    if not training:
        return dy * scale, dgamma, dbeta
    m = dy.shape[0] * dy.shape[2] * dy.shape[3]
    mean_dy = dy.mean(axis=(0, 2, 3))[None, :, None, None]
    mean_dy_xhat = (dy * xhat).sum(axis=(0, 2, 3))[None, :, None, None] / m
    dx = scale * (dy - mean_dy - xhat * mean_dy_xhat)
    return dx, dgamma, dbeta


def relu_forward(x):
    mask = x > 0
    return np.where(mask, x, 0), mask


def relu_backward(dy, mask):
    return np.where(mask, dy, 0)


def add_forward(a, b):
    if a.shape != b.shape:
        raise ValueError(f"residual add shape mismatch {a.shape} vs {b.shape}")
    return a + b


def concat_channels_forward(xs):
    """Concatenate NCHW tensors along channels, order preserved."""
    base = xs[0].shape
    for x in xs[1:]:
        if x.shape[0] != base[0] or x.shape[2:] != base[2:]:
            raise ValueError(f"concat spatial/batch mismatch {x.shape} vs {base}")
    return np.concatenate(xs, axis=1), [x.shape[1] for x in xs]


def concat_channels_backward(dy, channel_sizes):
    splits = np.cumsum(channel_sizes)[:-1]
    return np.split(dy, splits, axis=1)


def global_avg_pool_forward(x):
    n, c, h, w = x.shape
    return x.mean(axis=(2, 3)), (h, w)


def global_avg_pool_backward(dy, cache):
    h, w = cache
    return np.broadcast_to(dy[:, :, None, None], dy.shape + (h, w)) / (h * w)


def dense_forward(x, w, b):
    """x (N,Cin) @ w (Cin,Cout) + b."""
    return x @ w + b, x


def dense_backward(dy, w, x):
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def softmax_cross_entropy_forward(logits, labels):
    """Mean cross-entropy over the batch; labels are int class indices."""
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(n), labels].mean()
    probs = np.exp(logp)
    return loss.astype(logits.dtype), (probs, labels)


def softmax_cross_entropy_backward(dloss, cache):
    probs, labels = cache
    n = probs.shape[0]
    d = probs.copy()
    d[np.arange(n), labels] -= 1.0
    return d * (dloss / n)

"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

The operator set is exactly what the flow pipeline needs: 2D convolution and
transposed convolution, batch norm, ReLU, bilinear warping/resizing, softmax,
plus a handful of pointwise and reduction ops. Graphs are built eagerly; each
op returns a :class:`Var` holding a closure with its local backward rule, and
``backward()`` walks the tape in reverse topological order accumulating into
``.grad`` buffers.

Everything is float64 and CPU-only. Convolutions are computed with an
im2col + matmul formulation so BLAS does the heavy lifting.
"""

import numpy as np

# When enabled, every Var constructor rejects NaN/Inf values. Training relies
# on this to abort on divergence instead of silently producing garbage.
_CHECK_FINITE = True

# Convolutions can keep their per-tap input matrices alive for reuse in the
# weight-gradient pass. Inference-only forward passes disable this to avoid
# holding large buffers that backward() will never read.
_CACHE_TAPS = True


def set_finite_checks(enabled):
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


def set_tap_cache(enabled):
    global _CACHE_TAPS
    _CACHE_TAPS = bool(enabled)


class Var:
    """A node in the computation graph: a float64 array plus its gradient."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        v = np.asarray(value, dtype=np.float64)
        if _CHECK_FINITE and not np.all(np.isfinite(v)):
            raise FloatingPointError("non-finite values entering the graph")
        self.value = v
        self.grad = np.zeros_like(v)
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def __repr__(self):
        return "Var(shape=%s)" % (self.shape,)

    # Small conveniences used by tests; model code calls the module functions.
    def __add__(self, other):
        return add(self, other if isinstance(other, Var) else Var(other))

    def __sub__(self, other):
        return sub(self, other if isinstance(other, Var) else Var(other))

    def __mul__(self, other):
        if isinstance(other, Var):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


def backward(root):
    """Reverse-mode sweep from a scalar root; accumulates into ``.grad``."""
    if root.size != 1:
        raise ValueError("backward() requires a scalar root, got shape %s"
                         % (root.shape,))
    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node)


def zero_grad(params):
    for p in params:
        p.grad = np.zeros_like(p.value)


# ---------------------------------------------------------------------------
# pointwise / reduction ops


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError("shape mismatch: %s vs %s" % (a.shape, b.shape))


def add(a, b):
    _same_shape(a, b)

    def bwd(out):
        a.grad += out.grad
        b.grad += out.grad

    return Var(a.value + b.value, (a, b), bwd)


def sub(a, b):
    _same_shape(a, b)

    def bwd(out):
        a.grad += out.grad
        b.grad -= out.grad

    return Var(a.value - b.value, (a, b), bwd)


def mul(a, b):
    _same_shape(a, b)

    def bwd(out):
        a.grad += out.grad * b.value
        b.grad += out.grad * a.value

    return Var(a.value * b.value, (a, b), bwd)


def scale(a, c):
    c = float(c)

    def bwd(out):
        a.grad += c * out.grad

    return Var(a.value * c, (a,), bwd)


def add_const(a, c):
    c = np.asarray(c, dtype=np.float64)

    def bwd(out):
        a.grad += out.grad

    return Var(a.value + c, (a,), bwd)


def mul_const(a, c):
    """Elementwise product with a non-differentiated constant (broadcasts)."""
    c = np.asarray(c, dtype=np.float64)

    def bwd(out):
        g = out.grad * c
        if g.shape != a.shape:  # undo broadcasting of c
            g = _reduce_to_shape(g, a.shape)
        a.grad += g

    return Var(a.value * c, (a,), bwd)


def _reduce_to_shape(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if g.shape[ax] != n:
            g = g.sum(axis=ax, keepdims=True)
    return g


def vsum(a):
    def bwd(out):
        a.grad += out.grad * np.ones_like(a.value)

    return Var(a.value.sum(), (a,), bwd)


def sum_axis(a, axis, keepdims=False):
    def bwd(out):
        g = out.grad
        if not keepdims:
            g = np.expand_dims(g, axis)
        a.grad += np.broadcast_to(g, a.shape)

    return Var(a.value.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def mean_all(a):
    return scale(vsum(a), 1.0 / a.size)


def relu(a):
    mask = a.value > 0

    def bwd(out):
        a.grad += out.grad * mask

    return Var(np.where(mask, a.value, 0.0), (a,), bwd)


def softmax(a, axis):
    m = a.value.max(axis=axis, keepdims=True)
    e = np.exp(a.value - m)
    p = e / e.sum(axis=axis, keepdims=True)

    def bwd(out):
        gp = out.grad * p
        a.grad += gp - p * gp.sum(axis=axis, keepdims=True)

    return Var(p, (a,), bwd)


def channel_norm(a, axis=1, keepdims=True):
    """Euclidean norm along ``axis``; gradient is safe at exactly zero."""
    n = np.sqrt(np.square(a.value).sum(axis=axis, keepdims=True))

    def bwd(out):
        g = out.grad
        if not keepdims:
            g = np.expand_dims(g, axis)
        a.grad += g * a.value / np.maximum(n, 1e-12)

    nv = n if keepdims else np.squeeze(n, axis=axis)
    return Var(nv, (a,), bwd)


def reciprocal(a):
    inv = 1.0 / a.value

    def bwd(out):
        a.grad -= out.grad * inv * inv

    return Var(inv, (a,), bwd)


def slice_batch(a, start, stop):
    """Slice along the leading (batch) axis."""

    def bwd(out):
        a.grad[start:stop] += out.grad

    return Var(np.ascontiguousarray(a.value[start:stop]), (a,), bwd)


def reshape(a, shape):
    shape = tuple(shape)

    def bwd(out):
        a.grad += out.grad.reshape(a.shape)

    return Var(a.value.reshape(shape), (a,), bwd)


def concat(vs, axis):
    splits = np.cumsum([v.shape[axis] for v in vs])[:-1]

    def bwd(out):
        for v, g in zip(vs, np.split(out.grad, splits, axis=axis)):
            v.grad += g

    return Var(np.concatenate([v.value for v in vs], axis=axis), tuple(vs), bwd)


def pad_br(a, pb, pr):
    """Zero-pad the bottom/right of the last two dims."""
    if pb == 0 and pr == 0:
        return a
    pads = [(0, 0)] * (a.ndim - 2) + [(0, pb), (0, pr)]

    def bwd(out):
        sl = (Ellipsis, slice(0, a.shape[-2]), slice(0, a.shape[-1]))
        a.grad += out.grad[sl]

    return Var(np.pad(a.value, pads), (a,), bwd)


def crop_br(a, h, w):
    """Crop the last two dims to ``h`` x ``w`` (top-left anchored)."""
    if a.shape[-2] == h and a.shape[-1] == w:
        return a

    def bwd(out):
        a.grad[..., :h, :w] += out.grad

    return Var(np.ascontiguousarray(a.value[..., :h, :w]), (a,), bwd)


def shift2d(a, du, dv):
    """out(y, x) = a(y + dv, x + du), zero outside the image.

    ``a`` has shape (..., h, w); du is horizontal, dv vertical.
    """
    h, w = a.shape[-2], a.shape[-1]
    out = np.zeros_like(a.value)
    ny = max(0, h - abs(dv))            # overlap extents; may be empty
    nx = max(0, w - abs(du))
    ys = slice(max(0, -dv), max(0, -dv) + ny)
    xs = slice(max(0, -du), max(0, -du) + nx)
    yt = slice(max(0, dv), max(0, dv) + ny)
    xt = slice(max(0, du), max(0, du) + nx)
    out[..., ys, xs] = a.value[..., yt, xt]

    def bwd(out_v):
        a.grad[..., yt, xt] += out_v.grad[..., ys, xs]

    return Var(out, (a,), bwd)


# ---------------------------------------------------------------------------
# convolution primitives (raw ndarray helpers shared by forward and backward)


def _eff_k(k, d):
    return (k - 1) * d + 1


def _conv_out_size(n, k, s, p, d):
    return (n + 2 * p - _eff_k(k, d)) // s + 1


def _conv_tap(xp, i, j, s, d, oh, ow):
    """Contiguous (N*oh*ow, Cin) view of the input under kernel tap (i, j)."""
    n, cin = xp.shape[:2]
    win = xp[:, :, i * d:i * d + (oh - 1) * s + 1:s,
             j * d:j * d + (ow - 1) * s + 1:s]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1)).reshape(
        n * oh * ow, cin)


def _conv_forward_raw(x, w, b, s, p, d, taps_out=None):
    n = x.shape[0]
    cout, cin, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    oh = _conv_out_size(x.shape[2], kh, s, p, d)
    ow = _conv_out_size(x.shape[3], kw, s, p, d)
    acc = np.zeros((n * oh * ow, cout))
    for i in range(kh):
        for j in range(kw):
            xt = _conv_tap(xp, i, j, s, d, oh, ow)
            if taps_out is not None:
                taps_out.append(xt)
            acc += xt @ np.ascontiguousarray(w[:, :, i, j]).T
    out = np.ascontiguousarray(
        acc.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2))
    if b is not None:
        out += b.reshape(1, cout, 1, 1)
    return out


def _conv_weight_grad_raw(x, g, kh, kw, s, p, d, taps=None):
    n, cout, oh, ow = g.shape
    cin = x.shape[1]
    gr = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow,
                                                               cout)
    if taps is None:
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    dw = np.empty((cout, cin, kh, kw))
    for i in range(kh):
        for j in range(kw):
            xt = taps[i * kw + j] if taps is not None else \
                _conv_tap(xp, i, j, s, d, oh, ow)
            dw[:, :, i, j] = gr.T @ xt
    return dw


def _conv_input_grad_raw(g, w, s, p, d, h, ww):
    """Adjoint of the conv forward pass; also realizes transposed conv.

    Computes the column gradients with one GEMM per kernel tap and
    scatter-adds each tap back onto the (padded) input grid (col2im).
    """
    n, cout, oh, ow = g.shape
    _, cin, kh, kw = w.shape
    gr = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow,
                                                               cout)
    # accumulate channels-last so every tap adds a contiguous block, then
    # transpose back to NCHW once at the end
    dxp = np.zeros((n, h + 2 * p, ww + 2 * p, cin))
    for i in range(kh):
        for j in range(kw):
            tap = (gr @ np.ascontiguousarray(w[:, :, i, j])).reshape(
                n, oh, ow, cin)
            dxp[:, i * d:i * d + s * oh:s, j * d:j * d + s * ow:s, :] += tap
    dxp = dxp[:, p:p + h, p:p + ww, :] if p else dxp
    return np.ascontiguousarray(dxp.transpose(0, 3, 1, 2))


def _check_4d(x, name):
    if x.ndim != 4:
        raise ValueError("%s must be 4D (N,C,H,W), got shape %s"
                         % (name, x.shape))


def conv2d(x, w, b, stride=1, pad=0, dilation=1):
    """Cross-correlation of a batched input with weights (Cout,Cin,kh,kw)."""
    _check_4d(x, "conv2d input")
    cout, cin, kh, kw = w.shape
    if x.shape[1] != cin:
        raise ValueError("conv2d: input has %d channels, weights expect %d"
                         % (x.shape[1], cin))
    if b.shape != (cout,):
        raise ValueError("conv2d: bias shape %s, expected (%d,)"
                         % (b.shape, cout))
    if _conv_out_size(x.shape[2], kh, stride, pad, dilation) < 1 or \
       _conv_out_size(x.shape[3], kw, stride, pad, dilation) < 1:
        raise ValueError("conv2d: kernel larger than padded input")
    cached = [] if _CACHE_TAPS else None
    out = _conv_forward_raw(x.value, w.value, b.value, stride, pad, dilation,
                            taps_out=cached)

    def bwd(o):
        x.grad += _conv_input_grad_raw(o.grad, w.value, stride, pad, dilation,
                                       x.shape[2], x.shape[3])
        w.grad += _conv_weight_grad_raw(x.value, o.grad, kh, kw, stride, pad,
                                        dilation, taps=cached or None)
        b.grad += o.grad.sum(axis=(0, 2, 3))

    return Var(out, (x, w, b), bwd)


def deconv2d(x, w, b, stride=2, pad=1, output_padding=0):
    """Transposed convolution; weights are (Cout,Cin,kh,kw) with Cin matching
    the input. Output spatial size is (n-1)*stride + k - 2*pad + output_padding.
    """
    _check_4d(x, "deconv2d input")
    cout, cin, kh, kw = w.shape
    if x.shape[1] != cin:
        raise ValueError("deconv2d: input has %d channels, weights expect %d"
                         % (x.shape[1], cin))
    if b.shape != (cout,):
        raise ValueError("deconv2d: bias shape %s, expected (%d,)"
                         % (b.shape, cout))
    if output_padding >= stride:
        raise ValueError("deconv2d: output_padding must be < stride")
    oh = (x.shape[2] - 1) * stride + kh - 2 * pad + output_padding
    ow = (x.shape[3] - 1) * stride + kw - 2 * pad + output_padding
    wt = np.ascontiguousarray(w.value.transpose(1, 0, 2, 3))
    out = _conv_input_grad_raw(x.value, wt, stride, pad, 1, oh, ow)
    out += b.value.reshape(1, cout, 1, 1)

    def bwd(o):
        x.grad += _conv_forward_raw(o.grad, wt, None, stride, pad, 1)
        dw = _conv_weight_grad_raw(o.grad, x.value, kh, kw, stride, pad, 1)
        w.grad += dw.transpose(1, 0, 2, 3)
        b.grad += o.grad.sum(axis=(0, 2, 3))

    return Var(out, (x, w, b), bwd)


# ---------------------------------------------------------------------------
# batch norm


class BatchNormState:
    """Running statistics for one batch-norm layer."""

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps


def batchnorm2d(x, gamma, beta, state, training):
    _check_4d(x, "batchnorm2d input")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError("batchnorm2d: parameter length %s does not match "
                         "%d channels" % (gamma.shape, c))
    if training:
        m = n * h * w
        if m < 2:
            raise ValueError("batchnorm2d: train mode needs N*H*W >= 2")
        mu = x.value.mean(axis=(0, 2, 3))
        var = x.value.var(axis=(0, 2, 3))
        mom = state.momentum
        state.running_mean = (1 - mom) * state.running_mean + mom * mu
        state.running_var = (1 - mom) * state.running_var + mom * var
    else:
        mu = state.running_mean
        var = state.running_var
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.value - mu.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    out = gamma.value.reshape(1, c, 1, 1) * xhat + beta.value.reshape(1, c, 1, 1)

    def bwd(o):
        g = o.grad
        gamma.grad += (g * xhat).sum(axis=(0, 2, 3))
        beta.grad += g.sum(axis=(0, 2, 3))
        gi = gamma.value.reshape(1, c, 1, 1) * inv.reshape(1, c, 1, 1)
        if training:
            m = n * h * w
            dxhat = g * gamma.value.reshape(1, c, 1, 1)
            s1 = dxhat.sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
            x.grad += (inv.reshape(1, c, 1, 1) / m) * \
                (m * dxhat - s1 - xhat * s2)
        else:
            x.grad += g * gi

    return Var(out, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# bilinear sampling


def bilinear_warp(target, flow):
    """Sample ``target`` at p + flow(p) with bilinear interpolation.

    target: (N,C,H,W); flow: (N,2,h,w) with channel 0 horizontal (u) and
    channel 1 vertical (v), in pixels. Samples fully outside the image give 0
    with valid=0; partially-overlapping samples interpolate the in-bounds
    corners against zero padding. Returns (warped Var, valid ndarray (N,1,h,w)).
    """
    _check_4d(target, "bilinear_warp target")
    _check_4d(flow, "bilinear_warp flow")
    if flow.shape[1] != 2:
        raise ValueError("flow must have 2 channels, got %d" % flow.shape[1])
    if flow.shape[0] != target.shape[0] or flow.shape[2:] != target.shape[2:]:
        raise ValueError("flow shape %s does not match target %s"
                         % (flow.shape, target.shape))
    n, c, h, w = target.shape
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    px = xx + flow.value[:, 0]
    py = yy + flow.value[:, 1]
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    wx = px - x0
    wy = py - y0
    nidx = np.arange(n).reshape(n, 1, 1)

    def gather(yc, xc):
        inb = ((yc >= 0) & (yc < h) & (xc >= 0) & (xc < w))
        ycc = np.clip(yc, 0, h - 1)
        xcc = np.clip(xc, 0, w - 1)
        vals = target.value[nidx, :, ycc, xcc]      # (n, h, w, c)
        vals = vals * inb[..., None]
        return vals.transpose(0, 3, 1, 2), inb, ycc, xcc

    v00, m00, yc00, xc00 = gather(y0, x0)
    v01, m01, yc01, xc01 = gather(y0, x0 + 1)
    v10, m10, yc10, xc10 = gather(y0 + 1, x0)
    v11, m11, yc11, xc11 = gather(y0 + 1, x0 + 1)
    w00 = ((1 - wy) * (1 - wx))[:, None]
    w01 = ((1 - wy) * wx)[:, None]
    w10 = (wy * (1 - wx))[:, None]
    w11 = (wy * wx)[:, None]
    out = v00 * w00 + v01 * w01 + v10 * w10 + v11 * w11
    valid = ((px > -1) & (px < w) & (py > -1) & (py < h))
    valid = valid[:, None].astype(np.float64)

    def bwd(o):
        g = o.grad
        dt = target.grad.transpose(0, 2, 3, 1)  # view into target.grad
        for wgt, m, yc, xc in ((w00, m00, yc00, xc00), (w01, m01, yc01, xc01),
                               (w10, m10, yc10, xc10), (w11, m11, yc11, xc11)):
            contrib = (g * wgt * m[:, None]).transpose(0, 2, 3, 1)
            np.add.at(dt, (nidx, yc, xc), contrib)
        # d/dpx and d/dpy of the interpolation weights
        dpx = ((v01 - v00) * (1 - wy)[:, None] + (v11 - v10) * wy[:, None])
        dpy = ((v10 - v00) * (1 - wx)[:, None] + (v11 - v01) * wx[:, None])
        flow.grad[:, 0] += (g * dpx).sum(axis=1)
        flow.grad[:, 1] += (g * dpy).sum(axis=1)

    warped = Var(out, (target, flow), bwd)
    return warped, valid


def _interp_matrix(out_n, in_n):
    mat = np.zeros((out_n, in_n))
    src = (np.arange(out_n) + 0.5) * in_n / out_n - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    lo = np.clip(i0, 0, in_n - 1)
    hi = np.clip(i0 + 1, 0, in_n - 1)
    rows = np.arange(out_n)
    np.add.at(mat, (rows, lo), 1 - frac)
    np.add.at(mat, (rows, hi), frac)
    return mat


def bilinear_resize(x, out_h, out_w):
    """Separable bilinear resize of the last two dims (exact adjoint pair)."""
    _check_4d(x, "bilinear_resize input")
    rmat = _interp_matrix(out_h, x.shape[2])
    cmat = _interp_matrix(out_w, x.shape[3])
    out = np.einsum("oi,ncij,pj->ncop", rmat, x.value, cmat, optimize=True)

    def bwd(o):
        x.grad += np.einsum("oi,ncop,pj->ncij", rmat, o.grad, cmat,
                            optimize=True)

    return Var(out, (x,), bwd)


# ---------------------------------------------------------------------------
# displacement handling


def displacement_grid(radius):
    """(v, u) pairs in row-major order, (-r,-r) first. Index contract for the
    whole pipeline: hypothesis n maps to v = n // (2r+1) - r, u = n % (2r+1) - r.
    """
    span = range(-radius, radius + 1)
    return [(v, u) for v in span for u in span]


def displacement_stack(f1, f2, radius):
    """Stack the concatenated features of all displacement hypotheses.

    f1, f2: (B,C,h,w). Returns (B*(2r+1)^2, 2C, h, w), hypothesis-major within
    each sample: row b*n_hyp + n holds [f1(p), f2(p + u_n)] with zero padding
    where p + u_n falls outside the image.
    """
    _same_shape(f1, f2)
    b, c, h, w = f1.shape
    disps = displacement_grid(radius)
    nh = len(disps)
    r = radius
    f2p = np.pad(f2.value, ((0, 0), (0, 0), (r, r), (r, r)))
    out = np.empty((b, nh, 2 * c, h, w))
    out[:, :, :c] = f1.value[:, None]
    for i, (dv, du) in enumerate(disps):
        out[:, i, c:] = f2p[:, :, r + dv:r + dv + h, r + du:r + du + w]

    def bwd(o):
        g = o.grad.reshape(b, nh, 2 * c, h, w)
        f1.grad += g[:, :, :c].sum(axis=1)
        pad_acc = np.zeros_like(f2p)
        for i, (dv, du) in enumerate(disps):
            pad_acc[:, :, r + dv:r + dv + h, r + du:r + du + w] += g[:, i, c:]
        f2.grad += pad_acc[:, :, r:r + h, r:r + w]

    return Var(out.reshape(b * nh, 2 * c, h, w), (f1, f2), bwd)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with bias correction; operates on a fixed list of leaf Vars."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        zero_grad(self.params)

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= b1
            m += (1 - b1) * p.grad
            v *= b2
            v += (1 - b2) * np.square(p.grad)
            if self.lr != 0.0:
                p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

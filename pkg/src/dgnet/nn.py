"""A small U-Net built directly on numpy arrays, with hand-written backward
passes and the Adam/cosine-schedule optimizer used to train it.

Tensors are plain float64 numpy arrays of shape (batch, channels, height,
width).  Convolutions are same-padded stride-1 cross-correlations; each is
evaluated either by im2col + GEMM or by FFT, whichever is faster for the
batch size at hand (GEMM for small batches, FFT for large ones; both agree
to rounding and tests pin them against a naive loop oracle).

The architecture keeps a constant channel count across resolutions: encoder
blocks of two convolutions followed by 2x2 average pooling, a two-convolution
bottleneck, decoder blocks of bilinear upsampling + concatenation with the
skip connection + two convolutions, and a final projection to one channel.
With identity activation and no bias terms the whole network is a linear map.
"""

import math
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
from numpy.lib.stride_tricks import sliding_window_view


class TrainingError(RuntimeError):
    pass


_FFT_MIN_BATCH = 8


def _im2col(x, k):
    """Column matrix (c*k*k, batch*h*w) of all same-padding k x k windows."""
    b, c, h, w = x.shape
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    v = sliding_window_view(xp, (k, k), axis=(2, 3))
    return v.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, b * h * w)


def _corr_gemm(x, w):
    b, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    cols = _im2col(x, k)
    y = (w.reshape(co, ci * k * k) @ cols).reshape(co, b, h, wd)
    return np.ascontiguousarray(y.transpose(1, 0, 2, 3))


def _corr_fft(x, w):
    b, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    pad = (k - 1) // 2
    s1 = sfft.next_fast_len(h + k - 1, True)
    s2 = sfft.next_fast_len(wd + k - 1, True)
    xf = sfft.rfft2(x, (s1, s2))
    wf = sfft.rfft2(w[:, :, ::-1, ::-1], (s1, s2))
    y = sfft.irfft2(np.einsum("bifg,oifg->bofg", xf, wf), (s1, s2))
    return np.ascontiguousarray(y[..., pad:pad + h, pad:pad + wd])


def _grad_w_gemm(x, g, k):
    b, ci, h, wd = x.shape
    co = g.shape[1]
    cols = _im2col(x, k)
    gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(co, b * h * wd)
    return (gm @ cols.T).reshape(co, ci, k, k)


def _grad_w_fft(x, g, k):
    # circular correlation: lags beyond +-pad wrap onto the zero padding,
    # so size h + pad is enough for exact results at the k lags we keep
    b, ci, h, wd = x.shape
    co = g.shape[1]
    pad = (k - 1) // 2
    s1 = sfft.next_fast_len(h + pad, True)
    s2 = sfft.next_fast_len(wd + pad, True)
    xf = sfft.rfft2(x, (s1, s2))
    gf = np.conj(sfft.rfft2(g, (s1, s2)))
    circ = sfft.irfft2(np.einsum("bifg,bofg->oifg", xf, gf), (s1, s2))
    rows = np.concatenate([circ[..., s1 - pad:, :], circ[..., :pad + 1, :]], axis=2)
    return np.ascontiguousarray(
        np.concatenate([rows[..., s2 - pad:], rows[..., :pad + 1]], axis=3))


def conv2d_forward(x, w, bias=None):
    """Same-padded stride-1 cross-correlation; output spatial size equals input."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("expected 4D input and (c_out, c_in, k, k) kernel")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, kernel expects {w.shape[1]}")
    if w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
        raise ValueError("kernel must be square with odd size")
    if x.shape[0] >= _FFT_MIN_BATCH:
        y = _corr_fft(x, w)
    else:
        y = _corr_gemm(x, w)
    if bias is not None:
        y += np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return y


def conv2d_backward(x, w, g_out, with_bias=False, need_input_grad=True):
    """Gradients of sum(g_out * conv2d_forward(x, w)) w.r.t. x and w.

    g_x is None when need_input_grad is false (first-layer shortcut).
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    g_out = np.asarray(g_out, dtype=np.float64)
    if g_out.shape != (x.shape[0], w.shape[0], x.shape[2], x.shape[3]):
        raise ValueError("g_out shape does not match forward output")
    k = w.shape[2]
    if need_input_grad:
        # d/dx of a correlation is a correlation of g with the kernel flipped
        # in space and transposed in channels, so the forward kernel is reused
        wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        g_x = conv2d_forward(g_out, wt)
    else:
        g_x = None
    if x.shape[0] >= _FFT_MIN_BATCH:
        g_w = _grad_w_fft(x, g_out, k)
    else:
        g_w = _grad_w_gemm(x, g_out, k)
    if with_bias:
        return g_x, g_w, g_out.sum(axis=(0, 2, 3))
    return g_x, g_w


def avgpool2(x):
    """2x2 average pooling with stride 2."""
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError("avgpool2 requires even spatial dimensions")
    return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def avgpool2_backward(g):
    """Adjoint of avgpool2: distributes g/4 to each source cell."""
    return np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0


@lru_cache(maxsize=64)
def _interp_matrix(n_out, n_in):
    """1D bilinear interpolation weights, align_corners=false convention."""
    s = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    i0 = np.floor(s).astype(np.int64)
    f = s - i0
    i1 = np.clip(i0 + 1, 0, n_in - 1)
    i0 = np.clip(i0, 0, n_in - 1)
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), i0), 1.0 - f)
    np.add.at(m, (np.arange(n_out), i1), f)
    m.setflags(write=False)
    return m


def bilinear_resize(x, out_h, out_w):
    """Bilinear resize of (b, c, h, w) to (b, c, out_h, out_w)."""
    mh = _interp_matrix(out_h, x.shape[2])
    mw = _interp_matrix(out_w, x.shape[3])
    return np.einsum("oh,bchw,pw->bcop", mh, x, mw, optimize=True)


def bilinear_upsample2(x):
    """Doubles both spatial dimensions by bilinear interpolation."""
    return bilinear_resize(x, 2 * x.shape[2], 2 * x.shape[3])


def bilinear_upsample2_backward(g):
    """Exact adjoint of bilinear_upsample2."""
    mh = _interp_matrix(g.shape[2], g.shape[2] // 2)
    mw = _interp_matrix(g.shape[3], g.shape[3] // 2)
    return np.einsum("oh,bcop,pw->bchw", mh, g, mw, optimize=True)


_ACTIVATIONS = ("identity", "relu", "tanh")


def _act(z, kind):
    if kind == "identity":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_deriv(z_pre, kind):
    if kind == "relu":
        return (z_pre > 0.0).astype(np.float64)
    return 1.0 - np.tanh(z_pre) ** 2


class UNetConfig:
    """Architecture parameters.

    depth defaults to ceil(log2(input_side / (kernel + 1))); the feature side
    at the deepest level must still accommodate the kernel's half-width.
    """

    def __init__(self, input_side, channels=32, kernel=7, depth=None,
                 activation="identity", use_bias=False):
        m = int(input_side)
        k = int(kernel)
        c = int(channels)
        if m < 1 or c < 1:
            raise ValueError("input_side and channels must be positive")
        if k < 1 or k % 2 == 0:
            raise ValueError("kernel size must be odd and positive")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")
        if depth is None:
            ratio = m / (k + 1)
            depth = max(0, math.ceil(math.log2(ratio))) if ratio > 1 else 0
        d = int(depth)
        if d < 0:
            raise ValueError("depth must be nonnegative")
        if m % (1 << d) != 0:
            raise ValueError(f"input_side {m} not divisible by 2^depth = {1 << d}")
        if m // (1 << d) < (k + 1) // 2:
            raise ValueError("deepest feature side too small for the kernel")
        self.input_side = m
        self.channels = c
        self.kernel = k
        self.depth = d
        self.activation = activation
        self.use_bias = bool(use_bias)

    def conv_channels(self):
        """(c_in, c_out) per convolution in fixed architecture order."""
        c, d = self.channels, self.depth
        specs = []
        for level in range(d):
            specs.append((1 if level == 0 else c, c))
            specs.append((c, c))
        specs.append((1 if d == 0 else c, c))
        specs.append((c, c))
        for _ in range(d):
            specs.append((2 * c, c))
            specs.append((c, c))
        specs.append((c, 1))
        return specs


class UNet:
    """Weights plus Adam state; the layer graph lives in cfg."""

    def __init__(self, cfg, weights, biases=None):
        self.cfg = cfg
        self.weights = weights
        self.biases = biases
        params = self.parameters()
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step = 0

    def parameters(self):
        """Flat parameter list; weight then bias per convolution when biased."""
        if self.biases is None:
            return list(self.weights)
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def build_unet(cfg, rng=None):
    """Construct a UNet with uniform(-1/sqrt(fan_in), +) weights, zero biases."""
    if rng is None:
        rng = np.random.default_rng(0)
    k = cfg.kernel
    weights = []
    for c_in, c_out in cfg.conv_channels():
        bound = 1.0 / math.sqrt(c_in * k * k)
        weights.append(rng.uniform(-bound, bound, size=(c_out, c_in, k, k)))
    biases = [np.zeros(w.shape[0]) for w in weights] if cfg.use_bias else None
    return UNet(cfg, weights, biases)


def parameter_count(net):
    return sum(p.size for p in net.parameters())


def unet_forward(net, x):
    """Forward pass; returns (y, cache) with cache consumed by unet_backward."""
    cfg = net.cfg
    x = np.asarray(x, dtype=np.float64)
    m = cfg.input_side
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != m or x.shape[3] != m:
        raise ValueError(f"expected input of shape (batch, 1, {m}, {m}), got {x.shape}")
    d, act = cfg.depth, cfg.activation
    conv_in, pre = [], []
    idx = 0

    def conv(h, activated=True):
        nonlocal idx
        conv_in.append(h)
        z = conv2d_forward(h, net.weights[idx],
                           net.biases[idx] if net.biases is not None else None)
        pre.append(z if (activated and act != "identity") else None)
        idx += 1
        return _act(z, act) if activated else z

    skips = []
    h = x
    for _ in range(d):
        h = conv(conv(h))
        skips.append(h)
        h = avgpool2(h)
    h = conv(conv(h))
    for level in range(d - 1, -1, -1):
        up = bilinear_upsample2(h)
        h = np.concatenate([skips[level], up], axis=1)
        h = conv(conv(h))
    y = conv(h, activated=False)
    return y, {"conv_in": conv_in, "pre": pre}


def unet_backward(net, cache, g_y):
    """Gradient of sum(g_y * unet_forward(net, x)) for every parameter.

    Returns a list parallel to net.parameters().
    """
    cfg = net.cfg
    d, act, c = cfg.depth, cfg.activation, cfg.channels
    nconv = len(net.weights)
    g_ws = [None] * nconv
    g_bs = [None] * nconv if net.biases is not None else None
    idx = nconv - 1
    g = np.asarray(g_y, dtype=np.float64)

    def back(g, activated=True):
        nonlocal idx
        if activated and act != "identity":
            g = g * _act_deriv(cache["pre"][idx], act)
        res = conv2d_backward(cache["conv_in"][idx], net.weights[idx], g,
                              with_bias=net.biases is not None,
                              need_input_grad=idx > 0)
        g_ws[idx] = res[1]
        if g_bs is not None:
            g_bs[idx] = res[2]
        idx -= 1
        return res[0]

    g = back(g, activated=False)
    skip_grads = [None] * d
    for level in range(d):
        g = back(back(g))
        skip_grads[level] = g[:, :c]
        g = bilinear_upsample2_backward(g[:, c:])
    g = back(back(g))
    for level in range(d - 1, -1, -1):
        g = avgpool2_backward(g) + skip_grads[level]
        g = back(back(g))
    if g_bs is None:
        return g_ws
    out = []
    for gw, gb in zip(g_ws, g_bs):
        out.append(gw)
        out.append(gb)
    return out


def cosine_lr(step, total_steps, lr0=1e-3):
    """Cosine decay from lr0 at step 0 to 0 at total_steps."""
    if not 0 <= step <= total_steps:
        raise ValueError("step must lie in [0, total_steps]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def adam_step(net, grads, lr_t, beta1=0.9, beta2=0.999, eps=1e-8,
              weight_decay=1e-7, clip_norm=1e-3):
    """One optimizer step: weight decay, then global-norm clip, then Adam.

    Mutates net in place (weights, moments, step counter) and returns it.
    """
    params = net.parameters()
    if len(grads) != len(params):
        raise ValueError("gradient list does not match parameter list")
    eff = []
    sq = 0.0
    for p, g in zip(params, grads):
        if not np.all(np.isfinite(g)):
            raise TrainingError(
                f"non-finite gradient in parameter of shape {p.shape} at step {net.step + 1}")
        ge = g + weight_decay * p
        eff.append(ge)
        sq += float(np.sum(ge * ge))
    norm = math.sqrt(sq)
    if clip_norm is not None and norm > clip_norm:
        scale = clip_norm / norm
        eff = [ge * scale for ge in eff]
    net.step += 1
    t = net.step
    b1c = 1.0 - beta1 ** t
    b2c = 1.0 - beta2 ** t
    for p, ge, m, v in zip(params, eff, net.m, net.v):
        m *= beta1
        m += (1.0 - beta1) * ge
        v *= beta2
        v += (1.0 - beta2) * ge * ge
        p -= lr_t * (m / b1c) / (np.sqrt(v / b2c) + eps)
    return net

"""Numpy building blocks for the two small networks: layer forward/backward
passes, batch norm, and an Adam optimizer.

Everything is dtype-preserving so gradient checks can run in float64 while
training/inference runs in float32. Backward functions return gradients in
the same order as the forward's parameters.
"""

import numpy as np

BN_EPS = 1e-5


# ------------------------------------------------------------- activations

def relu(x):
    return np.maximum(x, 0.0)


def relu_bwd(x, dy):
    return np.where(x > 0, dy, 0.0)


def elu(x, alpha=1.0):
    return np.where(x > 0, x, alpha * np.expm1(x))


def elu_bwd(x, dy, alpha=1.0):
    return np.where(x > 0, dy, dy * alpha * np.exp(x))


def sigmoid(x):
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bce_with_logits(logits, labels):
    """Mean binary cross-entropy and d(loss)/d(logits)."""
    z, y = logits, labels
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    dz = (sigmoid(z) - y) / z.size
    return loss.mean(), dz


# ------------------------------------------------------------------ dense

def dense(x, w, b):
    return x @ w + b


def dense_bwd(x, w, dy):
    xf = x.reshape(-1, x.shape[-1])
    dyf = dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, xf.T @ dyf, dyf.sum(axis=0)


# ------------------------------------------------------------- batch norm

def batchnorm(x, gamma, beta, running_mean, running_var, train, momentum=0.1):
    """Per-channel batch norm over the last axis.

    Returns (y, cache, new_running_mean, new_running_var). In train mode the
    batch statistics are used and the running stats updated; in eval mode
    the running stats are used and returned unchanged.
    """
    flat = x.reshape(-1, x.shape[-1])
    if train:
        mu = flat.mean(axis=0)
        var = flat.var(axis=0)
        rm = (1 - momentum) * running_mean + momentum * mu
        rv = (1 - momentum) * running_var + momentum * var
    else:
        mu, var = running_mean, running_var
        rm, rv = running_mean, running_var
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu) * inv
    y = gamma * xhat + beta
    cache = (xhat, inv, train, flat.shape[0])
    return y, cache, rm, rv


def batchnorm_bwd(dy, gamma, cache):
    xhat, inv, train, n = cache
    dgamma = (dy * xhat).reshape(-1, dy.shape[-1]).sum(axis=0)
    dbeta = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    if not train:
        return dy * gamma * inv, dgamma, dbeta
    dxhat = dy * gamma
    flat_dxhat = dxhat.reshape(-1, dy.shape[-1])
    flat_xhat = xhat.reshape(-1, dy.shape[-1])
    mean_dxhat = flat_dxhat.mean(axis=0)
    mean_dxhat_xhat = (flat_dxhat * flat_xhat).mean(axis=0)
    dx = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dgamma, dbeta


# ----------------------------------------------- depthwise conv1d (valid)

def dwconv1d(x, w, stride=2):
    """Per-channel 1-D convolution, valid padding.

    x: (B, L, C), w: (k, C) -> (B, Lout, C) with Lout = (L - k)//stride + 1.
    """
    k = w.shape[0]
    l_out = (x.shape[1] - k) // stride + 1
    y = np.zeros((x.shape[0], l_out, x.shape[2]), dtype=x.dtype)
    for j in range(k):
        y += x[:, j : j + stride * (l_out - 1) + 1 : stride, :] * w[j]
    return y


def dwconv1d_bwd(x, w, dy, stride=2):
    k = w.shape[0]
    l_out = dy.shape[1]
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    for j in range(k):
        sl = slice(j, j + stride * (l_out - 1) + 1, stride)
        dx[:, sl, :] += dy * w[j]
        dw[j] = (x[:, sl, :] * dy).sum(axis=(0, 1))
    return dx, dw


# ------------------------------------------- conv2d, stride 2, same padding

def _same_pad(size, k, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2, out


def conv2d(x, w, b, stride=2):
    """2-D convolution with TF-style 'same' padding.

    x: (B, H, W, Cin), w: (kh, kw, Cin, Cout) -> (B, ceil(H/s), ceil(W/s), Cout).
    Computed as kh*kw shifted matmuls so BLAS does the heavy lifting.
    """
    kh, kw = w.shape[:2]
    ph0, ph1, oh = _same_pad(x.shape[1], kh, stride)
    pw0, pw1, ow = _same_pad(x.shape[2], kw, stride)
    xp = np.pad(x, ((0, 0), (ph0, ph1), (pw0, pw1), (0, 0)))
    y = np.zeros((x.shape[0], oh, ow, w.shape[3]), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            sl = xp[:, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride, :]
            y += sl @ w[i, j]
    return y + b


def conv2d_bwd(x, w, dy, stride=2):
    kh, kw = w.shape[:2]
    ph0, ph1, oh = _same_pad(x.shape[1], kh, stride)
    pw0, pw1, ow = _same_pad(x.shape[2], kw, stride)
    xp = np.pad(x, ((0, 0), (ph0, ph1), (pw0, pw1), (0, 0)))
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for i in range(kh):
        for j in range(kw):
            sh = slice(i, i + stride * (oh - 1) + 1, stride)
            sw = slice(j, j + stride * (ow - 1) + 1, stride)
            sl = xp[:, sh, sw, :]
            dw[i, j] = np.einsum("bhwc,bhwo->co", sl, dy)
            dxp[:, sh, sw, :] += dy @ w[i, j].T
    db = dy.sum(axis=(0, 1, 2))
    dx = dxp[:, ph0 : ph0 + x.shape[1], pw0 : pw0 + x.shape[2], :]
    return dx, dw, db


# ---------------------------------------------------------- normalization

def l2_normalize(x, eps=1e-12):
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    return x / np.maximum(norm, eps)


def l2_normalize_bwd(x, dy, eps=1e-12):
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    norm = np.maximum(norm, eps)
    y = x / norm
    return (dy - y * (dy * y).sum(axis=-1, keepdims=True)) / norm


# ------------------------------------------------------------------ adam

class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1t = 1 - self.beta1**self.t
        b2t = 1 - self.beta2**self.t
        for name in sorted(grads):
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m += (1 - self.beta1) * (g - m)
            v += (1 - self.beta2) * (g * g - v)
            params[name] -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

"""Shared helpers: finite-difference oracles and small builders."""

import numpy as np
import pytest

from toposnn.autodiff import Tensor


def fd_grad(f, x, eps=1e-6):
    """Central finite-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return g


def check_op_grad(op, shapes, seed=0, eps=1e-6, tol=1e-5):
    """FD-check d sum(op(*inputs)) / d each input against the tape."""
    rng = np.random.default_rng(seed)
    arrays = [rng.uniform(0.3, 1.2, size=s) for s in shapes]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*tensors)
    loss = out.sum() if out.ndim else out
    loss.backward()
    for k, (a, t) in enumerate(zip(arrays, tensors)):
        def f(x, k=k):
            args = [Tensor(arr) for arr in arrays]
            args[k] = Tensor(x)
            o = op(*args)
            return float((o.sum() if o.ndim else o).data)
        fd = fd_grad(f, a.copy(), eps)
        denom = np.maximum(np.abs(fd), 1.0)
        err = np.abs(t.grad - fd) / denom
        assert err.max() < tol, f"input {k}: max rel err {err.max():.3g}"


def conv2d_oracle(x, w, b=None, stride=1, padding=0):
    """Nested-loop 2D convolution reference (NCHW)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    bsz, c, h, wd = x.shape
    oc, _, kh, kw = w.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (x.shape[2] - kh) // stride + 1
    ow = (x.shape[3] - kw) // stride + 1
    out = np.zeros((bsz, oc, oh, ow))
    for n in range(bsz):
        for o in range(oc):
            for i in range(oh):
                for j in range(ow):
                    patch = x[n, :, i * stride:i * stride + kh,
                              j * stride:j * stride + kw]
                    out[n, o, i, j] = (patch * w[o]).sum()
            if b is not None:
                out[n, o] += b[o]
    return out


def pearson_oracle(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc, yc = x - x.mean(), y - y.mean()
    return float((xc * yc).sum() / np.sqrt((xc * xc).sum() * (yc * yc).sum()))


def ccg_oracle(si, sj, w):
    """Triple-loop cross-correlogram reference on (B, T) binary trains."""
    si = np.asarray(si, dtype=np.float64)
    sj = np.asarray(sj, dtype=np.float64)
    b, t = si.shape
    total = 0.0
    for tau in range(-w, w + 1):
        lam = max(0, t - abs(tau))
        acc = 0.0
        for bi in range(b):
            for ti in range(t):
                if 0 <= ti + tau < t:
                    acc += si[bi, ti] * sj[bi, ti + tau]
        total += acc / (b * lam)
    return total


def r_ccg_oracle(si, sj, w):
    num = ccg_oracle(si, sj, w)
    den = np.sqrt(ccg_oracle(si, si, w) * ccg_oracle(sj, sj, w))
    return min(num / den, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

"""Slow, obviously-correct reference implementations used only by the tests.

None of these share code with the package; they are written from the
definitions with explicit loops or closed forms.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d_loops(x, w, b, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.zeros((n, cin, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride : i * stride + k, j * stride : j * stride + k]
            out[:, :, i, j] = np.einsum("nckl,ockl->no", patch, w)
    if b is not None:
        out += b[None, :, None, None]
    return out


def conv_transpose_zero_stuffed(x, w, b, stride):
    """Insert ``stride - 1`` zeros between inputs, then correlate with the flipped kernel.

    Uses padding ``k - 1 - k//2`` before and one extra row/column after, the
    usual equivalence for ``padding = k//2, output_padding = stride - 1``.
    """
    n, cin, h, wd = x.shape
    _, cout, k, _ = w.shape
    up = np.zeros((n, cin, (h - 1) * stride + 1, (wd - 1) * stride + 1))
    up[:, :, ::stride, ::stride] = x
    lo = k - 1 - k // 2
    hi = lo + stride - 1
    up = np.pad(up, ((0, 0), (0, 0), (lo, hi), (lo, hi)))
    wf = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    return conv2d_loops(up, wf, b, 1, 0)


def nearest_loops(x, r):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h * r, w * r))
    for i in range(h * r):
        for j in range(w * r):
            out[:, :, i, j] = x[:, :, i // r, j // r]
    return out


def pixel_shuffle_loops(x, r):
    n, c, h, w = x.shape
    co = c // (r * r)
    out = np.zeros((n, co, h * r, w * r))
    for ch in range(co):
        for i in range(r):
            for j in range(r):
                out[:, ch, i::r, j::r] = x[:, ch * r * r + i * r + j]
    return out


def window_attention_dense(x, wqkv, bqkv, wproj, bproj, table, heads, window, shifted):
    """Per-token loops over explicit window membership, no rolling."""
    n, c, h, w = x.shape
    d = c // heads
    s = window // 2 if shifted else 0

    def band(i, size):
        # rolled coordinate; the wrapped last window splits into three masked bands
        r = (i - s) % size
        if r < size - window:
            return 0
        return 1 if r < size - s else 2

    out = np.zeros_like(x, dtype=np.float64)
    tokens = x.transpose(0, 2, 3, 1).reshape(n, h * w, c)
    qkv = tokens @ wqkv + bqkv
    q, k, v = qkv[..., :c], qkv[..., c : 2 * c], qkv[..., 2 * c :]
    coords = [(i, j) for i in range(h) for j in range(w)]
    for b in range(n):
        for a, (i, j) in enumerate(coords):
            members = []
            for m, (p, r) in enumerate(coords):
                if shifted:
                    # cyclic window id after rolling by -s, plus the edge bands that get masked
                    same = ((i - s) % h) // window == ((p - s) % h) // window and (
                        (j - s) % w
                    ) // window == ((r - s) % w) // window
                    same = same and band(i, h) == band(p, h) and band(j, w) == band(r, w)
                else:
                    same = i // window == p // window and j // window == r // window
                if same:
                    members.append(m)
            res = np.zeros(c)
            for hd in range(heads):
                sl = slice(hd * d, (hd + 1) * d)
                scores = []
                for m in members:
                    p, r = coords[m]
                    di = ((i - s) % h) % window - ((p - s) % h) % window + window - 1
                    dj = ((j - s) % w) % window - ((r - s) % w) % window + window - 1
                    bias = table[di * (2 * window - 1) + dj, hd]
                    scores.append(q[b, a, sl] @ k[b, m, sl] / math.sqrt(d) + bias)
                scores = np.array(scores)
                p_ = np.exp(scores - scores.max())
                p_ /= p_.sum()
                res[sl] = sum(pw * v[b, m, sl] for pw, m in zip(p_, members))
            out[b, :, i, j] = res @ wproj + bproj
    return out


def gaussian_bin_mass(d: float, sigma: float) -> float:
    """P(|X - d| <= 1/2) for X ~ N(0, sigma), evaluated with math.erf."""
    cdf = lambda t: 0.5 * (1.0 + math.erf(t / (sigma * math.sqrt(2.0))))
    return cdf(d + 0.5) - cdf(d - 0.5)


def adam_closed_form(grads, lr, b1, b2, eps, theta0):
    """Explicit recursion of Adam with bias correction, one parameter vector."""
    theta = np.array(theta0, dtype=np.float64)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        theta = theta - lr * mh / (np.sqrt(vh) + eps)
    return theta


def bd_rate_fine_grid(anchor, test, samples: int = 100_000) -> float:
    """Same interpolant as the package, integrated with a dense trapezoid rule."""
    from scipy.interpolate import PchipInterpolator

    def interp(points):
        pts = sorted(points, key=lambda p: p[1])
        d = np.array([p[1] for p in pts])
        r = np.log10([p[0] for p in pts])
        return PchipInterpolator(d, r), d.min(), d.max()

    fa, alo, ahi = interp(anchor)
    ft, tlo, thi = interp(test)
    lo, hi = max(alo, tlo), min(ahi, thi)
    grid = np.linspace(lo, hi, samples)
    diff = ft(grid) - fa(grid)
    avg = np.sum((diff[1:] + diff[:-1]) * 0.5 * np.diff(grid)) / (hi - lo)
    return (10**avg - 1) * 100


def psnr_direct(a, b) -> float:
    total = 0.0
    flat_a = np.asarray(a, dtype=np.float64).ravel()
    flat_b = np.asarray(b, dtype=np.float64).ravel()
    for u, v in zip(flat_a, flat_b):
        total += (u - v) ** 2
    mse = total / flat_a.size
    return 10 * math.log10(255 * 255 / mse)


def finite_difference(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of the scalar function ``f`` at ``x``."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f(x)
        x[idx] = old - eps
        fm = f(x)
        x[idx] = old
        grad[idx] = (fp - fm) / (2 * eps)
    return grad


def conv_rf_recursion(layers) -> int:
    """Textbook receptive field of stacked (kernel, stride) layers."""
    rf, jump = 1, 1
    for k, s in layers:
        rf += (k - 1) * jump
        jump *= s
    return rf

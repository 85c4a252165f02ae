"""Slow, loop-based reference implementations used as test oracles."""

import numpy as np


def naive_conv2d(x, w, b, stride, padding):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for i in range(n):
        for j in range(o):
            for y in range(oh):
                for z in range(ow):
                    acc = 0.0 if b is None else b[j]
                    for k in range(c):
                        for p in range(kh):
                            for q in range(kw):
                                acc += xp[i, k, y * stride + p, z * stride + q] * w[j, k, p, q]
                    out[i, j, y, z] = acc
    return out


def reference_ssim(a, b, size=11, sigma=1.5, data_range=1.0):
    """SSIM of two C x H x W images by explicit sliding windows (valid positions only)."""
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    window = np.outer(g, g)
    window /= window.sum()
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    values = []
    for ch in range(a.shape[0]):
        for y in range(a.shape[1] - size + 1):
            for x in range(a.shape[2] - size + 1):
                pa = a[ch, y : y + size, x : x + size]
                pb = b[ch, y : y + size, x : x + size]
                ma, mb = np.sum(window * pa), np.sum(window * pb)
                va = np.sum(window * (pa - ma) ** 2)
                vb = np.sum(window * (pb - mb) ** 2)
                cov = np.sum(window * (pa - ma) * (pb - mb))
                values.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(values))

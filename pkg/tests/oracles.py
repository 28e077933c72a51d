"""Independent reference computations used by the tests.

Nothing here touches the autodiff engine's backward pass; the finite
difference checker only calls forward closures.
"""
from __future__ import annotations

import numpy as np


def central_difference(f, arrays: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """d f / d array for every entry, by central differences; mutates and restores inputs."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f()
            flat[i] = orig - h
            down = f()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def gradient_mismatch(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1, |a|)."""
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic)), initial=0.0))


def naive_matmul(w, x):
    out = np.zeros((len(w), x.shape[1]))
    for c in range(len(w)):
        for n in range(x.shape[1]):
            s = 0.0
            for k in range(x.shape[0]):
                s += w[c][k] * x[k][n]
            out[c, n] = s
    return out


def homogeneous(r, t):
    m = np.eye(4)
    m[:3, :3] = r
    m[:3, 3] = t
    return m


def horn_quaternion_alignment(src, dst):
    """Closed-form absolute orientation via the 4x4 quaternion eigenproblem (Horn 1987)."""
    src, dst = np.asarray(src, float), np.asarray(dst, float)
    ms, md = src.mean(0), dst.mean(0)
    s = (src - ms).T @ (dst - md)
    sxx, sxy, sxz = s[0]
    syx, syy, syz = s[1]
    szx, szy, szz = s[2]
    n = np.array(
        [
            [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
            [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
            [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
            [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
        ]
    )
    vals, vecs = np.linalg.eigh(n)
    w, x, y, z = vecs[:, np.argmax(vals)]
    r = np.array(
        [
            [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
        ]
    )
    return r, md - r @ ms


def riemann_auc(errors, max_threshold=0.10, steps=10_000):
    """Midpoint Riemann sum of acc(tau) = #{e < tau}/n over [0, max]."""
    e = np.sort(np.asarray(errors, float))
    taus = (np.arange(steps) + 0.5) * max_threshold / steps
    acc = np.searchsorted(e, taus, side="left") / e.size
    return float(acc.mean())


def golden_section_min(f, lo: float, hi: float, tol: float = 1e-12) -> float:
    """Minimizer of a unimodal scalar function on [lo, hi]."""
    inv = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    return 0.5 * (a + b)

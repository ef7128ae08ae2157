"""Independent reference computations used by the tests.

Nothing here imports the code paths it checks: DFTs are explicit double
sums, distances are Python loops, gradients are central differences.
"""

import cmath
import math

import numpy as np

FD_STEP = 1e-3
FD_RTOL = 1e-4


def rel_error(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def central_diff(f, arr, index, h=FD_STEP):
    """d f() / d arr[index] by central differences; ``arr`` is perturbed in place."""
    old = arr[index]
    arr[index] = old + h
    fp = f()
    arr[index] = old - h
    fm = f()
    arr[index] = old
    return (fp - fm) / (2 * h)


def naive_dft(x):
    n = len(x)
    return [sum(x[t] * cmath.exp(-2j * math.pi * k * t / n) for t in range(n)) for k in range(n)]


def naive_band_powers(x, sample_rate, bands):
    """One-sided periodogram of the mean-removed signal, banded from 0 to Nyquist."""
    n = len(x)
    mean = sum(x) / n
    centered = [v - mean for v in x]
    spec = naive_dft(centered)
    nyquist = sample_rate / 2
    width = nyquist / bands
    out = [0.0] * bands
    for k in range(n // 2 + 1):
        power = abs(spec[k]) ** 2 / n
        if 0 < k < n / 2:
            power *= 2
        b = min(int((k * sample_rate / n) // width), bands - 1)
        out[b] += power
    return out


def brute_hausdorff(a, b):
    def directed(p, q):
        worst = 0.0
        for x1, y1 in p:
            best = math.inf
            for x2, y2 in q:
                d = math.sqrt((x1 - x2) ** 2 + (y1 - y2) ** 2)
                best = min(best, d)
            worst = max(worst, best)
        return worst
    return max(directed(a, b), directed(b, a))


def unicycle_closed_form(x, y, th, v, w, t):
    if abs(w) < 1e-12:
        return x + v * t * math.cos(th), y + v * t * math.sin(th), th
    return (x + v / w * (math.sin(th + w * t) - math.sin(th)),
            y - v / w * (math.cos(th + w * t) - math.cos(th)),
            th + w * t)


def scalar_adamw(p, grads, lr, b1, b2, eps, wd):
    """Plain-float AdamW over a gradient sequence."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        p = p - lr * wd * p
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * mhat / (math.sqrt(vhat) + eps)
    return p


def dft_matrix_band_powers(x, sample_rate, bands):
    """Same quantity as ``naive_band_powers`` but as an explicit O(T^2)
    DFT-matrix product (fast enough for many windows, no FFT involved)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    centered = x - x.mean(axis=-1, keepdims=True)
    k = np.arange(n // 2 + 1)[:, None]
    t = np.arange(n)[None, :]
    mat = np.exp(-2j * np.pi * k * t / n)
    power = np.abs(centered @ mat.T) ** 2 / n
    weights = np.array([2.0 if 0 < kk < n / 2 else 1.0 for kk in range(n // 2 + 1)])
    power = power * weights
    width = (sample_rate / 2) / bands
    out = np.zeros(x.shape[:-1] + (bands,))
    for kk in range(n // 2 + 1):
        b = min(int((kk * sample_rate / n) // width), bands - 1)
        out[..., b] += power[..., kk]
    return out

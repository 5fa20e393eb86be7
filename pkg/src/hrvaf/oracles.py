"""Direct-from-definition reference computations used to check the fast paths.

Everything here is written with plain loops, exact fractions or dense linear
algebra and shares no code with the modules it checks.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def ecdf_sup_scan(a, b) -> float:
    """sup |F_a - F_b| by evaluating both ECDFs at every pooled point."""
    a, b = list(map(float, a)), list(map(float, b))
    best = Fraction(0)
    for x in a + b:
        fa = Fraction(sum(1 for v in a if v <= x), len(a))
        fb = Fraction(sum(1 for v in b if v <= x), len(b))
        best = max(best, abs(fa - fb))
    return float(best)


def time_domain(nn):
    x = [float(v) for v in nn]
    n = len(x)
    mean = math.fsum(x) / n
    sdnn = math.sqrt(math.fsum((v - mean) ** 2 for v in x) / (n - 1))
    diffs = [x[i + 1] - x[i] for i in range(n - 1)]
    rmssd = math.sqrt(math.fsum(d * d for d in diffs) / len(diffs))

    def quantile(p):
        s = sorted(x)
        h = (n - 1) * p
        lo = math.floor(h)
        hi = min(lo + 1, n - 1)
        return s[lo] + (h - lo) * (s[hi] - s[lo])

    pnn = lambda thr: 100.0 * sum(1 for d in diffs if abs(d) > thr) / len(diffs)  # noqa: E731
    return mean, sdnn, rmssd, quantile(0.75) - quantile(0.25), pnn(50.0), pnn(20.0)


def tinn_exhaustive(nn, bin_ms: float = 7.8125):
    """(tinn, hti) by trying every (N, M) edge pair with exact rational arithmetic."""
    counts: dict[int, int] = {}
    for v in nn:
        b = math.floor(float(v) / bin_ms)
        counts[b] = counts.get(b, 0) + 1
    lo, hi = min(counts), max(counts)
    hist = [counts.get(b, 0) for b in range(lo, hi + 1)]
    height = max(hist)
    peak = hist.index(height)
    hti = len(nn) / height
    if len(hist) == 1:
        return 0.0, hti
    apex = Fraction(2 * peak + 1, 2)
    best = None
    for n_edge in range(0, peak + 1):
        for m_edge in range(peak + 1, len(hist) + 1):
            err = Fraction(0)
            for b, y in enumerate(hist):
                c = Fraction(2 * b + 1, 2)
                if c <= n_edge or c >= m_edge:
                    q = Fraction(0)
                elif c <= apex:
                    q = height * (c - n_edge) / (apex - n_edge)
                else:
                    q = height * (m_edge - c) / (m_edge - apex)
                err += (y - q) ** 2
            key = (err, m_edge - n_edge, n_edge)
            if best is None or key < best:
                best = key
    return float(best[1] * bin_ms), hti


def natural_spline(t, y, grid):
    """Natural cubic spline via a dense solve for the knot second derivatives."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    n = len(t)
    h = np.diff(t)
    a = np.zeros((n, n))
    rhs = np.zeros(n)
    a[0, 0] = a[-1, -1] = 1.0
    for i in range(1, n - 1):
        a[i, i - 1] = h[i - 1]
        a[i, i] = 2.0 * (h[i - 1] + h[i])
        a[i, i + 1] = h[i]
        rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1])
    m = np.linalg.solve(a, rhs)
    out = np.empty(len(grid))
    for k, g in enumerate(grid):
        i = min(max(int(np.searchsorted(t, g, side="right")) - 1, 0), n - 2)
        dx0, dx1 = g - t[i], t[i + 1] - g
        out[k] = (
            m[i] * dx1**3 / (6 * h[i])
            + m[i + 1] * dx0**3 / (6 * h[i])
            + (y[i] / h[i] - m[i] * h[i] / 6) * dx1
            + (y[i + 1] / h[i] - m[i + 1] * h[i] / 6) * dx0
        )
    return out


def welch_direct(x, fs: float, nperseg: int, noverlap: int):
    """One-sided Welch density with a periodic Hann taper and an explicit DFT."""
    x = np.asarray(x, float)
    n = nperseg
    win = np.array([0.5 - 0.5 * math.cos(2 * math.pi * k / n) for k in range(n)])
    nfreq = n // 2 + 1
    kk = np.arange(nfreq)[:, None] * np.arange(n)[None, :]
    dft = np.exp(-2j * np.pi * kk / n)
    step = n - noverlap
    starts = range(0, len(x) - n + 1, step)
    acc = np.zeros(nfreq)
    count = 0
    for s in starts:
        spec = dft @ (x[s : s + n] * win)
        acc += np.abs(spec) ** 2
        count += 1
    psd = acc / count / (fs * np.sum(win**2))
    psd[1:] *= 2.0
    if n % 2 == 0:
        psd[-1] /= 2.0
    return np.arange(nfreq) * fs / n, psd


def band_powers(nn, beat_times, interp_hz, window_s, overlap, bands):
    t = np.asarray(beat_times, float) - float(beat_times[0])
    count = int(math.floor(t[-1] * interp_hz + 1e-9)) + 1
    grid = np.array([k / interp_hz for k in range(count)])
    sig = natural_spline(t, nn, grid)
    sig = sig - sig.mean()
    nperseg = int(round(window_s * interp_hz))
    freqs, psd = welch_direct(sig, interp_hz, nperseg, int(nperseg * overlap))
    out = []
    for name in ("lf", "hf", "vhf"):
        lo, hi = bands[name]
        pts = [(f, p) for f, p in zip(freqs, psd) if lo <= f < hi]
        total = 0.0
        for (f0, p0), (f1, p1) in zip(pts, pts[1:]):
            total += (f1 - f0) * (p0 + p1) / 2
        out.append(total)
    return tuple(out)


def poincare(nn):
    x = [float(v) for v in nn]
    d = [x[i + 1] - x[i] for i in range(len(x) - 1)]
    var_d = math.fsum(v * v for v in d) / len(d)
    mean = math.fsum(x) / len(x)
    var_x = math.fsum((v - mean) ** 2 for v in x) / (len(x) - 1)
    return math.sqrt(var_d / 2), math.sqrt(max(2 * var_x - var_d / 2, 0.0))


def fragmentation(nn):
    x = [float(v) for v in nn]
    n = len(x)
    d = [x[i + 1] - x[i] for i in range(n - 1)]

    def inflection(i):  # between d[i-1] and d[i]
        a, b = d[i - 1], d[i]
        return a * b < 0 or ((a == 0) != (b == 0))

    flags = [inflection(i) for i in range(1, len(d))]
    pip = 100.0 * sum(flags) / len(d)
    covered = set()
    i = 0
    while i < len(flags):
        if not flags[i]:
            i += 1
            continue
        j = i
        while j + 1 < len(flags) and flags[j + 1]:
            j += 1
        # flags[i..j] -> differences d[i..j+1] -> NN x[i..j+2]
        if (j + 1) - i + 1 >= 3:
            covered.update(range(i, j + 3))
        i = j + 1
    return pip, 100.0 * len(covered) / n


def sector_area_asymmetry(nn):
    x = [float(v) for v in nn]
    below_w = off_w = 0.0
    below_n = off_n = 0
    for a, b in zip(x[:-1], x[1:]):
        if a == b:
            continue
        r2 = a * a + b * b
        w = r2 * abs(math.atan2(b, a) - math.pi / 4)
        off_w += w
        off_n += 1
        if b < a:
            below_w += w
            below_n += 1
    return 100.0 * below_w / off_w, 100.0 * below_n / off_n


def apen_naive(nn, m: int = 2, r_factor: float = 0.2):
    x = [float(v) for v in nn]
    n = len(x)
    mean = math.fsum(x) / n
    sd = math.sqrt(math.fsum((v - mean) ** 2 for v in x) / (n - 1))
    if sd == 0:
        return 0.0
    r = r_factor * sd

    def phi(mm):
        count = n - mm + 1
        logs = []
        for i in range(count):
            c = 0
            for j in range(count):
                if max(abs(x[i + k] - x[j + k]) for k in range(mm)) <= r:
                    c += 1
            logs.append(math.log(c / count))
        return math.fsum(logs) / count

    return phi(m) - phi(m + 1)


def moments_of(x):
    """Sample mean and unbiased covariance by explicit summation."""
    x = np.asarray(x, float)
    n, d = x.shape
    mean = np.array([math.fsum(x[:, j]) / n for j in range(d)])
    cov = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            cov[i, j] = cov[j, i] = math.fsum((x[:, i] - mean[i]) * (x[:, j] - mean[j])) / (n - 1)
    return mean, cov

"""Compiled per-point kernels for the 24 catalog bases.

Each kernel takes one transformed point ``z`` and returns the base value,
which is 0 at ``z = 0``.  ``base_rows`` evaluates many points for one base,
``instance_rows`` fuses the shift and rotation ``z = R (x - x_opt)``.
Gallagher peak data is passed in as arrays.
"""

import math

import numba
import numpy as np

TWO_PI = 2.0 * math.pi


@numba.njit(cache=True, inline="always")
def _e(i, d):
    return 1.0 if d == 1 else i / (d - 1)


@numba.njit(cache=True, inline="always")
def _cond(alpha, i, d):
    return alpha ** (0.5 * _e(i, d))


@numba.njit(cache=True)
def _rastrigin(w):
    d = w.size
    c = 0.0
    s = 0.0
    for i in range(d):
        c += math.cos(TWO_PI * w[i])
        s += w[i] * w[i]
    return 10.0 * (d - c) + s


@numba.njit(cache=True)
def _rosenbrock_shifted(z, scale_vec):
    d = z.size
    out = 0.0
    for i in range(d - 1):
        a = scale_vec[i] * z[i] + 1.0
        b = scale_vec[i + 1] * z[i + 1] + 1.0
        out += 100.0 * (a * a - b) ** 2 + (a - 1.0) ** 2
    return out


@numba.njit(cache=True)
def _rosen_scale(d):
    return max(1.0, math.sqrt(d) / 8.0)


@numba.njit(cache=True)
def _weierstrass_terms(v):
    t = 0.0
    a = 1.0
    b = 1.0
    for _ in range(12):
        t += a * math.cos(TWO_PI * b * (v + 0.5))
        a *= 0.5
        b *= 3.0
    return t


@numba.njit(cache=True)
def _schaffers(z, alpha):
    d = z.size
    w = np.empty(d)
    for i in range(d):
        w[i] = _cond(alpha, i, d) * z[i]
    acc = 0.0
    for i in range(d - 1):
        s = math.sqrt(w[i] * w[i] + w[i + 1] * w[i + 1])
        rs = math.sqrt(s)
        acc += rs + rs * math.sin(50.0 * s ** 0.2) ** 2
    return (acc / (d - 1)) ** 2


@numba.njit(cache=True)
def _gallagher(z, centres, weights, cond):
    d = z.size
    best = -np.inf
    for k in range(centres.shape[0]):
        q = 0.0
        for i in range(d):
            diff = z[i] - centres[k, i]
            q += cond[k, i] * diff * diff
        v = weights[k] * math.exp(-q / (2.0 * d))
        if v > best:
            best = v
    return (10.0 - best) ** 2


@numba.njit(cache=True)
def base_value(fid, z, centres, weights, cond):
    d = z.size
    if fid == 1:
        s = 0.0
        for i in range(d):
            s += z[i] * z[i]
        return s
    if fid == 2 or fid == 10:
        s = 0.0
        for i in range(d):
            s += 10.0 ** (6 * _e(i, d)) * z[i] * z[i]
        return s
    if fid == 3 or fid == 15:
        w = np.empty(d)
        for i in range(d):
            w[i] = _cond(10.0, i, d) * z[i]
        return _rastrigin(w)
    if fid == 4:
        w = np.empty(d)
        for i in range(d):
            s = 10.0 ** (0.5 * _e(i, d))
            if i % 2 == 0 and z[i] > 0:
                s = 10.0 * s
            w[i] = s * z[i]
        return _rastrigin(w)
    if fid == 5:
        s = 0.0
        for i in range(d):
            s += 10.0 ** _e(i, d) * abs(z[i])
        return s
    if fid == 6:
        s = 0.0
        for i in range(d):
            w = _cond(10.0, i, d) * z[i]
            f = 100.0 if w > 0 else 1.0
            s += (f * w) ** 2
        return s ** 0.9
    if fid == 7:
        body = 0.0
        first = 0.0
        for i in range(d):
            zh = _cond(10.0, i, d) * z[i]
            if i == 0:
                first = abs(zh) / 1e4
            if abs(zh) > 0.5:
                zt = math.floor(0.5 + zh)
            else:
                zt = math.floor(0.5 + 10.0 * zh) / 10.0
            body += 10.0 ** (2 * _e(i, d)) * zt * zt
        return 0.1 * max(first, body)
    if fid == 8:
        c = _rosen_scale(d)
        return _rosenbrock_shifted(z, np.full(d, c))
    if fid == 9:
        c = _rosen_scale(d)
        sv = np.empty(d)
        for i in range(d):
            sv[i] = c * _cond(4.0, i, d)
        return _rosenbrock_shifted(z, sv)
    if fid == 11:
        s = 0.0
        for i in range(1, d):
            s += z[i] * z[i]
        return 1e6 * z[0] * z[0] + s
    if fid == 12:
        s = 0.0
        for i in range(1, d):
            s += z[i] * z[i]
        return z[0] * z[0] + 1e6 * s
    if fid == 13:
        s = 0.0
        w0 = _cond(10.0, 0, d) * z[0]
        for i in range(1, d):
            w = _cond(10.0, i, d) * z[i]
            s += w * w
        return w0 * w0 + 100.0 * math.sqrt(s)
    if fid == 14:
        s = 0.0
        for i in range(d):
            s += abs(z[i]) ** (2 + 4 * _e(i, d))
        return math.sqrt(s)
    if fid == 16:
        f0 = _weierstrass_terms(0.0)
        inner = 0.0
        for i in range(d):
            inner += _weierstrass_terms(_cond(0.01, i, d) * z[i]) - f0
        inner /= d
        return 10.0 * inner ** 3
    if fid == 17:
        return _schaffers(z, 10.0)
    if fid == 18:
        return _schaffers(z, 1000.0)
    if fid == 19:
        c = _rosen_scale(d)
        acc = 0.0
        for i in range(d - 1):
            a = c * z[i] + 1.0
            b = c * z[i + 1] + 1.0
            s = 100.0 * (a * a - b) ** 2 + (a - 1.0) ** 2
            acc += s / 4000.0 - math.cos(s) + 1.0
        return 10.0 / (d - 1) * acc
    if fid == 20:
        s = 0.0
        p = 1.0
        for i in range(d):
            w = 120.0 * z[i]
            s += w * w
            p *= math.cos(w / math.sqrt(i + 1.0))
        return 1.0 + s / 4000.0 - p
    if fid == 21 or fid == 22:
        return _gallagher(z, centres, weights, cond)
    if fid == 23:
        prod = 1.0
        expo = 10.0 / d ** 1.2
        for i in range(d):
            w = _cond(100.0, i, d) * z[i]
            inner = 0.0
            pw = 1.0
            for _ in range(32):
                pw *= 2.0
                sc = w * pw
                inner += abs(sc - np.rint(sc)) / pw
            prod *= (1.0 + (i + 1) * inner) ** expo
        return 10.0 / d ** 2 * (prod - 1.0)
    if fid == 24:
        mu0 = 2.5
        s = 1.0 - 1.0 / (2.0 * math.sqrt(d + 20.0) - 8.2)
        mu1 = -math.sqrt((mu0 * mu0 - 1.0) / s)
        first = 0.0
        second = 0.0
        ras = 0.0
        for i in range(d):
            first += z[i] * z[i]
            second += (z[i] + mu0 - mu1) ** 2
            ras += 1.0 - math.cos(TWO_PI * _cond(100.0, i, d) * z[i])
        return min(first, d + s * second) + 10.0 * ras
    return np.nan


@numba.njit(cache=True)
def base_rows(fid, Z, centres, weights, cond):
    out = np.empty(Z.shape[0])
    for r in range(Z.shape[0]):
        out[r] = base_value(fid, Z[r], centres, weights, cond)
    return out


@numba.njit(cache=True)
def instance_rows(fid, X, x_opt, R, f_opt, centres, weights, cond):
    n, d = X.shape
    out = np.empty(n)
    diff = np.empty(d)
    z = np.empty(d)
    for r in range(n):
        for j in range(d):
            diff[j] = X[r, j] - x_opt[j]
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += R[i, j] * diff[j]
            z[i] = acc
        out[r] = f_opt + base_value(fid, z, centres, weights, cond)
    return out

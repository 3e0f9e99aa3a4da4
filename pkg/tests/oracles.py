"""Brute-force reference implementations used as test oracles."""

import math

import numpy as np


def conv2d_loop(x, w, b, stride=1, padding=0):
    cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((cout, ho, wo))
    for o in range(cout):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0 if b is None else float(b[o])
                for c in range(cin):
                    for di in range(kh):
                        for dj in range(kw):
                            acc += float(w[o, c, di, dj]) * float(xp[c, i * stride + di, j * stride + dj])
                out[o, i, j] = acc
    return out


def conv3d_loop(x, w, b, padding=0):
    cout, _, ka, kb, kc = w.shape
    xp = np.pad(x, ((0, 0),) + ((padding, padding),) * 3)
    oa, ob, oc = (xp.shape[1] - ka + 1, xp.shape[2] - kb + 1, xp.shape[3] - kc + 1)
    out = np.zeros((cout, oa, ob, oc))
    for o in range(cout):
        for i in range(oa):
            for j in range(ob):
                for l in range(oc):
                    patch = xp[:, i : i + ka, j : j + kb, l : l + kc].astype(np.float64)
                    out[o, i, j, l] = float(np.sum(patch * w[o])) + (0.0 if b is None else float(b[o]))
    return out


def psnr_two_pass(a, b, peak=1.0):
    a = np.asarray(a, np.float64).ravel()
    b = np.asarray(b, np.float64).ravel()
    total = 0.0
    for u, v in zip(a, b):
        total += (u - v) ** 2
    mse = total / a.size
    return math.inf if mse == 0 else 10 * math.log10(peak * peak / mse)


def ssim_per_window(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, peak=1.0):
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    x = np.arange(window) - (window - 1) / 2
    g1 = np.exp(-(x**2) / (2 * sigma**2))
    g = np.outer(g1, g1)
    g /= g.sum()
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    vals = []
    for i in range(a.shape[0] - window + 1):
        for j in range(a.shape[1] - window + 1):
            pa = a[i : i + window, j : j + window]
            pb = b[i : i + window, j : j + window]
            ma, mb = np.sum(g * pa), np.sum(g * pb)
            va = np.sum(g * (pa - ma) ** 2)
            vb = np.sum(g * (pb - mb) ** 2)
            cov = np.sum(g * (pa - ma) * (pb - mb))
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def dice_count(a, b):
    a = np.asarray(a, bool).ravel().tolist()
    b = np.asarray(b, bool).ravel().tolist()
    na, nb = sum(a), sum(b)
    inter = sum(1 for u, v in zip(a, b) if u and v)
    return 1.0 if na + nb == 0 else 2 * inter / (na + nb)


def boundary_loop(m):
    m = np.asarray(m, bool)
    h, w = m.shape
    pts = []
    for i in range(h):
        for j in range(w):
            if not m[i, j]:
                continue
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                u, v = i + di, j + dj
                if not (0 <= u < h and 0 <= v < w) or not m[u, v]:
                    pts.append((i, j))
                    break
    return pts


def hd_all_pairs(a, b, p=90):
    pa, pb = boundary_loop(a), boundary_loop(b)
    if not pa and not pb:
        return 0.0
    if not pa or not pb:
        return None

    def directed(src, dst):
        d = sorted(min(math.hypot(s[0] - t[0], s[1] - t[1]) for t in dst) for s in src)
        rank = max(1, math.ceil(p / 100 * len(d)))
        return d[rank - 1]

    return max(directed(pa, pb), directed(pb, pa))


def random_blob(rng, shape, n_disks=3):
    yy, xx = np.mgrid[: shape[0], : shape[1]]
    m = np.zeros(shape, bool)
    for _ in range(rng.integers(0, n_disks + 1)):
        cy, cx = rng.uniform(0, shape[0]), rng.uniform(0, shape[1])
        r = rng.uniform(0.5, min(shape) / 2.5)
        m |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    m ^= rng.random(shape) < 0.03
    return m

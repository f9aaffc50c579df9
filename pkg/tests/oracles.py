"""Brute-force reference implementations, deliberately naive and independent of the package."""

import math
from fractions import Fraction

import numpy as np


def jaccard_sets(a, b):
    sa = {tuple(p) for p in np.argwhere(a)}
    sb = {tuple(p) for p in np.argwhere(b)}
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def border_pixels(mask):
    h, w = mask.shape
    out = []
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < h and 0 <= cc < w) or not mask[rr, cc]:
                    out.append((r, c))
                    break
    return out


def hausdorff_full_matrix(a_pts, b_pts, ps=1.0):
    a = np.asarray(a_pts, dtype=np.float64)
    b = np.asarray(b_pts, dtype=np.float64)
    dist = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    return max(dist.min(axis=1).max(), dist.min(axis=0).max()) * ps


def otsu_bruteforce(values, n_bins=256):
    """Bin boundary k/n_bins maximising w0*w1*(mu0-mu1)^2 in exact rationals, lowest k on ties."""
    levels = [min(int(v * n_bins), n_bins - 1) for v in np.clip(np.ravel(values), 0, 1)]
    best, best_k = None, None
    for k in range(1, n_bins):
        lo = [x for x in levels if x < k]
        hi = [x for x in levels if x >= k]
        if not lo or not hi:
            continue
        n = len(levels)
        w0, w1 = Fraction(len(lo), n), Fraction(len(hi), n)
        mu0, mu1 = Fraction(sum(lo), len(lo)), Fraction(sum(hi), len(hi))
        var = w0 * w1 * (mu0 - mu1) ** 2
        if best is None or var > best:
            best, best_k = var, k
    return None if best_k is None else best_k / n_bins


def pearson_loops(x, y):
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def error_loops(pred, truth):
    n = len(pred)
    mae = math.fsum(abs(p - t) for p, t in zip(pred, truth)) / n
    rmse = math.sqrt(math.fsum((p - t) ** 2 for p, t in zip(pred, truth)) / n)
    re = [(p - t) / t for p, t in zip(pred, truth) if t != 0]
    return mae, rmse, min(re), max(re)


def bland_altman_loops(pred, truth):
    d = [p - t for p, t in zip(pred, truth)]
    n = len(d)
    mean = math.fsum(d) / n
    sd = math.sqrt(math.fsum((x - mean) ** 2 for x in d) / (n - 1))
    return mean, mean - 1.96 * sd, mean + 1.96 * sd


def dice_loss_mp(pred, truth, eps):
    """Soft Dice loss evaluated in mpmath arithmetic (pred: list of mpf)."""
    import mpmath
    inter = mpmath.fsum(p * t for p, t in zip(pred, truth))
    denom = mpmath.fsum(pred) + mpmath.fsum(truth)
    return 1 - (2 * inter + eps) / (denom + eps)


def central_difference_grad(pred, truth, eps, h=1e-3, dps=50):
    import mpmath
    with mpmath.workdps(dps):
        p = [mpmath.mpf(float(v)) for v in np.ravel(pred)]
        t = [mpmath.mpf(float(v)) for v in np.ravel(truth)]
        e = mpmath.mpf(eps)
        hh = mpmath.mpf(h)
        grad = []
        for i in range(len(p)):
            up = list(p)
            dn = list(p)
            up[i] += hh
            dn[i] -= hh
            grad.append((dice_loss_mp(up, t, e) - dice_loss_mp(dn, t, e)) / (2 * hh))
        return np.array([float(g) for g in grad]).reshape(np.shape(pred))

"""Scalar-loop reference implementations.

Plain Python floats and nested loops only, so they share no code path with
the vectorised torch implementations they check. Feature maps are nested
lists indexed ``[c][n]`` over flattened positions unless noted.
"""
from __future__ import annotations

import math


def flat(feat):
    """torch/numpy [C, h, w] -> list[C][h*w] of floats."""
    c, h, w = feat.shape
    return [[float(feat[a, i, j]) for i in range(h) for j in range(w)] for a in range(c)]


def softmax(values):
    m = max(values)
    e = [math.exp(v - m) for v in values]
    s = sum(e)
    return [x / s for x in e]


def position_mining(q, s, w_p, alpha, beta, lam):
    """q, s: [C][N]; w_p: [C][C]. Returns (q_out, s_out, L) with L[i][j] query i, support j."""
    c, n = len(q), len(q[0])
    L = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for a in range(c):
                for b in range(c):
                    acc += q[a][i] * w_p[a][b] * s[b][j]
            L[i][j] = acc
    a_s = [softmax(L[i]) for i in range(n)]  # row softmax
    cols = [softmax([L[i][j] for i in range(n)]) for j in range(n)]
    a_q = [[cols[j][i] for j in range(n)] for i in range(n)]  # column softmax
    q_out = [[alpha * sum(s[a][j] * a_s[i][j] for j in range(n)) + lam * q[a][i] for i in range(n)]
             for a in range(c)]
    s_out = [[beta * sum(q[a][i] * a_q[i][j] for i in range(n)) + lam * s[a][j] for j in range(n)]
             for a in range(c)]
    return q_out, s_out, L


def adaptive_avg_pool(m, h, w, grid):
    """m: [h][w] -> [grid*grid] using floor/ceil bin edges."""
    out = []
    for gi in range(grid):
        r0, r1 = (gi * h) // grid, -((-(gi + 1) * h) // grid)
        for gj in range(grid):
            c0, c1 = (gj * w) // grid, -((-(gj + 1) * w) // grid)
            vals = [m[r][cc] for r in range(r0, r1) for cc in range(c0, c1)]
            out.append(sum(vals) / len(vals))
    return out


def channel_mining(q, s, h, w, w_c, alpha, beta, lam):
    """q, s: [C][h*w]; w_c: [R][R] with R = grid**2."""
    c, n = len(q), len(q[0])
    grid = math.isqrt(len(w_c))
    dq = [adaptive_avg_pool([q[a][r * w:(r + 1) * w] for r in range(h)], h, w, grid) for a in range(c)]
    ds = [adaptive_avg_pool([s[a][r * w:(r + 1) * w] for r in range(h)], h, w, grid) for a in range(c)]
    R = len(w_c)
    L = [[sum(dq[a][r] * w_c[r][t] * ds[b][t] for r in range(R) for t in range(R)) for b in range(c)]
         for a in range(c)]
    a_s = [softmax(L[a]) for a in range(c)]
    cols = [softmax([L[a][b] for a in range(c)]) for b in range(c)]
    q_out = [[alpha * sum(a_s[a][b] * s[b][i] for b in range(c)) + lam * q[a][i] for i in range(n)]
             for a in range(c)]
    s_out = [[beta * sum(cols[b][a] * q[a][i] for a in range(c)) + lam * s[b][i] for i in range(n)]
             for b in range(c)]
    return q_out, s_out, L


def conv1x1(weight, x):
    """weight: [Cout][Cin]; x: [Cin][N]."""
    return [[sum(weight[o][i] * x[i][n] for i in range(len(x))) for n in range(len(x[0]))]
            for o in range(len(weight))]


def masked_mean(x, mask):
    """x: [C][N]; mask: [N] of 0/1."""
    area = sum(mask)
    return [sum(x[a][n] * mask[n] for n in range(len(mask))) / area for a in range(len(x))]


def row_mean_activation(L):
    means = [sum(row) / len(row) for row in L]
    lo, hi = min(means), max(means)
    if hi - lo <= 1e-12 * max(abs(hi), 1.0):
        return [0.5] * len(means)
    return [(m - lo) / (hi - lo) for m in means]


def cosine(u, v):
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    return dot / max(nu * nv, 1e-12)


def cosine_scores(x, prototypes, tau):
    """x: [C][N] -> [P][N] softmax over prototypes of tau * cosine."""
    n = len(x[0])
    out = [[0.0] * n for _ in prototypes]
    for i in range(n):
        pix = [x[a][i] for a in range(len(x))]
        probs = softmax([tau * cosine(pix, p) for p in prototypes])
        for k, v in enumerate(probs):
            out[k][i] = v
    return out


def confusion_mining(x, fg, bg, conf, p_f, p_b, mu1, mu2, iters, step1, step2, tau):
    """Step-by-step walk of the iterative confusion-region assignment.

    x: [C][N]; fg/bg/conf: lists of bools; p_f/p_b: starting prototypes.
    Returns (p_f, p_b, trace) with one (fg, bg, conf, thresholds) per step.
    """
    c, n = len(x), len(x[0])
    fg, bg, conf = list(fg), list(bg), list(conf)
    trace = [(list(fg), list(bg), list(conf), (mu1, mu2))]
    for t in range(iters):
        th1, th2 = mu1 - t * step1, mu2 - t * step2
        masked = [[x[a][i] if conf[i] else 0.0 for i in range(n)] for a in range(c)]
        sc = cosine_scores(masked, [p_f, p_b], tau)
        new_f = [conf[i] and sc[0][i] >= th1 for i in range(n)]
        new_b = [conf[i] and sc[1][i] >= th2 and not new_f[i] for i in range(n)]
        fg = [fg[i] or new_f[i] for i in range(n)]
        bg = [bg[i] or new_b[i] for i in range(n)]
        conf = [conf[i] and not new_f[i] and not new_b[i] for i in range(n)]
        if any(fg):
            p_f = masked_mean(x, [1.0 if v else 0.0 for v in fg])
        if any(bg):
            p_b = masked_mean(x, [1.0 if v else 0.0 for v in bg])
        trace.append((list(fg), list(bg), list(conf), (th1, th2)))
    return p_f, p_b, trace


def merge(refined, filtered, g1, g2):
    return [g1 * r + g2 * f for r, f in zip(refined, filtered)]


def kshot_fuse(affinity_means, branch_fg, branch_bg):
    """affinity_means: [K]; branch prototypes: [K][C]. Returns (phi, fg, bg)."""
    phi = softmax(affinity_means)
    c = len(branch_fg[0])
    fg = [sum(phi[k] * branch_fg[k][a] for k in range(len(phi))) for a in range(c)]
    bg = [sum(phi[k] * branch_bg[k][a] for k in range(len(phi))) for a in range(c)]
    return phi, fg, bg


def mean_of(matrix):
    vals = [v for row in matrix for v in row]
    return sum(vals) / len(vals)

"""Slow, independent reference implementations used as test oracles."""

import itertools
import math

import numpy as np


def naive_pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    num = sum((a - mx) * (b - my) for a, b in zip(x, y))
    dx = math.sqrt(sum((a - mx) ** 2 for a in x))
    dy = math.sqrt(sum((b - my) ** 2 for b in y))
    return num / (dx * dy)


def gauss_solve(A, b):
    """Gaussian elimination with partial pivoting on Python floats."""
    n = len(A)
    M = [list(map(float, A[i])) + [float(b[i])] for i in range(n)]
    for c in range(n):
        p = max(range(c, n), key=lambda r: abs(M[r][c]))
        M[c], M[p] = M[p], M[c]
        for r in range(c + 1, n):
            f = M[r][c] / M[c][c]
            for k in range(c, n + 1):
                M[r][k] -= f * M[c][k]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        x[r] = (M[r][n] - sum(M[r][k] * x[k] for k in range(r + 1, n))) / M[r][r]
    return np.array(x)


def normal_equation_ols(X, y):
    X = np.asarray(X, dtype=float)
    XtX = [[sum(X[i, a] * X[i, b] for i in range(X.shape[0])) for b in range(X.shape[1])]
           for a in range(X.shape[1])]
    Xty = [sum(X[i, a] * y[i] for i in range(X.shape[0])) for a in range(X.shape[1])]
    return gauss_solve(XtX, Xty)


def t_density(x, dof):
    c = math.lgamma((dof + 1) / 2) - math.lgamma(dof / 2) - 0.5 * math.log(dof * math.pi)
    return math.exp(c - (dof + 1) / 2 * math.log1p(x * x / dof))


def t_sf_quadrature(t, dof, n=200000, upper=2000.0):
    """Upper tail by composite Simpson on [t, upper] after the substitution u = atan(x)."""
    a, b = math.atan(t), math.atan(upper)
    h = (b - a) / n
    total = 0.0
    for i in range(n + 1):
        u = a + i * h
        x = math.tan(u)
        f = t_density(x, dof) / math.cos(u) ** 2
        w = 1 if i in (0, n) else (4 if i % 2 else 2)
        total += w * f
    return total * h / 3


def paired_t_formula(a, b):
    d = [x - y for x, y in zip(a, b)]
    n = len(d)
    m = sum(d) / n
    s = math.sqrt(sum((v - m) ** 2 for v in d) / (n - 1))
    return m / (s / math.sqrt(n))


def kmeans_bruteforce(X, k):
    """Minimum inertia over every assignment of points to k labels."""
    X = np.asarray(X, dtype=float)
    best = None
    for labels in itertools.product(range(k), repeat=len(X)):
        lab = np.array(labels)
        if len(set(labels)) != k:
            continue
        inertia = sum(((X[lab == j] - X[lab == j].mean(axis=0)) ** 2).sum() for j in range(k))
        if best is None or inertia < best[0] - 1e-12:
            best = (inertia, lab)
    return best


def naive_average_linkage(D, k):
    """Replays agglomeration by recomputing cluster distances from scratch each round."""
    D = np.asarray(D, dtype=float)
    clusters = [[i] for i in range(len(D))]
    while len(clusters) > k:
        best = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                d = np.mean([D[a, b] for a in clusters[i] for b in clusters[j]])
                if best is None or d < best[0]:
                    best = (d, i, j)
        _, i, j = best
        clusters[i] = clusters[i] + clusters[j]
        del clusters[j]
    labels = np.empty(len(D), dtype=int)
    for lab, group in enumerate(sorted(clusters, key=min)):
        labels[group] = lab
    return labels


def same_partition(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return all((a[i] == a[j]) == (b[i] == b[j]) for i in range(len(a)) for j in range(len(a)))


def naive_policy_forward(w1, b1, w2, b2, sigma_min, x, t, T):
    V = len(x)
    inp = list(x) + [t / T]
    h = [math.tanh(sum(w1[i][j] * inp[j] for j in range(V + 1)) + b1[i]) for i in range(len(b1))]
    raw = [sum(w2[o][i] * h[i] for i in range(len(h))) + b2[o] for o in range(2 * V)]
    mu = raw[:V]
    sigma = [math.log1p(math.exp(r)) + sigma_min for r in raw[V:]]
    return np.array(mu), np.array(sigma)


def naive_logpdf_sum(a, mu, sigma):
    return sum(-0.5 * math.log(2 * math.pi) - math.log(s) - 0.5 * ((x - m) / s) ** 2
               for x, m, s in zip(a, mu, sigma))


def central_diff(f, theta, h=1e-5):
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for i in range(theta.size):
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        g[i] = (f(tp) - f(tm)) / (2 * h)
    return g


def rel_err(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))


def spearman(x, y):
    rx = np.argsort(np.argsort(x)).astype(float)
    ry = np.argsort(np.argsort(y)).astype(float)
    return naive_pearson(list(rx), list(ry))


def power_iteration_pca(X, k, iters=5000):
    """Leading covariance eigenpairs by power iteration with deflation."""
    X = np.asarray(X, dtype=float)
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc / (len(X) - 1)
    total = np.trace(C)
    vals, vecs = [], []
    gen = np.random.default_rng(0)
    for _ in range(k):
        v = gen.normal(size=C.shape[0])
        for _ in range(iters):
            w = C @ v
            nw = np.linalg.norm(w)
            if nw == 0:
                break
            v = w / nw
        lam = float(v @ C @ v)
        vals.append(lam)
        vecs.append(v)
        C = C - lam * np.outer(v, v)
    return np.array(vals) / total, np.array(vecs)

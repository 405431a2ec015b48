"""Slow, obviously-correct reference implementations used by the tests."""
import numpy as np


def product_limit(times, deltas):
    """List of (time, S(time)) at each distinct event time, by direct counting."""
    steps = []
    s = 1.0
    for u in sorted(set(times)):
        at_risk = sum(1 for x in times if x >= u)
        died = sum(1 for x, d in zip(times, deltas) if x == u and d)
        if died:
            s *= 1.0 - died / at_risk
            steps.append((u, s))
    return steps


def restricted_mean(times, deltas, tau):
    area, level, last = 0.0, 1.0, 0.0
    for u, s in product_limit(times, deltas):
        if u >= tau:
            break
        area += level * (u - last)
        level, last = s, u
    return area + level * (tau - last)


def jackknife(times, deltas, tau):
    n = len(times)
    theta = restricted_mean(times, deltas, tau)
    out = []
    for i in range(n):
        rest_t = [x for j, x in enumerate(times) if j != i]
        rest_d = [d for j, d in enumerate(deltas) if j != i]
        out.append(n * theta - (n - 1) * restricted_mean(rest_t, rest_d, tau))
    return np.array(out)


def sandwich(X, y, w, clusters):
    """Independence-structure weighted least squares with a cluster-robust covariance."""
    X, y, w = np.asarray(X, float), np.asarray(y, float), np.asarray(w, float)
    A = (X * w[:, None]).T @ X
    beta = np.linalg.solve(A, (X * w[:, None]).T @ y)
    r = y - X @ beta
    B = np.zeros_like(A)
    for g in sorted(set(clusters)):
        m = np.array([c == g for c in clusters])
        u = (X[m] * (w[m] * r[m])[:, None]).sum(axis=0)
        B += np.outer(u, u)
    Ainv = np.linalg.inv(A)
    return beta, Ainv @ B @ Ainv

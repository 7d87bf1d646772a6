"""Independent reference implementations the test suite checks against.

Everything here deliberately avoids the library's own code paths: dense
linear solves instead of cached factorizations, quadrature instead of closed
forms, and brute-force enumeration instead of rank algebra.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.integrate import quad
from scipy.special import log_ndtr


def dense_posterior(kernel, noise_variance, X, z, Q):
    """GP posterior by direct dense solve of (K + noise I)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    z = np.asarray(z, dtype=float)
    K = kernel(X) + noise_variance * np.eye(X.shape[0])
    Kq = kernel(X, Q)
    A = np.linalg.solve(K, Kq)
    mean = A.T @ z
    var = kernel.variance - np.einsum("ij,ij->j", Kq, A)
    return mean, var


def dense_joint_posterior(kernel, noise_variance, X, z, Q):
    """Joint posterior mean vector and covariance matrix by dense solve."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    z = np.asarray(z, dtype=float)
    K = kernel(X) + noise_variance * np.eye(X.shape[0])
    Kq = kernel(X, Q)
    A = np.linalg.solve(K, Kq)
    return A.T @ z, kernel(Q) - Kq.T @ A


def truncated_gaussian_info(gamma):
    """Entropy drop (nats) of a standard normal truncated above at ``gamma``,
    computed by numerical integration of both entropies.

    Returns H[N(0,1)] - H[N(0,1) truncated to (-inf, gamma]].  The value is
    scale-invariant, so (mu, sigma, zstar) triples reduce to gamma.
    """
    log_cdf = log_ndtr(gamma)

    def neg_p_log_p(v):
        # v = gamma - u >= 0 walks down the upper tail of the truncation
        u = gamma - v
        log_w = -0.5 * u * u - 0.5 * math.log(2.0 * math.pi) - log_cdf
        return -math.exp(log_w) * log_w

    h_trunc, _ = quad(neg_p_log_p, 0.0, np.inf, limit=200)
    h_gauss = 0.5 * math.log(2.0 * math.pi * math.e)
    return h_gauss - h_trunc


def mwu_exact_enumeration(a, b):
    """Exact two-sided Mann-Whitney p-value by enumerating label assignments.

    Uses midranks of the pooled sample, so tied data are handled by the
    conditional permutation distribution.  Returns (U, p) with U = min side.
    """
    a = list(map(float, a))
    b = list(map(float, b))
    n, m = len(a), len(b)
    pooled = a + b
    ranks = _midranks(pooled)
    u_a = sum(ranks[:n]) - n * (n + 1) / 2.0
    u_b = n * m - u_a
    u_obs = min(u_a, u_b)

    total = 0
    at_most = 0
    for idx in itertools.combinations(range(n + m), n):
        ua = sum(ranks[i] for i in idx) - n * (n + 1) / 2.0
        total += 1
        if min(ua, n * m - ua) <= u_obs + 1e-12:
            at_most += 1
    # label exchange maps U_a -> U_b, so the min-side count is already two-sided
    p = at_most / total
    return u_obs, min(1.0, p)


def _midranks(values):
    order = sorted(range(len(values)), key=values.__getitem__)
    ranks = [0.0] * len(values)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = rank
        i = j + 1
    return ranks


def grid_maximum(fn, lower, upper, per_axis):
    """Brute-force maximum of ``fn`` over a dense grid on a box."""
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    vals = fn(pts)
    k = int(np.argmax(vals))
    return pts[k], float(vals[k])

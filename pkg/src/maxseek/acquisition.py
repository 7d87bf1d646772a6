"""Heuristic rewards evaluated on the belief: max-value information and GP-UCB.

Both rewards are pure functions of an immutable belief, so they are safe to
evaluate concurrently.  A :class:`MaxValueSet` is sampled once per planning
iteration and shared read-only by every rollout of that iteration's search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

from .gp import argmax_of_sample

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_ASYMPTOTIC_BELOW = -8.0


@dataclass(frozen=True, eq=False)
class MaxValueSet:
    """Sampled field maxima z*_1..z*_M with their argmax locations."""

    values: np.ndarray      # (M,)
    locations: np.ndarray   # (M, d)
    iteration: int = 0

    def __post_init__(self):
        if self.values.shape[0] < 1:
            raise ValueError("need at least one max-value sample")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("max-value samples must be finite")


def refresh_max_values(belief, count, feature_count, domain, restarts, rng, iteration=0):
    """Sample ``count`` posterior maxima via spectral sampling + global ascent.

    The returned set is meant to be cached for a whole planning iteration so
    that all rollouts of one tree search share it.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    values = np.empty(count)
    locations = []
    for i in range(count):
        sample = belief.spectral_sample(feature_count, rng, dim=domain.dim)
        x, v = argmax_of_sample(sample, domain, restarts, rng)
        values[i] = v
        locations.append(x)
    values.setflags(write=False)
    return MaxValueSet(values, np.asarray(locations), iteration)


def _mvi_term(g):
    """Per-sample summand of the MVI reward as a function of gamma.

    Equals the entropy difference between the predictive Gaussian and the
    Gaussian truncated above at the sampled maximum.  Far below the mean the
    direct expression cancels catastrophically, so an asymptotic expansion in
    1/gamma^2 takes over.
    """
    g = np.asarray(g, dtype=float)
    out = np.empty_like(g)
    low = g < _ASYMPTOTIC_BELOW
    high = ~low
    if high.any():
        gh = g[high]
        logcdf = log_ndtr(gh)
        logpdf = -0.5 * gh * gh - _HALF_LOG_2PI
        ratio = np.exp(logpdf - logcdf)
        out[high] = 0.5 * gh * ratio - logcdf
    if low.any():
        gl = g[low]
        q = 1.0 / (gl * gl)
        s = 1.0 - q + 3.0 * q * q - 15.0 * q**3
        out[low] = (
            np.log(-gl)
            + _HALF_LOG_2PI
            - (1.0 - 3.0 * q + 15.0 * q * q) / (2.0 * s)
            - np.log(s)
        )
    return out


def mvi_reward(belief, x, max_values):
    """Maximum-value information reward at one location (or a batch).

    Averages, over the sampled maxima, the entropy drop from conditioning the
    predictive distribution on ``Z* = z*_i``.  Always non-negative and finite,
    including for maxima far below the local mean.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    mean, var = belief.posterior(X)
    sigma = np.sqrt(var)
    g = (max_values.values[:, None] - mean[None, :]) / sigma[None, :]
    r = _mvi_term(g).mean(axis=0)
    return r if np.ndim(x) > 1 else float(r[0])


def mvi_reward_fn(max_values):
    """Batched MVI closure for planners, with a per-(belief, batch) memo.

    The memo keys on object identity of the belief and the location array,
    which the tree search keeps fixed per node, so repeated rollout visits
    skip the posterior solve.
    """
    vals = max_values.values[:, None]
    memo = {}

    def fn(belief, X):
        key = (id(belief), id(X))
        hit = memo.get(key)
        if hit is not None and hit[0] is belief and hit[1] is X:
            mean, sigma = hit[2], hit[3]
        else:
            mean, var = belief.posterior(X)
            sigma = np.sqrt(var)
            memo[key] = (belief, X, mean, sigma)
        return _mvi_term((vals - mean[None, :]) / sigma[None, :]).mean(axis=0)

    fn.max_values = max_values
    return fn


@dataclass(frozen=True)
class UCBSchedule:
    """Time-varying exploration weight for GP-UCB.

    ``beta_t = 2 log(grid_size * t^2 * pi^2 / (6 delta))``, clamped below at
    1; the no-regret schedule for a fixed discretization of the search region.
    A ``fixed`` value overrides the rule entirely (degenerate schedules are
    useful for baselines and tests).
    """

    grid_size: int = 10000
    delta: float = 0.01
    fixed: float | None = None

    def beta(self, t):
        if self.fixed is not None:
            return self.fixed
        t = max(int(t), 1)
        raw = 2.0 * math.log(self.grid_size * t * t * math.pi**2 / (6.0 * self.delta))
        return max(raw, 1.0)


def ucb_reward(belief, x, schedule, t):
    """Upper-confidence reward ``mu + sqrt(beta_t) * sigma`` at one location."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    mean, var = belief.posterior(X)
    r = mean + math.sqrt(schedule.beta(t)) * np.sqrt(var)
    return r if np.ndim(x) > 1 else float(r[0])


def ucb_reward_fn(schedule, t):
    """Batched UCB closure for planners, same memo scheme as the MVI one."""
    root_beta = math.sqrt(schedule.beta(t))
    memo = {}

    def fn(belief, X):
        key = (id(belief), id(X))
        hit = memo.get(key)
        if hit is not None and hit[0] is belief and hit[1] is X:
            mean, sigma = hit[2], hit[3]
        else:
            mean, var = belief.posterior(X)
            sigma = np.sqrt(var)
            memo[key] = (belief, X, mean, sigma)
        return mean + root_beta * sigma

    return fn


def action_reward(belief, action, reward_fn, samples=None):
    """Summed per-location reward of an action under one fixed belief.

    No intra-action conditioning happens: every sample location is scored
    against the same belief.  ``samples`` overrides the action's own sample
    points when the belief lives in an extended space (e.g. with time).
    """
    X = action.samples if samples is None else samples
    if X.shape[0] < 1:
        raise ValueError("action carries no sample locations")
    return float(np.sum(reward_fn(belief, X)))

"""Mission scoring and the nonparametric planner-comparison test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr


@dataclass
class StepEntry:
    """One executed action with its observations and bookkeeping."""

    pose: tuple                  # (x, y, heading) after the action
    action_id: int               # primitive index; -1 for scripted motion
    locations: np.ndarray        # (k, 2) observation points
    times: np.ndarray            # (k,) observation timestamps
    values: np.ndarray           # (k,) observed values
    heuristic_reward: float
    cumulative_length: float
    wall_time: float
    max_values: tuple = None     # (values, locations) sampled this iteration


@dataclass
class TrialRecord:
    """Everything logged during one mission, enough to replay and score it."""

    planner: str
    seed: int
    config_hash: str
    status: str = "completed"    # completed | trapped
    entries: list = field(default_factory=list)
    # environment metadata
    xstar: np.ndarray = None
    fstar: float = 0.0
    grid_xs: np.ndarray = None
    grid_ys: np.ndarray = None
    truth: np.ndarray = None     # truth on the grid at the scoring time
    final_time: float = 0.0
    # final belief snapshot on the grid
    posterior_mean: np.ndarray = None
    posterior_var: np.ndarray = None
    notes: dict = field(default_factory=dict)

    def sample_locations(self):
        if not self.entries:
            return np.empty((0, 2))
        return np.vstack([e.locations for e in self.entries])

    def grid_points(self):
        gx, gy = np.meshgrid(self.grid_xs, self.grid_ys)
        return np.column_stack([gx.ravel(), gy.ravel()])


@dataclass(frozen=True)
class MetricReport:
    """Per-trial scores in the reporting format of the study."""

    mss_reward: float
    rmse: float
    xstar_error: float

    def __post_init__(self):
        for name in ("mss_reward", "rmse", "xstar_error"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


def mss_reward(record, xstar, epsilon):
    """Number of logged sample locations strictly inside the epsilon-ball."""
    pts = record.sample_locations()
    if pts.shape[0] == 0:
        return 0
    d = np.linalg.norm(pts - np.asarray(xstar, dtype=float), axis=1)
    return int(np.count_nonzero(d < epsilon))


def rmse(belief, field_, grid=None, time=None):
    """Root mean-squared error of the posterior mean against the truth.

    Evaluated on the field's own generation grid unless ``grid`` overrides;
    dynamic fields are scored at ``time``.
    """
    pts = field_.grid_points() if grid is None else np.atleast_2d(grid)
    truth = field_.value_at(pts, time)
    if time is not None:
        pts = np.hstack([pts, np.full((pts.shape[0], 1), float(time))])
    mean, _ = belief.posterior(pts)
    return float(np.sqrt(np.mean((mean - truth) ** 2)))


def xstar_error(belief, xstar, field_, time=None):
    """Distance from the posterior-mean argmax (on the grid) to the truth.

    Exact ties in the posterior mean resolve to the tied point closest to the
    true maximum; the tie rule is deliberate and conservative.
    """
    pts = field_.grid_points()
    q = pts
    if time is not None:
        q = np.hstack([pts, np.full((pts.shape[0], 1), float(time))])
    mean, _ = belief.posterior(q)
    best = mean.max()
    tied = pts[mean == best]
    d = np.linalg.norm(tied - np.asarray(xstar, dtype=float), axis=1)
    return float(d.min())


def _midranks(values):
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_min_tail(pooled, n, u_obs):
    """P(min(U_a, U_b) <= u_obs) by dynamic programming over doubled midranks.

    Doubling turns midranks into integers, so subset rank sums enumerate
    exactly; ties are handled by the conditional permutation distribution.
    With asymmetric tie structure the distribution of U_a need not be
    symmetric about nm/2, so both tails are read off the DP explicitly.
    """
    doubled = np.rint(2.0 * _midranks(pooled)).astype(int)
    total = int(doubled.sum())
    counts = np.zeros((n + 1, total + 1))
    counts[0, 0] = 1.0
    for r in doubled:
        for k in range(n, 0, -1):   # descending so each item is used once
            counts[k, r:] += counts[k - 1, : total + 1 - r]
    m = len(pooled) - n
    dist = counts[n]
    u_a = np.arange(total + 1) / 2.0 - n * (n + 1) / 2.0
    in_tail = (u_a <= u_obs + 1e-9) | (n * m - u_a <= u_obs + 1e-9)
    return float(dist[in_tail].sum()) / math.comb(len(pooled), n)


def mann_whitney_u(sample_a, sample_b):
    """Two-sided Mann-Whitney U test.

    Midranks handle ties and the normal approximation uses the tie-corrected
    variance with a continuity correction.  When both samples have fewer than
    eight values the p-value comes from the exact conditional distribution
    instead.  Returns ``(U, p)`` with ``U = min(U_a, U_b)``.
    """
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    n, m = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    u_a = ranks[:n].sum() - n * (n + 1) / 2.0
    u_b = n * m - u_a
    u = min(u_a, u_b)

    if n < 8 and m < 8:
        return float(u), float(min(1.0, _exact_min_tail(pooled, n, u)))

    _, tie_counts = np.unique(pooled, return_counts=True)
    big_n = n + m
    tie_term = float(np.sum(tie_counts**3 - tie_counts))
    var = n * m / 12.0 * ((big_n + 1) - tie_term / (big_n * (big_n - 1)))
    if var <= 0.0:
        return float(u), 1.0
    z = (u - n * m / 2.0 + 0.5) / math.sqrt(var)
    p = min(1.0, 2.0 * float(ndtr(z)))
    return float(u), p

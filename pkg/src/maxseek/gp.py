"""Gaussian-process belief over the unknown scalar field.

The belief is a zero-mean GP conditioned on the observation history.  Beliefs
are value-semantic: ``condition`` returns a new belief and never mutates the
receiver, so planner tree nodes can hold divergent copies cheaply.  The
factorization of ``(K + noise I)`` is a lower-triangular Cholesky factor kept
as a chain of row blocks that share structure with the parent belief; a full
refactorization runs every ``REFACTOR_EVERY`` appended rows to bound numerical
drift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.linalg.lapack import dtrtrs
from scipy.optimize import minimize

JITTER_SCALE = 1e-8     # retry jitter, relative to the prior variance
REFACTOR_EVERY = 64     # appended rows between full refactorizations
_VAR_FLOOR = 1e-12      # relative floor keeping posterior variance positive


class FactorizationError(RuntimeError):
    """Raised when (K + noise I) is numerically not positive definite."""


def _chol_or_jitter(M, jitter):
    """Lower Cholesky with a single jittered retry before giving up."""
    try:
        return cholesky(M, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    try:
        return cholesky(M + jitter * np.eye(M.shape[0]), lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise FactorizationError(
            f"matrix of size {M.shape[0]} is not positive definite "
            f"even with diagonal jitter {jitter:.3e}"
        ) from None


class _CholBlock:
    """One row block of a chained lower-triangular factor.

    The full factor L is the vertical stack of blocks; a block owns rows
    ``[start, size)`` split into the off-diagonal slab ``off`` and the
    lower-triangular ``tri`` (Fortran order, so LAPACK's trtrs consumes it
    without copying).  Blocks are immutable and shared between beliefs, so
    conditioning never copies the prefix of the factor.
    """

    __slots__ = ("parent", "off", "tri", "start", "size", "depth")

    def __init__(self, parent, rows):
        self.parent = parent
        self.start = 0 if parent is None else parent.size
        self.size = self.start + rows.shape[0]
        self.depth = 1 if parent is None else parent.depth + 1
        self.off = np.ascontiguousarray(rows[:, : self.start])
        self.tri = np.asfortranarray(rows[:, self.start :])

    def chain(self):
        blocks = []
        blk = self
        while blk is not None:
            blocks.append(blk)
            blk = blk.parent
        blocks.reverse()
        return blocks

    def solve_lower(self, R):
        """Forward-substitute ``L V = R`` for ``R`` of shape (size, m)."""
        V = np.empty_like(R)
        for blk in self.chain():
            lo, hi = blk.start, blk.size
            rhs = R[lo:hi]
            if lo:
                rhs = rhs - blk.off @ V[:lo]
            sol, info = dtrtrs(blk.tri, rhs, lower=1)
            if info != 0:
                raise FactorizationError(f"triangular solve failed (info={info})")
            V[lo:hi] = sol
        return V

    def dense(self):
        """Assemble the factor into a single dense lower-triangular block."""
        L = np.zeros((self.size, self.size))
        for blk in self.chain():
            L[blk.start : blk.size, : blk.start] = blk.off
            L[blk.start : blk.size, blk.start : blk.size] = blk.tri
        return L


class GPBelief:
    """Posterior over the field conditioned on an observation history.

    Parameters
    ----------
    kernel : SquaredExponential or SpatiotemporalKernel
        Stationary prior covariance.
    noise_variance : float
        Observation noise variance; must be positive so conditioning stays
        well posed even on duplicate locations.
    locations, observations : array-like, optional
        Initial history.  Omit both for the prior belief.
    """

    def __init__(self, kernel, noise_variance, locations=None, observations=None):
        if noise_variance <= 0.0:
            raise ValueError("noise_variance must be positive")
        self.kernel = kernel
        self.noise_variance = float(noise_variance)
        self._cross = None
        if locations is None and observations is None:
            self._X = None
            self._z = np.empty(0)
            self._fact = None
            self._c = np.empty(0)
            self._appends = 0
            return
        X = np.atleast_2d(np.asarray(locations, dtype=float))
        z = np.atleast_1d(np.asarray(observations, dtype=float))
        if X.shape[0] != z.shape[0]:
            raise ValueError("locations and observations disagree in length")
        K = kernel(X) + self.noise_variance * np.eye(X.shape[0])
        L = _chol_or_jitter(K, JITTER_SCALE * kernel.variance)
        self._X = X
        self._z = z
        self._fact = _CholBlock(None, L)
        self._c = solve_triangular(L, z, lower=True, check_finite=False)
        self._appends = 0

    @classmethod
    def _from_parts(cls, kernel, noise_variance, X, z, fact, c, appends):
        out = cls.__new__(cls)
        out.kernel = kernel
        out.noise_variance = noise_variance
        out._X = X
        out._z = z
        out._fact = fact
        out._c = c
        out._appends = appends
        out._cross = None
        return out

    def _cross_solve(self, Q):
        """L^{-1} k(X, Q), memoizing the last query batch by identity.

        During a rollout step the planner evaluates the reward and then
        simulates observations at the same points, so the repeated solve is
        served from the single-slot memo.  Idempotent, so benign under
        concurrent reads.
        """
        hit = self._cross
        if hit is not None and hit[0] is Q:
            return hit[1]
        V = self._fact.solve_lower(self.kernel(self._X, Q))
        self._cross = (Q, V)
        return V

    @property
    def history_size(self):
        return 0 if self._X is None else self._X.shape[0]

    @property
    def locations(self):
        return self._X

    @property
    def observations(self):
        return self._z

    def posterior(self, queries):
        """Posterior mean and variance at each query location.

        Returns ``(means, variances)`` as 1-d arrays aligned with the queries.
        The variance never exceeds the prior variance and stays positive.
        """
        Q = np.atleast_2d(np.asarray(queries, dtype=float))
        prior = self.kernel.variance
        if self._fact is None:
            return np.zeros(Q.shape[0]), np.full(Q.shape[0], prior)
        V = self._cross_solve(Q)
        mean = V.T @ self._c
        var = prior - np.einsum("ij,ij->j", V, V)
        np.maximum(var, _VAR_FLOOR * prior, out=var)
        return mean, var

    def condition(self, locations, observations):
        """Return a new belief additionally conditioned on the given data.

        Appends rows to the shared factor chain; the receiver is unchanged.
        Long-lived beliefs should be ``compacted()`` between conditionings so
        the chain stays short and drift-bounded.
        """
        Xn = np.atleast_2d(np.asarray(locations, dtype=float))
        zn = np.atleast_1d(np.asarray(observations, dtype=float))
        if Xn.shape[0] != zn.shape[0]:
            raise ValueError("locations and observations disagree in length")
        if Xn.shape[0] == 0:
            return self
        if self._fact is None:
            return GPBelief(self.kernel, self.noise_variance, Xn, zn)

        k = Xn.shape[0]
        B = self._cross_solve(Xn)                                   # (D, k)
        S = self.kernel(Xn) + self.noise_variance * np.eye(k) - B.T @ B
        T = _chol_or_jitter(S, JITTER_SCALE * self.kernel.variance)
        rows = np.hstack([B.T, T])
        cn = solve_triangular(T, zn - B.T @ self._c, lower=True, check_finite=False)
        return GPBelief._from_parts(
            self.kernel,
            self.noise_variance,
            np.vstack([self._X, Xn]),
            np.concatenate([self._z, zn]),
            _CholBlock(self._fact, rows),
            np.concatenate([self._c, cn]),
            self._appends + k,
        )

    def compacted(self):
        """Restack the factor chain into one block; refactorize when due.

        Exact (same numbers) except every ``REFACTOR_EVERY`` appended rows,
        when the factor is rebuilt from scratch to bound numerical drift.
        Meant for the long-lived mission belief once per planning iteration;
        transient planner beliefs never need it.
        """
        if self._fact is None:
            return self
        if self._appends >= REFACTOR_EVERY:
            return GPBelief(self.kernel, self.noise_variance, self._X, self._z)
        if self._fact.depth == 1:
            return self
        return GPBelief._from_parts(
            self.kernel, self.noise_variance, self._X, self._z,
            _CholBlock(None, self._fact.dense()), self._c, self._appends,
        )

    def _joint_posterior(self, Q):
        prior = self.kernel(Q)
        if self._fact is None:
            return np.zeros(Q.shape[0]), prior
        V = self._cross_solve(Q)
        return V.T @ self._c, prior - V.T @ V

    def sample_joint(self, locations, rng):
        """One draw of simulated observations at the given locations.

        Samples the joint posterior Gaussian over the locations and adds
        independent observation noise per element, matching what a real
        sensor pass would return.
        """
        Q = np.atleast_2d(np.asarray(locations, dtype=float))
        if Q.shape[0] == 0:
            raise ValueError("locations must be non-empty")
        mean, cov = self._joint_posterior(Q)
        L = _chol_or_jitter(cov, JITTER_SCALE * self.kernel.variance)
        latent = mean + L @ rng.standard_normal(Q.shape[0])
        return latent + np.sqrt(self.noise_variance) * rng.standard_normal(Q.shape[0])

    def simulate_and_condition(self, locations, rng):
        """Draw simulated observations and condition on them in one pass.

        Equivalent to ``sample_joint`` followed by ``condition`` (bit for
        bit, given the same generator state) but shares the cross-covariance
        solve between the two, which dominates rollout cost in the planner.
        Returns ``(observations, new_belief)``.
        """
        Q = np.atleast_2d(np.asarray(locations, dtype=float))
        k = Q.shape[0]
        if k == 0:
            raise ValueError("locations must be non-empty")
        jitter = JITTER_SCALE * self.kernel.variance
        prior = self.kernel(Q)
        if self._fact is None:
            L = _chol_or_jitter(prior, jitter)
            z = L @ rng.standard_normal(k)
            z += np.sqrt(self.noise_variance) * rng.standard_normal(k)
            return z, GPBelief(self.kernel, self.noise_variance, Q, z)

        B = self._cross_solve(Q)                                     # (D, k)
        cov = prior - B.T @ B
        mean = B.T @ self._c
        L = _chol_or_jitter(cov, jitter)
        z = mean + L @ rng.standard_normal(k)
        z += np.sqrt(self.noise_variance) * rng.standard_normal(k)

        S = cov + self.noise_variance * np.eye(k)
        T = _chol_or_jitter(S, jitter)
        rows = np.hstack([B.T, T])
        cn = solve_triangular(T, z - mean, lower=True, check_finite=False)
        child = GPBelief._from_parts(
            self.kernel,
            self.noise_variance,
            np.vstack([self._X, Q]),
            np.concatenate([self._z, z]),
            _CholBlock(self._fact, rows),
            np.concatenate([self._c, cn]),
            self._appends + k,
        )
        return z, child

    def spectral_sample(self, feature_count, rng, dim=None):
        """Draw an analytic approximate posterior function via random features.

        The returned :class:`SpectralSample` is deterministic once built and
        differentiable everywhere.  ``dim`` is inferred from the history when
        present; prior beliefs must state it explicitly unless the kernel has
        one lengthscale per dimension.
        """
        F = int(feature_count)
        if F < 1:
            raise ValueError("feature_count must be >= 1")
        D = self.history_size
        if F < D:
            raise ValueError(
                f"feature count {F} is smaller than the history size {D}; "
                "increase it to at least the number of observations"
            )
        if dim is None:
            if self._X is not None:
                dim = self._X.shape[1]
            else:
                ls = getattr(self.kernel, "lengthscale", None)
                if ls is not None and ls.size > 1:
                    dim = ls.size
                else:
                    raise ValueError("dim is required for a prior belief")

        omega = self.kernel.spectral_frequencies(F, dim, rng)
        phase = rng.uniform(0.0, 2.0 * np.pi, F)
        amplitude = np.sqrt(2.0 * self.kernel.variance / F)
        theta = rng.standard_normal(F)
        if D:
            # Matheron-style update: theta0 ~ prior, corrected through the
            # D x D system so the weights follow the exact feature posterior.
            Phi = amplitude * np.cos(self._X @ omega.T + phase)      # (D, F)
            eps = np.sqrt(self.noise_variance) * rng.standard_normal(D)
            S = Phi @ Phi.T + self.noise_variance * np.eye(D)
            Ls = _chol_or_jitter(S, JITTER_SCALE * self.kernel.variance)
            resid = self._z - Phi @ theta - eps
            w = solve_triangular(Ls, resid, lower=True, check_finite=False)
            w = solve_triangular(Ls.T, w, lower=False, check_finite=False)
            theta = theta + Phi.T @ w
        omega.setflags(write=False)
        phase.setflags(write=False)
        theta.setflags(write=False)
        return SpectralSample(omega, phase, theta, float(amplitude))


@dataclass(frozen=True, eq=False)
class SpectralSample:
    """Closed-form function drawn from the GP posterior.

    ``f(x) = weights . amplitude * cos(frequencies @ x + phases)``
    """

    frequencies: np.ndarray   # (F, d)
    phases: np.ndarray        # (F,)
    weights: np.ndarray       # (F,)
    amplitude: float

    @property
    def feature_count(self):
        return self.weights.shape[0]

    def __call__(self, x):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        vals = (self.amplitude * np.cos(X @ self.frequencies.T + self.phases)) @ self.weights
        return vals if np.ndim(x) > 1 else float(vals[0])

    def gradient(self, x):
        """Analytic gradient at a single point."""
        x = np.asarray(x, dtype=float)
        s = np.sin(self.frequencies @ x + self.phases)
        return -self.amplitude * (self.frequencies.T @ (self.weights * s))


@dataclass(frozen=True)
class SearchDomain:
    """Axis-aligned box, minus blocked rectangles, for sample optimization.

    ``fixed_tail`` holds trailing coordinates (e.g. the current time index)
    appended to every point before evaluating a function defined on the
    belief's full input space.
    """

    lower: tuple
    upper: tuple
    blocked: tuple = ()       # rectangles as ((lo...), (hi...)) pairs
    fixed_tail: tuple = ()

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("invalid box bounds")

    @property
    def dim(self):
        return len(self.lower) + len(self.fixed_tail)

    def _in_blocked(self, P):
        mask = np.zeros(P.shape[0], dtype=bool)
        for lo, hi in self.blocked:
            lo = np.asarray(lo)
            hi = np.asarray(hi)
            mask |= np.all((P > lo) & (P < hi), axis=1)
        return mask

    def contains(self, points):
        P = np.atleast_2d(np.asarray(points, dtype=float))
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        inside = np.all((P >= lo) & (P <= hi), axis=1)
        return inside & ~self._in_blocked(P)

    def sample(self, rng, count):
        """Uniform feasible points; rejects draws landing in blocked regions."""
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        out = []
        for _ in range(200):
            P = rng.uniform(lo, hi, size=(max(count, 8), len(self.lower)))
            P = P[self.contains(P)]
            out.extend(P[: count - len(out)])
            if len(out) >= count:
                return np.asarray(out)
        raise ValueError("feasible region appears to be empty")

    def project(self, point):
        """Clip to the box and push out of blocked rectangles."""
        p = np.clip(np.asarray(point, dtype=float), self.lower, self.upper)
        for lo, hi in self.blocked:
            lo = np.asarray(lo)
            hi = np.asarray(hi)
            if np.all(p > lo) & np.all(p < hi):
                # exit through the nearest face, nudged just outside
                gaps = np.concatenate([p - lo, hi - p])
                j = int(np.argmin(gaps))
                d = len(p)
                eps = 1e-9 * max(1.0, float(np.max(hi - lo)))
                if j < d:
                    p[j] = lo[j] - eps
                else:
                    p[j - d] = hi[j - d] + eps
                p = np.clip(p, self.lower, self.upper)
        return p

    def embed(self, points):
        """Append the fixed trailing coordinates to each point."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.fixed_tail:
            return P
        tail = np.tile(self.fixed_tail, (P.shape[0], 1))
        return np.hstack([P, tail])


def argmax_of_sample(sample, domain, restarts=10, rng=None):
    """Locate the maximum of a spectral sample over a feasible region.

    Runs ``restarts`` L-BFGS-B ascents from uniform feasible starts, projects
    each endpoint back into the feasible set, and returns the best
    ``(location, value)`` found.  ``location`` excludes any fixed trailing
    coordinates of the domain.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    lo = np.asarray(domain.lower, dtype=float)
    hi = np.asarray(domain.upper, dtype=float)
    d = lo.size

    if np.all(lo == hi):
        x = lo.copy()
        return x, float(sample(domain.embed(x)[0]))

    def objective(x):
        full = domain.embed(x)[0]
        val = sample(full)
        grad = sample.gradient(full)[:d]
        return -val, -grad

    starts = domain.sample(rng, restarts)
    best_x, best_v = None, -np.inf
    for s in starts:
        res = minimize(
            objective,
            s,
            jac=True,
            method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
            options={"maxiter": 60},
        )
        cand = domain.project(res.x)
        if not domain.contains(cand)[0]:
            continue
        val = float(sample(domain.embed(cand)[0]))
        if val > best_v:
            best_x, best_v = cand, val
    if best_x is None:
        raise ValueError("no feasible optimum found; the domain may be empty")
    return best_x, best_v

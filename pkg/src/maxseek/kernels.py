"""Stationary covariance functions for the field belief."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist


class SquaredExponential:
    """Squared-exponential covariance ``k(x, x') = variance * exp(-r^2 / 2)``,
    where ``r`` is the lengthscale-weighted distance between the inputs.

    ``lengthscale`` may be a scalar (isotropic) or one value per input
    dimension.
    """

    def __init__(self, lengthscale, variance=1.0):
        ls = np.atleast_1d(np.asarray(lengthscale, dtype=float))
        if np.any(ls <= 0.0):
            raise ValueError("lengthscale must be positive")
        if variance <= 0.0:
            raise ValueError("variance must be positive")
        ls.setflags(write=False)
        self.lengthscale = ls
        self.variance = float(variance)

    def _scaled(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X / self.lengthscale

    def __call__(self, A, B=None):
        A = self._scaled(A)
        B = A if B is None else self._scaled(B)
        return self.variance * np.exp(-0.5 * cdist(A, B, "sqeuclidean"))

    def spectral_frequencies(self, count, dim, rng):
        """Draw ``count`` frequency vectors from the kernel's spectral density."""
        if self.lengthscale.size not in (1, dim):
            raise ValueError(
                f"kernel has {self.lengthscale.size} lengthscales but inputs have dim {dim}"
            )
        return rng.standard_normal((count, dim)) / self.lengthscale

    def __repr__(self):
        return f"SquaredExponential(lengthscale={self.lengthscale.tolist()}, variance={self.variance})"


class SpatiotemporalKernel:
    """Separable product of squared-exponentials over space and time.

    Inputs are ``(x_1, ..., x_d, t)`` with the time coordinate last.  The
    product of the spatial and temporal factors is itself a squared
    exponential with per-axis lengthscales, so the kernel stays stationary
    and spectral sampling applies unchanged.  With equal timestamps the
    temporal factor is 1 and the kernel reduces exactly to the spatial one.
    """

    def __init__(self, space_lengthscale, time_lengthscale, variance=1.0):
        if space_lengthscale <= 0.0 or time_lengthscale <= 0.0:
            raise ValueError("lengthscales must be positive")
        if variance <= 0.0:
            raise ValueError("variance must be positive")
        self.space_lengthscale = float(space_lengthscale)
        self.time_lengthscale = float(time_lengthscale)
        self.variance = float(variance)

    def _scaled(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] < 2:
            raise ValueError("spatiotemporal inputs need at least one spatial and one time axis")
        out = np.empty_like(X)
        out[:, :-1] = X[:, :-1] / self.space_lengthscale
        out[:, -1] = X[:, -1] / self.time_lengthscale
        return out

    def __call__(self, A, B=None):
        A = self._scaled(A)
        B = A if B is None else self._scaled(B)
        return self.variance * np.exp(-0.5 * cdist(A, B, "sqeuclidean"))

    def spatial_part(self):
        """The purely spatial factor, carrying the full signal variance."""
        return SquaredExponential(self.space_lengthscale, self.variance)

    def temporal_part(self):
        """The unit-variance temporal factor."""
        return SquaredExponential(self.time_lengthscale, 1.0)

    def spectral_frequencies(self, count, dim, rng):
        """Draw frequencies for inputs whose final axis is time."""
        if dim < 2:
            raise ValueError("spatiotemporal inputs need at least 2 dims")
        scales = np.full(dim, self.space_lengthscale)
        scales[-1] = self.time_lengthscale
        return rng.standard_normal((count, dim)) / scales

    def __repr__(self):
        return (
            f"SpatiotemporalKernel(space={self.space_lengthscale}, "
            f"time={self.time_lengthscale}, variance={self.variance})"
        )

"""Baseline hazards and Cox rate evaluation.

Two baseline representations coexist: :class:`StepHazard` is the
non-parametric piecewise-constant form used during estimation, while
:class:`ClosedFormHazard` wraps an exact rate function so a truth model
can be specified without discretization error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractViolation

__all__ = [
    "StepHazard",
    "ClosedFormHazard",
    "ConstantHazard",
    "cox_rate",
    "linear_predictor",
]


@dataclass(frozen=True)
class StepHazard:
    """Piecewise-constant baseline hazard.

    ``theta[i]`` is the rate on ``[i*dt, (i+1)*dt)``.  Beyond the last
    step the hazard extends as a constant at ``theta[-1]`` so the
    function is total on ``t >= 0`` (simulation may overrun the grid
    before censoring).
    """

    theta: np.ndarray
    dt: float

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if theta.ndim != 1 or theta.size == 0:
            raise ContractViolation("theta must be a non-empty 1-d array")
        if np.any(theta < 0) or not np.all(np.isfinite(theta)):
            raise ContractViolation("step heights must be finite and >= 0")
        if not self.dt > 0:
            raise ContractViolation("dt must be positive")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def k(self) -> int:
        return self.theta.size

    def rate(self, t):
        """Hazard value at time(s) ``t`` (constant extension past ``k*dt``)."""
        t = np.asarray(t, dtype=float)
        idx = np.minimum(np.floor(t / self.dt).astype(int), self.k - 1)
        out = self.theta[idx]
        return out if out.shape else float(out)

    def cumulative(self, t):
        """Exact integral of the step function over ``[0, t]``."""
        t = np.asarray(t, dtype=float)
        csum = np.concatenate([[0.0], np.cumsum(self.theta) * self.dt])
        idx = np.minimum(np.floor(t / self.dt).astype(int), self.k - 1)
        out = csum[idx] + self.theta[idx] * (t - idx * self.dt)
        return out if out.shape else float(out)


@dataclass(frozen=True)
class ClosedFormHazard:
    """Baseline hazard given by an explicit rate function of time.

    ``fn`` must be vectorized over numpy arrays and non-negative on
    ``t >= 0``.  ``cumulative_fn``, when provided, is used instead of
    numerical quadrature.
    """

    fn: Callable
    cumulative_fn: Callable | None = field(default=None)

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        out = np.asarray(self.fn(t), dtype=float)
        return out if out.shape else float(out)

    def cumulative(self, t):
        if self.cumulative_fn is not None:
            t = np.asarray(t, dtype=float)
            out = np.asarray(self.cumulative_fn(t), dtype=float)
            return out if out.shape else float(out)
        from scipy.integrate import quad

        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.array([quad(self.fn, 0.0, ti, limit=200)[0] for ti in t_arr])
        return out if np.asarray(t).shape else float(out[0])


def ConstantHazard(rate: float) -> ClosedFormHazard:
    """Baseline hazard that is constant in time."""
    if rate < 0:
        raise ContractViolation("hazard rate must be >= 0")
    r = float(rate)
    return ClosedFormHazard(fn=lambda t: np.full_like(np.asarray(t, dtype=float), r),
                            cumulative_fn=lambda t: r * np.asarray(t, dtype=float))


def linear_predictor(coef, z):
    """Inner product ``coef . z`` with an explicit dimension check."""
    coef = np.asarray(coef, dtype=float)
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != coef.shape[0]:
        raise ContractViolation(
            f"covariate dimension {z.shape[-1]} does not match coefficient length {coef.shape[0]}"
        )
    return z @ coef


def cox_rate(setup, z, t, which: str = "terminal"):
    """Cox-form rate ``baseline(t) * exp(coef . z)``.

    ``which`` selects the terminal-event pair ``(b, lambda0)`` or the
    counting-dimension pair ``(b_c, lambda0_c)``.
    """
    if which == "terminal":
        coef, baseline = setup.b, setup.lambda0
    elif which == "counting":
        coef, baseline = setup.b_c, setup.lambda0_c
    else:
        raise ContractViolation(f"unknown rate selector: {which!r}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ContractViolation("time must be >= 0")
    return baseline.rate(t) * np.exp(linear_predictor(coef, z))

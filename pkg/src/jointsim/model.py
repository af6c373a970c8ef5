"""Model setups, longitudinal process specifications, and observed data.

All types are immutable value objects after construction and safe to
share across concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .hazards import ClosedFormHazard, StepHazard

__all__ = [
    "LinearMixedModel",
    "DriftModel",
    "LongitudinalSpec",
    "ModelSetup",
    "Subject",
    "ObservedDataset",
]


def _as_config_fn(fn, n_dims: int) -> Callable:
    """Normalize a configuration function to map times of shape S to S + (n_dims,).

    Accepts a scalar constant, or a callable returning either a
    broadcastable scalar array (same value for every dimension) or an
    array with a trailing dimension of size ``n_dims``.
    """
    if not callable(fn):
        const = float(fn)

        def wrapped(t):
            t = np.asarray(t, dtype=float)
            return np.full(t.shape + (n_dims,), const)

        return wrapped

    def wrapped(t):
        t = np.asarray(t, dtype=float)
        out = np.asarray(fn(t), dtype=float)
        if out.shape == t.shape:
            out = np.repeat(out[..., None], n_dims, axis=-1)
        if out.shape != t.shape + (n_dims,):
            raise ConfigurationError(
                f"configuration function returned shape {out.shape}, "
                f"expected {t.shape + (n_dims,)}"
            )
        return out

    return wrapped


@dataclass(frozen=True)
class LinearMixedModel:
    """Linear mixed description of a block of continuous dimensions.

    The process is ``alpha * z1(t) + beta * z2(t) + e`` with one
    ``beta`` draw per trajectory held fixed over time, and ``e`` an
    observational error entering through the initial draw.  ``beta``
    and ``e`` are independent normals with diagonal covariance; the
    mean/covariance pairing between the two is configurable and stored
    separately.
    """

    alpha: np.ndarray
    beta_mean: np.ndarray
    beta_var: np.ndarray
    err_mean: np.ndarray
    err_var: np.ndarray
    z1: Callable | float = 0.0
    z2: Callable | float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta_mean", "beta_var", "err_mean", "err_var"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        n = self.alpha.size
        for name in ("beta_mean", "beta_var", "err_mean", "err_var"):
            if getattr(self, name).size != n:
                raise ConfigurationError(f"{name} must have length {n} to match alpha")
        if np.any(self.beta_var < 0) or np.any(self.err_var < 0):
            raise ConfigurationError("diagonal covariance entries must be >= 0")
        object.__setattr__(self, "_z1_fn", _as_config_fn(self.z1, n))
        object.__setattr__(self, "_z2_fn", _as_config_fn(self.z2, n))

    @property
    def n_dims(self) -> int:
        return self.alpha.size

    def z1_at(self, t):
        return self._z1_fn(t)

    def z2_at(self, t):
        return self._z2_fn(t)


@dataclass(frozen=True)
class DriftModel:
    """Markovian-drift description of a block of continuous dimensions.

    ``sampler(rng, z, t)`` draws the instantaneous rate for one
    trajectory given its current block state ``z`` (shape ``(n_dims,)``)
    and time ``t``.  ``initial`` is either a sampler ``(rng) -> (n_dims,)``
    or an explicit ``(N, n_dims)`` array of initial draws.
    """

    n_dims: int
    sampler: Callable
    initial: Callable | np.ndarray = 0.0

    def draw_initial(self, rng, trajectory_index: int):
        if callable(self.initial):
            z0 = np.atleast_1d(np.asarray(self.initial(rng), dtype=float))
        else:
            arr = np.atleast_1d(np.asarray(self.initial, dtype=float))
            if arr.ndim == 2:
                z0 = arr[trajectory_index % arr.shape[0]]
            else:
                z0 = np.broadcast_to(arr, (self.n_dims,))
        if z0.size != self.n_dims:
            raise ConfigurationError(
                f"initial draw has length {z0.size}, expected {self.n_dims}"
            )
        return np.asarray(z0, dtype=float)


@dataclass(frozen=True)
class LongitudinalSpec:
    """Generative description of the covariate process.

    Every non-counting dimension must be covered by exactly one of the
    linear-mixed block, the drift block, or the constants mapping.  The
    counting dimension, when present, starts at zero.
    """

    p: int
    counting_index: int | None = None
    linear_mixed: LinearMixedModel | None = None
    linear_mixed_dims: tuple[int, ...] = ()
    drift: DriftModel | None = None
    drift_dims: tuple[int, ...] = ()
    constants: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "linear_mixed_dims", tuple(int(i) for i in self.linear_mixed_dims))
        object.__setattr__(self, "drift_dims", tuple(int(i) for i in self.drift_dims))
        object.__setattr__(self, "constants", dict(self.constants))
        covered = set(self.linear_mixed_dims) | set(self.drift_dims) | set(self.constants)
        if self.counting_index is not None:
            if not 0 <= self.counting_index < self.p:
                raise ConfigurationError("counting_index out of range")
            if self.counting_index in covered:
                raise ConfigurationError("counting dimension cannot carry a continuous model")
            covered.add(self.counting_index)
        if covered != set(range(self.p)):
            missing = sorted(set(range(self.p)) - covered)
            extra = sorted(covered - set(range(self.p)))
            raise ConfigurationError(
                f"dimension coverage mismatch (uncovered: {missing}, out of range: {extra})"
            )
        n_cover = (len(self.linear_mixed_dims) + len(self.drift_dims) + len(self.constants)
                   + (self.counting_index is not None))
        if n_cover != self.p:
            raise ConfigurationError("dimensions covered by more than one block")
        if self.linear_mixed_dims and self.linear_mixed is None:
            raise ConfigurationError("linear_mixed_dims given without a linear_mixed model")
        if self.linear_mixed is not None and len(self.linear_mixed_dims) != self.linear_mixed.n_dims:
            raise ConfigurationError("linear_mixed block size does not match its dims")
        if self.drift_dims and self.drift is None:
            raise ConfigurationError("drift_dims given without a drift model")
        if self.drift is not None and len(self.drift_dims) != self.drift.n_dims:
            raise ConfigurationError("drift block size does not match its dims")

    @property
    def continuous_dims(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.p) if i != self.counting_index)

    def with_linear_mixed(self, **updates) -> "LongitudinalSpec":
        """Copy of the spec with fields of the linear-mixed block replaced."""
        if self.linear_mixed is None:
            raise ConfigurationError("spec has no linear-mixed block")
        return replace(self, linear_mixed=replace(self.linear_mixed, **updates))


@dataclass(frozen=True)
class ModelSetup:
    """Full parameter bundle under estimation.

    ``a`` is the longitudinal parameter bundle, carried as the
    :class:`LongitudinalSpec` that owns it.  ``b`` and ``b_c`` are the
    terminal-event and counting-dimension regression coefficients;
    ``lambda0`` and ``lambda0_c`` the corresponding baselines.
    """

    a: LongitudinalSpec
    b: np.ndarray
    b_c: np.ndarray
    lambda0: StepHazard | ClosedFormHazard
    lambda0_c: StepHazard | ClosedFormHazard

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        b_c = np.atleast_1d(np.asarray(self.b_c, dtype=float))
        if b.shape != b_c.shape:
            raise ContractViolation("b and b_c must have identical length")
        if b.size != self.a.p:
            raise ContractViolation(
                f"coefficient length {b.size} does not match covariate dimension {self.a.p}"
            )
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "b_c", b_c)

    @property
    def p(self) -> int:
        return self.b.size

    @property
    def spec(self) -> LongitudinalSpec:
        return self.a


@dataclass(frozen=True)
class Subject:
    """One observed subject: event time, event-time covariates, and the
    partial longitudinal history for non-missing dimensions."""

    event_time: float
    event_covariates: np.ndarray
    obs_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    obs_dims: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    obs_values: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        object.__setattr__(self, "event_covariates", np.asarray(self.event_covariates, dtype=float))
        object.__setattr__(self, "obs_times", np.asarray(self.obs_times, dtype=float))
        object.__setattr__(self, "obs_dims", np.asarray(self.obs_dims, dtype=int))
        object.__setattr__(self, "obs_values", np.asarray(self.obs_values, dtype=float))
        if not (self.obs_times.shape == self.obs_dims.shape == self.obs_values.shape):
            raise ContractViolation("longitudinal row arrays must have equal length")

    def value_at(self, dim: int, t: float) -> float:
        """Longitudinal value of one dimension at time ``t``.

        Uses the exact observation when one exists, the event-time
        covariate at ``t == event_time``, and linear interpolation
        between flanking observations otherwise (clamped outside the
        observed range).
        """
        mask = self.obs_dims == dim
        times = self.obs_times[mask]
        values = self.obs_values[mask]
        times = np.append(times, self.event_time)
        values = np.append(values, self.event_covariates[dim])
        order = np.argsort(times)
        times, values = times[order], values[order]
        return float(np.interp(t, times, values))


@dataclass(frozen=True)
class ObservedDataset:
    """Input data: per-subject event times, event-time covariates, and
    longitudinal histories for dimensions outside the missing set."""

    subjects: tuple[Subject, ...]
    p: int
    missing_dims: frozenset[int]
    censor_bound: float

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        object.__setattr__(self, "missing_dims", frozenset(int(i) for i in self.missing_dims))
        if len(self.subjects) < 1:
            raise ContractViolation("dataset must contain at least one subject")
        if not self.censor_bound > 0:
            raise ContractViolation("censor bound must be positive")
        bad = [i for i in self.missing_dims if not 0 <= i < self.p]
        if bad:
            raise ContractViolation(f"missing dimensions out of range: {bad}")
        for idx, s in enumerate(self.subjects):
            if s.event_covariates.size != self.p:
                raise ContractViolation(f"subject {idx}: covariate length != p")
            if s.event_time > self.censor_bound + 1e-12:
                raise ContractViolation(f"subject {idx}: event time exceeds censor bound")
            if s.obs_times.size and s.obs_times.max() > s.event_time + 1e-12:
                raise ContractViolation(f"subject {idx}: longitudinal time exceeds event time")
            hit = set(np.unique(s.obs_dims).tolist()) & self.missing_dims
            if hit:
                raise ContractViolation(
                    f"subject {idx}: longitudinal rows present for missing dimensions {sorted(hit)}"
                )

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def observed_dims(self) -> tuple[int, ...]:
        """Dimensions whose longitudinal history is available (complement of the missing set)."""
        return tuple(i for i in range(self.p) if i not in self.missing_dims)

    @property
    def event_times(self) -> np.ndarray:
        return np.array([s.event_time for s in self.subjects])

    @property
    def event_covariates(self) -> np.ndarray:
        return np.stack([s.event_covariates for s in self.subjects])

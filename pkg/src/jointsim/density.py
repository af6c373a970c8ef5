"""Kernel-density likelihood construction from simulated samples.

The empirical joint pdf of (covariates at terminal time, terminal time)
is a product-Gaussian KDE over simulated samples.  The full-information
log-likelihood sums its log at the observed points.  When partial
longitudinal histories exist, a partition of the observation window
combines, cell by cell, the uncensored joint density of in-cell events
with the censored density of longitudinal values for subjects surviving
past the cell.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ContractViolation, DegenerateCellWarning, DegenerateWindowError
from .model import ObservedDataset

__all__ = [
    "gaussian_kernel",
    "bandwidth_vector",
    "EmpiricalPdf",
    "empirical_pdf_eval",
    "log_likelihood",
    "uncensored_pdf_eval",
    "censored_pdf_eval",
    "Partition",
    "build_partition",
    "mean_log_likelihood",
]

_LOG_2PI = np.log(2.0 * np.pi)


def gaussian_kernel(u, h, d: int | None = None):
    """Product Gaussian kernel: prod_i exp(-u_i^2 / 2 h_i^2) / (h_i sqrt(2 pi))."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if d is not None and (u.shape[-1] != d or h.shape[-1] != d):
        raise ContractViolation(f"offset/bandwidth length does not match d={d}")
    if u.shape[-1] != h.shape[-1]:
        raise ContractViolation("offset and bandwidth must have equal length")
    if np.any(h <= 0):
        raise ContractViolation("bandwidths must be positive")
    return np.exp(_log_kernel(u, h))


def _log_kernel(u, h):
    return -0.5 * np.sum((u / h) ** 2, axis=-1) - np.sum(np.log(h)) - 0.5 * u.shape[-1] * _LOG_2PI


def _log_kernel_matrix(points: np.ndarray, atoms: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Log kernel values, shape (n_points, n_atoms)."""
    diff = points[:, None, :] - atoms[None, :, :]
    return _log_kernel(diff, h)


def bandwidth_vector(w: np.ndarray, s: np.ndarray, h_base: float) -> np.ndarray:
    """Per-dimension bandwidths ``h_base * std`` over the simulated samples.

    Coordinates with zero (or undefined) spread fall back to scale 1 so
    the kernel stays proper.
    """
    if not h_base > 0:
        raise ContractViolation("base bandwidth must be positive")
    pts = np.column_stack([w, s])
    scale = pts.std(axis=0)
    scale = np.where(np.isfinite(scale) & (scale > 0), scale, 1.0)
    return h_base * scale


def _sample_arrays(samples):
    """Accept a list of SimulatedSample or a (W, S) array pair."""
    if isinstance(samples, tuple):
        w, s = samples
        return np.asarray(w, dtype=float), np.asarray(s, dtype=float)
    from .simulate import stack_samples

    w, s, _ = stack_samples(samples)
    return w, s


@dataclass(frozen=True)
class EmpiricalPdf:
    """KDE over simulated (covariates, terminal time) atoms.

    ``h`` is the per-dimension bandwidth vector of length ``d = p + 1``
    (covariate dimensions followed by the time dimension).
    """

    w: np.ndarray
    s: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        s = np.asarray(self.s, dtype=float)
        h = np.atleast_1d(np.asarray(self.h, dtype=float))
        if w.ndim != 2 or w.shape[0] == 0:
            raise ContractViolation("need a non-empty 2-d sample array")
        if s.shape != (w.shape[0],):
            raise ContractViolation("sample times must match sample count")
        if h.shape != (w.shape[1] + 1,):
            raise ContractViolation("bandwidth vector must have length p + 1")
        if np.any(h <= 0):
            raise ContractViolation("bandwidths must be positive")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "h", h)

    @classmethod
    def from_samples(cls, samples, h) -> "EmpiricalPdf":
        w, s = _sample_arrays(samples)
        return cls(w=w, s=s, h=h)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def d(self) -> int:
        return self.w.shape[1] + 1

    def _atoms(self) -> np.ndarray:
        return np.column_stack([self.w, self.s])

    def log_evaluate(self, z, s):
        """Log density at query points; finite for all finite inputs."""
        pts, scalar = _query_points(z, s, self.d)
        logk = _log_kernel_matrix(pts, self._atoms(), self.h)
        out = logsumexp(logk, axis=1) - np.log(self.n)
        return float(out[0]) if scalar else out

    def evaluate(self, z, s):
        out = np.exp(self.log_evaluate(z, s))
        return out

    def samples(self):
        """Materialize the atoms as SimulatedSample objects."""
        from .simulate import SimulatedSample

        return [SimulatedSample(w=self.w[i].copy(), s=float(self.s[i]), censored=False)
                for i in range(self.n)]


def _query_points(z, s, d):
    z = np.asarray(z, dtype=float)
    s = np.asarray(s, dtype=float)
    scalar = z.ndim == 1
    z2 = np.atleast_2d(z)
    s2 = np.atleast_1d(s)
    if z2.shape[1] != d - 1 or s2.shape[0] != z2.shape[0]:
        raise ContractViolation("query dimension mismatch")
    return np.column_stack([z2, s2]), scalar


def empirical_pdf_eval(pdf: EmpiricalPdf, z, s):
    """Density value of the KDE at ``(z, s)``; strictly positive."""
    return pdf.evaluate(z, s)


def log_likelihood(pdf_builder, data: ObservedDataset, setup) -> float:
    """Full-information log-likelihood of the observed events.

    ``pdf_builder`` maps a model setup to its :class:`EmpiricalPdf`;
    the value is the sum of log densities at the observed
    (event covariates, event time) points.
    """
    if data.n < 1:
        raise ContractViolation("dataset is empty")
    pdf = pdf_builder(setup)
    vals = pdf.log_evaluate(data.event_covariates, data.event_times)
    return float(np.sum(vals))


def uncensored_pdf_eval(samples, window, z, s, h, at_risk_time=None):
    """Windowed joint density of (covariates, event time).

    Simulated atoms are restricted to terminal times inside
    ``window = [t, t')`` (closed at the right endpoint for the atoms),
    normalized by the number of atoms still at risk at ``at_risk_time``
    (the window start by default).  Queries with ``s`` outside the
    window return 1 exactly (zero exponent).
    """
    t_lo, t_hi = window
    if not t_lo < t_hi:
        raise ContractViolation("window must satisfy t < t'")
    w_arr, s_arr = _sample_arrays(samples)
    t_risk = t_lo if at_risk_time is None else at_risk_time
    n_t = int(np.sum(s_arr >= t_risk))
    if n_t == 0:
        raise DegenerateWindowError(
            f"no simulated sample at risk at t={t_risk:.6g}", window=(t_lo, t_hi))
    if not (t_lo <= s < t_hi):
        return 1.0
    inside = (s_arr >= t_lo) & (s_arr <= t_hi)
    if not inside.any():
        raise DegenerateWindowError(
            f"no simulated terminal time inside [{t_lo:.6g}, {t_hi:.6g}]",
            window=(t_lo, t_hi))
    pts, _ = _query_points(z, s, w_arr.shape[1] + 1)
    atoms = np.column_stack([w_arr[inside], s_arr[inside]])
    logk = _log_kernel_matrix(pts, atoms, np.atleast_1d(np.asarray(h, dtype=float)))
    return float(np.exp(logsumexp(logk[0]) - np.log(n_t)))


def censored_pdf_eval(samples, t_prime, z_obs, obs_dims, s, h, at_risk_time=None):
    """Censored density of observed longitudinal coordinates.

    For a subject surviving past ``t_prime`` (``s >= t_prime``), compares
    ``z_obs`` (values on the non-missing dimensions ``obs_dims``) against
    the same projection of simulated covariates whose terminal time
    exceeds ``t_prime``.  Returns 1 exactly when ``s < t_prime``.
    """
    obs_dims = tuple(int(i) for i in obs_dims)
    if len(obs_dims) == 0:
        raise ContractViolation("obs_dims must be non-empty")
    w_arr, s_arr = _sample_arrays(samples)
    t_risk = t_prime if at_risk_time is None else at_risk_time
    n_t = int(np.sum(s_arr >= t_risk))
    if n_t == 0:
        raise DegenerateWindowError(
            f"no simulated sample at risk at t={t_risk:.6g}", window=(t_risk, t_prime))
    if s < t_prime:
        return 1.0
    beyond = s_arr > t_prime
    if not beyond.any():
        raise DegenerateWindowError(
            f"no simulated terminal time beyond t'={t_prime:.6g}", window=(t_risk, t_prime))
    z_obs = np.atleast_1d(np.asarray(z_obs, dtype=float))
    if z_obs.shape[0] != len(obs_dims):
        raise ContractViolation("z_obs length must match obs_dims")
    h = np.atleast_1d(np.asarray(h, dtype=float))
    h_obs = h[list(obs_dims)] if h.shape[0] != len(obs_dims) else h
    atoms = w_arr[np.ix_(beyond.nonzero()[0], list(obs_dims))]
    logk = _log_kernel_matrix(z_obs[None, :], atoms, h_obs)
    return float(np.exp(logsumexp(logk[0]) - np.log(n_t)))


@dataclass(frozen=True)
class Partition:
    """Cell boundaries 0 = t_0 < t_1 < ... < t_m of the observation window."""

    boundaries: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        if b.ndim != 1 or b.size < 2:
            raise ContractViolation("need at least one cell")
        if b[0] != 0.0:
            raise ContractViolation("partition must start at 0")
        if np.any(np.diff(b) <= 0):
            raise ContractViolation("boundaries must be strictly increasing")
        object.__setattr__(self, "boundaries", b)

    @property
    def m(self) -> int:
        return self.boundaries.size - 1

    @property
    def interior(self) -> np.ndarray:
        """Boundaries excluding the leading zero: (t_1, ..., t_m)."""
        return self.boundaries[1:]

    def cells(self):
        b = self.boundaries
        return [(float(b[j]), float(b[j + 1])) for j in range(self.m)]


def build_partition(data: ObservedDataset, mode: str = "equal-length",
                    m_hint: int = 10) -> Partition:
    """Construct the time partition used by the mean log-likelihood.

    ``uniform-times`` takes the observation times of the subject with
    the greatest event time as boundaries and requires all subjects to
    sit on that common grid (each subject's own terminal observation is
    exempt).  ``equal-length`` splits [0, max event time] into
    ``m_hint`` equal cells.
    """
    t_max = float(max(s.event_time for s in data.subjects))
    if mode == "equal-length":
        if m_hint < 1:
            raise ContractViolation("m_hint must be >= 1")
        return Partition(np.linspace(0.0, t_max, m_hint + 1))
    if mode != "uniform-times":
        raise ContractViolation(f"unknown partition mode: {mode!r}")

    star = max(data.subjects, key=lambda s: s.event_time)
    times = np.unique(np.concatenate([star.obs_times, [star.event_time]]))
    times = times[times > 0]
    if times.size == 0:
        raise ContractViolation("reference subject has no positive observation times")
    grid = set(np.round(times, 9).tolist())
    for idx, subj in enumerate(data.subjects):
        interior = subj.obs_times[subj.obs_times < subj.event_time - 1e-9]
        off = [t for t in np.round(interior, 9) if t not in grid]
        if off:
            raise ContractViolation(
                f"subject {idx}: observation times {off} are off the uniform grid; "
                "use equal-length mode for non-uniform observation schedules")
    return Partition(np.concatenate([[0.0], times]))


def mean_log_likelihood(samples, data: ObservedDataset, partition: Partition, h,
                        collect_cells: bool = False):
    """Partition-averaged log-likelihood combining event and survival information.

    For each cell ``[t_{j-1}, t_j)``: subjects whose event falls in the
    cell contribute the log windowed joint density at their observed
    event; subjects surviving past ``t_j`` contribute the log censored
    density of their non-missing longitudinal values at the boundary
    (linearly interpolated between flanking observations when needed).
    Both densities are normalized by the simulated at-risk count at the
    cell start; the outer average weights each cell by the observed
    at-risk count.  Cells that are empty or degenerate are skipped with
    a warning and excluded from the cell average.
    """
    w_arr, s_arr = _sample_arrays(samples)
    h = np.atleast_1d(np.asarray(h, dtype=float))
    obs_dims = list(data.observed_dims)
    t_events = data.event_times
    if partition.boundaries[-1] < t_events.max() - 1e-9:
        raise ContractViolation("partition must cover [0, max event time]")

    cell_rows = []
    total = 0.0
    used_cells = 0
    for j, (t_lo, t_hi) in enumerate(partition.cells()):
        n_obs_risk = int(np.sum(t_events >= t_lo))
        n_sim_risk = int(np.sum(s_arr >= t_lo))
        if n_obs_risk == 0 or n_sim_risk == 0:
            warnings.warn(
                f"cell {j} [{t_lo:.6g}, {t_hi:.6g}) skipped: no at-risk "
                f"{'subjects' if n_obs_risk == 0 else 'simulated samples'}",
                DegenerateCellWarning, stacklevel=2)
            continue

        in_cell = (t_events >= t_lo) & (t_events < t_hi)
        past_cell = t_events >= t_hi
        inside_atoms = (s_arr >= t_lo) & (s_arr <= t_hi)
        beyond_atoms = s_arr > t_hi
        if in_cell.any() and not inside_atoms.any():
            warnings.warn(
                f"cell {j} [{t_lo:.6g}, {t_hi:.6g}) skipped: no simulated "
                "terminal times inside the window", DegenerateCellWarning, stacklevel=2)
            continue
        if obs_dims and past_cell.any() and not beyond_atoms.any():
            warnings.warn(
                f"cell {j} [{t_lo:.6g}, {t_hi:.6g}) skipped: no simulated "
                "survivors past the boundary", DegenerateCellWarning, stacklevel=2)
            continue

        cell_sum = 0.0
        log_n_risk = np.log(n_sim_risk)
        if in_cell.any():
            pts = np.column_stack([data.event_covariates[in_cell], t_events[in_cell]])
            atoms = np.column_stack([w_arr[inside_atoms], s_arr[inside_atoms]])
            logu = logsumexp(_log_kernel_matrix(pts, atoms, h), axis=1) - log_n_risk
        else:
            logu = np.zeros(0)
        if obs_dims and past_cell.any():
            z_at_boundary = np.array([
                [subj.value_at(dim, t_hi) for dim in obs_dims]
                for subj, alive in zip(data.subjects, past_cell) if alive
            ])
            atoms = w_arr[np.ix_(beyond_atoms.nonzero()[0], obs_dims)]
            logc = logsumexp(
                _log_kernel_matrix(z_at_boundary, atoms, h[obs_dims]), axis=1) - log_n_risk
        else:
            logc = np.zeros(0)
        cell_sum = float(np.sum(logu) + np.sum(logc))
        total += cell_sum / n_obs_risk
        used_cells += 1
        if collect_cells:
            iu = iter(logu)
            ic = iter(logc)
            for i in range(data.n):
                lu = float(next(iu)) if in_cell[i] else 0.0
                lc = float(next(ic)) if (obs_dims and past_cell[i]) else 0.0
                if in_cell[i] or past_cell[i]:
                    cell_rows.append((j, i, lu, lc))

    if used_cells == 0:
        raise DegenerateWindowError("every partition cell was degenerate")
    value = total / used_cells
    if collect_cells:
        return value, cell_rows
    return value

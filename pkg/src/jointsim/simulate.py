"""Path-wise simulation of longitudinal trajectories and joint event-time samples.

Continuous dimensions evolve on a regular time grid (linear-mixed blocks
by exact increments of their configuration functions, drift blocks by an
Euler scheme).  The counting dimension and the terminal event are driven
by discrete inverse-transform sampling of their Cox intensities: a
uniform draw is converted to an exponential threshold and the event
fires at the first grid index where the accumulated discrete hazard
crosses it.  After every jump both thresholds are redrawn and both
accumulators restart from the jump state.

Randomness is organized in counter-based (Philox) streams derived from
the master seed: one batched stream for initial draws (each trajectory
owns a fixed slice) and one stream per trajectory for its threshold
sequence and drift innovations.  Every trajectory's draws are therefore
a pure function of ``(seed, trajectory_index)`` and results do not
depend on how work is scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractViolation, SimulationError
from .model import LongitudinalSpec, ModelSetup

__all__ = [
    "TrajectoryGrid",
    "SimulatedSample",
    "simulate_linear_mixed_paths",
    "simulate_drift_paths",
    "simulate_counting_paths",
    "simulate_joint_samples",
    "stack_samples",
]

# Stream tags: initial draws, drift evolution, jump thresholds, terminal thresholds.
_TAG_INIT, _TAG_EVOL, _TAG_JUMP, _TAG_TERM = 0, 1, 2, 3

# Linear predictors are clipped before exponentiation; exp(700) is still
# finite in float64 and large enough to fire any threshold immediately.
_ETA_CLIP = 700.0

_CHUNK = 128
_BIG = np.iinfo(np.int64).max // 4


def _seed_key(seed) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        key = (int(seed),)
    else:
        key = tuple(int(s) for s in seed)
    if any(s < 0 for s in key):
        raise ContractViolation("seed entries must be non-negative integers")
    return key


def _stream(key: tuple[int, ...], *tags: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key + tags)))


class _Thresholds:
    """Per-trajectory sequences of exponential thresholds.

    Trajectory ``j`` reads consecutive draws from its own counter-based
    stream, so consumption by one trajectory never shifts another's
    sequence regardless of scheduling or jump counts.
    """

    def __init__(self, key: tuple[int, ...], tag: int, n: int, block: int = 32):
        seq = np.random.SeedSequence(key + (tag,))
        self._keys = seq.generate_state(2 * n, np.uint64).reshape(n, 2)
        self._buf: list[np.ndarray | None] = [None] * n
        self._pos = np.zeros(n, dtype=int)
        self._gens: list[np.random.Generator | None] = [None] * n
        self._block = block

    def _refill(self, j: int):
        gen = self._gens[j]
        if gen is None:
            gen = np.random.Generator(np.random.Philox(key=self._keys[j]))
            self._gens[j] = gen
        with np.errstate(divide="ignore"):
            self._buf[j] = -np.log(gen.random(self._block))
        self._pos[j] = 0

    def next_for(self, idx: np.ndarray) -> np.ndarray:
        out = np.empty(idx.size)
        for k, j in enumerate(idx):
            if self._buf[j] is None or self._pos[j] >= self._block:
                self._refill(j)
            out[k] = self._buf[j][self._pos[j]]
            self._pos[j] += 1
        return out


@dataclass(frozen=True)
class TrajectoryGrid:
    """Simulated trajectories on a regular grid.

    ``values[k, j]`` is the state of trajectory ``j`` at its local time
    ``t0[j] + k * dt``.  ``jump_idx`` holds the grid index of the last
    counting-dimension jump (-1 if none), ``event_idx`` the terminal
    index (-1 when unset or censored).
    """

    dt: float
    values: np.ndarray
    t0: np.ndarray = field(default=None)
    jump_idx: np.ndarray | None = None
    event_idx: np.ndarray | None = None

    def __post_init__(self):
        if self.t0 is None:
            object.__setattr__(self, "t0", np.zeros(self.n_traj))

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n_traj(self) -> int:
        return self.values.shape[1]

    @property
    def p(self) -> int:
        return self.values.shape[2]

    def times(self, trajectory: int = 0) -> np.ndarray:
        return self.t0[trajectory] + self.dt * np.arange(self.values.shape[0])


@dataclass(frozen=True)
class SimulatedSample:
    """One draw of (covariates at terminal time, terminal time)."""

    w: np.ndarray
    s: float
    censored: bool


def stack_samples(samples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack a sample list into arrays ``(W, S, censored)``."""
    w = np.stack([smp.w for smp in samples])
    s = np.array([smp.s for smp in samples])
    c = np.array([smp.censored for smp in samples], dtype=bool)
    return w, s, c


def _draw_lm_init(lm, N: int, stream: np.random.Generator):
    """Initial values and held random-effect draws for a linear-mixed block.

    Initial values follow the time-zero law of the process regardless of
    per-trajectory clocks (clocks only offset the increments).  Per
    trajectory the draw order is: random effect entering the initial
    value, observational error, then the held random effect used for the
    increments.  All three are read from one contiguous row of the
    stream so every trajectory owns a fixed slice.
    """
    m = lm.n_dims
    raw = stream.standard_normal((N, 3 * m))
    b_sd = np.sqrt(lm.beta_var)
    e_sd = np.sqrt(lm.err_var)
    beta0 = lm.beta_mean + b_sd * raw[:, :m]
    err = lm.err_mean + e_sd * raw[:, m:2 * m]
    beta = lm.beta_mean + b_sd * raw[:, 2 * m:]
    z0 = lm.alpha * lm.z1_at(0.0) + beta0 * lm.z2_at(0.0) + err
    return z0, beta


def _initial_states(spec, N, key):
    """Starting states for all trajectories plus held linear-mixed effects."""
    z = np.zeros((N, spec.p))
    beta = None
    if spec.linear_mixed is not None:
        stream = _stream(key, _TAG_INIT)
        z0_lm, beta = _draw_lm_init(spec.linear_mixed, N, stream)
        z[:, list(spec.linear_mixed_dims)] = z0_lm
    evol_rngs = None
    if spec.drift is not None:
        evol_rngs = [_stream(key, j, _TAG_EVOL) for j in range(N)]
        dims = list(spec.drift_dims)
        for j in range(N):
            z[j, dims] = spec.drift.draw_initial(evol_rngs[j], j)
    for d, v in spec.constants.items():
        z[:, d] = v
    return z, beta, evol_rngs


def _evolve_chunk(spec: LongitudinalSpec, beta, z_start, t_start, t, evol_rngs, traj_ids):
    """States of the continuous dimensions at the shared times ``t``.

    ``z_start`` holds the states at the common time ``t_start``; the
    returned path has shape ``(n, len(t), p)``.  Counting and constant
    coordinates stay frozen at their starting values.  Drift samplers
    receive the full state vector (continuous blocks at the previous
    step, frozen coordinates as-is).
    """
    n, p = z_start.shape
    L = t.size
    path = np.repeat(z_start[:, None, :], L, axis=1)

    lm = spec.linear_mixed
    if lm is not None:
        dims = list(spec.linear_mixed_dims)
        dz1 = lm.z1_at(t) - lm.z1_at(t_start)
        dz2 = lm.z2_at(t) - lm.z2_at(t_start)
        path[:, :, dims] = (z_start[:, dims][:, None, :]
                            + (lm.alpha * dz1)[None, :, :]
                            + beta[:, None, :] * dz2[None, :, :])

    if spec.drift is not None:
        dims = list(spec.drift_dims)
        for i in range(n):
            rng = evol_rngs[traj_ids[i]]
            state = z_start[i].copy()
            for s in range(L):
                eps = np.asarray(spec.drift.sampler(rng, state, t[s]), dtype=float)
                if not np.all(np.isfinite(eps)):
                    raise SimulationError(
                        f"trajectory {traj_ids[i]}: drift sampler returned a "
                        f"non-finite value at t={t[s]:.6g}"
                    )
                new_drift = state[dims] + eps * (t[s] - (t[s - 1] if s else t_start))
                state = path[i, s].copy()
                state[dims] = new_drift
                path[i, s, dims] = new_drift
    return path


def _evolve_ragged(spec, beta, z_start, t0, dt, n_steps, evol_rngs):
    """Full paths with per-trajectory clocks (standalone generators)."""
    n, p = z_start.shape
    path = np.empty((n, n_steps, p))
    if spec.linear_mixed is None and spec.drift is None:
        path[:] = z_start[:, None, :]
        return path
    for i in range(n):
        t = t0[i] + dt * np.arange(1, n_steps + 1)
        path[i] = _evolve_chunk(spec, beta[i:i + 1] if beta is not None else None,
                                z_start[i:i + 1], t0[i], t, evol_rngs, [i])[0]
    return path


def simulate_linear_mixed_paths(spec: LongitudinalSpec, t0, dt: float,
                                n_steps: int, N: int, seed) -> TrajectoryGrid:
    """Simulate trajectories of a linear-mixed longitudinal process.

    Each trajectory draws one initial value and one held random effect;
    increments follow the configuration functions evaluated on the
    trajectory's own clock ``t0[j] + k * dt``.  A counting dimension, if
    configured, stays frozen at zero.
    """
    if spec.linear_mixed is None:
        raise ConfigurationError("spec has no linear_mixed block")
    return _continuous_grid(spec, t0, dt, n_steps, N, seed)


def simulate_drift_paths(spec: LongitudinalSpec, t0, dt: float, n_steps: int,
                         N: int, seed, initial=None) -> TrajectoryGrid:
    """Simulate trajectories of a Markovian-drift process by Euler steps.

    Each step draws a fresh rate from the conditional drift sampler at
    the current state and advances ``z <- z + rate * dt``.  ``initial``
    optionally overrides the drift block's initial sampler or sample set.
    """
    if spec.drift is None:
        raise ConfigurationError("spec has no drift block")
    if initial is not None:
        from dataclasses import replace
        spec = replace(spec, drift=replace(spec.drift, initial=initial))
    return _continuous_grid(spec, t0, dt, n_steps, N, seed)


def _continuous_grid(spec, t0, dt, n_steps, N, seed) -> TrajectoryGrid:
    if not dt > 0:
        raise ContractViolation("dt must be positive")
    if N < 1:
        raise ContractViolation("N must be >= 1")
    key = _seed_key(seed)
    t0 = np.broadcast_to(np.asarray(t0, dtype=float), (N,)).copy()
    z, beta, evol_rngs = _initial_states(spec, N, key)
    values = np.empty((n_steps + 1, N, spec.p))
    values[0] = z
    if n_steps > 0:
        if np.all(t0 == t0[0]):
            t = t0[0] + dt * np.arange(1, n_steps + 1)
            path = _evolve_chunk(spec, beta, z, t0[0], t, evol_rngs, np.arange(N))
        else:
            path = _evolve_ragged(spec, beta, z, t0, dt, n_steps, evol_rngs)
        values[1:] = np.swapaxes(path, 0, 1)
    return TrajectoryGrid(dt=float(dt), values=values, t0=t0)


def simulate_counting_paths(setup: ModelSetup, dt: float, n_steps: int, N: int,
                            seed, spec: LongitudinalSpec | None = None) -> TrajectoryGrid:
    """Simulate trajectories whose counting dimension jumps with a Cox intensity.

    Between jumps the continuous dimensions evolve with the counting
    coordinate frozen; at each jump the coordinate increments by one and
    the discrete survival restarts from the jump-time state.
    """
    spec = spec if spec is not None else setup.spec
    if spec.counting_index is None:
        raise ConfigurationError("spec has no counting dimension")
    grid, jump_last, _, _, _ = _run_jump_engine(
        setup, spec, dt, n_steps, N, seed, with_terminal=False, record_grid=True)
    return TrajectoryGrid(dt=float(dt), values=grid, jump_idx=jump_last)


def simulate_joint_samples(setup: ModelSetup, dt: float, N: int,
                           censor_bound: float, seed,
                           spec: LongitudinalSpec | None = None) -> list[SimulatedSample]:
    """Draw N independent samples of (covariates at terminal time, terminal time).

    The terminal event races against counting-dimension jumps; whichever
    discrete hazard threshold is crossed first wins (ties go to the
    jump).  Trajectories reaching the censor bound without a terminal
    event are returned censored at ``s = C``.
    """
    if not censor_bound > 0:
        raise ConfigurationError("censor bound must be positive")
    spec = spec if spec is not None else setup.spec
    n_steps = int(np.floor(censor_bound / dt + 1e-9))
    _, _, event_idx, censored, w_out = _run_jump_engine(
        setup, spec, dt, n_steps, N, seed, with_terminal=True, record_grid=False)
    samples = []
    for j in range(N):
        if censored[j]:
            samples.append(SimulatedSample(w=w_out[j].copy(), s=float(censor_bound), censored=True))
        else:
            samples.append(SimulatedSample(w=w_out[j].copy(), s=float(event_idx[j] * dt), censored=False))
    return samples


def _clip_exp(x):
    return np.exp(np.clip(x, -_ETA_CLIP, _ETA_CLIP))


def _run_jump_engine(setup, spec, dt, n_steps, N, seed, with_terminal, record_grid,
                     chunk: int = _CHUNK):
    """Threshold-crossing evolution over the time grid.

    The continuous path within a chunk does not depend on the jump
    history (the counting coordinate only scales the hazards), so each
    chunk is evolved once and jump/terminal resolution works on
    cumulative unit hazards: a jump rescales the remaining thresholds
    by its multiplicative hazard factor and restarts both accumulators.
    When a drift block coexists with the counting dimension the chunk
    size drops to one step so drift samplers always see current counts.
    """
    if not dt > 0:
        raise ContractViolation("dt must be positive")
    if N < 1:
        raise ContractViolation("N must be >= 1")
    key = _seed_key(seed)
    p = spec.p
    cix = spec.counting_index
    has_count = cix is not None
    if spec.drift is not None and has_count:
        chunk = 1

    z, beta, evol_rngs = _initial_states(spec, N, key)

    jump_src = _Thresholds(key, _TAG_JUMP, N) if has_count else None
    term_src = _Thresholds(key, _TAG_TERM, N) if with_terminal else None
    all_idx = np.arange(N)
    e_j = jump_src.next_for(all_idx) if has_count else None
    e_t = term_src.next_for(all_idx) if with_terminal else None
    cum_j = np.zeros(N)
    cum_t = np.zeros(N)

    bc_cont = bc_cnt = b_cont = b_cnt = None
    if has_count:
        bc_cont = setup.b_c.copy()
        bc_cnt = float(bc_cont[cix])
        bc_cont[cix] = 0.0
        if with_terminal:
            b_cont = setup.b.copy()
            b_cnt = float(b_cont[cix])
            b_cont[cix] = 0.0
    elif with_terminal:
        b_cont = setup.b.copy()
        b_cnt = 0.0

    alive = np.ones(N, dtype=bool)
    censored = np.zeros(N, dtype=bool)
    event_idx = np.full(N, -1, dtype=int)
    jump_last = np.full(N, -1, dtype=int)
    w_out = np.zeros((N, p))
    jump_lists = [[] for _ in range(N)] if (record_grid and has_count) else None

    grid = None
    if record_grid:
        grid = np.empty((n_steps + 1, N, p))
        grid[0] = z

    g0 = 0
    col = np.arange(chunk)
    while g0 < n_steps and alive.any():
        L = min(chunk, n_steps - g0)
        act = np.flatnonzero(alive)
        t = (g0 + np.arange(1, L + 1)) * dt
        path = _evolve_chunk(spec, beta[act] if beta is not None else None,
                             z[act], g0 * dt, t, evol_rngs, act)
        if record_grid:
            grid[g0 + 1:g0 + 1 + L, act] = np.swapaxes(path, 0, 1)

        # unit hazards exclude the counting coordinate; its multiplicative
        # factor is applied per trajectory as counts change
        cs_j = cs_t = None
        if has_count:
            lam = setup.lambda0_c.rate(t)[None, :] * _clip_exp(path @ bc_cont) * dt
            cs_j = np.concatenate([np.zeros((act.size, 1)), np.cumsum(lam, axis=1)], axis=1)
        if with_terminal:
            coefs = b_cont if b_cont is not None else setup.b
            lam = setup.lambda0.rate(t)[None, :] * _clip_exp(path @ coefs) * dt
            cs_t = np.concatenate([np.zeros((act.size, 1)), np.cumsum(lam, axis=1)], axis=1)

        o = np.full(act.size, -1, dtype=int)
        sub = np.arange(act.size)
        while sub.size:
            traj = act[sub]
            colmask = col[None, :L] >= (o[sub] + 1)[:, None]
            if has_count:
                f_j = _clip_exp(bc_cnt * z[traj, cix])
                with np.errstate(divide="ignore", invalid="ignore"):
                    tau = cs_j[sub, o[sub] + 1] + (e_j[traj] - cum_j[traj]) / f_j
                hit = (cs_j[sub, 1:L + 1] >= tau[:, None]) & colmask
                s_j = np.where(hit.any(axis=1), hit.argmax(axis=1), _BIG)
            else:
                s_j = np.full(sub.size, _BIG)
            if with_terminal:
                f_t = _clip_exp(b_cnt * z[traj, cix]) if has_count else np.ones(sub.size)
                with np.errstate(divide="ignore", invalid="ignore"):
                    tau = cs_t[sub, o[sub] + 1] + (e_t[traj] - cum_t[traj]) / f_t
                hit = (cs_t[sub, 1:L + 1] >= tau[:, None]) & colmask
                s_t = np.where(hit.any(axis=1), hit.argmax(axis=1), _BIG)
            else:
                s_t = np.full(sub.size, _BIG)

            is_event = s_t < s_j
            is_jump = (s_j <= s_t) & (s_j < _BIG)
            is_open = ~is_event & ~is_jump

            if is_event.any():
                rows = np.flatnonzero(is_event)
                tr = traj[rows]
                state = path[sub[rows], s_t[rows]].copy()
                if has_count:
                    state[:, cix] = z[tr, cix]
                w_out[tr] = state
                event_idx[tr] = g0 + 1 + s_t[rows]
                alive[tr] = False
            if is_jump.any():
                rows = np.flatnonzero(is_jump)
                tr = traj[rows]
                z[tr, cix] += 1.0
                g_jump = g0 + 1 + s_j[rows]
                jump_last[tr] = g_jump
                if jump_lists is not None:
                    for j, g in zip(tr, g_jump):
                        jump_lists[j].append(g)
                cum_j[tr] = 0.0
                cum_t[tr] = 0.0
                e_j[tr] = jump_src.next_for(tr)
                if with_terminal:
                    e_t[tr] = term_src.next_for(tr)
                o[sub[rows]] = s_j[rows]
            if is_open.any():
                rows = np.flatnonzero(is_open)
                tr = traj[rows]
                if has_count:
                    f_j = _clip_exp(bc_cnt * z[tr, cix])
                    cum_j[tr] += f_j * (cs_j[sub[rows], L] - cs_j[sub[rows], o[sub[rows]] + 1])
                if with_terminal:
                    f_t = _clip_exp(b_cnt * z[tr, cix]) if has_count else 1.0
                    cum_t[tr] += f_t * (cs_t[sub[rows], L] - cs_t[sub[rows], o[sub[rows]] + 1])
                state = path[sub[rows], L - 1].copy()
                if has_count:
                    state[:, cix] = z[tr, cix]
                z[tr] = state
            sub = sub[is_jump]
        g0 += L

    if alive.any():
        idx = np.flatnonzero(alive)
        w_out[idx] = z[idx]
        censored[idx] = with_terminal

    if record_grid and has_count:
        steps_axis = np.arange(n_steps + 1)
        for j in range(N):
            jl = np.asarray(jump_lists[j], dtype=int)
            grid[:, j, cix] = np.searchsorted(jl, steps_axis, side="right")

    if not np.all(np.isfinite(w_out)):
        raise SimulationError("simulation produced non-finite terminal states")
    return grid, jump_last, event_idx, censored, w_out
